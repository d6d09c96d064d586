import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.config import GenConfig, RunConfig, Variant, apply_overrides
from core.errors import (
    CheckpointError,
    DegenerateRangeError,
    FineCausalError,
    NonFiniteError,
    SampleError,
    TrainingDivergedError,
    UndefinedCorrelationError,
)
from core.gat_intervention import NODE_LABELS
from core.losses import LossBreakdown
from core.metrics import AIOU_THRESHOLDS, MetricReport, PredictionRecord, compute_report, write_predictions
from core.model import FineCausalModel
from core.numerics import GradCheckReport, grad_check
from core.optim import Adam
from core.streams_fusion import Sample, StreamId, collate, make_sample
from core.temporal_attention import STAGES, stage_influence
from etl.synthdata import generate

logger = logging.getLogger(__name__)

# --- CONFIGURATIONS ---
CHECKPOINT_VERSION = 1
METRIC_COLUMNS = ["rho", "r_l2_x100"] + [f"aiou@{t:g}" for t in AIOU_THRESHOLDS]


# --- CHECKPOINTS ---
@dataclass
class Checkpoint:
    config: RunConfig
    params: Dict[str, Dict[str, list]]
    epoch: int = 0
    history: List[dict] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config.model_dump(mode="json"),
            "params": self.params,
            "epoch": self.epoch,
            "history": self.history,
        }


def snapshot(model: FineCausalModel, epoch: int, history: Sequence[dict]) -> Checkpoint:
    return Checkpoint(model.cfg, model.params.state_dict(), epoch, list(history))


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint.to_dict(), sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} is not a checkpoint file: {exc}") from exc
    version = document.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})")
    try:
        return Checkpoint(
            config=RunConfig.model_validate(document["config"]),
            params=document["params"],
            epoch=int(document["epoch"]),
            history=list(document["history"]),
            version=version,
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"Malformed checkpoint {path}: {exc}") from exc


def model_from_checkpoint(checkpoint: Checkpoint) -> FineCausalModel:
    sap_weight = checkpoint.params.get("sap.weight")
    if sap_weight is None:
        raise CheckpointError("Checkpoint has no 'sap.weight' parameter")
    dim, mask_dim = sap_weight["shape"]
    model = FineCausalModel(checkpoint.config, dim=dim, mask_dim=mask_dim)
    model.params.load_state_dict(checkpoint.params)
    return model


# --- TRAINING ---
def _mean_breakdown(parts: List[Tuple[int, LossBreakdown]]) -> Dict[str, object]:
    total = sum(n for n, _ in parts)
    averaged = {
        key: sum(n * getattr(b, key) for n, b in parts) / total
        for key in ("l_sap", "l_tap", "l_reg", "weighted_total")
    }
    averaged["log_variances"] = list(parts[-1][1].log_variances)
    return averaged


def train(
    cfg: RunConfig,
    train_set: Sequence[Sample],
    val_set: Optional[Sequence[Sample]] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> Checkpoint:
    """
    Mini-batch Adam over the composite objective. The sample order of every epoch is a
    permutation drawn from a generator seeded by ``cfg.seed``, so equal configs give equal
    histories. A non-finite loss or gradient aborts with the last finite checkpoint.
    """
    if not train_set:
        raise SampleError("Training needs at least one sample")
    model = FineCausalModel(cfg, dim=train_set[0].dim, mask_dim=train_set[0].mask_targets.shape[1])
    optimizer = Adam(
        model.params,
        cfg.learning_rates(),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )
    order_rng = np.random.default_rng([cfg.seed, 1])
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.jsonl").write_text("", encoding="utf-8")

    history: List[dict] = []
    last_good = snapshot(model, 0, history)

    def diverged(message: str) -> TrainingDivergedError:
        if out_dir:
            save_checkpoint(last_good, out_dir / "checkpoint.json")
        logger.error("%s; keeping checkpoint from epoch %d", message, last_good.epoch)
        return TrainingDivergedError(message, last_good)

    logger.info("Training %s on %d samples for %d epochs", model.variant.value, len(train_set), cfg.epochs)
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(train_set))
        parts: List[Tuple[int, LossBreakdown]] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = collate([train_set[i] for i in order[start:start + cfg.batch_size]])
            optimizer.zero_grad()
            try:
                total, breakdown = model.loss(batch, model.forward(batch))
            except NonFiniteError as exc:
                raise diverged(f"Non-finite values at epoch {epoch}: {exc}") from exc
            if not np.isfinite(breakdown.weighted_total):
                raise diverged(f"Loss became non-finite at epoch {epoch}")
            total.backward()
            if not all(np.all(np.isfinite(p.gradient)) for p in model.params):
                raise diverged(f"Gradient became non-finite at epoch {epoch}")
            optimizer.step()
            parts.append((len(batch), breakdown))

        val = None
        if val_set and epoch % cfg.validate_every == 0:
            try:
                val = evaluate_model(model, val_set)[0].to_dict()
            except (UndefinedCorrelationError, DegenerateRangeError) as exc:
                logger.warning("Validation skipped at epoch %d: %s", epoch, exc)
        record = {"epoch": epoch, "loss": _mean_breakdown(parts), "val": val}
        history.append(record)
        if out_dir:
            with (out_dir / "metrics.jsonl").open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        logger.info(
            "epoch %d: total=%.4f l_reg=%.4f l_tap=%.4f l_sap=%.4f%s",
            epoch,
            record["loss"]["weighted_total"],
            record["loss"]["l_reg"],
            record["loss"]["l_tap"],
            record["loss"]["l_sap"],
            f" val_rho={val['rho']:.4f}" if val else "",
        )
        last_good = snapshot(model, epoch, history)

    if out_dir:
        save_checkpoint(last_good, out_dir / "checkpoint.json")
    return last_good


# --- EVALUATION ---
def evaluate_model(
    model: FineCausalModel, samples: Sequence[Sample], batch_size: Optional[int] = None
) -> Tuple[MetricReport, List[PredictionRecord]]:
    """Scores ``samples`` with decoded (not ground-truth) query boundaries."""
    if not samples:
        raise SampleError("Evaluation needs at least one sample")
    batch_size = batch_size or model.cfg.eval_batch_size
    records: List[PredictionRecord] = []
    for start in range(0, len(samples), batch_size):
        chunk = list(samples[start:start + batch_size])
        out = model.forward(collate(chunk), teacher_forcing=False)
        for sample, y_pred, bounds in zip(chunk, out.score.y_query, out.boundaries):
            records.append(PredictionRecord(
                id=sample.sample_id,
                y_true=sample.y_query,
                y_pred=float(y_pred),
                intervals_true=sample.boundaries.intervals(sample.snippets),
                intervals_pred=bounds.intervals(sample.snippets),
            ))
    return compute_report(records), records


def evaluate(
    checkpoint: Checkpoint, samples: Sequence[Sample], predictions_path: Optional[Union[str, Path]] = None
) -> MetricReport:
    report, records = evaluate_model(model_from_checkpoint(checkpoint), samples)
    if predictions_path:
        write_predictions(records, predictions_path)
    return report


# --- ABLATION ---
@dataclass
class AblationReport:
    per_seed: pd.DataFrame  # one row per (seed, variant)
    summary: pd.DataFrame  # seed means, indexed by variant
    counts: Dict[str, int]

    def render_table(self) -> str:
        lines = [self.summary.to_string(float_format=lambda v: f"{v:.4f}")]
        lines.append("")
        lines.append(f"seeds: {self.counts['seeds']}")
        lines.append(f"full < baseline on r_l2_x100: {self.counts['full_beats_baseline_r_l2']}")
        lines.append(f"tca_only >= gat_only on aiou@0.5: {self.counts['tca_aiou_ge_gat']}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.summary.to_csv(path, float_format="%.6f")
        return path


def run_ablation(
    base_cfg: RunConfig,
    seeds: Optional[Sequence[int]] = None,
    train_set: Optional[Sequence[Sample]] = None,
    test_set: Optional[Sequence[Sample]] = None,
) -> AblationReport:
    """
    Trains baseline, gat_only, tca_only and full on the same data for every seed and
    evaluates each on the test split. Without explicit data, each seed generates its own.
    """
    seeds = list(seeds) if seeds else [base_cfg.seed]
    rows = []
    for seed in seeds:
        if train_set is None or test_set is None:
            data_cfg = GenConfig.model_validate({**base_cfg.data.model_dump(), "seed": seed})
            seed_train, seed_test = generate(data_cfg)
        else:
            seed_train, seed_test = train_set, test_set
        for variant in Variant:
            cfg = apply_overrides(base_cfg, variant=variant.value, seed=seed)
            report = evaluate(train(cfg, seed_train), seed_test)
            logger.info("ablation seed=%d variant=%s %s", seed, variant.value, report.to_dict())
            rows.append({"seed": seed, "variant": variant.value, **report.to_dict()})

    per_seed = pd.DataFrame(rows, columns=["seed", "variant"] + METRIC_COLUMNS)
    summary = per_seed.groupby("variant")[METRIC_COLUMNS].mean().reindex([v.value for v in Variant])
    wide = per_seed.pivot(index="seed", columns="variant")
    counts = {
        "seeds": len(seeds),
        "full_beats_baseline_r_l2": int((wide["r_l2_x100"]["full"] < wide["r_l2_x100"]["baseline"]).sum()),
        "tca_aiou_ge_gat": int((wide["aiou@0.5"]["tca_only"] >= wide["aiou@0.5"]["gat_only"]).sum()),
    }
    return AblationReport(per_seed, summary, counts)


# --- ATTENTION EXPORT ---
def export_attention(
    checkpoint: Checkpoint,
    samples: Sequence[Sample],
    out_dir: Union[str, Path],
    n: Optional[int] = None,
    teacher_forcing: bool = False,
) -> List[Path]:
    """
    Per sample, writes the GAT node attention (qo/qf/eo/ef) and the TCA stage attention
    with its stage-influence reading; then the means over all exported samples.
    """
    model = model_from_checkpoint(checkpoint)
    if model.gat is None and model.tca is None:
        raise FineCausalError(f"Variant '{model.variant.value}' has no attention to export")
    samples = list(samples[:n] if n is not None else samples)
    if not samples:
        raise SampleError("No samples to export")

    out_dir = Path(out_dir)
    written: List[Path] = []
    gat_maps, tca_maps = [], []
    threshold = model.cfg.weak_threshold
    for start in range(0, len(samples), model.cfg.eval_batch_size):
        chunk = samples[start:start + model.cfg.eval_batch_size]
        attention = model.forward(collate(chunk), teacher_forcing=teacher_forcing).attention
        for i, sample in enumerate(chunk):
            sample_dir = out_dir / sample.sample_id
            sample_dir.mkdir(parents=True, exist_ok=True)
            if attention.gat is not None:
                gat_maps.append(attention.gat[i])
                frame = pd.DataFrame(attention.gat[i], index=NODE_LABELS, columns=NODE_LABELS)
                written.append(sample_dir / "gat_attention.csv")
                frame.to_csv(written[-1])
            if attention.tca is not None:
                tca_maps.append(attention.tca[i])
                frame = pd.DataFrame(attention.tca[i], index=STAGES, columns=STAGES)
                written.append(sample_dir / "tca_attention.csv")
                frame.to_csv(written[-1])
                influence = pd.DataFrame([asdict(row) for row in stage_influence(attention.tca[i], threshold)])
                written.append(sample_dir / "stage_influence.csv")
                influence.to_csv(written[-1], index=False)

    if gat_maps:
        written.append(out_dir / "gat_attention_mean.csv")
        pd.DataFrame(np.mean(gat_maps, axis=0), index=NODE_LABELS, columns=NODE_LABELS).to_csv(written[-1])
    if tca_maps:
        written.append(out_dir / "tca_attention_mean.csv")
        pd.DataFrame(np.mean(tca_maps, axis=0), index=STAGES, columns=STAGES).to_csv(written[-1])
    logger.info("Exported attention for %d samples to %s", len(samples), out_dir)
    return written


@dataclass
class FailurePropagation:
    sample_id: str
    clean_attention: np.ndarray  # 3 x 3
    corrupted_attention: np.ndarray  # 3 x 3
    forward_to_twist: float  # signed change of A[twist, forward]
    forward_to_entry: float  # signed change of A[entry, forward]
    score_change: float

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "clean_attention": self.clean_attention.tolist(),
            "corrupted_attention": self.corrupted_attention.tolist(),
            "forward_to_twist": self.forward_to_twist,
            "forward_to_entry": self.forward_to_entry,
            "score_change": self.score_change,
        }


def corrupt_forward_stage(sample: Sample, corruption: float = 3.0, seed: int = 0, shift: float = 0.0) -> Sample:
    """
    Adds noise of scale ``corruption`` to the query's forward-stage snippets (both streams).
    ``shift`` is added to channel 0 of the original stream over the same snippets.
    """
    rng = np.random.default_rng(seed)
    streams = dict(sample.streams)
    for stream_id in (StreamId.QUERY_ORIGINAL, StreamId.QUERY_MASK):
        values = streams[stream_id].values.copy()
        values[:sample.boundaries.t1] += corruption * rng.standard_normal(values[:sample.boundaries.t1].shape)
        if stream_id == StreamId.QUERY_ORIGINAL:
            values[:sample.boundaries.t1, 0] += shift
        streams[stream_id] = type(streams[stream_id])(stream_id, values)
    return make_sample(
        streams,
        sample.boundaries,
        sample.mask_targets,
        sample.y_query,
        sample.y_exemplar,
        sample_id=f"{sample.sample_id}-corrupted",
        exemplar_boundaries=sample.exemplar_boundaries,
        action_type=sample.action_type,
        confounder=sample.confounder,
    )


def failure_propagation(
    checkpoint: Checkpoint,
    sample: Sample,
    corruption: float = 3.0,
    seed: int = 0,
    shift: float = 0.0,
) -> FailurePropagation:
    """
    Compares stage attention on a clean sample and on a copy with a botched forward
    stage. Ground-truth boundaries are used for both so only the features differ.
    """
    model = model_from_checkpoint(checkpoint)
    if model.tca is None:
        raise FineCausalError(f"Variant '{model.variant.value}' has no stage attention")
    clean = model.forward(sample, teacher_forcing=True)
    corrupted = model.forward(corrupt_forward_stage(sample, corruption, seed, shift), teacher_forcing=True)
    a_clean, a_bad = clean.attention.tca[0], corrupted.attention.tca[0]
    return FailurePropagation(
        sample_id=sample.sample_id,
        clean_attention=a_clean,
        corrupted_attention=a_bad,
        forward_to_twist=float(a_bad[1, 0] - a_clean[1, 0]),
        forward_to_entry=float(a_bad[2, 0] - a_clean[2, 0]),
        score_change=float(corrupted.score.y_query[0] - clean.score.y_query[0]),
    )


# --- GRADIENT CHECK ---
def model_grad_check(
    variant: Union[Variant, str] = Variant.FULL,
    tol: float = 1e-4,
    seed: int = 0,
    dim: int = 8,
    snippets: int = 5,
    batch: int = 2,
    epsilon: float = 1e-6,
) -> List[GradCheckReport]:
    """Finite-difference check of every parameter of ``variant`` on a tiny generated batch."""
    data = GenConfig(seed=seed, n_train=batch, n_test=0, snippets=snippets, feature_dim=dim)
    cfg = RunConfig(variant=Variant(variant), seed=seed, data=data)
    samples, _ = generate(data)
    model = FineCausalModel(cfg)
    fixed = collate(samples)
    reports = grad_check(lambda: model.objective(fixed), model.params, epsilon=epsilon, tol=tol, seed=seed)
    failed = [r.parameter for r in reports if not r.passed]
    if failed:
        logger.warning("grad-check failed for %d parameter(s): %s", len(failed), ", ".join(failed))
    return reports


def grad_check_frame(reports: Sequence[GradCheckReport]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in reports], columns=["parameter", "max_rel_error", "tolerance", "passed", "coordinates"])
