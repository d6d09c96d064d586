import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import click
from pydantic import ValidationError

# --- Configuration ---
CURRENT_DIR = os.path.dirname(os.path.abspath(__file__))
sys.path.append(CURRENT_DIR)

from core import harness  # noqa: E402
from core.causal_graph import default_graph, graph_report  # noqa: E402
from core.config import GenConfig, Variant, apply_overrides, load_run_config  # noqa: E402
from core.errors import FineCausalError  # noqa: E402
from etl.synthdata import generate, read_dataset, write_dataset  # noqa: E402

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
TRAIN_FILE = "train.jsonl"
TEST_FILE = "test.jsonl"

out_dir_option = click.option(
    "--out-dir",
    type=click.Path(file_okay=False, path_type=Path),
    envvar="FINECAUSAL_OUT_DIR",
    default="out",
    show_default=True,
    help="Directory for every file the command writes (env: FINECAUSAL_OUT_DIR).",
)
config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="JSON run config; flags given on the command line win.",
)
data_option = click.option(
    "--data", type=click.Path(exists=True, path_type=Path),
    help="Dataset file, or a directory holding train.jsonl/test.jsonl.",
)
variants = click.Choice([v.value for v in Variant])


# HELPER -> Resolves a dataset argument to one split.
def _load_split(data: Optional[Path], split_file: str):
    if data is None:
        return None
    path = data / split_file if data.is_dir() else data
    samples = read_dataset(path)
    click.echo(f"Loaded {len(samples)} samples from {path}")
    return samples


def _write_json(path: Path, document) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@click.group()
@click.option("--verbose", is_flag=True, help="Log at DEBUG level.")
def cli(verbose: bool) -> None:
    """FineCausal: causal stage-aware action quality assessment on synthetic features."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


@cli.command("gen-data")
@config_option
@click.option("--seed", type=int, help="Generator seed.")
@click.option("--n-train", type=int, help="Training pairs.")
@click.option("--n-test", type=int, help="Test pairs.")
@click.option("--snippets", type=int, help="Snippets per clip (T).")
@click.option("--feature-dim", type=int, help="Feature dimension (D).")
@click.option("--mask-dim", type=int, help="Mask target dimension.")
@click.option("--c-train", type=float, help="Confounder strength in the training split.")
@click.option("--c-test", type=float, help="Confounder strength in the test split.")
@click.option("--jitter", "boundary_jitter", type=int, help="Max boundary jitter in snippets.")
@click.option("--noise-std", type=float, help="Feature noise level.")
@out_dir_option
def gen_data(config_path, out_dir, **flags) -> None:
    """Generate confounded train/test datasets."""
    base = load_run_config(config_path).data.model_dump() if config_path else {}
    try:
        cfg = GenConfig.model_validate({**base, **{k: v for k, v in flags.items() if v is not None}})
    except ValidationError as e:
        raise click.BadParameter(str(e)) from None
    train_set, test_set = generate(cfg)
    write_dataset(train_set, out_dir / TRAIN_FILE)
    write_dataset(test_set, out_dir / TEST_FILE)
    _write_json(out_dir / "gen_config.json", cfg.model_dump(mode="json"))
    click.echo(f"Wrote {len(train_set)} train / {len(test_set)} test samples to {out_dir}")


@cli.command()
@click.option("--variant", type=variants, help="Which causal modules to use.")
@config_option
@data_option
@click.option("--epochs", type=int, help="Training epochs.")
@click.option("--seed", type=int, help="Initialization and shuffling seed.")
@out_dir_option
def train(variant, config_path, data, epochs, seed, out_dir) -> None:
    """Train one variant and write checkpoint.json and metrics.jsonl."""
    cfg = load_run_config(config_path)
    try:
        cfg = apply_overrides(cfg, variant=variant, epochs=epochs, seed=seed)
    except ValidationError as e:
        raise click.BadParameter(str(e)) from None
    train_set = _load_split(data, TRAIN_FILE)
    val_set = _load_split(data, TEST_FILE) if data is not None and data.is_dir() else None
    if train_set is None:
        train_set, val_set = generate(cfg.data)
    _write_json(out_dir / "run_config.json", cfg.model_dump(mode="json"))
    checkpoint = harness.train(cfg, train_set, val_set, out_dir=out_dir)
    click.echo(f"Trained {cfg.variant.value} for {checkpoint.epoch} epochs -> {out_dir / 'checkpoint.json'}")


@cli.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Checkpoint written by train.")
@data_option
@out_dir_option
def evaluate(checkpoint_path, data, out_dir) -> None:
    """Evaluate a checkpoint with decoded stage boundaries."""
    checkpoint = harness.load_checkpoint(checkpoint_path)
    samples = _load_split(data, TEST_FILE)
    if samples is None:
        samples = generate(checkpoint.config.data)[1]
    report = harness.evaluate(checkpoint, samples, predictions_path=out_dir / "predictions.jsonl")
    _write_json(out_dir / "report.json", report.to_dict())
    for key, value in report.to_dict().items():
        click.echo(f"{key:>12}: {value:.4f}")


@cli.command()
@config_option
@click.option("--seeds", help="Comma-separated seeds, e.g. 0,1,2 (default: the config seed).")
@data_option
@out_dir_option
def ablate(config_path, seeds, data, out_dir) -> None:
    """Train and evaluate baseline, gat_only, tca_only and full."""
    cfg = load_run_config(config_path)
    try:
        seed_list: List[int] = [int(s) for s in seeds.split(",")] if seeds else [cfg.seed]
    except ValueError:
        raise click.BadParameter(f"'{seeds}' is not a comma-separated list of integers", param_hint="--seeds") from None
    train_set, test_set = _load_split(data, TRAIN_FILE), _load_split(data, TEST_FILE)
    report = harness.run_ablation(cfg, seed_list, train_set, test_set)
    report.to_csv(out_dir / "ablation.csv")
    report.per_seed.to_csv(out_dir / "ablation_per_seed.csv", index=False, float_format="%.6f")
    table = report.render_table()
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    click.echo(table)


@cli.command("export-attn")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Checkpoint written by train.")
@data_option
@click.option("--n", type=click.IntRange(min=1), help="Export only the first N samples.")
@out_dir_option
def export_attn(checkpoint_path, data, n, out_dir) -> None:
    """Write per-sample GAT/TCA attention maps and stage influences as CSV."""
    checkpoint = harness.load_checkpoint(checkpoint_path)
    samples = _load_split(data, TEST_FILE)
    if samples is None:
        samples = generate(checkpoint.config.data)[1]
    written = harness.export_attention(checkpoint, samples, out_dir, n=n)
    click.echo(f"Wrote {len(written)} files under {out_dir}")


@cli.command("grad-check")
@click.option("--variant", type=variants, default=Variant.FULL.value, show_default=True, help="Variant whose parameters are checked.")
@click.option("--tol", type=float, default=1e-4, show_default=True, help="Max relative error.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the tiny batch and initialization.")
@out_dir_option
def grad_check(variant, tol, seed, out_dir) -> None:
    """Finite-difference check of every parameter on a tiny batch."""
    reports = harness.model_grad_check(variant, tol=tol, seed=seed)
    frame = harness.grad_check_frame(reports)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / "grad_check.csv", index=False)
    click.echo(frame.to_string(index=False))
    failed = frame.loc[~frame["passed"], "parameter"].tolist()
    if failed:
        raise click.ClickException(f"{len(failed)} parameter(s) failed the gradient check: {', '.join(failed)}")
    click.echo(f"All {len(frame)} parameters passed at tol {tol:g}")


@cli.command("graph-report")
@out_dir_option
def graph_report_command(out_dir) -> None:
    """Write the causal graph as JSON and print its factorization."""
    report = graph_report(default_graph())
    _write_json(out_dir / "causal_graph.json", report)
    click.echo(f"factorization: {report['factorization']}")
    click.echo(f"edges: {report['genuine_edges']} genuine, {report['spurious_edges']} spurious")
    click.echo("violations: none" if not report["violations"] else "\n".join(report["violations"]))


def main(argv: Optional[List[str]] = None) -> int:
    """0 on success, 1 on a usage error, 2 on a runtime error."""
    try:
        rv = cli.main(args=argv, prog_name="finecausal", standalone_mode=False)
    except click.UsageError as e:
        if e.ctx is not None:
            click.echo(e.ctx.get_help(), err=True)
        click.echo(f"Error: {e.format_message()}", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 2
    except (FineCausalError, OSError, ValidationError) as e:
        click.echo(f"Error: {e}", err=True)
        return 2
    except click.Abort:
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
