import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from core.config import RunConfig, Variant
from core.gat_intervention import GatParams, deconfound_nodes, init_gat_params, snippet_nodes
from core.heads import (
    MaskLogits,
    ScorePrediction,
    TransitionProbs,
    decode_boundaries,
    init_regressor_params,
    init_sap_params,
    init_tap_params,
    regress_score,
    sap_head,
    tap_head,
    tap_targets,
)
from core.losses import LOSS_NAMES, LossBreakdown, bce_loss, composite_loss, focal_loss, mse_loss
from core.numerics import ParameterSet, Tensor, div, stack
from core.streams_fusion import Sample, SampleBatch, StageBoundaries, collate, fuse
from core.temporal_attention import TcaParams, init_tca_params, pool_stages, tca_block

logger = logging.getLogger(__name__)


# --- DATA STRUCTURES ---
@dataclass
class AttentionRecord:
    gat: Optional[np.ndarray] = None  # (B, 4, 4) layer-1 attention averaged over snippets
    tca: Optional[np.ndarray] = None  # (B, 3, 3) query stage attention averaged over heads
    tca_heads: Optional[np.ndarray] = None  # (B, H, 3, 3)


@dataclass
class ForwardOutput:
    score: ScorePrediction
    transitions_query: TransitionProbs
    transitions_exemplar: TransitionProbs
    mask_logits: MaskLogits
    attention: AttentionRecord
    boundaries: List[StageBoundaries]  # query boundaries the stages were pooled with


class FineCausalModel:
    """
    Variant-aware forward engine. Absent modules own no parameters, so a ``gat_only``
    model has no ``tca.*`` names and a ``baseline`` model has neither family.
    """

    def __init__(self, cfg: RunConfig, dim: Optional[int] = None, mask_dim: Optional[int] = None):
        self.cfg = cfg
        self.variant = Variant(cfg.variant)
        self.dim = dim or cfg.data.feature_dim
        self.mask_dim = mask_dim or cfg.data.mask_dim
        rng = np.random.default_rng([cfg.seed, 0])

        self.params = ParameterSet()
        self.gat: Optional[GatParams] = None
        self.tca: Optional[TcaParams] = None
        if self.variant.uses_gat:
            self.gat = init_gat_params(self.params, rng, self.dim, cfg.attention_dim, cfg.residual_lambda_init)
        if self.variant.uses_tca:
            self.tca = init_tca_params(self.params, rng, self.dim, cfg.tca_heads)
        self.regressor = init_regressor_params(self.params, rng, self.dim)
        self.tap = init_tap_params(self.params, rng, self.dim)
        self.sap = init_sap_params(self.params, rng, self.dim, self.mask_dim)
        self.log_vars = self.params.add("loss.log_vars", np.zeros(len(LOSS_NAMES)))
        logger.debug("Built %s model with %d parameter tensors", self.variant.value, len(self.params))

    # --- FORWARD ---
    def snippet_features(self, batch: SampleBatch) -> Tuple[Tensor, Tensor, Optional[np.ndarray]]:
        """Per-snippet query/exemplar features after fusion and, if present, the GAT intervention."""
        query_fused = fuse(batch.query_original, batch.query_mask)
        exemplar_fused = fuse(batch.exemplar_original, batch.exemplar_mask)
        if self.gat is None:
            return query_fused, exemplar_fused, None
        nodes = snippet_nodes(batch.query_original, query_fused, batch.exemplar_original, exemplar_fused)
        deconfounded = deconfound_nodes(nodes, self.gat)
        return deconfounded.query, deconfounded.exemplar, deconfounded.attention_summary.numpy()

    def forward(self, batch: Union[Sample, SampleBatch], teacher_forcing: bool = True) -> ForwardOutput:
        """
        Teacher forcing pools the query with its ground-truth boundaries; otherwise they
        are decoded from the TAP output. The exemplar always uses its labelled boundaries.
        """
        if isinstance(batch, Sample):
            batch = collate([batch])
        query, exemplar, gat_attention = self.snippet_features(batch)

        transitions_query = tap_head(query, self.tap)
        transitions_exemplar = tap_head(exemplar, self.tap)
        if teacher_forcing:
            boundaries = [s.boundaries for s in batch.samples]
        else:
            boundaries = [decode_boundaries(p) for p in transitions_query.p.data]
        exemplar_boundaries = [s.exemplar_boundaries for s in batch.samples]

        stages_query = pool_stages(query, boundaries).S
        stages_exemplar = pool_stages(exemplar, exemplar_boundaries).S
        attention = AttentionRecord(gat=gat_attention)
        if self.tca is not None:
            stages_query, scores = tca_block(stages_query, self.tca)
            stages_exemplar, _ = tca_block(stages_exemplar, self.tca)
            attention.tca_heads = scores.numpy()
            attention.tca = scores.data.mean(axis=-3)

        score = regress_score(
            stages_query,
            stages_exemplar,
            batch.y_exemplar,
            self.regressor,
            stage_weights=self.cfg.stage_weights,
            score_scale=self.cfg.score_scale,
        )
        return ForwardOutput(
            score=score,
            transitions_query=transitions_query,
            transitions_exemplar=transitions_exemplar,
            mask_logits=sap_head(batch.query_original, self.sap),
            attention=attention,
            boundaries=boundaries,
        )

    # --- OBJECTIVE ---
    def loss(self, batch: SampleBatch, out: ForwardOutput) -> Tuple[Tensor, LossBreakdown]:
        l_sap = focal_loss(out.mask_logits.logits, batch.mask_targets, self.cfg.focal_alpha, self.cfg.focal_gamma)

        snippets = batch.snippets
        targets = np.stack([
            tap_targets([s.boundaries for s in batch.samples], snippets),
            tap_targets([s.exemplar_boundaries for s in batch.samples], snippets),
        ])
        probs = stack([out.transitions_query.p, out.transitions_exemplar.p])
        l_tap = bce_loss(probs, targets)

        # Regression error is measured in score_scale units
        scale = self.cfg.score_scale
        l_reg = mse_loss(div(out.score.score, scale), batch.y_query / scale)
        return composite_loss(l_sap, l_tap, l_reg, self.log_vars)

    def objective(self, batch: SampleBatch) -> Tensor:
        return self.loss(batch, self.forward(batch))[0]
