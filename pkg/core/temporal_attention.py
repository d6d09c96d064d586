"""
Temporal causal attention over the three stages of an action.

Per-snippet features are mean-pooled into forward/twist/entry stage vectors, then refined
by one masked multi-head self-attention block (residual + layer norm, no feed-forward).
The mask lets a stage attend to itself and earlier stages only, so the forward stage can
never be influenced by what happens at entry.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from core.errors import NonFiniteError, SampleError
from core.numerics import (
    DTYPE,
    ParameterSet,
    Tensor,
    add,
    div,
    glorot,
    layer_norm,
    matmul,
    reshape,
    softmax_masked,
    transpose,
)
from core.streams_fusion import StageBoundaries

# --- CONFIGURATIONS ---
STAGES = ("forward", "twist", "entry")
WEAK_THRESHOLD = 0.1


# --- DATA STRUCTURES ---
@dataclass
class StageFeatures:
    S: Tensor  # (..., 3, D) ordered forward, twist, entry
    boundaries: List[StageBoundaries]


@dataclass
class TcaParams:
    w_query: Tensor  # H x D x d_h
    w_key: Tensor  # H x D x d_h
    w_value: Tensor  # H x D x d_h
    w_out: Tensor  # (H * d_h) x D
    ln_scale: Tensor  # D
    ln_shift: Tensor  # D

    @property
    def heads(self) -> int:
        return self.w_query.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_query.shape[2]


@dataclass(frozen=True)
class StageInfluence:
    source: str
    target: str
    weight: float
    weak: bool


def init_tca_params(store: ParameterSet, rng: np.random.Generator, dim: int, heads: int = 2, prefix: str = "tca") -> TcaParams:
    if dim % heads != 0:
        raise ValueError(f"Feature dim {dim} is not divisible by {heads} heads")
    head_dim = dim // heads
    return TcaParams(
        w_query=store.add(f"{prefix}.w_query", glorot(rng, (heads, dim, head_dim))),
        w_key=store.add(f"{prefix}.w_key", glorot(rng, (heads, dim, head_dim))),
        w_value=store.add(f"{prefix}.w_value", glorot(rng, (heads, dim, head_dim))),
        w_out=store.add(f"{prefix}.w_out", glorot(rng, (heads * head_dim, dim))),
        ln_scale=store.add(f"{prefix}.ln_scale", np.ones(dim)),
        ln_shift=store.add(f"{prefix}.ln_shift", np.zeros(dim)),
    )


# --- POOLING ---
def pooling_matrix(boundaries: Sequence[StageBoundaries], snippets: int) -> np.ndarray:
    """(B, 3, T) matrix whose rows average the snippets of each stage."""
    weights = np.zeros((len(boundaries), len(STAGES), snippets), dtype=DTYPE)
    for b, bounds in enumerate(boundaries):
        if not bounds.is_valid(snippets):
            raise SampleError(f"Invalid stage boundaries ({bounds.t1}, {bounds.t2}) for T={snippets}")
        for stage, (start, stop) in enumerate(bounds.intervals(snippets)):
            weights[b, stage, start:stop] = 1.0 / (stop - start)
    return weights


def pool_stages(features: Tensor, boundaries: Union[StageBoundaries, Sequence[StageBoundaries]]) -> StageFeatures:
    """Mean-pools (T, D) or (B, T, D) snippet features into (…, 3, D) stage features."""
    if isinstance(boundaries, StageBoundaries):
        boundaries = [boundaries]
    boundaries = list(boundaries)
    snippets = features.shape[-2]
    weights = pooling_matrix(boundaries, snippets)
    if features.ndim == 2:
        if len(boundaries) != 1:
            raise SampleError("A single feature matrix takes exactly one set of boundaries")
        weights = weights[0]
    elif len(boundaries) != features.shape[0]:
        raise SampleError(f"Got {len(boundaries)} boundary pairs for a batch of {features.shape[0]}")
    return StageFeatures(matmul(Tensor(weights), features), boundaries)


# --- ATTENTION ---
def causal_mask(n: int = len(STAGES)) -> np.ndarray:
    """0 where stage j <= i may be attended to, -inf for future stages."""
    mask = np.zeros((n, n), dtype=DTYPE)
    mask[np.triu_indices(n, k=1)] = -np.inf
    return mask


def _split_heads(S: Tensor, weight: Tensor) -> Tensor:
    # (..., 3, D) -> (..., 1, 3, D) @ (H, D, d_h) -> (..., H, 3, d_h)
    expanded = reshape(S, S.shape[:-2] + (1,) + S.shape[-2:])
    return matmul(expanded, weight)


def tca_scores(S: Tensor, params: TcaParams) -> Tensor:
    """Per-head masked attention A = softmax(Q K^T / sqrt(d_h) + M), shape (..., H, 3, 3)."""
    if not np.all(np.isfinite(S.data)):
        raise NonFiniteError("Stage features contain non-finite values")
    queries = _split_heads(S, params.w_query)
    keys = _split_heads(S, params.w_key)
    logits = div(matmul(queries, transpose(keys)), float(np.sqrt(params.head_dim)))
    return softmax_masked(logits, causal_mask(S.shape[-2]))


def tca_block(S: Tensor, params: TcaParams) -> Tuple[Tensor, Tensor]:
    scores = tca_scores(S, params)
    heads_out = matmul(scores, _split_heads(S, params.w_value))  # (..., H, 3, d_h)
    nd = heads_out.ndim
    merged = transpose(heads_out, list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1])  # (..., 3, H, d_h)
    merged = reshape(merged, merged.shape[:-2] + (params.heads * params.head_dim,))
    refined = layer_norm(add(S, matmul(merged, params.w_out)), params.ln_scale, params.ln_shift)
    return refined, scores


def tca_forward(S: Tensor, params: TcaParams) -> Tensor:
    """refined = LayerNorm(S + W_o · concat_h(A_h V_h))."""
    return tca_block(S, params)[0]


# --- INTERPRETATION ---
def stage_influence(A, threshold: float = WEAK_THRESHOLD) -> List[StageInfluence]:
    """
    Reads a causal 3x3 stage-attention matrix as (source -> target, weight) triples.
    Row i is the attending stage, column j <= i the stage it draws on. Zero weights are
    skipped; weights below ``threshold`` are flagged as weak transitions.
    """
    matrix = np.asarray(A.data if isinstance(A, Tensor) else A, dtype=DTYPE)
    rows: List[StageInfluence] = []
    for i, target in enumerate(STAGES):
        for j in range(i + 1):
            weight = float(matrix[i, j])
            if weight == 0.0:
                continue
            rows.append(StageInfluence(STAGES[j], target, weight, weight < threshold))
    return rows
