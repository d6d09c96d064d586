from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core.errors import DimensionError, SampleError
from core.numerics import (
    DTYPE,
    ParameterSet,
    Tensor,
    add,
    elu,
    glorot,
    linear,
    mul,
    reshape,
    sigmoid,
    sub,
)
from core.streams_fusion import StageBoundaries

# --- CONFIGURATIONS ---
TRANSITIONS = ("forward_to_twist", "twist_to_entry")


# --- DATA STRUCTURES ---
@dataclass
class TapParams:
    weight: Tensor  # D x 2
    bias: Tensor  # 2


@dataclass
class SapParams:
    weight: Tensor  # D x D_m
    bias: Tensor  # D_m


@dataclass
class RegressorParams:
    w1: Tensor  # 3D x 2D
    b1: Tensor  # 2D
    w2: Tensor  # 2D x 1
    b2: Tensor  # 1


@dataclass
class TransitionProbs:
    p: Tensor  # (..., T, 2)


@dataclass
class MaskLogits:
    logits: Tensor  # (..., T, D_m)


@dataclass
class ScorePrediction:
    """The differentiable query score plus plain copies for reporting."""

    score: Tensor  # (B,) y_exemplar + delta
    delta: np.ndarray
    y_query: np.ndarray
    y_exemplar: np.ndarray


def init_tap_params(store: ParameterSet, rng: np.random.Generator, dim: int) -> TapParams:
    return TapParams(
        weight=store.add("tap.weight", glorot(rng, (dim, len(TRANSITIONS))), group="tap"),
        bias=store.add("tap.bias", np.zeros(len(TRANSITIONS)), group="tap"),
    )


def init_sap_params(store: ParameterSet, rng: np.random.Generator, dim: int, mask_dim: int) -> SapParams:
    return SapParams(
        weight=store.add("sap.weight", glorot(rng, (dim, mask_dim)), group="sap"),
        bias=store.add("sap.bias", np.zeros(mask_dim), group="sap"),
    )


def init_regressor_params(store: ParameterSet, rng: np.random.Generator, dim: int) -> RegressorParams:
    hidden = 2 * dim
    return RegressorParams(
        w1=store.add("regressor.w1", glorot(rng, (3 * dim, hidden))),
        b1=store.add("regressor.b1", np.zeros(hidden)),
        w2=store.add("regressor.w2", glorot(rng, (hidden, 1))),
        b2=store.add("regressor.b2", np.zeros(1)),
    )


# --- TEMPORAL ACTION PARSER ---
def tap_head(features: Tensor, params: TapParams) -> TransitionProbs:
    """Per-snippet linear map D -> 2 followed by a sigmoid."""
    if features.shape[-1] != params.weight.shape[0]:
        raise DimensionError(f"TAP head expects D={params.weight.shape[0]}, got features of shape {features.shape}")
    return TransitionProbs(sigmoid(linear(features, params.weight, params.bias)))


# HELPER -> First index of the maximum inside [start, stop).
def _argmax_in(column: np.ndarray, start: int, stop: int) -> int:
    return start + int(np.argmax(column[start:stop]))


def decode_boundaries(probs) -> StageBoundaries:
    """
    Turns one (T, 2) transition map into valid boundaries. t1 is searched over [1, T-2]
    and t2 over [t1+1, T-1]; np.argmax already returns the earliest index on ties.
    """
    p = np.asarray(probs.p.data if isinstance(probs, TransitionProbs) else probs, dtype=DTYPE)
    if p.ndim != 2 or p.shape[1] != 2:
        raise DimensionError(f"Expected a T x 2 transition map, got shape {p.shape}")
    snippets = p.shape[0]
    if snippets < 3:
        raise SampleError(f"Cannot decode three stages from T={snippets} snippets")
    t1 = _argmax_in(p[:, 0], 1, snippets - 1)
    t2 = _argmax_in(p[:, 1], t1 + 1, snippets)
    return StageBoundaries(t1, t2)


def tap_targets(boundaries: Sequence[StageBoundaries], snippets: int) -> np.ndarray:
    """(B, T, 2) one-hot transition indicators: target[t1, 0] = target[t2, 1] = 1."""
    targets = np.zeros((len(boundaries), snippets, len(TRANSITIONS)), dtype=DTYPE)
    for b, bounds in enumerate(boundaries):
        bounds.check(snippets)
        targets[b, bounds.t1, 0] = 1.0
        targets[b, bounds.t2, 1] = 1.0
    return targets


# --- SPATIAL ACTION PARSER ---
def sap_head(original: Tensor, params: SapParams) -> MaskLogits:
    if original.shape[-1] != params.weight.shape[0]:
        raise DimensionError(f"SAP head expects D={params.weight.shape[0]}, got features of shape {original.shape}")
    return MaskLogits(linear(original, params.weight, params.bias))


# --- SCORE REGRESSION ---
def normalized_stage_weights(stage_weights: Optional[Sequence[float]]) -> np.ndarray:
    if stage_weights is None:
        return np.ones(3, dtype=DTYPE)
    weights = np.asarray(stage_weights, dtype=DTYPE)
    return weights / weights.mean()


def stage_differences(refined_q: Tensor, refined_e: Tensor, stage_weights: Optional[Sequence[float]] = None) -> Tensor:
    """d_s = lambda_s * (q_s - e_s) for each stage; lambda normalized to mean 1."""
    if refined_q.shape != refined_e.shape or refined_q.shape[-2] != 3:
        raise DimensionError(f"Stage features must share a (..., 3, D) shape, got {refined_q.shape} and {refined_e.shape}")
    weights = normalized_stage_weights(stage_weights).reshape(3, 1)
    return mul(sub(refined_q, refined_e), weights)


def regress_score(
    refined_q: Tensor,
    refined_e: Tensor,
    y_exemplar,
    params: RegressorParams,
    stage_weights: Optional[Sequence[float]] = None,
    score_scale: float = 1.0,
) -> ScorePrediction:
    """
    Contrastive regression: y_query = y_exemplar + delta, where delta comes from a
    two-layer ELU perceptron over the concatenated stage differences.
    """
    diffs = stage_differences(refined_q, refined_e, stage_weights)
    flat = reshape(diffs, diffs.shape[:-2] + (3 * diffs.shape[-1],))
    if flat.shape[-1] != params.w1.shape[0]:
        raise DimensionError(f"Regressor expects {params.w1.shape[0]} inputs, got {flat.shape[-1]}")
    hidden = elu(linear(flat, params.w1, params.b1))
    out = linear(hidden, params.w2, params.b2)
    delta = mul(reshape(out, out.shape[:-1]), float(score_scale))

    y_e = np.asarray(y_exemplar, dtype=DTYPE).reshape(delta.shape)
    score = add(delta, y_e)
    return ScorePrediction(score=score, delta=delta.numpy(), y_query=score.numpy(), y_exemplar=y_e.copy())
