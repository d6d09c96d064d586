from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from core.errors import DimensionError, NonFiniteError, SampleError
from core.numerics import (
    DTYPE,
    Tensor,
    add,
    clip,
    exp,
    log,
    mean,
    mul,
    neg,
    power,
    sigmoid,
    stack,
    sub,
    sum_,
)

# --- CONFIGURATIONS ---
PROB_FLOOR = 1e-7
LOSS_NAMES = ("sap", "tap", "reg")


@dataclass
class LossBreakdown:
    l_sap: float
    l_tap: float
    l_reg: float
    weighted_total: float
    log_variances: Sequence[float]

    def to_dict(self) -> Dict[str, object]:
        return {
            "l_sap": self.l_sap,
            "l_tap": self.l_tap,
            "l_reg": self.l_reg,
            "weighted_total": self.weighted_total,
            "log_variances": [float(s) for s in self.log_variances],
        }


# HELPER -> Shape and label checks shared by the classification losses.
def _check_targets(values: Tensor, targets) -> np.ndarray:
    targets = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=DTYPE)
    if targets.shape != values.shape:
        raise DimensionError(f"Prediction shape {values.shape} does not match target shape {targets.shape}")
    if not np.all((targets == 0) | (targets == 1)):
        raise SampleError("Targets must be 0/1")
    return targets


def focal_loss(logits: Tensor, targets, alpha: Optional[float] = 0.25, gamma: float = 2.0) -> Tensor:
    """
    Mean of -alpha_t (1 - p_t)^gamma log p_t. ``alpha=None`` weights both classes by 1,
    which with gamma=0 is exactly binary cross-entropy on sigmoid(logits).
    """
    if alpha is not None and not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    t = _check_targets(logits, targets)
    probs = sigmoid(logits)
    p_t = add(mul(probs, 2.0 * t - 1.0), 1.0 - t)  # p for positives, 1 - p for negatives
    log_p_t = log(clip(p_t, PROB_FLOOR, 1.0))
    modulating = power(sub(1.0, p_t), gamma)
    per_element = neg(mul(modulating, log_p_t))
    if alpha is not None:
        per_element = mul(per_element, np.where(t == 1, alpha, 1.0 - alpha))
    return mean(per_element)


def bce_loss(probs: Tensor, targets) -> Tensor:
    t = _check_targets(probs, targets)
    p = clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    per_element = add(mul(log(p), t), mul(log(sub(1.0, p)), 1.0 - t))
    return neg(mean(per_element))


def mse_loss(pred, target) -> Tensor:
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise DimensionError(f"Prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.size < 1:
        raise DimensionError("mse_loss needs at least one element")
    diff = sub(pred, target)
    return mean(mul(diff, diff))


def uncertainty_weighted_total(losses: Sequence[Tensor], log_vars: Tensor) -> Tensor:
    """sum_i exp(-s_i) * l_i + s_i; with every s_i = 0 this is the plain sum."""
    if len(losses) != log_vars.shape[0]:
        raise DimensionError(f"{len(losses)} losses but {log_vars.shape[0]} log-variances")
    stacked = stack([loss if isinstance(loss, Tensor) else Tensor(loss) for loss in losses])
    if not np.all(np.isfinite(stacked.data)):
        raise NonFiniteError(f"Non-finite loss component(s): {stacked.data.tolist()}")
    return sum_(add(mul(exp(neg(log_vars)), stacked), log_vars))


def composite_loss(l_sap: Tensor, l_tap: Tensor, l_reg: Tensor, log_vars: Tensor):
    """Returns the differentiable total and its float breakdown."""
    total = uncertainty_weighted_total([l_sap, l_tap, l_reg], log_vars)
    breakdown = LossBreakdown(
        l_sap=l_sap.item(),
        l_tap=l_tap.item(),
        l_reg=l_reg.item(),
        weighted_total=total.item(),
        log_variances=log_vars.data.tolist(),
    )
    return total, breakdown
