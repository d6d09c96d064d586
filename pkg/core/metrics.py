"""
Evaluation metrics for score regression and stage parsing.

Spearman's rho and the relative L2 distance judge the predicted scores; AIoU judges
how well the decoded stage intervals line up with the ground truth.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.errors import DatasetParseError, DegenerateRangeError, IntervalError, UndefinedCorrelationError

# --- CONFIGURATIONS ---
AIOU_THRESHOLDS = (0.5, 0.75)

Interval = Tuple[int, int]


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    y_true: float
    y_pred: float
    intervals_true: List[Interval]
    intervals_pred: List[Interval]


@dataclass
class MetricReport:
    rho: float
    r_l2_x100: float
    aiou: Dict[float, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, float]:
        out = {"rho": self.rho, "r_l2_x100": self.r_l2_x100}
        for threshold, value in sorted(self.aiou.items()):
            out[f"aiou@{threshold:g}"] = value
        return out


# HELPER -> Validates paired score vectors.
def _paired(y_true: Sequence[float], y_pred: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true, dtype=np.float64).reshape(-1)
    b = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"Length mismatch: {a.size} ground-truth vs {b.size} predicted scores")
    if a.size < 2:
        raise ValueError("At least two samples are needed")
    return a, b


# --- SCORE METRICS ---
def spearman(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    """Pearson correlation of average ranks, so ties share the mean of their positions."""
    a, b = _paired(y_true, y_pred)
    ranks_a = pd.Series(a).rank(method="average").to_numpy()
    ranks_b = pd.Series(b).rank(method="average").to_numpy()
    da, db = ranks_a - ranks_a.mean(), ranks_b - ranks_b.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0:
        raise UndefinedCorrelationError("Spearman correlation is undefined for constant input")
    return float(np.clip(np.sum(da * db) / denom, -1.0, 1.0))


def relative_l2(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    """100 * mean((|y - y_hat| / (y_max - y_min))^2), range taken over the ground truth."""
    a, b = _paired(y_true, y_pred)
    span = a.max() - a.min()
    if span <= 0:
        raise DegenerateRangeError("Relative L2 needs ground-truth scores with a non-zero range")
    return float(100.0 * np.mean((np.abs(a - b) / span) ** 2))


# --- STAGE METRICS ---
def _check_partition(intervals: Sequence[Interval]) -> List[Interval]:
    intervals = [(int(start), int(stop)) for start, stop in intervals]
    if len(intervals) != 3:
        raise IntervalError(f"Expected 3 stage intervals, got {len(intervals)}")
    cursor = 0
    for start, stop in intervals:
        if stop <= start:
            raise IntervalError(f"Empty stage interval [{start}, {stop})")
        if start != cursor:
            raise IntervalError(f"Stage intervals do not partition the clip: gap or overlap at {start}")
        cursor = stop
    return intervals


def interval_iou(a: Interval, b: Interval) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def mean_stage_iou(true: Sequence[Interval], pred: Sequence[Interval]) -> float:
    true, pred = _check_partition(true), _check_partition(pred)
    if true[-1][1] != pred[-1][1]:
        raise IntervalError(f"Intervals cover different clip lengths: {true[-1][1]} vs {pred[-1][1]}")
    return float(np.mean([interval_iou(t, p) for t, p in zip(true, pred)]))


def aiou(
    intervals_true: Sequence[Sequence[Interval]],
    intervals_pred: Sequence[Sequence[Interval]],
    thresholds: Iterable[float] = AIOU_THRESHOLDS,
) -> Dict[float, float]:
    if len(intervals_true) != len(intervals_pred):
        raise ValueError(f"Length mismatch: {len(intervals_true)} vs {len(intervals_pred)} samples")
    if not intervals_true:
        raise ValueError("At least one sample is needed")
    ious = np.array([mean_stage_iou(t, p) for t, p in zip(intervals_true, intervals_pred)])
    return {float(tau): float(np.mean(ious >= tau)) for tau in thresholds}


def compute_report(records: Sequence[PredictionRecord], thresholds: Iterable[float] = AIOU_THRESHOLDS) -> MetricReport:
    y_true = [r.y_true for r in records]
    y_pred = [r.y_pred for r in records]
    return MetricReport(
        rho=spearman(y_true, y_pred),
        r_l2_x100=relative_l2(y_true, y_pred),
        aiou=aiou([r.intervals_true for r in records], [r.intervals_pred for r in records], thresholds),
    )


# --- PREDICTION FILES ---
def write_predictions(records: Sequence[PredictionRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for r in records:
            row = {
                "id": r.id,
                "y_true": r.y_true,
                "y_pred": r.y_pred,
                "intervals_true": [list(i) for i in r.intervals_true],
                "intervals_pred": [list(i) for i in r.intervals_pred],
            }
            handle.write(json.dumps(row) + "\n")
    return path


def read_predictions(path: Union[str, Path]) -> List[PredictionRecord]:
    records: List[PredictionRecord] = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                records.append(PredictionRecord(
                    id=str(row["id"]),
                    y_true=float(row["y_true"]),
                    y_pred=float(row["y_pred"]),
                    intervals_true=[tuple(i) for i in row["intervals_true"]],
                    intervals_pred=[tuple(i) for i in row["intervals_pred"]],
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetParseError(f"bad prediction record ({exc})", line_number) from exc
    return records


def report_from_predictions(path: Union[str, Path]) -> MetricReport:
    return compute_report(read_predictions(path))
