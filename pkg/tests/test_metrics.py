import json
import math

import numpy as np
import pytest

from core.errors import DatasetParseError, DegenerateRangeError, IntervalError, UndefinedCorrelationError
from core.metrics import (
    PredictionRecord,
    aiou,
    compute_report,
    interval_iou,
    mean_stage_iou,
    read_predictions,
    relative_l2,
    report_from_predictions,
    spearman,
    write_predictions,
)

# THIS FILE TESTS THE SCORE AND STAGE METRICS AND THE PREDICTIONS FILE.


def oracle_spearman(a, b) -> float:
    def ranks(values):
        out = []
        for v in values:
            below = sum(1 for w in values if w < v)
            equal = sum(1 for w in values if w == v)
            out.append(below + (equal + 1) / 2)
        return out

    ra, rb = ranks(list(a)), ranks(list(b))
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    return cov / math.sqrt(va * vb)


# --- SPEARMAN ---
def test_spearman_identity_and_reversal() -> None:
    y = [3.0, 1.0, 4.0, 1.5, 9.0]

    assert spearman(y, y) == pytest.approx(1.0)
    assert spearman(y, [-v for v in y]) == pytest.approx(-1.0)


def test_spearman_one_swap() -> None: # ! d^2 = 2 over five items
    assert spearman([1, 2, 3, 4, 5], [1, 3, 2, 4, 5]) == pytest.approx(0.9, abs=1e-12)


def test_spearman_matches_brute_force_with_ties(rng: np.random.Generator) -> None:
    for _ in range(100):
        n = int(rng.integers(3, 15))
        a = rng.integers(0, 5, size=n).astype(float)
        b = rng.integers(0, 5, size=n).astype(float)
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        assert spearman(a, b) == pytest.approx(oracle_spearman(a, b), abs=1e-12)


def test_spearman_is_rank_invariant(rng: np.random.Generator) -> None:
    a, b = rng.standard_normal(20), rng.standard_normal(20)

    assert spearman(np.exp(a), b ** 3) == pytest.approx(spearman(a, b), abs=1e-12)


def test_spearman_rejects_constant_input() -> None:
    with pytest.raises(UndefinedCorrelationError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        spearman([1.0], [1.0])


# --- RELATIVE L2 ---
def test_relative_l2_closed_form() -> None:
    assert relative_l2([0, 100], [10, 100]) == pytest.approx(0.5)
    assert relative_l2([0, 50, 100], [0, 50, 100]) == 0.0


def test_relative_l2_invariances(rng: np.random.Generator) -> None:
    y, y_hat = rng.uniform(0, 100, 30), rng.uniform(0, 100, 30)
    base = relative_l2(y, y_hat)

    assert relative_l2(y + 17.0, y_hat + 17.0) == pytest.approx(base, rel=1e-10)
    assert relative_l2(2.5 * y, 2.5 * y_hat) == pytest.approx(base, rel=1e-10)


def test_relative_l2_needs_a_range() -> None:
    with pytest.raises(DegenerateRangeError):
        relative_l2([5.0, 5.0], [4.0, 6.0])


# --- AIOU ---
TRUE = [(0, 3), (3, 7), (7, 10)]
SHIFTED = [(0, 2), (2, 6), (6, 10)]


def test_interval_iou() -> None:
    assert interval_iou((0, 3), (0, 3)) == 1.0
    assert interval_iou((0, 2), (2, 4)) == 0.0
    assert interval_iou((3, 7), (2, 6)) == pytest.approx(0.6)


def test_aiou_identity() -> None:
    assert aiou([TRUE], [TRUE]) == {0.5: 1.0, 0.75: 1.0}


def test_aiou_far_off_parse() -> None:
    pred = [(0, 7), (7, 8), (8, 10)]

    assert mean_stage_iou(TRUE, pred) < 0.5
    assert aiou([TRUE], [pred]) == {0.5: 0.0, 0.75: 0.0}


def test_aiou_threshold_rule() -> None: # ! (2/3 + 3/5 + 3/4) / 3 sits between the thresholds
    assert mean_stage_iou(TRUE, SHIFTED) == pytest.approx((2 / 3 + 0.6 + 0.75) / 3)
    assert aiou([TRUE], [SHIFTED]) == {0.5: 1.0, 0.75: 0.0}


def test_aiou_is_a_fraction_of_samples() -> None:
    result = aiou([TRUE, TRUE, TRUE, TRUE], [TRUE, SHIFTED, SHIFTED, TRUE], thresholds=(0.5, 0.75, 0.9))

    assert result == {0.5: 1.0, 0.75: 0.5, 0.9: 0.5}
    assert list(result.values()) == sorted(result.values(), reverse=True)


def test_invalid_partitions_raise() -> None:
    with pytest.raises(IntervalError):
        mean_stage_iou([(0, 3), (3, 3), (3, 10)], TRUE)
    with pytest.raises(IntervalError):
        mean_stage_iou([(0, 3), (4, 7), (7, 10)], TRUE)
    with pytest.raises(IntervalError):
        mean_stage_iou([(0, 3), (3, 10)], TRUE)
    with pytest.raises(IntervalError):
        mean_stage_iou([(0, 3), (3, 7), (7, 9)], TRUE)


# --- REPORTS AND FILES ---
@pytest.fixture
def records():
    """Four predictions with a perfect ranking and one misparsed clip."""
    return [
        PredictionRecord("a", 10.0, 12.0, TRUE, TRUE),
        PredictionRecord("b", 40.0, 38.0, TRUE, SHIFTED),
        PredictionRecord("c", 70.0, 71.0, TRUE, TRUE),
        PredictionRecord("d", 90.0, 93.0, TRUE, TRUE),
    ]


def test_compute_report(records) -> None:
    report = compute_report(records)

    assert report.rho == pytest.approx(1.0)
    assert report.r_l2_x100 == pytest.approx(100 * np.mean(np.array([2, 2, 1, 3]) ** 2 / 80 ** 2))
    assert report.to_dict() == {
        "rho": report.rho,
        "r_l2_x100": report.r_l2_x100,
        "aiou@0.5": 1.0,
        "aiou@0.75": 0.75,
    }


def test_predictions_file_round_trip(records, tmp_path) -> None:
    path = write_predictions(records, tmp_path / "predictions.jsonl")

    assert read_predictions(path) == records
    assert report_from_predictions(path) == compute_report(records)
    assert set(json.loads(path.read_text().splitlines()[0])) == {"id", "y_true", "y_pred", "intervals_true", "intervals_pred"}


def test_corrupted_predictions_name_the_line(records, tmp_path) -> None:
    path = write_predictions(records, tmp_path / "predictions.jsonl")
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:-5]
    path.write_text("\n".join(lines) + "\n")

    with pytest.raises(DatasetParseError, match="line 3"):
        read_predictions(path)
