import math

import numpy as np
import pytest

from core.errors import DimensionError, SampleError
from core.heads import (
    decode_boundaries,
    init_regressor_params,
    init_sap_params,
    init_tap_params,
    regress_score,
    sap_head,
    stage_differences,
    tap_head,
    tap_targets,
)
from core.numerics import ParameterSet, Tensor, grad_check, mean, mul
from core.streams_fusion import StageBoundaries


@pytest.fixture
def heads():
    store = ParameterSet()
    rng = np.random.default_rng(11)
    return store, init_tap_params(store, rng, 4), init_sap_params(store, rng, 4, 4), init_regressor_params(store, rng, 4)


# --- TAP ---
def test_tap_zero_weights_give_one_half(heads) -> None:
    _, tap, _, _ = heads
    tap.weight.data[...] = 0.0

    p = tap_head(Tensor(np.random.default_rng(0).standard_normal((9, 4))), tap).p.data

    np.testing.assert_allclose(p, 0.5)


def test_tap_bias_saturates(heads) -> None:
    _, tap, _, _ = heads
    tap.weight.data[...] = 0.0
    tap.bias.data[...] = [100.0, -100.0]

    p = tap_head(Tensor(np.ones((3, 4))), tap).p.data

    np.testing.assert_allclose(p[:, 0], 1.0)
    np.testing.assert_allclose(p[:, 1], 0.0, atol=1e-40)


@pytest.mark.parametrize("seed", range(5))
def test_tap_matches_linear_sigmoid_oracle(heads, seed: int) -> None:
    _, tap, _, _ = heads
    x = np.random.default_rng(seed).standard_normal((6, 4))

    p = tap_head(Tensor(x), tap).p.data

    for t in range(6):
        for c in range(2):
            z = sum(x[t, d] * tap.weight.data[d, c] for d in range(4)) + tap.bias.data[c]
            assert p[t, c] == pytest.approx(1.0 / (1.0 + math.exp(-z)), abs=1e-12)


def test_tap_rejects_wrong_feature_dim(heads) -> None:
    _, tap, _, _ = heads

    with pytest.raises(DimensionError):
        tap_head(Tensor(np.ones((5, 3))), tap)


def test_decode_peaked_columns() -> None:
    p = np.full((9, 2), 0.1)
    p[3, 0] = 0.9
    p[6, 1] = 0.8

    assert decode_boundaries(p) == StageBoundaries(3, 6)


def test_decode_respects_ordering() -> None:
    p = np.full((9, 2), 0.1)
    p[3, 0] = 0.9
    p[2, 1] = 0.95  # before t1, ignored
    p[7, 1] = 0.5

    assert decode_boundaries(p) == StageBoundaries(3, 7)


def test_decode_uniform_probabilities() -> None:
    assert decode_boundaries(np.full((9, 2), 0.5)) == StageBoundaries(1, 2)


def test_decode_always_valid(rng: np.random.Generator) -> None:
    for _ in range(200):
        T = int(rng.integers(3, 13))
        b = decode_boundaries(rng.uniform(size=(T, 2)))
        assert b.is_valid(T)


def test_decode_needs_three_snippets() -> None:
    with pytest.raises(SampleError):
        decode_boundaries(np.full((2, 2), 0.5))


def test_tap_targets_are_one_hot() -> None:
    targets = tap_targets([StageBoundaries(3, 6)], 9)

    assert targets.shape == (1, 9, 2)
    assert targets[0, 3, 0] == 1.0 and targets[0, 6, 1] == 1.0
    assert targets.sum() == 2.0


# --- SAP ---
def test_sap_zero_weights_give_zero_logits(heads) -> None:
    _, _, sap, _ = heads
    sap.weight.data[...] = 0.0

    assert np.all(sap_head(Tensor(np.ones((5, 4))), sap).logits.data == 0.0)


def test_sap_identity_map(heads, rng: np.random.Generator) -> None:
    _, _, sap, _ = heads
    sap.weight.data[...] = np.eye(4)
    x = rng.standard_normal((5, 4))

    np.testing.assert_array_equal(sap_head(Tensor(x), sap).logits.data, x)


# --- REGRESSOR ---
def oracle_regressor(q, e, y_e, params, weights, scale) -> float:
    lam = [w / (sum(weights) / 3) for w in weights]
    flat = [lam[s] * (q[s, d] - e[s, d]) for s in range(3) for d in range(q.shape[1])]
    w1, b1, w2, b2 = (p.data for p in (params.w1, params.b1, params.w2, params.b2))
    hidden = []
    for k in range(w1.shape[1]):
        z = sum(flat[m] * w1[m, k] for m in range(len(flat))) + b1[k]
        hidden.append(z if z > 0 else math.expm1(z))
    out = sum(hidden[k] * w2[k, 0] for k in range(len(hidden))) + b2[0]
    return y_e + scale * out


@pytest.mark.parametrize("seed", range(20))
def test_regressor_matches_two_layer_oracle(heads, seed: int) -> None:
    _, _, _, reg = heads
    rng = np.random.default_rng(seed)
    reg.b1.data[...] = rng.standard_normal(8) * 0.1
    q, e = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))

    pred = regress_score(Tensor(q[None]), Tensor(e[None]), [42.0], reg, stage_weights=(3, 5, 2), score_scale=10.0)

    expected = oracle_regressor(q, e, 42.0, reg, (3, 5, 2), 10.0)
    assert pred.y_query[0] == pytest.approx(expected, abs=1e-10)


def test_identical_videos_give_exemplar_score(heads, rng: np.random.Generator) -> None:
    _, _, _, reg = heads
    S = Tensor(rng.standard_normal((2, 3, 4)))

    pred = regress_score(S, S, [55.0, 70.0], reg, score_scale=10.0)

    np.testing.assert_array_equal(pred.delta, [0.0, 0.0])
    np.testing.assert_array_equal(pred.y_query, [55.0, 70.0])


def test_zero_parameters_give_zero_delta(heads, rng: np.random.Generator) -> None:
    _, _, _, reg = heads
    for p in (reg.w1, reg.b1, reg.w2, reg.b2):
        p.data[...] = 0.0

    pred = regress_score(Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((3, 4))), 30.0, reg)

    assert pred.delta == 0.0
    assert pred.y_query == 30.0


def test_prediction_is_exemplar_plus_delta(heads, rng: np.random.Generator) -> None:
    _, _, _, reg = heads
    y_e = rng.uniform(0, 100, size=4)

    pred = regress_score(Tensor(rng.standard_normal((4, 3, 4))), Tensor(rng.standard_normal((4, 3, 4))), y_e, reg, score_scale=10.0)

    np.testing.assert_array_equal(pred.y_query, pred.y_exemplar + pred.delta)


def test_stage_differences_are_antisymmetric(rng: np.random.Generator) -> None:
    q, e = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((3, 4)))

    forward = stage_differences(q, e, (3, 5, 2)).data
    swapped = stage_differences(e, q, (3, 5, 2)).data

    np.testing.assert_array_equal(swapped, -forward)
    # weights are normalized to mean one
    np.testing.assert_allclose(forward[1], 1.5 * (q.data[1] - e.data[1]))


def test_regressor_rejects_mismatched_stages(heads) -> None:
    _, _, _, reg = heads

    with pytest.raises(DimensionError):
        regress_score(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 5))), 0.0, reg)


def test_heads_pass_grad_check(heads, rng: np.random.Generator) -> None:
    store, tap, sap, reg = heads
    x = Tensor(rng.standard_normal((2, 5, 4)))
    q, e = Tensor(rng.standard_normal((2, 3, 4))), Tensor(rng.standard_normal((2, 3, 4)))
    w_tap, w_sap = rng.standard_normal((2, 5, 2)), rng.standard_normal((2, 5, 4))

    def closure() -> Tensor:
        score = regress_score(q, e, [10.0, 20.0], reg, (3, 5, 2), 1.0).score
        return mean(mul(tap_head(x, tap).p, w_tap)) + mean(mul(sap_head(x, sap).logits, w_sap)) + mean(mul(score, score))

    reports = grad_check(closure, store)

    assert all(r.passed for r in reports), [r for r in reports if not r.passed]
