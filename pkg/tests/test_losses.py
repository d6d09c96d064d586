import math

import numpy as np
import pytest

from core.errors import DimensionError, SampleError
from core.losses import bce_loss, composite_loss, focal_loss, mse_loss, uncertainty_weighted_total
from core.numerics import Parameter, Tensor, grad_check, sigmoid

# THIS FILE TESTS THE THREE TRAINING LOSSES AND THEIR LEARNED WEIGHTING.


def oracle_focal(logits, targets, alpha, gamma) -> float:
	total = 0.0
	for z, t in zip(logits, targets):
		p = 1.0 / (1.0 + math.exp(-z))
		p_t = p if t == 1 else 1.0 - p
		a_t = 1.0 if alpha is None else (alpha if t == 1 else 1.0 - alpha)
		total += -a_t * (1.0 - p_t) ** gamma * math.log(max(p_t, 1e-7))
	return total / len(logits)


# --- FOCAL ---
def test_focal_closed_form() -> None: # ! p=0.5, target 1, alpha .25, gamma 2
	loss = focal_loss(Tensor([0.0]), [1.0], alpha=0.25, gamma=2.0).item()

	assert loss == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)


def test_focal_perfect_prediction_is_zero() -> None:
	assert focal_loss(Tensor([50.0, -50.0]), [1.0, 0.0]).item() == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_focal_matches_scalar_oracle(seed: int) -> None:
	rng = np.random.default_rng(seed)
	logits = rng.standard_normal(12) * 3
	targets = (rng.uniform(size=12) > 0.5).astype(float)
	alpha = [None, 0.25, 0.5, 0.9][seed % 4]
	gamma = [0.0, 1.0, 2.0, 3.5][seed % 4]

	loss = focal_loss(Tensor(logits), targets, alpha=alpha, gamma=gamma).item()

	assert loss == pytest.approx(oracle_focal(logits, targets, alpha, gamma), abs=1e-10)


def test_focal_without_focusing_is_bce(rng: np.random.Generator) -> None:
	for _ in range(20):
		logits = Tensor(rng.standard_normal((4, 3)) * 2)
		targets = (rng.uniform(size=(4, 3)) > 0.5).astype(float)

		focal = focal_loss(logits, targets, alpha=None, gamma=0.0).item()
		bce = bce_loss(sigmoid(logits), targets).item()

		assert focal == pytest.approx(bce, abs=1e-10)


def test_focal_rejects_bad_targets_and_shapes() -> None:
	with pytest.raises(SampleError):
		focal_loss(Tensor([0.0, 1.0]), [1.0, 0.5])
	with pytest.raises(DimensionError):
		focal_loss(Tensor([0.0, 1.0]), [1.0])
	with pytest.raises(ValueError):
		focal_loss(Tensor([0.0]), [1.0], alpha=0.0)


def test_focal_gradient(rng: np.random.Generator) -> None:
	logits = Parameter("logits", rng.standard_normal(8))
	targets = (rng.uniform(size=8) > 0.5).astype(float)

	assert grad_check(lambda: focal_loss(logits, targets), [logits])[0].passed


# --- BCE ---
def test_bce_closed_forms() -> None:
	assert bce_loss(Tensor([0.5, 0.5]), [1.0, 0.0]).item() == pytest.approx(math.log(2), abs=1e-12)
	assert bce_loss(Tensor([0.9, 0.2]), [1.0, 0.0]).item() == pytest.approx(
		(-math.log(0.9) - math.log(0.8)) / 2, abs=1e-12
	)


def test_bce_of_exact_targets_is_near_zero() -> None:
	assert bce_loss(Tensor([1.0, 0.0, 1.0]), [1.0, 0.0, 1.0]).item() < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_bce_matches_scalar_oracle(seed: int) -> None:
	rng = np.random.default_rng(seed)
	p = rng.uniform(0.01, 0.99, size=10)
	t = (rng.uniform(size=10) > 0.5).astype(float)

	expected = -sum(ti * math.log(pi) + (1 - ti) * math.log(1 - pi) for pi, ti in zip(p, t)) / 10

	assert bce_loss(Tensor(p), t).item() == pytest.approx(expected, abs=1e-10)


# --- MSE ---
def test_mse_closed_forms() -> None:
	assert mse_loss(Tensor([1.0, 3.0]), [0.0, 0.0]).item() == 5.0
	assert mse_loss(Tensor([2.0, 4.0]), [2.0, 4.0]).item() == 0.0
	assert mse_loss(Tensor([1.5, -0.5]), [0.0, -2.0]).item() == pytest.approx(2.25)


def test_mse_is_permutation_invariant(rng: np.random.Generator) -> None:
	pred, target = rng.standard_normal(7), rng.standard_normal(7)
	perm = rng.permutation(7)

	assert mse_loss(Tensor(pred), target).item() == pytest.approx(mse_loss(Tensor(pred[perm]), target[perm]).item(), abs=1e-14)


# --- WEIGHTING ---
def test_unit_weights_recover_plain_sum() -> None:
	total = uncertainty_weighted_total([Tensor(1.0), Tensor(2.0), Tensor(3.0)], Tensor(np.zeros(3)))

	assert total.item() == 6.0


def test_zero_losses_leave_the_log_variances() -> None:
	total = uncertainty_weighted_total([Tensor(0.0)] * 3, Tensor(np.ones(3)))

	assert total.item() == pytest.approx(3.0)


def test_weighting_closed_form() -> None:
	s = Tensor(np.array([0.0, math.log(2), math.log(2)]))

	total = uncertainty_weighted_total([Tensor(1.0), Tensor(2.0), Tensor(3.0)], s)

	assert total.item() == pytest.approx(1 + (1 + math.log(2)) + (1.5 + math.log(2)), abs=1e-12)


def test_log_variance_gradient_is_one_minus_weighted_loss() -> None:
	s = Parameter("loss.log_vars", np.array([0.3, -0.2, 1.1]))
	l = np.array([0.7, 1.9, 0.4])

	uncertainty_weighted_total([Tensor(v) for v in l], s).backward()

	np.testing.assert_allclose(s.grad, 1.0 - np.exp(-s.data) * l)
	s.zero_grad()
	assert grad_check(lambda: uncertainty_weighted_total([Tensor(v) for v in l], s), [s])[0].passed


def test_composite_breakdown_matches_components() -> None:
	s = Parameter("loss.log_vars", np.zeros(3))

	total, breakdown = composite_loss(Tensor(0.5), Tensor(0.25), Tensor(2.0), s)

	assert breakdown.weighted_total == total.item() == 2.75
	assert breakdown.to_dict()["log_variances"] == [0.0, 0.0, 0.0]
	assert set(breakdown.to_dict()) == {"l_sap", "l_tap", "l_reg", "weighted_total", "log_variances"}


def test_losses_are_non_negative(rng: np.random.Generator) -> None:
	logits = Tensor(rng.standard_normal(16))
	t = (rng.uniform(size=16) > 0.5).astype(float)

	assert focal_loss(logits, t).item() >= 0
	assert bce_loss(sigmoid(logits), t).item() >= 0
