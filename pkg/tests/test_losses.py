import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agegrad import tensor as T
from agegrad.errors import ConfigError, ShapeError
from agegrad.gradcheck import grad_check
from agegrad.losses import (
    LossSpec,
    adaptive_loss,
    huber_loss,
    inverse_frequency_weights,
    mae_loss,
    mse_loss,
    standard_loss,
    weighted_mse_loss,
)


def _pair(pred, target, dtype=np.float64):
    return T.Tensor(np.asarray(pred, dtype=dtype)), T.Tensor(np.asarray(target, dtype=dtype))


class TestAdaptiveLoss:
    def test_zero_at_zero_error(self):
        p, t = _pair([10.0, 20.0], [10.0, 20.0])
        assert adaptive_loss(p, t).item() == 0.0

    def test_unit_error_sigma_two(self):
        # (1+2) * 1 / (1+2) = 1
        p, t = _pair([1.0], [0.0])
        assert abs(adaptive_loss(p, t, 2.0).item() - 1.0) < 1e-6

    def test_error_four_sigma_two(self):
        # 3 * 16 / 6 = 8
        p, t = _pair([4.0], [0.0])
        assert abs(adaptive_loss(p, t, 2.0).item() - 8.0) < 1e-6

    def test_matches_formula_on_batch(self, rng):
        pred = rng.uniform(0, 80, 32)
        target = rng.uniform(0, 80, 32)
        sigma = 2.0
        e = pred - target
        expected = (1 + sigma) / 32 * np.sum(e**2 / (np.abs(e) + sigma))
        p, t = _pair(pred, target)
        assert abs(adaptive_loss(p, t, sigma).item() - expected) < 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.01, 60.0), st.floats(0.5, 5.0))
    def test_even_and_increasing_in_abs_error(self, e, sigma):
        def value(err):
            p, t = _pair([err], [0.0])
            return adaptive_loss(p, t, sigma).item()

        assert abs(value(e) - value(-e)) < 1e-9
        assert value(e * 1.1) > value(e)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-40, 40), min_size=1, max_size=16), st.floats(0.5, 5.0))
    def test_bounded_by_scaled_mse(self, errors, sigma):
        e = np.array(errors)
        p, t = _pair(e, np.zeros_like(e))
        bound = (1 + sigma) / sigma * np.mean(e**2)
        assert adaptive_loss(p, t, sigma).item() <= bound + 1e-9

    def test_relation_to_abs_error_at_sigma_two(self):
        # per-sample value equals |e| at |e| = 1, is below for smaller, above for larger
        for e, cmp in ((1.0, "eq"), (0.5, "lt"), (3.0, "gt")):
            p, t = _pair([e], [0.0])
            value = adaptive_loss(p, t, 2.0).item()
            if cmp == "eq":
                assert abs(value - e) < 1e-9
            elif cmp == "lt":
                assert value < e
            else:
                assert value > e

    def test_gradient_away_from_kink(self, rng):
        target = rng.uniform(0, 80, 8).astype(np.float32)
        pred = (target + rng.choice([-1, 1], 8) * rng.uniform(0.5, 10, 8)).astype(np.float32)
        report = grad_check(lambda t: adaptive_loss(t, T.Tensor(target, dtype=t.dtype), 2.0), pred)
        assert report.passed

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adaptive_loss(T.Tensor([1.0, 2.0]), T.Tensor([1.0]))

    def test_bad_sigma(self):
        with pytest.raises(ConfigError):
            adaptive_loss(T.Tensor([1.0]), T.Tensor([1.0]), sigma=0.0)


class TestStandardLosses:
    def test_mse_single(self):
        p, t = _pair([3.0], [0.0])
        assert standard_loss(p, t, LossSpec(kind="mse")).item() == 9.0

    def test_mae(self):
        p, t = _pair([3.0, -1.0], [0.0, 0.0])
        assert mae_loss(p, t).item() == 2.0

    def test_huber_piecewise(self):
        p, t = _pair([0.5], [0.0])
        assert abs(huber_loss(p, t, 1.0).item() - 0.125) < 1e-9
        p, t = _pair([2.0], [0.0])
        assert abs(huber_loss(p, t, 1.0).item() - 1.5) < 1e-9

    def test_weighted_mse_uniform_weights_equals_mse(self, rng):
        target = rng.uniform(0, 79, 16)
        pred = target + rng.normal(0, 5, 16)
        weights = {b: 1.0 for b in range(0, 81)}
        p, t = _pair(pred, target)
        assert abs(weighted_mse_loss(p, t, weights).item() - mse_loss(p, t).item()) < 1e-9

    def test_weighted_mse_missing_bin(self):
        p, t = _pair([1.0], [42.0])
        with pytest.raises(ConfigError, match="bin 42"):
            weighted_mse_loss(p, t, {0: 1.0})

    def test_inverse_frequency_weights_mean_one(self, rng):
        ages = rng.uniform(0, 80, 500)
        weights = inverse_frequency_weights(ages)
        assert all(w > 0 for w in weights.values())
        bins = np.floor(ages).astype(int)
        counts = {b: int((bins == b).sum()) for b in set(bins)}
        total = sum(weights[b] * counts[b] for b in counts)
        # rarer bins get larger weights
        rare = min(counts, key=counts.get)
        common = max(counts, key=counts.get)
        if counts[rare] < counts[common]:
            assert weights[rare] > weights[common]
        assert total / len(weights) > 0

    @pytest.mark.parametrize("kind", ["mae", "mse", "huber", "adaptive"])
    def test_gradients_away_from_kinks(self, rng, kind):
        target = rng.uniform(0, 80, 8).astype(np.float32)
        # errors kept away from 0 (mae/adaptive kink) and delta (huber kink)
        pred = (target + rng.choice([-1, 1], 8) * rng.uniform(2.0, 10.0, 8)).astype(np.float32)
        spec = LossSpec(kind=kind)
        report = grad_check(lambda t: standard_loss(t, T.Tensor(target, dtype=t.dtype), spec), pred)
        assert report.passed, (kind, report)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            LossSpec(kind="hinge").validate()
