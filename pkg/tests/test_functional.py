import math

import numpy as np
import pytest
from oracles import exact_quantile_bounds, joint_loss_scalar

from biviso.errors import DomainError, EmptyInput
from biviso.functional import (
    WEIGHT_NAMES,
    EtaGrid,
    WeightedSample,
    WeightFunction,
    elementary_score_1,
    elementary_score_2,
    eval_identification,
    functional_bounds,
    joint_loss,
    make_eta_grid,
    mean,
    quantile,
)


class TestIdentification:
    def test_mean_vanishes_at_mean(self):
        assert eval_identification(mean(), 2.0, WeightedSample([1, 3], [1, 1])) == 0.0

    def test_quantile_all_below(self):
        assert eval_identification(quantile(0.5), 10.0, WeightedSample([1, 2, 3])) == pytest.approx(0.5)

    def test_quantile_partial(self):
        assert eval_identification(quantile(0.3), 2.0, WeightedSample([1, 2, 3])) == pytest.approx(1 / 3 - 0.3)

    def test_left_continuous_and_nondecreasing(self):
        spec = quantile(0.4)
        xs = np.linspace(-2, 2, 401)
        for y in (-1.0, 0.0, 0.5):
            v = spec.identification(xs, y)
            assert np.all(np.diff(v) >= 0)
            # V(y, y) takes the value from the left
            assert spec.identification(y, y) == spec.identification(y - 1e-12, y)

    def test_strict_eta_form_matches(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            alpha = float(rng.uniform(0.05, 0.95))
            spec = quantile(alpha)
            y = rng.integers(0, 5, 7).astype(float)
            for eta in np.concatenate([y, y + 0.5]):
                assert np.array_equal(spec.identification(eta, y), spec.identification_strict_eta(eta, y))

    def test_invalid_level(self):
        with pytest.raises(ValueError):
            quantile(1.0)
        with pytest.raises(ValueError):
            quantile(0.0)


class TestBounds:
    def test_mean(self):
        assert functional_bounds(mean(), WeightedSample([3, 1, 2])) == (2.0, 2.0)

    def test_even_median(self):
        assert functional_bounds(quantile(0.5), WeightedSample([1, 2])) == (1.0, 2.0)

    def test_odd_median(self):
        assert functional_bounds(quantile(0.5), WeightedSample([1, 2, 3])) == (2.0, 2.0)

    def test_matches_exact_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(400):
            n = int(rng.integers(1, 9))
            y = rng.integers(0, 5, n).astype(float)
            w = rng.integers(1, 4, n).astype(float) if rng.random() < 0.5 else None
            alpha = float(rng.choice([0.1, 0.25, 0.3, 0.5, 0.7, 0.9]))
            got = functional_bounds(quantile(alpha), WeightedSample(y, w))
            assert got == exact_quantile_bounds(list(y), None if w is None else list(w), alpha)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            y = rng.normal(size=6)
            w = rng.uniform(0.1, 3, 6)
            lam = float(rng.uniform(0.01, 100))
            for spec in (quantile(0.3), quantile(0.5), mean()):
                a = functional_bounds(spec, WeightedSample(y, w))
                b = functional_bounds(spec, WeightedSample(y, w * lam))
                assert a == pytest.approx(b, rel=1e-12)

    def test_lower_not_above_upper(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            y = rng.integers(0, 4, int(rng.integers(1, 8)))
            lo, hi = functional_bounds(quantile(float(rng.uniform(0.05, 0.95))), WeightedSample(y))
            assert lo <= hi

    def test_empty_sample(self):
        with pytest.raises(EmptyInput):
            WeightedSample([])

    def test_nonpositive_weight(self):
        with pytest.raises(ValueError):
            WeightedSample([1, 2], [1, 0])


class TestConsistency:
    def test_bounds_minimize_average_loss(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            y = rng.integers(0, 6, int(rng.integers(1, 8))).astype(float)
            for spec in (quantile(float(rng.choice([0.2, 0.5, 0.8]))), mean()):
                lo, hi = functional_bounds(spec, WeightedSample(y))
                grid = np.unique(np.concatenate([np.linspace(-1, 7, 81), [lo, hi, (lo + hi) / 2]]))
                risk = np.array([spec.base_loss(x, y).mean() for x in grid])
                best = risk.min()
                inside = (grid >= lo) & (grid <= hi)
                away = (grid < lo - 1e-6) | (grid > hi + 1e-6)
                assert np.all(np.abs(risk[inside] - best) < 1e-9)
                assert np.all(risk[away] > best + 1e-12)


class TestElementaryScores:
    def test_s1_both_indicators_zero(self):
        for spec in (mean(), quantile(0.3)):
            assert elementary_score_1(5, 1, 2, spec) == 0

    def test_s1_mean(self):
        assert elementary_score_1(1.5, 2, 1, mean()) == pytest.approx(0.5)

    def test_s1_quantile(self):
        assert elementary_score_1(1.5, 2, 1, quantile(0.5)) == pytest.approx(0.5)

    def test_s2_gate_closed(self):
        assert elementary_score_2(0, 3.0, 1.0, 7.0, quantile(0.2)) == 0

    def test_s2_mean(self):
        assert elementary_score_2(0, 1, -1, 0, mean()) == pytest.approx(1.0)

    def test_s2_quantile(self):
        assert elementary_score_2(-3, 1, 2, 0, quantile(0.5)) == pytest.approx(1.0)

    def test_s1_nonnegative(self):
        rng = np.random.default_rng(2)
        eta = rng.normal(size=(200, 1))
        x1, y = rng.normal(size=(2, 1, 50))
        for spec in (mean(), quantile(0.4)):
            assert np.all(elementary_score_1(eta, x1, y, spec) >= 0)

    def test_s1_mixture_sign_agreement(self):
        # a uniform mixture of S1 over a fine grid recovers the pinball-loss ordering
        rng = np.random.default_rng(21)
        spec = quantile(0.5)
        grid = np.linspace(-12, 12, 24001)[:, None]
        agree = 0
        for _ in range(1000):
            x, xp, y = rng.uniform(-5, 5, 3)
            d_mix = (elementary_score_1(grid, x, y, spec) - elementary_score_1(grid, xp, y, spec)).sum()
            d_loss = spec.base_loss(x, y) - spec.base_loss(xp, y)
            agree += np.sign(np.round(d_mix, 6)) == np.sign(np.round(d_loss, 6))
        assert agree == 1000

    def test_s2_averaged_minimized_at_loss(self):
        rng = np.random.default_rng(4)
        spec = quantile(0.3)
        grid = np.linspace(-30, 30, 6001)
        for _ in range(20):
            x1, y = rng.uniform(-5, 5, 2)
            target = float(spec.base_loss(x1, y))
            x2s = np.linspace(target - 3, target + 3, 61)
            avg = [elementary_score_2(grid, x1, x2, y, spec).mean() for x2 in x2s]
            assert abs(x2s[int(np.argmin(avg))] - target) <= 0.1 + 1e-9


class TestWeightFunctions:
    @pytest.mark.parametrize("name", WEIGHT_NAMES)
    def test_primitive_vanishes_at_zero(self, name):
        assert WeightFunction(name).H(0.0) == 0.0

    @pytest.mark.parametrize("name", WEIGHT_NAMES)
    def test_positive_nonincreasing(self, name):
        w = WeightFunction(name)
        xs = np.linspace(-5, 20, 2001)
        h = w.h(xs)
        assert np.all(h > 0)
        assert np.all(np.diff(h) <= 0)

    @pytest.mark.parametrize("name", WEIGHT_NAMES)
    def test_finite_difference(self, name):
        w = WeightFunction(name)
        delta = 1e-5
        for r in (-3.0, -0.05, 0.2, 1.0, 7.5):
            if abs(r - w.domain_floor) < 1e-3:
                continue
            err = abs(float(w.H(r + delta) - w.H(r)) - delta * float(w.h(r)))
            # second-order term delta^2 / 2 * |h'|, h' by central difference
            curvature = abs(float(w.h(r + 1e-4) - w.h(r - 1e-4))) / 2e-4
            assert err <= delta**2 * (curvature + 1.0)

    @pytest.mark.parametrize("name", WEIGHT_NAMES)
    def test_matches_quadrature(self, name):
        w = WeightFunction(name)
        for x2 in (-2.0, -0.5, 0.0, 0.3, 0.9, 4.0):
            got = float(joint_loss(mean(), w, 0.2, x2, 1.1))
            assert got == pytest.approx(joint_loss_scalar(name, "mean", None, 0.2, x2, 1.1), abs=1e-9)

    @pytest.mark.parametrize("name", WEIGHT_NAMES)
    def test_relative_accuracy_near_zero(self, name):
        # H(r) = r h(0) + O(r^2); a difference of two O(1) primitives would be off by ~1e-14
        w = WeightFunction(name)
        for r in (1e-12, -1e-12):
            assert float(w.H(r)) == pytest.approx(r * float(w.h(0.0)), rel=1e-9)

    @pytest.mark.parametrize("name", WEIGHT_NAMES)
    def test_log_h(self, name):
        w = WeightFunction(name)
        xs = np.linspace(-5, 20, 101)
        np.testing.assert_allclose(w.log_h(xs), np.log(w.h(xs)), rtol=1e-12, atol=1e-12)

    def test_log_h_past_underflow(self):
        w = WeightFunction("h2_var")
        assert w.h(4e4) == 0.0
        assert float(w.log_h(4e4)) == pytest.approx(0.1 - 800.0, rel=1e-15)

    def test_clamp_flags(self):
        w = WeightFunction("h1_es")
        assert list(w.clamped([-1.0, 0.0, 0.5])) == [True, True, False]
        assert w.h(-4.0) == w.h(1e-3)

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            WeightFunction("h2_es").h(np.nan)

    def test_overflow_rejected(self):
        with pytest.raises(DomainError):
            WeightFunction("h2_es").H(-1e4)

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            WeightFunction("h3")


class TestJointLoss:
    def test_h2_es_at_zero(self):
        assert joint_loss(mean(), WeightFunction("h2_es"), 1, 0, 0) == pytest.approx(1.0)

    def test_constant_collapse(self):
        rng = np.random.default_rng(1)
        w = WeightFunction("constant")
        for _ in range(50):
            x1, x2, y = rng.normal(size=3)
            assert joint_loss(quantile(0.3), w, x1, x2, y) == pytest.approx(quantile(0.3).base_loss(x1, y))

    def test_h1_var_value(self):
        got = joint_loss(mean(), WeightFunction("h1_var"), 0, 0.9, 1)
        assert got == pytest.approx(math.log(10) + 0.1, abs=1e-12)
        assert got == pytest.approx(2.4026, abs=1e-4)


class TestEtaGrid:
    def test_contains_values(self):
        g = make_eta_grid([1, 2], resolution=2)
        assert {1.0, 2.0} <= set(g.points.tolist())

    def test_degenerate_span(self):
        g = make_eta_grid([0, 0, 0], resolution=5)
        assert len(g) >= 5 and g.points[0] < 0 < g.points[-1]

    def test_sorted_dedup(self):
        vals = np.random.default_rng(0).normal(size=30)
        g = make_eta_grid(vals, resolution=100)
        assert np.all(np.diff(g.points) > 0)
        assert set(vals.tolist()) <= set(g.points.tolist())
        assert 100 <= len(g) <= 130

    def test_empty(self):
        with pytest.raises(EmptyInput):
            make_eta_grid([])

    def test_explicit_must_increase(self):
        with pytest.raises(ValueError):
            EtaGrid(np.array([0.0, 0.0]))
