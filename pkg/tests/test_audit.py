import numpy as np
import pytest
from helpers import (
    competitor_wins_s2,
    noisy_chain,
    perturbed_pair,
    random_pair,
    refit_family,
    search_counterexample,
)
from oracles import simultaneous_oracle

from biviso import (
    ChainSample,
    Dominance,
    PairKind,
    canonical_pair,
    check_simultaneous,
    dominance,
    murphy_curves,
)
from biviso.audit import (
    COMPARISONS,
    audit_grid,
    breakpoint_competitor,
    certify_simultaneous,
    envelope_competitor,
)
from biviso.errors import DimensionMismatch, GridMismatch
from biviso.functional import EtaGrid
from biviso.joint import BivariateFit
from biviso.solver import Bound, Direction, MonotoneFit, minmax_fit

QES = PairKind.quantile_es(0.5)
COUNTEREXAMPLE_Y = [5.9, 3.3, 4.8, -2.0, 2.6, 9.5, 10.1]


# passes the breakpoint criterion, yet gating only the last point wins near eta = 1.87
ENVELOPE_Y = [0.1, 0.9, 1.1, -0.1, 2.8, 1.7, 1.9]


def chain(y):
    return ChainSample(np.arange(len(y), dtype=float), y)


def groups_of(sample):
    return [sample.responses(k).tolist() for k in range(sample.n)]


def oracle_certified(sample, pair, fit):
    return simultaneous_oracle(pair.spec.kind, pair.alpha, groups_of(sample), fit.g1.values, fit.g2.values)


def tied_chain(rng, n):
    z = rng.integers(0, n + 1, n).astype(float)
    return ChainSample(z, np.round(z + rng.normal(0, 3, n), 1))


class TestCheckSimultaneous:
    def test_isotonic_distinct(self):
        r = check_simultaneous(chain([1.0, 2.0, 3.0, 5.0, 8.0]), QES)
        assert r.simultaneous and r.checked_breakpoints == ()

    @pytest.mark.parametrize("y", [[4.0], [3.0, 1.0], [1.0, 1.0], [0.0, 7.5]])
    def test_tiny_samples(self, y):
        for pair in (QES, PairKind.quantile_es(0.1), PairKind.mean_variance()):
            assert check_simultaneous(chain(y), pair).simultaneous

    def test_counterexample_fails_at_suffix(self):
        r = check_simultaneous(chain(COUNTEREXAMPLE_Y), QES)
        assert not r.simultaneous
        assert [b.m for b in r.failed] == [4]
        b = r.failed[0]
        assert b.region == "suffix"
        assert b.refit_loss < b.restricted_loss - 1e-9

    def test_counterexample_from_seeded_search(self):
        found = search_counterexample(seed=0)
        assert found is not None
        assert found[0].y.tolist() == COUNTEREXAMPLE_Y

    def test_report_invariants(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            sample, pair = noisy_chain(rng, int(rng.integers(1, 11))), random_pair(rng)
            can = canonical_pair(sample, pair)
            r = check_simultaneous(sample, pair, canonical=can)
            assert r.simultaneous == all(b.passed for b in r.checked_breakpoints)
            g1, g2 = can.g1.values, can.g2.values
            jump = (lambda a, b: a > b) if pair.g2_direction is Direction.DECREASING else (lambda a, b: a < b)
            triggers = [m for m in range(1, sample.n) if jump(g2[m - 1], g2[m]) and g1[m - 1] == g1[m]]
            assert [b.m for b in r.checked_breakpoints] == triggers
            expected_region = "suffix" if pair.g2_direction is Direction.DECREASING else "prefix"
            assert all(b.region == expected_region for b in r.checked_breakpoints)
            prose = check_simultaneous(sample, pair, strict_prose=True, canonical=can)
            assert {b.m for b in r.checked_breakpoints} <= {b.m for b in prose.checked_breakpoints}

    def test_mean_comparisons_agree(self):
        rng = np.random.default_rng(13)
        pair = PairKind.mean_variance()
        for _ in range(200):
            sample = noisy_chain(rng, int(rng.integers(2, 11)))
            verdicts = {check_simultaneous(sample, pair, comparison=c).simultaneous for c in COMPARISONS}
            assert len(verdicts) == 1

    def test_refit_mode_is_stricter(self):
        rng = np.random.default_rng(14)
        for _ in range(200):
            sample, pair = noisy_chain(rng, int(rng.integers(2, 11))), random_pair(rng)
            if check_simultaneous(sample, pair).simultaneous:
                assert check_simultaneous(sample, pair, comparison="loss").simultaneous

    def test_stop_at_first_failure(self):
        r = check_simultaneous(chain(COUNTEREXAMPLE_Y), QES, stop_at_first_failure=True)
        assert not r.simultaneous and not r.checked_breakpoints[-1].passed

    def test_unknown_comparison(self):
        with pytest.raises(ValueError):
            check_simultaneous(chain([1.0, 2.0]), QES, comparison="curves")

    def test_to_dict(self):
        d = check_simultaneous(chain(COUNTEREXAMPLE_Y), QES).to_dict()
        assert d["simultaneous"] is False and d["checked_breakpoints"][0]["m"] == 4


class TestCriterionDominance:
    def test_equivalence_with_loss_comparison(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            sample, pair = noisy_chain(rng, int(rng.integers(2, 11))), random_pair(rng)
            can = canonical_pair(sample, pair)
            ok = check_simultaneous(sample, pair, comparison="loss", canonical=can).simultaneous
            assert ok == (not competitor_wins_s2(sample, can, refit_family(sample, pair, can)))

    def test_refit_comparison_sound(self, record_property):
        # a pass under the pointwise comparison rules out every refit competitor;
        # quantile loss ties can fail it without a competitor that wins
        rng = np.random.default_rng(16)
        unmatched = 0
        for _ in range(200):
            sample, pair = noisy_chain(rng, int(rng.integers(2, 11))), random_pair(rng)
            can = canonical_pair(sample, pair)
            ok = check_simultaneous(sample, pair, canonical=can).simultaneous
            wins = competitor_wins_s2(sample, can, refit_family(sample, pair, can))
            if ok:
                assert not wins
            elif not wins:
                assert pair.kind == "qes"
                unmatched += 1
        record_property("failed_without_winning_competitor", unmatched)


class TestMurphyCurves:
    def test_constant_data(self):
        c = 2.0
        sample = chain([c, c, c])
        fit = canonical_pair(sample, QES)
        assert fit.g1.values.tolist() == [c] * 3 and fit.g2.values.tolist() == [-c] * 3
        grid = EtaGrid(np.array([-1.0, 1.0, 3.0]))
        mc = murphy_curves([fit], sample, grid=grid)
        # -1{eta <= 0} eta + 1{eta <= -g2} (g2 + eta) with g2 = -2
        assert mc.s2_means[0].tolist() == pytest.approx([-2.0, -1.0, 0.0])
        assert mc.s1_means[0].tolist() == [0.0, 0.0, 0.0]

    def test_s1_vanishes_off_support(self):
        sample = chain([1.0, 4.0, 2.0, 6.0])
        fit = canonical_pair(sample, PairKind.quantile_es(0.3))
        mc = murphy_curves([fit], sample, grid=EtaGrid(np.array([-50.0, -10.0, 20.0])))
        assert np.all(mc.s1_means == 0.0)

    def test_identical_fits(self):
        sample = chain(COUNTEREXAMPLE_Y)
        fit = canonical_pair(sample, QES)
        mc = murphy_curves([fit, fit], sample)
        assert np.array_equal(mc.s1_means[0], mc.s1_means[1])
        assert np.array_equal(mc.s2_means[0], mc.s2_means[1])
        assert dominance(mc.fit(0), mc.fit(1)) is Dominance.EQUAL

    def test_finite_and_shaped(self):
        sample = chain(COUNTEREXAMPLE_Y)
        fit = canonical_pair(sample, QES)
        mc = murphy_curves([fit], sample)
        assert mc.s1_means.shape == mc.s2_means.shape == (1, len(mc.grid))
        assert np.all(np.isfinite(mc.s1_means)) and np.all(np.isfinite(mc.s2_means))

    def test_default_grid_covers_knots(self):
        sample = chain(COUNTEREXAMPLE_Y)
        fit = canonical_pair(sample, QES)
        pts = set(audit_grid(sample, [fit]).points.tolist())
        assert set(sample.y.tolist()) | set(fit.g1.values.tolist()) | set((-fit.g2.values).tolist()) <= pts
        assert len(audit_grid(sample, [fit])) >= 401

    def test_piecewise_linear(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            sample, pair = noisy_chain(rng, int(rng.integers(2, 9))), random_pair(rng)
            fit = canonical_pair(sample, pair)
            knots = audit_grid(sample, [fit], resolution=20).points
            a, b = knots[:-1], knots[1:]
            quarter = EtaGrid(np.sort(np.concatenate([a + (b - a) / 4, a + (b - a) / 2, a + 3 * (b - a) / 4])))
            mc = murphy_curves([fit], sample, grid=quarter)
            for curve in (mc.s1_means[0], mc.s2_means[0]):
                lo, mid, hi = curve[0::3], curve[1::3], curve[2::3]
                assert np.allclose(mid, (lo + hi) / 2, atol=1e-9)

    def test_s1_constant_between_knots_for_quantiles(self):
        sample = chain(COUNTEREXAMPLE_Y)
        fit = canonical_pair(sample, QES)
        knots = audit_grid(sample, [fit], resolution=10).points
        a, b = knots[:-1], knots[1:]
        grid = EtaGrid(np.sort(np.concatenate([a + (b - a) / 3, a + 2 * (b - a) / 3])))
        s1 = murphy_curves([fit], sample, grid=grid).s1_means[0]
        assert np.allclose(s1[0::2], s1[1::2], atol=1e-12)

    def test_dimension_mismatch(self):
        fit = canonical_pair(chain([1.0, 2.0, 3.0]), QES)
        with pytest.raises(DimensionMismatch):
            murphy_curves([fit], chain([1.0, 2.0]))

    def test_csv_columns(self):
        sample = chain([1.0, 0.0, 2.0])
        fit = canonical_pair(sample, QES)
        text = murphy_curves([fit], sample, grid=EtaGrid(np.array([0.0, 1.0]))).to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "eta,fit_id,s1_mean,s2_mean"
        assert len(lines) == 3 and lines[1].startswith("0,unweighted-canonical,")


class TestS1Minimality:
    def test_canonical_g1_minimizes_s1(self):
        rng = np.random.default_rng(18)
        for _ in range(100):
            sample, pair = noisy_chain(rng, int(rng.integers(1, 9))), random_pair(rng)
            can = canonical_pair(sample, pair)
            upper = minmax_fit(sample, None, pair.spec, Direction.INCREASING, Bound.UPPER)
            comps = [perturbed_pair(rng, can, s) for s in (0.05, 0.5, 2.0)]
            comps.append(BivariateFit(upper, can.g2, pair, weight_fn="upper"))
            comps.append(
                BivariateFit(
                    MonotoneFit(np.sort(rng.normal(np.median(sample.y), 3, sample.n)), Direction.INCREASING),
                    can.g2,
                    pair,
                    weight_fn="random",
                )
            )
            mc = murphy_curves([can, *comps], sample)
            assert np.all(mc.s1_means[0] <= mc.s1_means[1:] + 1e-12)


class TestDominance:
    def test_equal(self):
        sample = chain([2.0, 1.0, 3.0])
        mc = murphy_curves([canonical_pair(sample, QES)], sample)
        assert dominance(mc, mc) is Dominance.EQUAL

    def test_grid_mismatch(self):
        sample = chain([2.0, 1.0, 3.0])
        fit = canonical_pair(sample, QES)
        a = murphy_curves([fit], sample, grid=EtaGrid(np.array([0.0, 1.0])))
        b = murphy_curves([fit], sample, grid=EtaGrid(np.array([0.0, 2.0])))
        with pytest.raises(GridMismatch):
            dominance(a, b)

    def test_tolerance(self):
        sample = chain([2.0, 1.0, 3.0])
        mc = murphy_curves([canonical_pair(sample, QES)], sample)
        shifted = type(mc)(mc.grid, mc.s1_means + 1e-13, mc.s2_means, mc.fit_ids)
        assert dominance(mc, shifted) is Dominance.EQUAL

    def test_simultaneous_pair_dominates_perturbations(self):
        rng = np.random.default_rng(19)
        checked = 0
        while checked < 60:
            sample, pair = noisy_chain(rng, int(rng.integers(2, 9))), random_pair(rng)
            can = canonical_pair(sample, pair)
            if not oracle_certified(sample, pair, can):
                continue
            checked += 1
            for scale in (0.01, 0.3, 3.0):
                comp = perturbed_pair(rng, can, scale)
                mc = murphy_curves([can, comp], sample)
                assert dominance(mc.fit(0), mc.fit(1)) in (Dominance.A_DOMINATES, Dominance.EQUAL)

    def test_counterexample_crossing(self):
        sample = chain(COUNTEREXAMPLE_Y)
        can = canonical_pair(sample, QES)
        comp = breakpoint_competitor(sample, QES, 4, can)
        mc = murphy_curves([can, comp], sample)
        assert dominance(mc.fit(0), mc.fit(1), ("s2",)) is Dominance.CROSSING


class TestCertification:
    def test_matches_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(300):
            n = int(rng.integers(1, 9))
            sample = tied_chain(rng, n) if rng.random() < 0.3 else noisy_chain(rng, n)
            pair = random_pair(rng)
            can = canonical_pair(sample, pair)
            assert certify_simultaneous(sample, pair, canonical=can).certified == oracle_certified(sample, pair, can)

    def test_witnesses_realize_excess(self):
        rng = np.random.default_rng(21)
        seen = 0
        for _ in range(300):
            sample, pair = noisy_chain(rng, int(rng.integers(2, 9))), random_pair(rng)
            can = canonical_pair(sample, pair)
            for v in certify_simultaneous(sample, pair, canonical=can).violations:
                comp = envelope_competitor(sample, pair, v, can)
                assert comp.g1.is_monotone() and comp.g2.is_monotone()
                mc = murphy_curves([can, comp], sample, grid=EtaGrid(np.array([v.eta])))
                gain = (mc.s2_means[0, 0] - mc.s2_means[1, 0]) * sample.n_obs
                assert gain == pytest.approx(v.excess, abs=1e-9)
                assert v.excess > 0
                seen += 1
        assert seen > 0

    def test_certified_implies_loss_criterion(self):
        rng = np.random.default_rng(22)
        for _ in range(300):
            sample, pair = noisy_chain(rng, int(rng.integers(1, 11))), random_pair(rng)
            can = canonical_pair(sample, pair)
            if certify_simultaneous(sample, pair, canonical=can).certified:
                assert check_simultaneous(sample, pair, comparison="loss", canonical=can).simultaneous

    def test_criterion_passes_but_not_certified(self):
        sample, pair = chain(ENVELOPE_Y), PairKind.quantile_es(0.7)
        assert check_simultaneous(sample, pair).simultaneous
        report = certify_simultaneous(sample, pair)
        assert not report.certified
        v = report.violations[0]
        assert 1.8476 < v.eta <= 1.9 and (v.run_start, v.run_stop) == (6, 7)
        comp = envelope_competitor(sample, pair, v)
        mc = murphy_curves([canonical_pair(sample, pair), comp], sample)
        assert dominance(mc.fit(0), mc.fit(1), ("s2",)) is Dominance.CROSSING

    def test_counterexample_not_certified(self):
        assert not certify_simultaneous(chain(COUNTEREXAMPLE_Y), QES).certified

    def test_isotonic_and_tiny_certified(self):
        for y in ([1.0, 2.0, 3.0, 5.0], [4.0], [2.0, 2.0]):
            for pair in (QES, PairKind.mean_variance()):
                assert certify_simultaneous(chain(y), pair).certified

    def test_to_dict(self):
        d = certify_simultaneous(chain(ENVELOPE_Y), PairKind.quantile_es(0.7)).to_dict()
        assert d["certified"] is False and d["violations"][0]["run_start"] == 6
