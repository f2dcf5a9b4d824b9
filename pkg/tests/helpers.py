"""Instance generators and searches shared by several test modules."""

import numpy as np

from biviso import (
    ChainSample,
    Dominance,
    PairKind,
    WeightFunction,
    canonical_pair,
    check_simultaneous,
    dominance,
    murphy_curves,
)
from biviso.audit import breakpoint_competitor
from biviso.joint import BivariateFit
from biviso.solver import Direction, MonotoneFit


def noisy_chain(rng, n, sd=3.0):
    z = np.arange(n, dtype=float)
    return ChainSample(z, np.round(z + rng.normal(0, sd, n), 1))


def random_pair(rng):
    if rng.random() < 0.7:
        return PairKind.quantile_es(float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9])))
    return PairKind.mean_variance()


def refit_family(sample, pair, canonical):
    """Competitors built at every jump of the canonical g2."""
    g2 = canonical.g2.values
    return [breakpoint_competitor(sample, pair, m, canonical) for m in range(1, sample.n) if g2[m - 1] != g2[m]]


def competitor_wins_s2(sample, canonical, competitors):
    for c in competitors:
        mc = murphy_curves([canonical, c], sample)
        if dominance(mc.fit(0), mc.fit(1), ("s2",)) in (Dominance.B_DOMINATES, Dominance.CROSSING):
            return True
    return False


def perturbed_pair(rng, fit, scale):
    """Monotone pair obtained by adding sorted noise to both components."""
    n = len(fit)
    g1 = fit.g1.values + np.sort(rng.normal(0, scale, n))
    d2 = np.sort(rng.normal(0, scale, n))
    g2 = fit.g2.values + (d2[::-1] if fit.g2.direction is Direction.DECREASING else d2)
    return BivariateFit(
        MonotoneFit(g1, Direction.INCREASING), MonotoneFit(g2, fit.g2.direction), fit.pair, weight_fn="perturbed"
    )


def search_counterexample(seed=0, n=7, m=4, alpha=0.5, max_draws=20000):
    """First seeded draw whose breakpoint ``m`` fails with a strict loss gain and a Crossing competitor."""
    pair = PairKind.quantile_es(alpha)
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        sample = noisy_chain(rng, n)
        can = canonical_pair(sample, pair)
        report = check_simultaneous(sample, pair, canonical=can)
        hits = [b for b in report.failed if b.m == m and b.refit_loss < b.restricted_loss - 1e-9]
        if hits:
            comp = breakpoint_competitor(sample, pair, m, can)
            mc = murphy_curves([can, comp], sample)
            if dominance(mc.fit(0), mc.fit(1), ("s2",)) is Dominance.CROSSING:
                return sample, pair, can, comp, report
    return None


def random_sample(rng, n, pair):
    z = np.sort(rng.uniform(0, 100, n))
    scale = 3 + 0.2 * np.arange(n) if pair.kind == "meanvar" else 5
    return ChainSample(z, z / 10 + rng.normal(0, 1, n) * scale / 5)


def solver_cases(rng, count):
    """Samples, pairs and weight functions cycling through all four weights."""
    pairs = [
        (PairKind.mean_variance(), "h1_var"),
        (PairKind.mean_variance(), "h2_var"),
        (PairKind.quantile_es(0.3), "h1_es"),
        (PairKind.quantile_es(0.7), "h2_es"),
    ]
    for k in range(count):
        pair, name = pairs[k % len(pairs)]
        yield random_sample(rng, int(rng.integers(2, 25)), pair), pair, WeightFunction(name)
