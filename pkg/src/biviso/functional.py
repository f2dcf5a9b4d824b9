"""Identifiable functionals, their losses, elementary scores and weight functions.

Two functionals are supported: the alpha-quantile, paired with the
pinball-type loss ``(1/alpha) 1{y <= x} (x - y) - x`` whose Bayes risk is
expected shortfall, and the mean, paired with squared error whose Bayes risk
is the variance. The bivariate loss for ``(T, Bayes risk)`` is

    H(x2) + h(x2) * (L(x1, y) - x2)

for a positive decreasing weight function ``h`` with primitive ``H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from biviso.errors import DomainError, EmptyInput

# Relative slack when comparing cumulative weight against alpha * total weight.
# Keeps unit-weight boundary cases (e.g. 0.3 * 10) on the exact side.
_CDF_SLACK = 1e-12


@dataclass(frozen=True)
class FunctionalSpec:
    """A functional defined through its identification function.

    Use :func:`quantile` or :func:`mean` rather than constructing directly.
    """

    kind: str
    alpha: float | None = None

    def __post_init__(self):
        if self.kind == "quantile":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError(f"quantile level must lie in (0, 1), got {self.alpha!r}")
        elif self.kind == "mean":
            if self.alpha is not None:
                raise ValueError("the mean takes no level")
        else:
            raise ValueError(f"unknown functional kind {self.kind!r}")

    @property
    def singleton_valued(self) -> bool:
        return self.kind == "mean"

    def identification(self, x, y):
        """V(x, y), nondecreasing and left-continuous in ``x``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "quantile":
            return (y < x).astype(float) - self.alpha
        return x - y

    def identification_strict_eta(self, eta, y):
        """The factor ``1{eta > y} - alpha`` used in the quantile elementary score.

        Identical to :meth:`identification` for quantiles; kept separate so the
        two written forms can be checked against each other.
        """
        eta = np.asarray(eta, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "quantile":
            return (eta > y).astype(float) - self.alpha
        return eta - y

    def base_loss(self, x, y):
        """Strictly consistent loss L(x, y) whose Bayes risk is the second component."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "quantile":
            return (y <= x) * (x - y) / self.alpha - x
        return (x - y) ** 2

    def bounds(self, values, weights=None) -> tuple[float, float]:
        """Lower and upper bounds (T-, T+) of the weighted empirical functional."""
        return functional_bounds(self, WeightedSample(values, weights))

    def __str__(self):
        return f"quantile({self.alpha})" if self.kind == "quantile" else "mean"


def quantile(alpha: float) -> FunctionalSpec:
    return FunctionalSpec("quantile", float(alpha))


def mean() -> FunctionalSpec:
    return FunctionalSpec("mean")


class WeightedSample:
    """Finite weighted empirical distribution.

    Weights need not be normalized; every functional used here is invariant
    to rescaling them.
    """

    __slots__ = ("values", "weights")

    def __init__(self, values, weights=None):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if values.size == 0:
            raise EmptyInput("a weighted sample needs at least one value")
        if weights is None:
            weights = np.ones_like(values)
        else:
            weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if weights.shape != values.shape:
            raise ValueError("values and weights must have the same length")
        if not np.all(weights > 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and strictly positive")
        self.values = values
        self.weights = weights

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"WeightedSample(n={len(self)})"


def eval_identification(spec: FunctionalSpec, x: float, dist: WeightedSample) -> float:
    """Weighted average of V(x, y_i)."""
    v = spec.identification(x, dist.values)
    return float(np.dot(dist.weights, v) / dist.weights.sum())


def quantile_bounds(values, weights, alpha: float) -> tuple[float, float]:
    """Lower and upper weighted alpha-quantiles.

    ``T- = sup{x : P(Y < x) < alpha}`` and ``T+ = inf{x : P(Y < x) > alpha}``;
    both are attained at observed values.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        v = float(values[0])
        return v, v
    order = np.argsort(values, kind="stable")
    ys = values[order]
    if weights is None:
        cum = np.arange(1, ys.size + 1, dtype=float)
    else:
        cum = np.cumsum(np.asarray(weights, dtype=float)[order])
    total = cum[-1]
    target = alpha * total
    slack = _CDF_SLACK * total
    lo = int(np.searchsorted(cum, target - slack, side="left"))
    hi = int(np.searchsorted(cum, target + slack, side="right"))
    last = ys.size - 1
    return float(ys[min(lo, last)]), float(ys[min(hi, last)])


def functional_bounds(spec: FunctionalSpec, dist: WeightedSample) -> tuple[float, float]:
    """(T-, T+) of a weighted sample.

    For the mean both bounds equal the weighted mean; for a quantile they are
    the lower and upper weighted alpha-quantiles.
    """
    if spec.kind == "mean":
        m = float(np.dot(dist.weights, dist.values) / dist.weights.sum())
        return m, m
    return quantile_bounds(dist.values, dist.weights, spec.alpha)


def elementary_score_1(eta, x1, y, spec: FunctionalSpec):
    """S_{eta,1}(x1, y) = (1{eta <= x1} - 1{eta <= y}) V(eta, y). Broadcasts."""
    eta = np.asarray(eta, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    y = np.asarray(y, dtype=float)
    gate = (eta <= x1).astype(float) - (eta <= y).astype(float)
    return gate * spec.identification(eta, y)


def elementary_score_2(eta, x1, x2, y, spec: FunctionalSpec):
    """S_{eta,2}(x1, x2, y) = 1{eta <= -x2} (L(x1, y) + eta) - 1{eta <= 0} eta. Broadcasts."""
    eta = np.asarray(eta, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    gated = np.where(eta <= -x2, spec.base_loss(x1, y) + eta, 0.0)
    return gated - np.where(eta <= 0.0, eta, 0.0)


@dataclass(frozen=True)
class _WeightForm:
    h: Callable
    big_h: Callable  # antiderivative of h vanishing at 0, valid on [floor, inf)
    floor: float
    log_h: Callable | None = None  # given where h itself can underflow


_EPS_H = 1e-3

# expm1/log1p keep H accurate near 0; a difference of primitives loses ~|primitive| * eps
_FORMS = {
    "h1_es": _WeightForm(lambda x: 0.5 / np.sqrt(x), lambda x: np.sqrt(x) - 0.5 * math.sqrt(_EPS_H), _EPS_H),
    "h2_es": _WeightForm(lambda x: np.exp(-x), lambda x: -np.expm1(-x), -math.inf, lambda x: -x),
    "h1_var": _WeightForm(lambda x: 1.0 / (x + 0.1), lambda x: np.log1p(10.0 * x), -0.1 + _EPS_H),
    "h2_var": _WeightForm(
        lambda x: np.exp(-x / 50.0 + 0.1),
        lambda x: -50.0 * math.exp(0.1) * np.expm1(-x / 50.0),
        -math.inf,
        lambda x: 0.1 - x / 50.0,
    ),
    "constant": _WeightForm(lambda x: np.ones_like(x), lambda x: x, -math.inf),
}

WEIGHT_NAMES = tuple(_FORMS)


@dataclass(frozen=True)
class WeightFunction:
    """Positive nonincreasing weight ``h`` and its primitive ``H`` with ``H(0) = 0``.

    Arguments below ``domain_floor`` are clamped to it, so ``h`` is constant
    there and ``H`` continues linearly. The clamped pair is still a valid
    (merely nonincreasing) weight, which keeps the joint loss consistent.
    """

    name: str
    domain_floor: float = field(init=False)

    def __post_init__(self):
        if self.name not in _FORMS:
            raise ValueError(f"unknown weight function {self.name!r}; choose from {WEIGHT_NAMES}")
        object.__setattr__(self, "domain_floor", _FORMS[self.name].floor)

    @property
    def _form(self) -> _WeightForm:
        return _FORMS[self.name]

    def clamped(self, x):
        """Boolean mask of arguments that fall below the domain floor."""
        return np.asarray(x, dtype=float) < self.domain_floor

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self.name}: non-finite argument")
        return x

    def h(self, x):
        x = self._check(x)
        with np.errstate(over="ignore"):
            out = self._form.h(np.maximum(x, self.domain_floor))
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{self.name}: weight overflow")
        return out

    def log_h(self, x):
        """``log h(x)``, finite even where ``h(x)`` underflows to 0."""
        x = np.maximum(self._check(x), self.domain_floor)
        form = self._form
        with np.errstate(over="ignore", divide="ignore"):
            out = form.log_h(x) if form.log_h is not None else np.log(form.h(x))
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{self.name}: weight overflow")
        return out

    def H(self, r):
        r = self._check(r)
        form = self._form
        f = form.floor
        with np.errstate(over="ignore"):
            out = form.big_h(np.maximum(r, f))
            if math.isfinite(f):
                hf = form.h(np.float64(f))
                # a positive floor puts 0 on the linear part, where H(r) = r h(f) exactly
                below = r * hf if f > 0 else form.big_h(np.float64(f)) + (r - f) * hf
                out = np.where(r < f, below, out)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{self.name}: primitive overflow")
        return out


def weight_function(name: str) -> WeightFunction:
    return WeightFunction(name)


def joint_loss(spec: FunctionalSpec, w: WeightFunction, x1, x2, y):
    """H(x2) + h(x2) (L(x1, y) - x2). Broadcasts."""
    x2 = np.asarray(x2, dtype=float)
    return w.H(x2) + w.h(x2) * (spec.base_loss(x1, y) - x2)


@dataclass(frozen=True)
class EtaGrid:
    points: np.ndarray
    construction: str = "explicit"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise EmptyInput("an eta grid needs at least one point")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("eta grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, EtaGrid) and np.array_equal(self.points, other.points)

    __hash__ = None


def make_eta_grid(sample_values, resolution: int = 401, pad: float = 0.1) -> EtaGrid:
    """Regular grid over the padded data range, merged with the data values themselves.

    Murphy curves of pinball-type scores are piecewise linear with knots at
    the data, so including every value keeps them exact between grid points.
    """
    vals = np.asarray(sample_values, dtype=float).ravel()
    if vals.size == 0:
        raise EmptyInput("cannot build an eta grid from no values")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    vals = vals[np.isfinite(vals)]
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo
    if span == 0.0:
        span = max(abs(lo), 1.0)
    regular = np.linspace(lo - pad * span, hi + pad * span, resolution)
    return EtaGrid(np.unique(np.concatenate([regular, vals])), "quantiles_of_data")
