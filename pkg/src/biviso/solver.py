"""Weighted monotone regression for identifiable functionals on a total order.

The optimal increasing fit for a functional ``T`` with lower bound ``T-`` is

    g(z_l) = min_{j >= l} max_{i <= j} T-(P_{i:j}) = max_{i <= l} min_{j >= i} T-(P_{i:j})

where ``P_{i:j}`` is the weighted empirical distribution of the responses at
covariates ``z_i, ..., z_j``. :func:`minmax_fit` evaluates that formula
directly for small samples and otherwise uses an equivalent pooling pass
(interval functionals here satisfy the Cauchy mean value property, so
adjacent-violator pooling reproduces the formula exactly).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from biviso.errors import DimensionMismatch, EmptyInput, RangeError
from biviso.functional import FunctionalSpec, quantile_bounds

# Samples at or below this size are solved through the explicit interval table.
FORMULA_MAX_N = 48


class Direction(enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"


class Bound(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


INCREASING = Direction.INCREASING
DECREASING = Direction.DECREASING
LOWER = Bound.LOWER
UPPER = Bound.UPPER


class ChainSample:
    """Observations on a totally ordered covariate, sorted and tie-aggregated.

    Point ``k`` owns the responses ``y[offsets[k]:offsets[k+1]]``.

    Parameters
    ----------
    z : array_like
        Covariates, any order; equal values are merged into one point.
    y : array_like
        Responses aligned with ``z``.
    """

    __slots__ = ("z", "y", "multiplicity", "offsets", "point_of")

    def __init__(self, z, y):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if z.shape != y.shape:
            raise DimensionMismatch("z and y must have the same length")
        if z.size == 0:
            raise EmptyInput("a chain sample needs at least one observation")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise ValueError("observations must be finite")
        order = np.lexsort((y, z))
        z, y = z[order], y[order]
        uz, first, counts = np.unique(z, return_index=True, return_counts=True)
        self.z = uz
        self.y = y
        self.multiplicity = counts
        self.offsets = np.append(first, z.size)
        self.point_of = np.repeat(np.arange(uz.size), counts)
        for arr in (self.z, self.y, self.multiplicity, self.offsets, self.point_of):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        """Number of distinct covariate points."""
        return self.z.size

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def has_ties(self) -> bool:
        return self.y.size != self.z.size

    def responses(self, k: int) -> np.ndarray:
        return self.y[self.offsets[k] : self.offsets[k + 1]]

    def subsample(self, start: int, stop: int) -> "ChainSample":
        """Points ``start`` to ``stop - 1`` as a new sample."""
        lo, hi = self.offsets[start], self.offsets[stop]
        return ChainSample(self.z[self.point_of[lo:hi]], self.y[lo:hi])

    def expand(self, point_values) -> np.ndarray:
        """Broadcast one value per point to one value per observation."""
        return np.asarray(point_values, dtype=float)[self.point_of]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"ChainSample(n={self.n}, n_obs={self.n_obs})"


def _blocks_of(values: np.ndarray) -> tuple[tuple[int, int], ...]:
    if values.size == 0:
        return ()
    cuts = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [values.size]])
    return tuple(zip(starts.tolist(), stops.tolist()))


@dataclass(frozen=True)
class MonotoneFit:
    """Fitted values at the covariate points with their constant blocks.

    ``blocks`` holds half-open index ranges of maximal constant runs.
    """

    values: np.ndarray
    direction: Direction
    bound: Bound = Bound.LOWER
    blocks: tuple = ()

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "blocks", _blocks_of(vals))

    def __len__(self):
        return self.values.size

    def is_monotone(self, atol: float = 0.0) -> bool:
        d = np.diff(self.values)
        if self.direction is Direction.INCREASING:
            return bool(np.all(d >= -atol))
        return bool(np.all(d <= atol))


@dataclass(frozen=True)
class MinimizingIndexSet:
    """All tail-start positions minimizing ``sum_{i >= l} V(eta, P^w_{i:i})``.

    Positions are 0-based cuts in ``{0, ..., n}``; ``n`` stands for the empty tail.
    """

    eta: float
    indices: tuple[int, ...]

    def __post_init__(self):
        if not self.indices:
            raise ValueError("a minimizing index set is never empty")

    @property
    def smallest(self) -> int:
        return self.indices[0]

    @property
    def largest(self) -> int:
        return self.indices[-1]

    def select(self, bound: "Bound") -> int:
        """Number of points fitted strictly below ``eta``.

        The lower fit puts as many points below ``eta`` as possible, so it
        takes the largest minimizer; the upper fit takes the smallest.
        """
        return self.largest if bound is Bound.LOWER else self.smallest


def _as_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise DimensionMismatch(f"expected {n} weights, got shape {w.shape}")
    if not (np.all(w > 0) and np.all(np.isfinite(w))):
        raise ValueError("weights must be finite and strictly positive")
    return w


def _as_log_weights(log_weights, n: int) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if lw.shape != (n,):
        raise DimensionMismatch(f"expected {n} log weights, got shape {lw.shape}")
    if not np.all(np.isfinite(lw)):
        raise ValueError("log weights must be finite")
    return lw


class _IntervalFunctional:
    """Evaluates T- or T+ on contiguous point ranges of a sample.

    With ``log=True`` the weights are logarithms; each range is shifted by its
    own maximum, so relative weights inside the range survive any spread.
    """

    def __init__(
        self, sample: ChainSample, weights: np.ndarray, spec: FunctionalSpec, bound: Bound, log: bool = False
    ):
        self.spec = spec
        self.upper = bound is Bound.UPPER
        self.offsets = sample.offsets
        self.y = sample.y
        self.log = log
        self.obs_w = weights[sample.point_of]
        self.unit = bool(np.all(weights == weights[0]))

    def _weights(self, lo: int, hi: int) -> np.ndarray:
        w = self.obs_w[lo:hi]
        return np.exp(w - w.max()) if self.log else w

    def __call__(self, i: int, j: int) -> float:
        """Functional of points ``i..j`` inclusive."""
        lo, hi = self.offsets[i], self.offsets[j + 1]
        if self.spec.kind == "mean":
            w = self._weights(lo, hi)
            return float(np.dot(w, self.y[lo:hi]) / w.sum())
        w = None if self.unit else self._weights(lo, hi)
        t = quantile_bounds(self.y[lo:hi], w, self.spec.alpha)
        return t[1] if self.upper else t[0]


def _interval_table(fn: _IntervalFunctional, n: int) -> np.ndarray:
    table = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i, n):
            table[i, j] = fn(i, j)
    return table


def _formula_increasing(fn: _IntervalFunctional, n: int, spec: FunctionalSpec) -> np.ndarray:
    table = _interval_table(fn, n)
    # min over j >= l of (max over i <= j); max over i <= l of (min over j >= i)
    col_max = np.nanmax(table, axis=0)
    row_min = np.nanmin(table, axis=1)
    minmax = np.minimum.accumulate(col_max[::-1])[::-1]
    maxmin = np.maximum.accumulate(row_min)
    if spec.kind == "mean":
        scale = max(1.0, float(np.max(np.abs(minmax))))
        agree = np.allclose(minmax, maxmin, rtol=1e-9, atol=1e-9 * scale)
    else:
        agree = np.array_equal(minmax, maxmin)
    if not agree:
        raise RuntimeError("min-max and max-min representations disagree")
    return minmax


def _pool_increasing(fn: _IntervalFunctional, n: int) -> np.ndarray:
    starts: list[int] = []
    vals: list[float] = []
    for k in range(n):
        s, v = k, fn(k, k)
        while vals and vals[-1] > v:
            s = starts.pop()
            vals.pop()
            v = fn(s, k)
        starts.append(s)
        vals.append(v)
    out = np.empty(n)
    stops = starts[1:] + [n]
    for s, e, v in zip(starts, stops, vals):
        out[s:e] = v
    return out


def _pool_mean_increasing(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    n = values.size
    starts: list[int] = []
    sums: list[float] = []
    wts: list[float] = []
    for k in range(n):
        s, sw, w = k, float(values[k] * weights[k]), float(weights[k])
        while sums and sums[-1] / wts[-1] >= sw / w:
            s = starts.pop()
            sw += sums.pop()
            w += wts.pop()
        starts.append(s)
        sums.append(sw)
        wts.append(w)
    out = np.empty(n)
    stops = starts[1:] + [n]
    for s, e in zip(starts, stops):
        # block value from the block itself, so equal blocks come out bitwise equal
        out[s:e] = np.dot(weights[s:e], values[s:e]) / weights[s:e].sum()
    return out


def _pool_mean_increasing_log(values: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    n = values.size
    starts: list[int] = []
    means: list[float] = []
    logws: list[float] = []
    for k in range(n):
        s, m, lw = k, float(values[k]), float(log_weights[k])
        while means and means[-1] >= m:
            prev_m, prev_lw = means.pop(), logws.pop()
            s = starts.pop()
            total = float(np.logaddexp(prev_lw, lw))
            m = prev_m + (m - prev_m) * math.exp(lw - total)
            lw = total
        starts.append(s)
        means.append(m)
        logws.append(lw)
    out = np.empty(n)
    stops = starts[1:] + [n]
    for s, e in zip(starts, stops):
        w = np.exp(log_weights[s:e] - log_weights[s:e].max())
        out[s:e] = np.dot(w, values[s:e]) / w.sum()
    return out


def _reverse(sample: ChainSample) -> ChainSample:
    return ChainSample(-sample.z[sample.point_of], sample.y)


def minmax_fit(
    sample: ChainSample,
    weights=None,
    spec: FunctionalSpec | None = None,
    direction: Direction = Direction.INCREASING,
    bound: Bound = Bound.LOWER,
    method: str = "auto",
    log_weights=None,
) -> MonotoneFit:
    """Optimal monotone fit of a functional, at its lower or upper bound.

    Parameters
    ----------
    sample : ChainSample
    weights : array_like, optional
        One positive weight per covariate point; applied to every response at
        that point. Defaults to unit weights.
    spec : FunctionalSpec
    direction : Direction
        Decreasing fits are computed on the reversed covariate order.
    bound : Bound
        ``LOWER`` uses T-, ``UPPER`` uses T+.
    method : {"auto", "formula", "pool"}
        ``formula`` builds the full interval table and checks that the min-max
        and max-min representations agree; ``pool`` merges adjacent violators.
        ``auto`` uses the table up to ``FORMULA_MAX_N`` points.
    log_weights : array_like, optional
        Logarithms of the weights, in place of ``weights``. Use when the
        weights span more than the floating-point range.
    """
    if spec is None:
        raise TypeError("minmax_fit needs a FunctionalSpec")
    n = sample.n
    log = log_weights is not None
    if log:
        if weights is not None:
            raise ValueError("give weights or log_weights, not both")
        w = _as_log_weights(log_weights, n)
    else:
        w = _as_weights(weights, n)
    if direction is Direction.DECREASING:
        rev = {"log_weights": w[::-1]} if log else {"weights": w[::-1]}
        inc = minmax_fit(_reverse(sample), spec=spec, bound=bound, method=method, **rev)
        return MonotoneFit(inc.values[::-1], Direction.DECREASING, bound)
    if method == "auto":
        method = "formula" if n <= FORMULA_MAX_N else "pool"
    fn = _IntervalFunctional(sample, w, spec, bound, log)
    if method == "formula":
        values = _formula_increasing(fn, n, spec)
    elif method == "pool":
        if spec.kind == "mean":
            point_mean = np.array([fn(k, k) for k in range(n)])
            if log:
                values = _pool_mean_increasing_log(point_mean, w + np.log(sample.multiplicity))
            else:
                values = _pool_mean_increasing(point_mean, w * sample.multiplicity)
        else:
            values = _pool_increasing(fn, n)
    else:
        raise ValueError(f"unknown method {method!r}")
    return MonotoneFit(values, Direction.INCREASING, bound)


def run_losses(sample: ChainSample, spec: FunctionalSpec, from_end: bool = False) -> np.ndarray:
    """Optimal increasing-fit loss of every prefix (or suffix) of a sample.

    Entry ``k`` is the minimal total base loss of an increasing fit to the
    first ``k`` points, or to the points from ``k`` on when ``from_end``.
    One pooling sweep covers all ``n + 1`` runs, since after each step the
    block stack is an optimal fit of the points seen so far.
    """
    n = sample.n
    fn = _IntervalFunctional(sample, np.ones(n), spec, Bound.LOWER)
    offsets, y = sample.offsets, sample.y

    def block_loss(i: int, j: int, v: float) -> float:
        obs = y[offsets[i] : offsets[j + 1]]
        return math.fsum(spec.base_loss(np.full(obs.size, v), obs))

    out = np.zeros(n + 1)
    # stack of (first, last, value, loss); the top is the block nearest the sweep front
    stack: list[tuple[int, int, float, float]] = []
    order = range(n - 1, -1, -1) if from_end else range(n)
    for k in order:
        i = j = k
        v = fn(k, k)
        while stack and (stack[-1][2] < v if from_end else stack[-1][2] > v):
            a, b, _, _ = stack.pop()
            i, j = min(i, a), max(j, b)
            v = fn(i, j)
        stack.append((i, j, v, block_loss(i, j, v)))
        out[k if from_end else k + 1] = math.fsum(blk[3] for blk in stack)
    return out


def pooled_mean_fit(values, weights=None, direction: Direction = Direction.INCREASING) -> MonotoneFit:
    """Weighted least-squares monotone fit by pooling adjacent violators, O(n)."""
    vals = np.atleast_1d(np.asarray(values, dtype=float))
    if vals.size == 0:
        raise EmptyInput("nothing to fit")
    w = _as_weights(weights, vals.size)
    if direction is Direction.DECREASING:
        out = _pool_mean_increasing(vals[::-1], w[::-1])[::-1]
    else:
        out = _pool_mean_increasing(vals, w)
    return MonotoneFit(out, direction, Bound.LOWER)


def antitonic_mean_fit(values, weights=None) -> MonotoneFit:
    """Nonincreasing least-squares fit; the optimal Bayes-risk component for decreasing pairs."""
    return pooled_mean_fit(values, weights, Direction.DECREASING)


def minimizing_indices(
    eta: float,
    sample: ChainSample,
    weights=None,
    spec: FunctionalSpec | None = None,
    atol: float = 1e-12,
) -> MinimizingIndexSet:
    """Tail starts ``l`` minimizing ``sum_{i >= l} w_i V(eta, y_i)``.

    Ties are resolved with absolute tolerance ``atol`` scaled by the total
    weighted magnitude of the summands.
    """
    if spec is None:
        raise TypeError("minimizing_indices needs a FunctionalSpec")
    w = _as_weights(weights, sample.n)
    v = spec.identification(eta, sample.y) * w[sample.point_of]
    per_point = np.add.reduceat(v, sample.offsets[:-1])
    tails = np.concatenate([np.cumsum(per_point[::-1])[::-1], [0.0]])
    tol = atol * max(1.0, float(np.abs(v).sum()))
    best = tails.min()
    return MinimizingIndexSet(float(eta), tuple(np.flatnonzero(tails <= best + tol).tolist()))


def restrict_fit(fit: MonotoneFit, index_range) -> MonotoneFit:
    """Slice of a fit over a contiguous, nonempty range (``range`` or ``(start, stop)``)."""
    if isinstance(index_range, range):
        if index_range.step != 1:
            raise RangeError("index range must be contiguous")
        start, stop = index_range.start, index_range.stop
    else:
        start, stop = index_range
    if not 0 <= start < stop <= len(fit):
        raise RangeError(f"range [{start}, {stop}) is empty or outside a fit of length {len(fit)}")
    return MonotoneFit(fit.values[start:stop], fit.direction, fit.bound)
