"""Simultaneous optimality of the canonical pair, and Murphy-diagram comparisons.

A fit pair is simultaneously optimal when it minimizes every mean
elementary score at once. The second-component scores gate observations on
``eta <= -g2(z)``, so for a decreasing ``g2`` they only see suffixes of the
covariate order (prefixes for an increasing ``g2``).

:func:`check_simultaneous` tests the breakpoint criterion: at every jump of
``g2`` inside a constant block of ``g1``, the first component restricted to
the gated region must coincide with the lower fit on that region alone. It
is necessary (with ``comparison="loss"``) but not sufficient.
:func:`certify_simultaneous` compares the ``s2`` curve against its exact
lower envelope over all monotone pairs.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from biviso.errors import DimensionMismatch, GridMismatch
from biviso.functional import (
    EtaGrid,
    FunctionalSpec,
    elementary_score_1,
    elementary_score_2,
    make_eta_grid,
)
from biviso.joint import (
    BivariateFit,
    PairKind,
    canonical_pair,
    fit_g2_given_g1,
    transformed_losses,
)
from biviso.solver import (
    Bound,
    ChainSample,
    Direction,
    MonotoneFit,
    minmax_fit,
    run_losses,
)

COMPARISONS = ("refit", "loss")


@dataclass(frozen=True)
class Breakpoint:
    """One checked jump of ``g2`` between points ``m - 1`` and ``m`` (0-based).

    ``region`` is ``"suffix"`` (points ``m..n-1``) or ``"prefix"`` (points ``0..m-1``).
    """

    m: int
    g2_jump: float
    region: str
    restricted_loss: float
    refit_loss: float
    max_abs_diff: float
    passed: bool


@dataclass(frozen=True)
class SimultaneityReport:
    simultaneous: bool
    checked_breakpoints: tuple[Breakpoint, ...]
    tolerance: float
    comparison: str = "refit"
    strict_prose: bool = False

    @property
    def failed(self) -> tuple[Breakpoint, ...]:
        return tuple(b for b in self.checked_breakpoints if not b.passed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checked_breakpoints"] = [asdict(b) for b in self.checked_breakpoints]
        return d


def _region_bounds(m: int, n: int, g2_direction: Direction) -> tuple[int, int, str]:
    if g2_direction is Direction.DECREASING:
        return m, n, "suffix"
    return 0, m, "prefix"


def _passes(comparison, restricted, refit, restricted_loss, refit_loss, tol) -> bool:
    if comparison == "loss":
        return abs(restricted_loss - refit_loss) <= tol * max(1.0, abs(refit_loss))
    scale = max(1.0, float(np.max(np.abs(refit))))
    return float(np.max(np.abs(restricted - refit))) <= tol * scale


def check_simultaneous(
    sample: ChainSample,
    pair: PairKind,
    tol: float = 1e-9,
    comparison: str = "refit",
    strict_prose: bool = False,
    stop_at_first_failure: bool = False,
    canonical: BivariateFit | None = None,
) -> SimultaneityReport:
    """Decide whether the canonical pair is simultaneously optimal.

    Parameters
    ----------
    sample : ChainSample
    pair : PairKind
    tol : float
        Relative tolerance of the restriction-versus-refit comparison.
    comparison : {"refit", "loss"}
        ``refit`` requires the restricted first component to equal the lower
        fit on the gated region. ``loss`` only requires equal total base loss,
        which also accepts any other optimal fit on the region (they differ
        for interval-valued functionals such as even-sized medians).
    strict_prose : bool
        Check every jump of ``g2``, dropping the requirement that ``g1`` is
        constant across it.
    stop_at_first_failure : bool
        Return as soon as one breakpoint fails (the verdict is unchanged).
    canonical : BivariateFit, optional
        Precomputed canonical pair for ``sample``.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if comparison not in COMPARISONS:
        raise ValueError(f"comparison must be one of {COMPARISONS}")
    spec = pair.spec
    fit = canonical or canonical_pair(sample, pair)
    g1, g2 = fit.g1.values, fit.g2.values
    n = sample.n
    if g2.size != n:
        raise DimensionMismatch("canonical pair does not match the sample")
    if pair.g2_direction is Direction.DECREASING:
        jumps = g2[:-1] > g2[1:]
        order = range(n - 1, 0, -1)  # short suffixes first: cheaper refits
    else:
        jumps = g2[:-1] < g2[1:]
        order = range(1, n)  # short prefixes first
    checked = []
    for m in order:
        if not jumps[m - 1]:
            continue
        if not strict_prose and g1[m - 1] != g1[m]:
            continue
        start, stop, region = _region_bounds(m, n, pair.g2_direction)
        sub = sample.subsample(start, stop)
        restricted = g1[start:stop]
        refit = minmax_fit(sub, None, spec, Direction.INCREASING, Bound.LOWER).values
        y_sub = sub.y
        restricted_loss = math.fsum(spec.base_loss(sub.expand(restricted), y_sub))
        refit_loss = math.fsum(spec.base_loss(sub.expand(refit), y_sub))
        ok = _passes(comparison, restricted, refit, restricted_loss, refit_loss, tol)
        checked.append(
            Breakpoint(
                m,
                float(g2[m - 1] - g2[m]),
                region,
                restricted_loss,
                refit_loss,
                float(np.max(np.abs(restricted - refit))),
                ok,
            )
        )
        if not ok and stop_at_first_failure:
            break
    checked.sort(key=lambda b: b.m)
    return SimultaneityReport(
        all(b.passed for b in checked), tuple(checked), tol, comparison, strict_prose
    )


def breakpoint_competitor(sample: ChainSample, pair: PairKind, m: int, canonical: BivariateFit | None = None) -> BivariateFit:
    """Monotone pair that swaps in the lower refit on the region gated at breakpoint ``m``.

    Outside the region the canonical ``g1`` is clipped so the spliced vector
    stays increasing; ``g2`` is then refitted to the new losses.
    """
    spec = pair.spec
    fit = canonical or canonical_pair(sample, pair)
    g1 = fit.g1.values.copy()
    start, stop, region = _region_bounds(m, sample.n, pair.g2_direction)
    refit = minmax_fit(sample.subsample(start, stop), None, spec, Direction.INCREASING, Bound.LOWER).values
    g1[start:stop] = refit
    if region == "suffix":
        g1[:start] = np.minimum(g1[:start], refit[0])
    else:
        g1[stop:] = np.maximum(g1[stop:], refit[-1])
    new_g1 = MonotoneFit(g1, Direction.INCREASING, Bound.LOWER)
    new_g2 = fit_g2_given_g1(sample, new_g1, spec, pair.g2_direction)
    return BivariateFit(new_g1, new_g2, pair, weight_fn=f"refit@{m}")


@dataclass(frozen=True)
class EnvelopeViolation:
    """An ``eta`` where some monotone pair beats the canonical pair on ``s2``.

    The winning pair gates points ``run_start..run_stop-1`` and uses the lower
    fit of that run; ``excess`` is the gap in summed (not averaged) score.
    """

    eta: float
    excess: float
    run_start: int
    run_stop: int


@dataclass(frozen=True)
class CertificationReport:
    certified: bool
    violations: tuple[EnvelopeViolation, ...]
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "violations": [asdict(v) for v in self.violations],
            "tolerance": self.tolerance,
        }


def _runs(n: int, g2_direction: Direction) -> list[tuple[int, int]]:
    if g2_direction is Direction.DECREASING:
        return [(k, n) for k in range(n + 1)]
    return [(0, k) for k in range(n + 1)]


def certify_simultaneous(
    sample: ChainSample, pair: PairKind, tol: float = 1e-9, canonical: BivariateFit | None = None
) -> CertificationReport:
    """Exact check that the canonical pair minimizes every mean ``s2`` score.

    For fixed ``eta`` the best score over all monotone pairs gates one run
    (a suffix for decreasing ``g2``, a prefix otherwise) and fits it with an
    optimal isotonic first component, so the minimum is a lower envelope of
    ``n + 1`` lines. The canonical curve is linear between the knots ``-g2``
    and never below the envelope, so comparing at the knots is exhaustive.
    Unlike :func:`check_simultaneous` this also catches runs that start inside
    a constant block of ``g2``. One pooling sweep gives all run losses.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    spec = pair.spec
    fit = canonical or canonical_pair(sample, pair)
    g1, g2 = fit.g1.values, fit.g2.values
    if g2.size != sample.n:
        raise DimensionMismatch("canonical pair does not match the sample")
    n = sample.n
    starts = sample.offsets[:-1]
    own = np.add.reduceat(spec.base_loss(sample.expand(g1), sample.y), starts)
    mult = sample.multiplicity.astype(float)
    from_end = pair.g2_direction is Direction.DECREASING
    runs = _runs(n, pair.g2_direction)
    r_loss = run_losses(sample, spec, from_end)
    cum = np.concatenate([[0.0], np.cumsum(mult)])
    r_count = cum[-1] - cum if from_end else cum

    knots = np.unique(-g2)
    violations = []
    # on (knots[j-1], knots[j]] the gate is {i : -g2_i >= knots[j]}; past the last knot it is empty
    for j in range(knots.size + 1):
        gate = (-g2 >= knots[j]) if j < knots.size else np.zeros(n, dtype=bool)
        c_loss, c_count = float(own[gate].sum()), float(mult[gate].sum())
        lo = knots[j - 1] if j > 0 else None
        hi = knots[j] if j < knots.size else None
        points = [hi] if hi is not None else []
        if lo is not None:
            # the left end is open: step inside, at most halfway to where the
            # active envelope line overtakes the canonical line
            k = int(np.argmin(r_loss + r_count * lo))
            gap = c_loss + c_count * lo - (r_loss[k] + r_count[k] * lo)
            slope = c_count - r_count[k]
            step = gap / (2 * abs(slope)) if slope != 0 else 1.0
            if hi is not None:
                step = min(step, (hi - lo) / 2)
            if step > 0:
                points.append(lo + step)
        for eta in points:
            lines = r_loss + r_count * eta
            k = int(np.argmin(lines))
            excess = c_loss + c_count * eta - lines[k]
            if excess > tol * max(1.0, abs(lines[k])):
                violations.append(EnvelopeViolation(float(eta), float(excess), *runs[k]))
    violations.sort(key=lambda v: v.eta)
    return CertificationReport(not violations, tuple(violations), tol)


def envelope_competitor(
    sample: ChainSample, pair: PairKind, violation: EnvelopeViolation, canonical: BivariateFit | None = None
) -> BivariateFit:
    """Monotone pair that beats the canonical pair on ``s2`` at ``violation.eta``.

    ``g1`` is the lower fit on the run, clipped outside it; ``g2`` gates
    exactly the run at that ``eta``.
    """
    fit = canonical or canonical_pair(sample, pair)
    a, b = violation.run_start, violation.run_stop
    g1 = fit.g1.values.copy()
    if b > a:
        refit = minmax_fit(sample.subsample(a, b), None, pair.spec, Direction.INCREASING, Bound.LOWER).values
        g1[a:b] = refit
        g1[:a] = np.minimum(g1[:a], refit[0])
        g1[b:] = np.maximum(g1[b:], refit[-1])
    inside = np.zeros(sample.n, dtype=bool)
    inside[a:b] = True
    level = -violation.eta
    step = 1.0 + abs(level)
    # the run sits at the low end of g2 in either direction, so this is monotone
    g2 = np.where(inside, level, level + step)
    return BivariateFit(
        MonotoneFit(g1, Direction.INCREASING, Bound.LOWER),
        MonotoneFit(g2, pair.g2_direction),
        pair,
        weight_fn=f"envelope@{violation.eta:.6g}",
    )


@dataclass(frozen=True)
class MurphyCurves:
    """Mean elementary scores per fit (rows) and grid point (columns)."""

    grid: EtaGrid
    s1_means: np.ndarray
    s2_means: np.ndarray
    fit_ids: tuple[str, ...] = field(default=())

    def fit(self, i: int) -> "MurphyCurves":
        return MurphyCurves(self.grid, self.s1_means[i : i + 1], self.s2_means[i : i + 1], (self.fit_ids[i],))

    def to_csv(self, path=None) -> str:
        """Rows ``eta, fit_id, s1_mean, s2_mean``; numbers with 12 significant digits."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["eta", "fit_id", "s1_mean", "s2_mean"])
        for k, fid in enumerate(self.fit_ids):
            for eta, s1, s2 in zip(self.grid.points, self.s1_means[k], self.s2_means[k]):
                writer.writerow([f"{eta:.12g}", fid, f"{s1:.12g}", f"{s2:.12g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def audit_grid(sample: ChainSample, fits, spec: FunctionalSpec | None = None, resolution: int = 401) -> EtaGrid:
    """Grid covering the responses, every fitted g1, every -g2, the pointwise losses and 0."""
    parts = [sample.y, [0.0]]
    for f in fits:
        sp = spec or f.pair.spec
        parts += [f.g1.values, -f.g2.values, transformed_losses(sample, f.g1.values, sp)]
    return make_eta_grid(np.concatenate([np.asarray(p, dtype=float) for p in parts]), resolution)


def murphy_curves(fits, sample: ChainSample, spec: FunctionalSpec | None = None, grid: EtaGrid | None = None) -> MurphyCurves:
    """Mean elementary scores of each fit over an eta grid."""
    fits = list(fits)
    if not fits:
        raise ValueError("need at least one fit")
    spec = spec or fits[0].pair.spec
    grid = grid or audit_grid(sample, fits, spec)
    eta = grid.points[:, None]
    y = sample.y[None, :]
    s1 = np.empty((len(fits), len(grid)))
    s2 = np.empty((len(fits), len(grid)))
    for k, f in enumerate(fits):
        if len(f.g1) != sample.n or len(f.g2) != sample.n:
            raise DimensionMismatch(f"fit {k} has {len(f.g1)} points, sample has {sample.n}")
        x1 = sample.expand(f.g1.values)[None, :]
        x2 = sample.expand(f.g2.values)[None, :]
        s1[k] = elementary_score_1(eta, x1, y, spec).mean(axis=1)
        s2[k] = elementary_score_2(eta, x1, x2, y, spec).mean(axis=1)
    ids = tuple(f.weight_fn if f.weight_fn else str(k) for k, f in enumerate(fits))
    return MurphyCurves(grid, s1, s2, ids)


class Dominance(enum.Enum):
    A_DOMINATES = "A_dominates"
    B_DOMINATES = "B_dominates"
    CROSSING = "Crossing"
    EQUAL = "Equal"


def dominance(a: MurphyCurves, b: MurphyCurves, components=("s1", "s2"), atol: float = 1e-12) -> Dominance:
    """Compare the first fit of ``a`` with the first fit of ``b``; lower scores win."""
    if a.grid != b.grid:
        raise GridMismatch("Murphy curves were evaluated on different grids")
    a_wins = b_wins = False
    for name in components:
        ca = getattr(a, f"{name}_means")[0]
        cb = getattr(b, f"{name}_means")[0]
        a_wins |= bool(np.any(ca < cb - atol))
        b_wins |= bool(np.any(cb < ca - atol))
    if a_wins and b_wins:
        return Dominance.CROSSING
    if a_wins:
        return Dominance.A_DOMINATES
    if b_wins:
        return Dominance.B_DOMINATES
    return Dominance.EQUAL
