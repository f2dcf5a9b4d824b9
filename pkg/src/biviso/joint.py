"""Monotone fits for the pair (functional, Bayes risk).

For a fixed second component ``g2`` the optimal first component is a
weighted monotone fit with weights ``h(g2)``; for a fixed ``g1`` the optimal
``g2`` is the monotone mean fit of the pointwise losses ``L(g1(z_i), y_i)``.
:func:`alternating_solve` alternates the two, starting from the unweighted
(canonical) pair.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from biviso.errors import DimensionMismatch, NonConvergenceWarning
from biviso.functional import FunctionalSpec, WeightFunction, mean, quantile
from biviso.solver import (
    Bound,
    ChainSample,
    Direction,
    MonotoneFit,
    minmax_fit,
    pooled_mean_fit,
)

CANONICAL = "unweighted-canonical"


@dataclass(frozen=True)
class PairKind:
    """Which bivariate functional is fitted, and the monotonicity of each component.

    ``(q_alpha, ES_alpha)`` pairs an increasing quantile with a decreasing
    expected shortfall; ``(mean, variance)`` fits both components increasing.
    """

    kind: str
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("qes", "meanvar"):
            raise ValueError(f"unknown pair kind {self.kind!r}")
        if self.kind == "qes":
            quantile(self.alpha)  # validates alpha
        elif self.alpha is not None:
            raise ValueError("the (mean, variance) pair takes no level")

    @classmethod
    def quantile_es(cls, alpha: float) -> "PairKind":
        return cls("qes", float(alpha))

    @classmethod
    def mean_variance(cls) -> "PairKind":
        return cls("meanvar")

    @property
    def spec(self) -> FunctionalSpec:
        return quantile(self.alpha) if self.kind == "qes" else mean()

    @property
    def g2_direction(self) -> Direction:
        return Direction.DECREASING if self.kind == "qes" else Direction.INCREASING

    def weight_name(self, short: str) -> str:
        """Map ``h1``/``h2`` to the pair's weight function name."""
        if short in ("h1", "h2"):
            return f"{short}_{'es' if self.kind == 'qes' else 'var'}"
        return short

    def __str__(self):
        return f"(q_{self.alpha}, ES_{self.alpha})" if self.kind == "qes" else "(mean, var)"


@dataclass(frozen=True)
class ConvergenceConfig:
    """Stopping rule for :func:`alternating_solve`.

    A refit cycle counts as an iteration only if it lowers the joint loss by
    at least ``loss_tolerance`` (plus the floating-point noise floor of the
    loss sum). With ``polish`` set, further uncounted cycles run until the
    fit stops moving by more than ``fixed_point_tol``.
    """

    loss_tolerance: float = 1e-10
    max_iterations: int = 200
    polish: bool = True
    fixed_point_tol: float = 1e-10
    max_polish: int = 20000
    loss_scale: str = "sum"

    def __post_init__(self):
        if not self.loss_tolerance > 0:
            raise ValueError("loss_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.loss_scale not in ("sum", "mean"):
            raise ValueError("loss_scale must be 'sum' or 'mean'")


@dataclass(frozen=True)
class BivariateFit:
    g1: MonotoneFit
    g2: MonotoneFit
    pair: PairKind
    weight_fn: str = CANONICAL
    iterations: int = 0
    converged: bool = True
    clamp_warnings: int = 0
    loss_history: tuple = field(default=(), compare=False)
    polish_steps: int = 0

    def __len__(self):
        return len(self.g1)


def _check_dims(sample: ChainSample, *vectors):
    for v in vectors:
        if len(v) != sample.n:
            raise DimensionMismatch(f"fit has {len(v)} points, sample has {sample.n}")


def _loss_terms(sample, spec, w, g1_values, g2_values) -> np.ndarray:
    x1 = sample.expand(g1_values)
    x2 = sample.expand(g2_values)
    return w.H(x2) + w.h(x2) * (spec.base_loss(x1, sample.y) - x2)


def total_joint_loss(
    fit: BivariateFit, sample: ChainSample, spec: FunctionalSpec | None, w: WeightFunction
) -> float:
    """Sum of the joint loss over every observation (ties counted with multiplicity)."""
    _check_dims(sample, fit.g1, fit.g2)
    spec = spec or fit.pair.spec
    return math.fsum(_loss_terms(sample, spec, w, fit.g1.values, fit.g2.values))


def transformed_losses(sample: ChainSample, g1_values, spec: FunctionalSpec) -> np.ndarray:
    """Per-point mean of ``L(g1(z_k), y)`` over the responses at point ``k``."""
    losses = spec.base_loss(sample.expand(g1_values), sample.y)
    return np.add.reduceat(losses, sample.offsets[:-1]) / sample.multiplicity


def fit_g2_given_g1(
    sample: ChainSample, g1: MonotoneFit, spec: FunctionalSpec, g2_direction: Direction
) -> MonotoneFit:
    """Optimal Bayes-risk component for a fixed first component."""
    _check_dims(sample, g1)
    return pooled_mean_fit(transformed_losses(sample, g1.values, spec), sample.multiplicity, g2_direction)


def g1_weights(g2_values, w: WeightFunction) -> tuple[np.ndarray, int]:
    """Weights ``h(g2)`` rescaled to sum to the number of points, and the clamp count."""
    g2_values = np.asarray(g2_values, dtype=float)
    raw = w.h(g2_values)
    return raw * (raw.size / raw.sum()), int(np.count_nonzero(w.clamped(g2_values)))


def g1_log_weights(g2_values, w: WeightFunction) -> tuple[np.ndarray, int]:
    """``log h(g2)`` shifted to a maximum of 0, and the clamp count.

    Unlike ``g1_weights`` this never underflows, however far ``g2`` spreads.
    """
    g2_values = np.asarray(g2_values, dtype=float)
    lw = w.log_h(g2_values)
    return lw - lw.max(), int(np.count_nonzero(w.clamped(g2_values)))


def fit_g1_given_g2(
    sample: ChainSample, g2: MonotoneFit, spec: FunctionalSpec, w: WeightFunction
) -> MonotoneFit:
    """Lower-bound increasing fit of the functional with weights ``h(g2)``."""
    _check_dims(sample, g2)
    log_w, _ = g1_log_weights(g2.values, w)
    return minmax_fit(sample, spec=spec, bound=Bound.LOWER, log_weights=log_w)


def canonical_pair(sample: ChainSample, pair: PairKind) -> BivariateFit:
    """Unweighted lower fit of the functional and the induced Bayes-risk fit."""
    spec = pair.spec
    g1 = minmax_fit(sample, None, spec, Direction.INCREASING, Bound.LOWER)
    g2 = fit_g2_given_g1(sample, g1, spec, pair.g2_direction)
    return BivariateFit(g1, g2, pair)


@dataclass
class AlternationResult:
    g1: np.ndarray
    g2: np.ndarray
    iterations: int
    converged: bool
    clamp_warnings: int
    loss_history: list
    polish_steps: int


def alternate(
    g1: np.ndarray,
    g2: np.ndarray,
    refit_g1: Callable[[np.ndarray], tuple[np.ndarray, int]],
    refit_g2: Callable[[np.ndarray], np.ndarray],
    loss_terms: Callable[[np.ndarray, np.ndarray], np.ndarray],
    cfg: ConvergenceConfig,
    n_obs: int,
) -> AlternationResult:
    """Alternating minimization shared by the chain and poset solvers.

    ``refit_g1`` maps ``g2`` to ``(g1, clamp_count)``; ``refit_g2`` maps ``g1``
    to ``g2``; ``loss_terms`` returns per-observation joint losses.
    """
    scale = 1.0 / n_obs if cfg.loss_scale == "mean" else 1.0

    def evaluate(a, b):
        terms = loss_terms(a, b)
        noise = 64 * np.finfo(float).eps * float(np.abs(terms).sum())
        return math.fsum(terms) * scale, noise * scale

    loss, noise = evaluate(g1, g2)
    history = [loss]
    iterations = 0
    clamps = 0
    converged = False
    while iterations < cfg.max_iterations:
        new_g1, clamps = refit_g1(g2)
        new_g2 = refit_g2(new_g1)
        if np.array_equal(new_g1, g1) and np.array_equal(new_g2, g2):
            converged = True
            break
        new_loss, new_noise = evaluate(new_g1, new_g2)
        if loss - new_loss < cfg.loss_tolerance + max(noise, new_noise):
            converged = True
            break
        g1, g2, loss, noise = new_g1, new_g2, new_loss, new_noise
        history.append(loss)
        iterations += 1

    polish_steps = 0
    if converged and cfg.polish:
        seen = set()
        while polish_steps < cfg.max_polish:
            new_g1, new_clamps = refit_g1(g2)
            new_g2 = refit_g2(new_g1)
            moved = max(np.max(np.abs(new_g1 - g1)), np.max(np.abs(new_g2 - g2)))
            new_loss, new_noise = evaluate(new_g1, new_g2)
            if new_loss > loss + max(noise, new_noise):
                break
            g1, g2, loss, noise, clamps = new_g1, new_g2, min(loss, new_loss), new_noise, new_clamps
            polish_steps += 1
            if moved <= cfg.fixed_point_tol:
                break
            key = (g1.tobytes(), g2.tobytes())
            if key in seen:
                break
            seen.add(key)
        else:
            converged = False
    if not converged:
        warnings.warn(
            f"alternating minimization stopped after {iterations} iterations without converging",
            NonConvergenceWarning,
            stacklevel=3,
        )
    return AlternationResult(g1, g2, iterations, converged, clamps, history, polish_steps)


def alternating_solve(
    sample: ChainSample,
    pair: PairKind,
    w: WeightFunction,
    cfg: ConvergenceConfig | None = None,
) -> BivariateFit:
    """Minimize the total joint loss by alternating the two conditional refits.

    Starts from the canonical pair (iteration 0, a constant ``g2`` gives
    uniform weights). Each cycle refits ``g1`` given ``g2`` and then ``g2``
    given ``g1``.
    """
    cfg = cfg or ConvergenceConfig()
    spec = pair.spec
    start = canonical_pair(sample, pair)
    if sample.n == 1:
        return BivariateFit(start.g1, start.g2, pair, w.name, 0, True, 0, (), 0)

    def refit_g1(g2_values):
        log_w, clamps = g1_log_weights(g2_values, w)
        fit = minmax_fit(sample, spec=spec, bound=Bound.LOWER, log_weights=log_w)
        return fit.values, clamps

    def refit_g2(g1_values):
        return fit_g2_given_g1(sample, MonotoneFit(g1_values, Direction.INCREASING), spec, pair.g2_direction).values

    res = alternate(
        start.g1.values.copy(),
        start.g2.values.copy(),
        refit_g1,
        refit_g2,
        lambda a, b: _loss_terms(sample, spec, w, a, b),
        cfg,
        sample.n_obs,
    )
    return BivariateFit(
        MonotoneFit(res.g1, Direction.INCREASING, Bound.LOWER),
        MonotoneFit(res.g2, pair.g2_direction, Bound.LOWER),
        pair,
        w.name,
        res.iterations,
        res.converged,
        res.clamp_warnings,
        tuple(res.loss_history),
        res.polish_steps,
    )
