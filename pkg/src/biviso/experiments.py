"""Monte-Carlo studies: how often the canonical pair is simultaneously optimal,
and how many alternating refits a specific loss needs.

Every replication draws its data from a seed derived from the study seed, the
``(n, noise)`` cell and the replication index, so cells are reproducible on
their own and results do not depend on how replications are scheduled. Data
for one ``(n, noise)`` cell are shared by all levels and weight functions.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from biviso.audit import COMPARISONS, certify_simultaneous, check_simultaneous
from biviso.errors import NonConvergenceWarning
from biviso.functional import WeightFunction
from biviso.joint import ConvergenceConfig, PairKind, alternating_solve
from biviso.solver import ChainSample

STUDIES = ("simultaneity", "iterations")
NOISE_READINGS = ("sd", "variance")
# "exact" certifies against the full s2 envelope instead of the breakpoint criterion
STUDY_COMPARISONS = COMPARISONS + ("exact",)


def gen_qes_data(n: int, sigma: float, rng: np.random.Generator) -> ChainSample:
    """``z ~ U[0, 100]`` and ``y = z + N(0, sigma^2)``."""
    if n < 1 or not sigma > 0:
        raise ValueError("need n >= 1 and sigma > 0")
    z = rng.uniform(0.0, 100.0, n)
    y = z + rng.normal(0.0, sigma, n)
    return ChainSample(z, y)


def gen_meanvar_data(n: int, c: float, rng: np.random.Generator, noise_reading: str = "sd") -> ChainSample:
    """``z ~ U[0, 100]`` sorted, ``y_l = z_l + eps_l`` with noise growing in the sorted position ``l``.

    With ``noise_reading="sd"`` the standard deviation of ``eps_l`` is
    ``c * l / sqrt(n)``; with ``"variance"`` that quantity is its variance.
    """
    if n < 1 or not c > 0:
        raise ValueError("need n >= 1 and c > 0")
    if noise_reading not in NOISE_READINGS:
        raise ValueError(f"noise_reading must be one of {NOISE_READINGS}")
    z = np.sort(rng.uniform(0.0, 100.0, n))
    scale = c * np.arange(1, n + 1) / math.sqrt(n)
    if noise_reading == "variance":
        scale = np.sqrt(scale)
    return ChainSample(z, z + rng.normal(0.0, 1.0, n) * scale)


@dataclass(frozen=True)
class StudyConfig:
    """One simulation grid. ``noise_values`` holds sigma for (q, ES) and c for (mean, var)."""

    pair: str
    n_values: tuple
    noise_values: tuple
    replications: int
    seed: int
    alpha_values: tuple = ()
    weight_fns: tuple = ()
    study: str = "simultaneity"
    noise_reading: str = "sd"
    tolerance: float = 1e-9
    comparison: str = "refit"
    loss_scale: str = "sum"
    loss_tolerance: float = 1e-10
    max_iterations: int = 200

    def __post_init__(self):
        for name in ("n_values", "noise_values", "alpha_values", "weight_fns"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.pair not in ("qes", "meanvar"):
            raise ValueError("pair must be 'qes' or 'meanvar'")
        if self.study not in STUDIES:
            raise ValueError(f"study must be one of {STUDIES}")
        if self.noise_reading not in NOISE_READINGS:
            raise ValueError(f"noise_reading must be one of {NOISE_READINGS}")
        if self.comparison not in STUDY_COMPARISONS:
            raise ValueError(f"comparison must be one of {STUDY_COMPARISONS}")
        if not self.n_values or any(int(n) != n or n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive integers")
        if not self.noise_values or any(not s > 0 for s in self.noise_values):
            raise ValueError("noise_values must be positive")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.pair == "qes" and not self.alpha_values:
            raise ValueError("alpha_values are required for the (q, ES) pair")
        if self.pair == "meanvar" and self.alpha_values:
            raise ValueError("alpha_values apply only to the (q, ES) pair")
        if self.study == "iterations" and not self.weight_fns:
            raise ValueError("the iteration study needs weight_fns")
        for a in self.alpha_values:
            PairKind.quantile_es(a)
        for wf in self.weight_fns:
            WeightFunction(self.pairs()[0].weight_name(wf))

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def pairs(self) -> list[PairKind]:
        if self.pair == "qes":
            return [PairKind.quantile_es(a) for a in self.alpha_values]
        return [PairKind.mean_variance()]

    @property
    def noise_name(self) -> str:
        return "sigma" if self.pair == "qes" else "c"

    def key_names(self) -> tuple[str, ...]:
        names = ["n", self.noise_name]
        if self.pair == "qes":
            names.append("alpha")
        if self.study == "iterations":
            names.append("weight_fn")
        return tuple(names)


@dataclass(frozen=True)
class CellResult:
    """Aggregate over the replications of one cell.

    ``value`` is the fraction of simultaneous replications or the mean
    iteration count, over replications that did not raise. ``flagged`` counts
    replications where a weight was clamped at its domain floor.
    """

    value: float
    M: int
    failures: int = 0
    flagged: int = 0
    nonconverged: int = 0


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    cells: dict = field(default_factory=dict)

    @property
    def M_used(self) -> int:
        return self.config.replications

    @property
    def seed(self) -> int:
        return self.config.seed

    def value(self, *key) -> float:
        return self.cells[tuple(key)].value

    def to_csv(self, path=None) -> str:
        """One row per cell: key columns, then ``value, M, failures, flagged, nonconverged``."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([*self.config.key_names(), "value", "M", "failures", "flagged", "nonconverged"])
        for key, cell in self.cells.items():
            cols = [k if isinstance(k, str) else f"{k:.12g}" for k in key]
            writer.writerow([*cols, f"{cell.value:.12g}", cell.M, cell.failures, cell.flagged, cell.nonconverged])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_table(self) -> str:
        """Aligned text table: the last varying dimension (level, or c) runs across columns."""
        cfg = self.config
        if cfg.pair == "qes":
            col_name, col_values = "alpha", cfg.alpha_values
        else:
            col_name, col_values = "c", cfg.noise_values
        header = [f"{col_name}={v:g}" for v in col_values]
        rows = []
        for n in cfg.n_values:
            noises = cfg.noise_values if cfg.pair == "qes" else (None,)
            for s in noises:
                for wf in cfg.weight_fns or (None,):
                    label = [f"n={n}"]
                    if s is not None:
                        label.append(f"sigma={s:g}")
                    if wf is not None:
                        label.append(wf)
                    vals = []
                    for v in col_values:
                        key = (n, s, v) if cfg.pair == "qes" else (n, v)
                        if wf is not None:
                            key = (*key, wf)
                        vals.append(f"{self.cells[key].value:.2f}")
                    rows.append((" ".join(label), vals))
        width_label = max(len(r[0]) for r in rows)
        width = max(max(len(h) for h in header), 5)
        lines = [" " * width_label + " | " + " ".join(h.rjust(width) for h in header)]
        lines.append("-" * len(lines[0]))
        for label, vals in rows:
            lines.append(label.ljust(width_label) + " | " + " ".join(v.rjust(width) for v in vals))
        return "\n".join(lines) + "\n"


def replication_rng(seed: int, n: int, noise: float, rep: int) -> np.random.Generator:
    """Generator for one replication of one ``(n, noise)`` cell."""
    digest = hashlib.sha256(f"{int(n)}|{float(noise)!r}".encode()).digest()
    cell = int.from_bytes(digest[:4], "little")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell, rep)))


def _draw(cfg: StudyConfig, n: int, noise: float, rep: int) -> ChainSample:
    rng = replication_rng(cfg.seed, n, noise, rep)
    if cfg.pair == "qes":
        return gen_qes_data(n, noise, rng)
    return gen_meanvar_data(n, noise, rng, cfg.noise_reading)


def _run_block(args):
    """All levels and weight functions for replications ``reps`` of one ``(n, noise)`` cell.

    Returns ``{(alpha|None, weight|None): [(outcome|None, flagged, nonconverged), ...]}``.
    """
    cfg, n, noise, reps = args
    out = {}
    conv = ConvergenceConfig(
        loss_tolerance=cfg.loss_tolerance,
        max_iterations=cfg.max_iterations,
        polish=False,
        loss_scale=cfg.loss_scale,
    )
    for rep in reps:
        sample = _draw(cfg, n, noise, rep)
        for pair in cfg.pairs():
            if cfg.study == "simultaneity":
                try:
                    if cfg.comparison == "exact":
                        ok = certify_simultaneous(sample, pair, cfg.tolerance).certified
                    else:
                        ok = check_simultaneous(
                            sample, pair, cfg.tolerance, cfg.comparison, stop_at_first_failure=True
                        ).simultaneous
                    rec = (float(ok), False, False)
                except Exception:  # recorded as a failure, never dropped
                    rec = (None, False, False)
                out.setdefault((pair.alpha, None), []).append(rec)
                continue
            for wf in cfg.weight_fns:
                w = WeightFunction(pair.weight_name(wf))
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", NonConvergenceWarning)
                        fit = alternating_solve(sample, pair, w, conv)
                    rec = (float(fit.iterations), fit.clamp_warnings > 0, not fit.converged)
                except Exception:
                    rec = (None, False, False)
                out.setdefault((pair.alpha, wf), []).append(rec)
    return out


def _run(cfg: StudyConfig, jobs: int = 1, chunk: int | None = None) -> StudyResult:
    M = cfg.replications
    jobs = max(1, int(jobs))
    chunk = chunk or max(1, math.ceil(M / (4 * jobs)))
    tasks = [
        (cfg, n, s, range(start, min(start + chunk, M)))
        for n in cfg.n_values
        for s in cfg.noise_values
        for start in range(0, M, chunk)
    ]
    if jobs == 1:
        parts = list(map(_run_block, tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_block, tasks))
    merged: dict = {}
    for (_, n, s, _), part in zip(tasks, parts):
        for (alpha, wf), recs in part.items():
            merged.setdefault((n, s, alpha, wf), []).extend(recs)
    cells = {}
    for n in cfg.n_values:
        for s in cfg.noise_values:
            for pair in cfg.pairs():
                for wf in cfg.weight_fns if cfg.study == "iterations" else (None,):
                    recs = merged[(n, s, pair.alpha, wf)]
                    good = [r for r in recs if r[0] is not None]
                    value = math.fsum(r[0] for r in good) / len(good) if good else math.nan
                    key = (n, s) if pair.alpha is None else (n, s, pair.alpha)
                    if wf is not None:
                        key = (*key, wf)
                    cells[key] = CellResult(
                        value,
                        len(recs),
                        len(recs) - len(good),
                        sum(r[1] for r in good),
                        sum(r[2] for r in good),
                    )
    return StudyResult(cfg, cells)


def run_simultaneity_study(cfg: StudyConfig, jobs: int = 1) -> StudyResult:
    """Fraction of replications whose canonical pair is simultaneously optimal, per cell."""
    if cfg.study != "simultaneity":
        cfg = StudyConfig.from_dict({**cfg.to_dict(), "study": "simultaneity", "weight_fns": []})
    return _run(cfg, jobs)


def run_iteration_study(cfg: StudyConfig, jobs: int = 1) -> StudyResult:
    """Mean number of loss-improving alternating cycles from the canonical pair, per cell."""
    if cfg.study != "iterations":
        cfg = StudyConfig.from_dict({**cfg.to_dict(), "study": "iterations"})
    return _run(cfg, jobs)


def run_study(cfg: StudyConfig, jobs: int = 1) -> StudyResult:
    return run_simultaneity_study(cfg, jobs) if cfg.study == "simultaneity" else run_iteration_study(cfg, jobs)
