"""Command-line entry point.

Subcommands: ``fit``, ``audit``, ``simulate`` and ``poset-fit``. Every run
writes ``manifest.json`` next to its outputs.

Exit codes: 0 success, 2 bad input (malformed CSV, unknown config keys,
cyclic order), 3 alternating solver did not converge (outputs still written),
4 poset too large.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np

from biviso.audit import (
    audit_grid,
    breakpoint_competitor,
    certify_simultaneous,
    check_simultaneous,
    dominance,
    envelope_competitor,
    murphy_curves,
)
from biviso.errors import CycleError, NonConvergenceWarning, TooLarge
from biviso.experiments import StudyConfig, run_study
from biviso.functional import WeightFunction
from biviso.joint import ConvergenceConfig, PairKind, alternating_solve, canonical_pair
from biviso.poset import (
    PosetSample,
    poset_alternating_solve,
    poset_canonical_pair,
    poset_check_simultaneous,
    read_edges,
)
from biviso.solver import ChainSample

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGENCE, EXIT_TOO_LARGE = 0, 2, 3, 4


class InputError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict, seed, inputs, started: float, extra=None):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": _version(),
        "inputs": {str(p): _digest(p) for p in inputs},
        "wall_clock_seconds": round(time.perf_counter() - started, 6),
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _num(text: str, lineno: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"line {lineno}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise InputError(f"line {lineno}: column {column!r} is not finite")
    return v


def read_table(path, columns: tuple[str, ...], numeric: tuple[str, ...]) -> list[tuple]:
    """Rows of a CSV with exactly the given header; errors name the offending line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != columns:
            raise InputError(f"line 1: expected header {','.join(columns)}")
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise InputError(f"line {lineno}: expected {len(columns)} fields, got {len(row)}")
            rows.append(
                tuple(_num(c.strip(), lineno, name) if name in numeric else c.strip() for c, name in zip(row, columns))
            )
    if not rows:
        raise InputError("no data rows")
    return rows


def read_chain_csv(path) -> ChainSample:
    rows = read_table(path, ("z", "y"), ("z", "y"))
    z, y = np.array(rows).T
    return ChainSample(z, y)


def _pair(args) -> PairKind:
    if args.pair == "qes":
        if args.alpha is None:
            raise InputError("--alpha is required for --pair qes")
        return PairKind.quantile_es(args.alpha)
    if args.alpha is not None:
        raise InputError("--alpha applies only to --pair qes")
    return PairKind.mean_variance()


def _fmt(v) -> str:
    return f"{float(v):.12g}"


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _solve(sample, pair, weight):
    if weight == "canonical":
        return canonical_pair(sample, pair)
    w = WeightFunction(pair.weight_name(weight))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        return alternating_solve(sample, pair, w, ConvergenceConfig())


def cmd_fit(args, out: Path, started: float) -> int:
    pair = _pair(args)
    sample = read_chain_csv(args.input)
    fit = _solve(sample, pair, args.weight)
    _write_rows(
        out / "fit.csv",
        ["z", "g1", "g2"],
        [[_fmt(z), _fmt(a), _fmt(b)] for z, a, b in zip(sample.z, fit.g1.values, fit.g2.values)],
    )
    config = {"pair": args.pair, "alpha": args.alpha, "weight": args.weight}
    extra = {"converged": fit.converged, "iterations": fit.iterations, "clamp_warnings": fit.clamp_warnings}
    _write_manifest(out, "fit", config, None, [args.input], started, extra)
    return EXIT_OK if fit.converged else EXIT_NONCONVERGENCE


def cmd_audit(args, out: Path, started: float) -> int:
    pair = _pair(args)
    sample = read_chain_csv(args.input)
    canonical = canonical_pair(sample, pair)
    report = check_simultaneous(sample, pair, canonical=canonical)
    cert = certify_simultaneous(sample, pair, canonical=canonical)
    fits = [canonical] + [breakpoint_competitor(sample, pair, b.m, canonical) for b in report.failed]
    if cert.violations:
        # one witness is enough to show the s2 curve is beaten
        fits.append(envelope_competitor(sample, pair, cert.violations[0], canonical))
    grid = audit_grid(sample, fits, pair.spec, args.eta_points)
    curves = murphy_curves(fits, sample, pair.spec, grid)
    curves.to_csv(out / "murphy.csv")
    result = report.to_dict()
    result["certification"] = cert.to_dict()
    result["murphy_comparisons"] = [
        {
            "fit_id": curves.fit_ids[k],
            "s1": dominance(curves.fit(0), curves.fit(k), ("s1",)).value,
            "s2": dominance(curves.fit(0), curves.fit(k), ("s2",)).value,
            "both": dominance(curves.fit(0), curves.fit(k)).value,
        }
        for k in range(1, len(fits))
    ]
    (out / "audit.json").write_text(json.dumps(result, indent=2) + "\n")
    config = {"pair": args.pair, "alpha": args.alpha, "eta_points": args.eta_points}
    _write_manifest(out, "audit", config, None, [args.input], started)
    return EXIT_OK


def resolve_seed(flag, config_seed):
    """``--seed`` beats ``BIVISO_SEED``, which beats the config file."""
    if flag is not None:
        return flag
    env = os.environ.get("BIVISO_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"BIVISO_SEED is not an integer: {env!r}") from None
    return config_seed


def cmd_simulate(args, out: Path, started: float) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    unknown = sorted(set(raw) - {f for f in StudyConfig.__dataclass_fields__})
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    seed = resolve_seed(args.seed, raw.get("seed"))
    if seed is None:
        raise InputError("no seed: set 'seed' in the config, BIVISO_SEED or --seed")
    raw["seed"] = seed
    try:
        cfg = StudyConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    result = run_study(cfg, args.jobs)
    result.to_csv(out / "table.csv")
    (out / "table.txt").write_text(result.to_table())
    _write_manifest(out, "simulate", cfg.to_dict(), seed, [args.config], started, {"jobs": args.jobs})
    return EXIT_OK


def read_poset(edges_path, obs_path) -> PosetSample:
    with open(edges_path) as fh:
        try:
            edges = read_edges(fh)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    rows = read_table(obs_path, ("node", "y"), ("y",))
    obs: dict = {}
    for node, y in rows:
        obs.setdefault(node, []).append(y)
    nodes = list(obs)
    for a, b in edges:
        for v in (a, b):
            if v not in obs:
                raise InputError(f"node {v!r} in the order has no observations")
    return PosetSample(nodes, edges, obs)


def cmd_poset_fit(args, out: Path, started: float) -> int:
    pair = _pair(args)
    sample = read_poset(args.edges, args.observations)
    if args.weight == "canonical":
        fit = poset_canonical_pair(sample, pair)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            fit = poset_alternating_solve(sample, pair, WeightFunction(pair.weight_name(args.weight)))
    _write_rows(out / "poset_fit.csv", ["node", "g1", "g2"], [[v, _fmt(fit.g1[v]), _fmt(fit.g2[v])] for v in sample.nodes])
    report = poset_check_simultaneous(sample, pair)
    (out / "poset_audit.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    config = {"pair": args.pair, "alpha": args.alpha, "weight": args.weight}
    _write_manifest(out, "poset-fit", config, None, [args.edges, args.observations], started, {"converged": fit.converged})
    return EXIT_OK if fit.converged else EXIT_NONCONVERGENCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biviso", description="Monotone regression for (functional, Bayes risk) pairs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, weight=True):
        p.add_argument("--pair", choices=("qes", "meanvar"), required=True)
        p.add_argument("--alpha", type=float)
        if weight:
            p.add_argument("--weight", choices=("h1", "h2", "canonical"), default="canonical")
        p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit the pair to a z,y CSV")
    p.add_argument("input")
    common(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("audit", help="check simultaneous optimality and emit Murphy curves")
    p.add_argument("input")
    common(p, weight=False)
    p.add_argument("--eta-points", type=int, default=401)
    p.set_defaults(handler=cmd_audit)

    p = sub.add_parser("simulate", help="run a simulation study from a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("poset-fit", help="fit on a partially ordered covariate set")
    p.add_argument("edges", help="text file with one 'a <= b' relation per line")
    p.add_argument("observations", help="CSV with header node,y")
    common(p)
    p.set_defaults(handler=cmd_poset_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        return args.handler(args, out, started)
    except (InputError, CycleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE


if __name__ == "__main__":
    sys.exit(main())
