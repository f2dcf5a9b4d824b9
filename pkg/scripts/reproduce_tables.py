"""Run the full simulation grids and compare every cell with its expected value.

Each ``configs/<name>.json`` is a study config; ``configs/expected/<name>.json``
lists the published cell values. Simultaneity cells must lie within three
binomial standard errors; iteration cells are reported with their deviation.

At M = 1000 the n = 1000 rows dominate; expect about an hour on one core.

    python3 scripts/reproduce_tables.py --jobs 8 --out results/
    python3 scripts/reproduce_tables.py --only table1 --replications 5
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

from biviso import StudyConfig
from biviso.experiments import run_study

ROOT = Path(__file__).resolve().parent.parent


def binomial_tolerance(p: float, m: int, k: float = 3.0) -> float:
    """``k`` standard errors of a proportion; ``p`` is kept off 0 and 1 so the band never collapses."""
    p = min(max(p, 1.0 / m), 1.0 - 1.0 / m)
    return k * math.sqrt(p * (1.0 - p) / m)


def _key(record: dict, names) -> tuple:
    def norm(name, v):
        if name == "n":
            return int(v)
        return v if isinstance(v, str) else round(float(v), 9)

    return tuple(norm(k, record[k]) for k in names)


def compare(result, expected: list[dict]) -> list[dict]:
    cfg = result.config
    names = cfg.key_names()
    observed = {_key(dict(zip(names, key)), names): cell for key, cell in result.cells.items()}
    rows = []
    for rec in expected:
        key = _key(rec, names)
        cell = observed.get(key)
        if cell is None:
            continue
        row = dict(zip(names, key), expected=rec["value"], observed=cell.value, M=cell.M, failures=cell.failures)
        row["deviation"] = cell.value - rec["value"]
        if cfg.study == "simultaneity":
            row["tolerance"] = binomial_tolerance(rec["value"], cell.M)
            row["within"] = abs(row["deviation"]) <= row["tolerance"] + 1e-12
        else:
            row["tolerance"] = ""
            row["within"] = ""
        rows.append(row)
    return rows


def run_one(name: str, configs: Path, out: Path, jobs: int, replications: int | None) -> tuple[int, int]:
    raw = json.loads((configs / f"{name}.json").read_text())
    if replications is not None:
        raw["replications"] = replications
    cfg = StudyConfig.from_dict(raw)
    started = time.perf_counter()
    result = run_study(cfg, jobs)
    elapsed = time.perf_counter() - started
    result.to_csv(out / f"{name}.csv")
    (out / f"{name}.txt").write_text(result.to_table())
    expected_path = configs / "expected" / f"{name}.json"
    if not expected_path.exists():
        print(f"{name}: {len(result.cells)} cells in {elapsed:.1f}s, nothing to compare")
        return 0, 0
    rows = compare(result, json.loads(expected_path.read_text()))
    with open(out / f"{name}_comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    checked = [r for r in rows if r["within"] != ""]
    misses = sum(not r["within"] for r in checked)
    if checked:
        print(f"{name}: {len(checked) - misses}/{len(checked)} cells within 3 binomial SE ({elapsed:.1f}s)")
    else:
        worst = max(rows, key=lambda r: abs(r["deviation"]))
        print(f"{name}: largest deviation {worst['deviation']:+.3f} at {worst} ({elapsed:.1f}s)")
    return len(checked), misses


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--configs", type=Path, default=ROOT / "configs")
    parser.add_argument("--out", type=Path, default=ROOT / "results")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--only", nargs="*", help="config names without .json")
    parser.add_argument("--replications", type=int, help="override M, for smoke runs")
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    names = args.only or sorted(p.stem for p in args.configs.glob("*.json"))
    total_misses = 0
    for name in names:
        _, misses = run_one(name, args.configs, args.out, args.jobs, args.replications)
        total_misses += misses
    return 1 if total_misses else 0


if __name__ == "__main__":
    sys.exit(main())
