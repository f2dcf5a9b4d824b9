"""Bivariate monotone fits on a finite partially ordered covariate set.

Contiguous index ranges of the total-order case become differences
``x \\ x'`` of nested upper sets, and the optimal increasing fit reads

    g(z) = min_{x' not containing z} max_{x strictly containing x'} T-(P_{x \\ x'})
         = max_{x containing z} min_{x' strictly inside x} T-(P_{x \\ x'}).

Upper sets are enumerated explicitly as bitmasks. Their number can grow
exponentially, so posets are capped at ``DEFAULT_NODE_CAP`` nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from biviso.errors import CycleError, DimensionMismatch, EmptyInput, TooLarge
from biviso.functional import (
    FunctionalSpec,
    WeightedSample,
    WeightFunction,
    functional_bounds,
    mean,
)
from biviso.joint import ConvergenceConfig, PairKind, alternate, g1_log_weights
from biviso.solver import Bound, Direction

DEFAULT_NODE_CAP = 20
_MEAN = mean()


class PosetSample:
    """Observations attached to the nodes of a finite poset.

    Parameters
    ----------
    nodes : sequence of str
        Opaque node ids; their order only fixes array positions.
    edges : iterable of (a, b)
        Relations ``a <= b``. Need not be transitively closed or reduced.
    observations : mapping
        ``node -> sequence of y values``; every node needs at least one.
    """

    def __init__(self, nodes, edges, observations):
        self.nodes = tuple(str(v) for v in nodes)
        if not self.nodes:
            raise EmptyInput("a poset needs at least one node")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node ids")
        self.index = {v: i for i, v in enumerate(self.nodes)}
        graph = nx.DiGraph()
        graph.add_nodes_from(self.nodes)
        for a, b in edges:
            a, b = str(a), str(b)
            for v in (a, b):
                if v not in self.index:
                    raise ValueError(f"edge refers to unknown node {v!r}")
            if a != b:
                graph.add_edge(a, b)
        try:
            cycle = nx.find_cycle(graph)
        except nx.NetworkXNoCycle:
            cycle = None
        if cycle:
            raise CycleError([u for u, _ in cycle])
        self.graph = graph
        self.edges = tuple((a, b) for a, b in nx.transitive_reduction(graph).edges())
        # up[i]: bitmask of every node >= node i, including i
        self.up = []
        for v in self.nodes:
            mask = 1 << self.index[v]
            for d in nx.descendants(graph, v):
                mask |= 1 << self.index[d]
            self.up.append(mask)
        self.values = []
        for v in self.nodes:
            ys = np.atleast_1d(np.asarray(observations.get(v, ()), dtype=float))
            if ys.size == 0:
                raise EmptyInput(f"node {v!r} has no observations")
            self.values.append(ys)
        self.multiplicity = np.array([ys.size for ys in self.values])

    @classmethod
    def chain(cls, y_per_point) -> "PosetSample":
        """Total order ``p0 <= p1 <= ...`` with the given responses per point."""
        nodes = [f"p{i}" for i in range(len(y_per_point))]
        edges = list(zip(nodes[:-1], nodes[1:]))
        return cls(nodes, edges, {v: np.atleast_1d(y) for v, y in zip(nodes, y_per_point)})

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def leq(self, a: str, b: str) -> bool:
        return bool(self.up[self.index[a]] >> self.index[b] & 1)

    def members(self, mask: int) -> list[int]:
        return [i for i in range(self.n) if mask >> i & 1]

    def induced(self, mask: int) -> "PosetSample":
        """Sub-poset on the nodes in ``mask`` with the inherited order."""
        keep = [self.nodes[i] for i in self.members(mask)]
        keep_set = set(keep)
        edges = [(a, b) for a in keep for b in nx.descendants(self.graph, a) if b in keep_set]
        return PosetSample(keep, edges, {v: self.values[self.index[v]] for v in keep})

    def __repr__(self):
        return f"PosetSample(n={self.n}, edges={len(self.edges)})"


@dataclass(frozen=True)
class UpperSetFamily:
    """All upper sets of a poset, as bitmasks over node positions."""

    sets: tuple[int, ...]
    n_nodes: int
    membership: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "membership", {s: k for k, s in enumerate(self.sets)})

    def __len__(self):
        return len(self.sets)

    def __contains__(self, mask: int) -> bool:
        return mask in self.membership

    def supersets(self, mask: int) -> list[int]:
        return [s for s in self.sets if s & mask == mask and s != mask]

    def as_node_sets(self, nodes) -> list[frozenset]:
        return [frozenset(nodes[i] for i in range(self.n_nodes) if s >> i & 1) for s in self.sets]


def enumerate_upper_sets(poset: PosetSample, cap: int = DEFAULT_NODE_CAP) -> UpperSetFamily:
    """Every upper set exactly once.

    Nodes are decided maximal-first (reverse topological order); a node may
    join only if everything above it already has, so each branch of the
    search yields a distinct valid set and no branch dead-ends.
    """
    if poset.n > cap:
        raise TooLarge(f"{poset.n} nodes exceed the upper-set enumeration cap of {cap}")
    order = [poset.index[v] for v in reversed(list(nx.topological_sort(poset.graph)))]
    strict_up = [poset.up[i] & ~(1 << i) for i in range(poset.n)]
    out = []
    stack = [(0, 0)]
    while stack:
        depth, mask = stack.pop()
        if depth == len(order):
            out.append(mask)
            continue
        i = order[depth]
        stack.append((depth + 1, mask))
        if strict_up[i] & mask == strict_up[i]:
            stack.append((depth + 1, mask | 1 << i))
    out.sort(key=lambda s: (bin(s).count("1"), s))
    return UpperSetFamily(tuple(out), poset.n)


def _dual_family(family: UpperSetFamily) -> UpperSetFamily:
    full = (1 << family.n_nodes) - 1
    return UpperSetFamily(tuple(sorted((full ^ s for s in family.sets), key=lambda s: (bin(s).count("1"), s))), family.n_nodes)


def _as_node_weights(sample: PosetSample, weights) -> np.ndarray:
    if weights is None:
        return np.ones(sample.n)
    if isinstance(weights, dict):
        weights = [weights[v] for v in sample.nodes]
    w = np.asarray(weights, dtype=float)
    if w.shape != (sample.n,):
        raise DimensionMismatch(f"expected {sample.n} node weights")
    if not np.all(w > 0):
        raise ValueError("weights must be strictly positive")
    return w


def _as_node_log_weights(sample: PosetSample, log_weights) -> np.ndarray:
    if isinstance(log_weights, dict):
        log_weights = [log_weights[v] for v in sample.nodes]
    lw = np.asarray(log_weights, dtype=float)
    if lw.shape != (sample.n,):
        raise DimensionMismatch(f"expected {sample.n} node log weights")
    if not np.all(np.isfinite(lw)):
        raise ValueError("log weights must be finite")
    return lw


def _increasing_minmax(values, node_w, spec, bound, family, n, log=False) -> np.ndarray:
    upper = bound is Bound.UPPER
    cache: dict[int, float] = {}

    def t(diff: int) -> float:
        if diff not in cache:
            idx = [i for i in range(n) if diff >> i & 1]
            ys = np.concatenate([values[i] for i in idx])
            ws = np.concatenate([np.full(values[i].size, node_w[i]) for i in idx])
            if log:
                ws = np.exp(ws - ws.max())
            lo, hi = functional_bounds(spec, WeightedSample(ys, ws))
            cache[diff] = hi if upper else lo
        return cache[diff]

    sets = family.sets
    # best_above[x'] = max over x strictly containing x' ; best_below[x] = min over x' strictly inside x
    best_above = {s: -math.inf for s in sets}
    best_below = {s: math.inf for s in sets}
    for x in sets:
        for xp in sets:
            if xp & x == xp and xp != x:
                v = t(x & ~xp)
                if v > best_above[xp]:
                    best_above[xp] = v
                if v < best_below[x]:
                    best_below[x] = v
    minmax = np.full(n, math.inf)
    maxmin = np.full(n, -math.inf)
    for s in sets:
        for i in range(n):
            if s >> i & 1:
                maxmin[i] = max(maxmin[i], best_below[s])
            else:
                minmax[i] = min(minmax[i], best_above[s])
    if spec.kind == "mean":
        scale = max(1.0, float(np.max(np.abs(minmax))))
        agree = np.allclose(minmax, maxmin, rtol=1e-9, atol=1e-9 * scale)
    else:
        agree = np.array_equal(minmax, maxmin)
    if not agree:
        raise RuntimeError("poset min-max and max-min representations disagree")
    return minmax


def poset_minmax_fit(
    sample: PosetSample,
    weights=None,
    spec: FunctionalSpec | None = None,
    bound: Bound = Bound.LOWER,
    direction: Direction = Direction.INCREASING,
    family: UpperSetFamily | None = None,
    cap: int = DEFAULT_NODE_CAP,
    log_weights=None,
) -> dict[str, float]:
    """Optimal order-preserving (or reversing) fit of a functional on a poset.

    Both min-max representations are evaluated and required to agree.
    Decreasing fits use the dual order, whose upper sets are the complements.
    ``log_weights`` gives logarithms of the node weights in place of ``weights``.
    """
    if spec is None:
        raise TypeError("poset_minmax_fit needs a FunctionalSpec")
    family = family or enumerate_upper_sets(sample, cap)
    if direction is Direction.DECREASING:
        family = _dual_family(family)
    log = log_weights is not None
    if log:
        if weights is not None:
            raise ValueError("give weights or log_weights, not both")
        w = _as_node_log_weights(sample, log_weights)
    else:
        w = _as_node_weights(sample, weights)
    vals = _increasing_minmax(sample.values, w, spec, bound, family, sample.n, log)
    return dict(zip(sample.nodes, vals.tolist()))


def poset_minimizing_sets(
    eta: float,
    sample: PosetSample,
    weights=None,
    spec: FunctionalSpec | None = None,
    family: UpperSetFamily | None = None,
    atol: float = 1e-12,
) -> tuple[int, ...]:
    """Upper sets ``x`` minimizing ``sum_{z in x} w_z sum_y V(eta, y)``, as bitmasks.

    Minimizers are closed under union and intersection. The lower fit at
    ``z`` is the largest ``eta`` with ``z`` in their intersection, the upper
    fit the largest with ``z`` in their union. Ties use ``atol`` scaled by the
    summed magnitudes.
    """
    if spec is None:
        raise TypeError("poset_minimizing_sets needs a FunctionalSpec")
    family = family or enumerate_upper_sets(sample)
    w = _as_node_weights(sample, weights)
    per_node = np.array([w[i] * spec.identification(eta, ys).sum() for i, ys in enumerate(sample.values)])
    totals = np.array([per_node[[i for i in range(sample.n) if s >> i & 1]].sum() for s in family.sets])
    tol = atol * max(1.0, float(np.abs(per_node).sum()))
    best = totals.min()
    return tuple(s for s, t in zip(family.sets, totals) if t <= best + tol)


def _node_losses(sample: PosetSample, g1: dict, spec: FunctionalSpec) -> list[np.ndarray]:
    return [spec.base_loss(g1[v], sample.values[i]) for i, v in enumerate(sample.nodes)]


def poset_fit_g2_given_g1(
    sample: PosetSample,
    g1: dict,
    spec: FunctionalSpec,
    direction: Direction,
    family: UpperSetFamily | None = None,
    cap: int = DEFAULT_NODE_CAP,
) -> dict[str, float]:
    """Monotone mean fit of the pointwise losses ``L(g1(z), y)``.

    The antitonic case is computed as the negated isotonic fit of the negated
    losses.
    """
    family = family or enumerate_upper_sets(sample, cap)
    losses = _node_losses(sample, g1, spec)
    sign = -1.0 if direction is Direction.DECREASING else 1.0
    vals = _increasing_minmax(
        [sign * l for l in losses], np.ones(sample.n), _MEAN, Bound.LOWER, family, sample.n
    )
    return dict(zip(sample.nodes, (sign * vals).tolist()))


@dataclass(frozen=True)
class PosetFit:
    g1: dict
    g2: dict
    pair: PairKind
    weight_fn: str = "unweighted-canonical"
    iterations: int = 0
    converged: bool = True

    def g1_array(self, nodes) -> np.ndarray:
        return np.array([self.g1[v] for v in nodes])

    def g2_array(self, nodes) -> np.ndarray:
        return np.array([self.g2[v] for v in nodes])

    def is_monotone(self, sample: PosetSample) -> bool:
        for a, b in sample.edges:
            if self.g1[a] > self.g1[b]:
                return False
            if self.pair.g2_direction is Direction.DECREASING and self.g2[a] < self.g2[b]:
                return False
            if self.pair.g2_direction is Direction.INCREASING and self.g2[a] > self.g2[b]:
                return False
        return True


def poset_canonical_pair(sample: PosetSample, pair: PairKind, family: UpperSetFamily | None = None) -> PosetFit:
    family = family or enumerate_upper_sets(sample)
    g1 = poset_minmax_fit(sample, None, pair.spec, Bound.LOWER, family=family)
    g2 = poset_fit_g2_given_g1(sample, g1, pair.spec, pair.g2_direction, family)
    return PosetFit(g1, g2, pair)


def poset_alternating_solve(
    sample: PosetSample, pair: PairKind, w: WeightFunction, cfg: ConvergenceConfig | None = None
) -> PosetFit:
    """The chain alternating scheme with the poset solvers substituted."""
    cfg = cfg or ConvergenceConfig()
    family = enumerate_upper_sets(sample)
    spec = pair.spec
    start = poset_canonical_pair(sample, pair, family)
    nodes = sample.nodes
    point_of = np.repeat(np.arange(sample.n), sample.multiplicity)
    y = np.concatenate(sample.values)

    def refit_g1(g2_values):
        log_w, clamps = g1_log_weights(g2_values, w)
        fit = poset_minmax_fit(sample, None, spec, Bound.LOWER, family=family, log_weights=log_w)
        return np.array([fit[v] for v in nodes]), clamps

    def refit_g2(g1_values):
        fit = poset_fit_g2_given_g1(sample, dict(zip(nodes, g1_values)), spec, pair.g2_direction, family)
        return np.array([fit[v] for v in nodes])

    def loss_terms(a, b):
        x1, x2 = a[point_of], b[point_of]
        return w.H(x2) + w.h(x2) * (spec.base_loss(x1, y) - x2)

    res = alternate(
        start.g1_array(nodes), start.g2_array(nodes), refit_g1, refit_g2, loss_terms, cfg, y.size
    )
    return PosetFit(
        dict(zip(nodes, res.g1.tolist())),
        dict(zip(nodes, res.g2.tolist())),
        pair,
        w.name,
        res.iterations,
        res.converged,
    )


@dataclass(frozen=True)
class LevelSetCheck:
    """Comparison on one region ``{z : g2(z) <= level}`` gated by the Bayes-risk scores."""

    members: tuple[str, ...]
    g2_level: float
    side_condition: bool
    restricted_loss: float
    refit_loss: float
    max_abs_diff: float
    passed: bool


@dataclass(frozen=True)
class PosetSimultaneityReport:
    simultaneous: bool
    checked_sets: tuple[LevelSetCheck, ...]
    tolerance: float
    comparison: str = "refit"
    require_g1_constancy: bool = False
    chain_verdict: bool | None = None

    @property
    def chain_disagreement(self) -> bool:
        return self.chain_verdict is not None and self.chain_verdict != self.simultaneous

    def to_dict(self) -> dict:
        return {
            "simultaneous": self.simultaneous,
            "tolerance": self.tolerance,
            "comparison": self.comparison,
            "require_g1_constancy": self.require_g1_constancy,
            "chain_verdict": self.chain_verdict,
            "chain_disagreement": self.chain_disagreement,
            "checked_sets": [
                {
                    "members": list(c.members),
                    "g2_level": c.g2_level,
                    "side_condition": c.side_condition,
                    "restricted_loss": c.restricted_loss,
                    "refit_loss": c.refit_loss,
                    "max_abs_diff": c.max_abs_diff,
                    "passed": c.passed,
                }
                for c in self.checked_sets
            ],
        }


def _chain_order(sample: PosetSample):
    """Node positions in chain order if the poset is a total order, else None."""
    order = list(nx.topological_sort(sample.graph))
    for a, b in zip(order[:-1], order[1:]):
        if not sample.leq(a, b):
            return None
    return [sample.index[v] for v in order]


def poset_check_simultaneous(
    sample: PosetSample,
    pair: PairKind,
    tol: float = 1e-9,
    comparison: str = "refit",
    require_g1_constancy: bool = False,
) -> PosetSimultaneityReport:
    """Check the canonical poset pair on every region gated by a level of ``g2``.

    For a decreasing ``g2`` the sets ``{z : g2(z) <= level}`` are upper sets,
    for an increasing one lower sets. With ``require_g1_constancy`` a set is
    only checked if some covering pair across its boundary shares its ``g1``
    value, mirroring the total-order criterion.
    """
    from biviso.audit import _passes

    if tol <= 0:
        raise ValueError("tolerance must be positive")
    spec = pair.spec
    family = enumerate_upper_sets(sample)
    fit = poset_canonical_pair(sample, pair, family)
    g1 = fit.g1_array(sample.nodes)
    g2 = fit.g2_array(sample.nodes)
    checks = []
    for level in np.unique(g2)[:-1]:
        mask = 0
        for i in np.flatnonzero(g2 <= level):
            mask |= 1 << int(i)
        side = any(
            g1[sample.index[a]] == g1[sample.index[b]]
            and ((mask >> sample.index[a] & 1) != (mask >> sample.index[b] & 1))
            for a, b in sample.edges
        )
        if require_g1_constancy and not side:
            continue
        sub = sample.induced(mask)
        refit = poset_minmax_fit(sub, None, spec, Bound.LOWER)
        members = sub.nodes
        restricted = np.array([g1[sample.index[v]] for v in members])
        refit_arr = np.array([refit[v] for v in members])
        ys = [sub.values[k] for k in range(sub.n)]
        r_loss = math.fsum(np.concatenate([spec.base_loss(restricted[k], ys[k]) for k in range(sub.n)]))
        f_loss = math.fsum(np.concatenate([spec.base_loss(refit_arr[k], ys[k]) for k in range(sub.n)]))
        ok = _passes(comparison, restricted, refit_arr, r_loss, f_loss, tol)
        checks.append(
            LevelSetCheck(members, float(level), side, r_loss, f_loss, float(np.max(np.abs(restricted - refit_arr))), ok)
        )
    verdict = all(c.passed for c in checks)
    chain_verdict = None
    order = _chain_order(sample)
    if order is not None:
        from biviso.audit import check_simultaneous
        from biviso.solver import ChainSample

        z = np.concatenate([np.full(sample.values[i].size, k, dtype=float) for k, i in enumerate(order)])
        y = np.concatenate([sample.values[i] for i in order])
        chain_verdict = check_simultaneous(ChainSample(z, y), pair, tol, comparison).simultaneous
    return PosetSimultaneityReport(verdict, tuple(checks), tol, comparison, require_g1_constancy, chain_verdict)


def read_edges(lines) -> list[tuple[str, str]]:
    """Parse ``a <= b`` relations, one per line; blank lines and ``#`` comments are skipped."""
    edges = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("<=")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ValueError(f"line {lineno}: expected 'a <= b', got {raw.strip()!r}")
        edges.append((parts[0].strip(), parts[1].strip()))
    return edges
