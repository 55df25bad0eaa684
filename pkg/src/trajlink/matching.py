"""Linking sub-trajectories across sensors by maximum-affinity matching.

Candidate pairs (u precedes v) are scored by the product of point-cloud
similarity (P1), gate-transition ratio (P2), and travel-time density (P3).
A padded square assignment problem is solved exactly; every real node also
owns a private dummy partner priced at tau_nomatch, so a pair is selected
only when its affinity beats the no-match threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import FORBIDDEN, lexicographic_optimal_assignment
from .embedding import (
    DEFAULT_SIGMA_H,
    EmbeddingNet,
    aggregate_embedding,
    aggregate_height,
    cosine_to_unit_interval,
    height_similarity,
)
from .features import GmmGrid
from .spatiotemporal import TransitionMatrix, TravelTimeModel, p2_spatial, p3_temporal
from .tracker import SubTrajectory, temporal_precedes

TAU_NOMATCH = 0.05
COUNT_TRIGGER = 16
WINDOW_EXPIRY = 300.0


@dataclass
class ModelBundle:
    """Everything needed to score a candidate pair."""

    q: TransitionMatrix
    tt: TravelTimeModel
    grid: GmmGrid | None = None
    net: EmbeddingNet | None = None
    p1_mode: str = "fv"  # "fv" | "height"
    sigma_h: float = DEFAULT_SIGMA_H
    stride: int = 5
    use_p1: bool = True
    use_p2: bool = True
    use_p3: bool = True
    # gates on the world boundary: an exit through one has no successor and
    # an entry through one has no predecessor, so those edges are never built
    exterior_gates: frozenset = frozenset()

    def __post_init__(self):
        if self.p1_mode not in ("fv", "height"):
            raise ValueError(f"unknown p1 mode {self.p1_mode!r}")

    def descriptor(self, tr: SubTrajectory):
        """Per-sub-trajectory P1 summary: mean embedding or height.

        Only needed when descriptors are not supplied from the outside; the
        fv mode requires the grid and a trained net at this point.
        """
        segs = list(tr.segments)
        if self.p1_mode == "fv":
            if self.grid is None or self.net is None:
                raise ValueError("fv similarity needs a GmmGrid and a trained EmbeddingNet")
            return aggregate_embedding(segs, self.grid, self.net, self.stride)
        return aggregate_height(segs, self.stride)

    def p1_from_descriptors(self, da, db) -> float:
        if self.p1_mode == "fv":
            return cosine_to_unit_interval(float(np.dot(da, db)))
        return height_similarity(da, db, self.sigma_h)


def affinity(tr_u: SubTrajectory, tr_v: SubTrajectory, bundle: ModelBundle) -> float:
    """P1 * P2 * P3 for one causal pair; raises on non-causal input."""
    if not temporal_precedes(tr_u, tr_v):
        raise ValueError("non-causal pair: predecessor must end before successor starts")
    p1 = bundle.p1_from_descriptors(bundle.descriptor(tr_u), bundle.descriptor(tr_v)) if bundle.use_p1 else 1.0
    p2 = p2_spatial(tr_u.end_gate, tr_v.start_gate, bundle.q) if bundle.use_p2 else 1.0
    dt = tr_v.t_start - tr_u.t_end
    p3 = p3_temporal(dt, bundle.tt, (tr_u.end_gate, tr_v.start_gate)) if bundle.use_p3 else 1.0
    return p1 * p2 * p3


@dataclass(frozen=True)
class AffinityGraph:
    nodes: tuple  # every sub-trajectory id in the window
    v1: tuple  # ids with at least one successor candidate, ascending
    v2: tuple  # ids with at least one predecessor candidate, ascending
    weights: dict  # (u, v) -> affinity in [0, 1]
    tau: float = TAU_NOMATCH


def build_graph(
    trs,
    bundle: ModelBundle,
    tau: float = TAU_NOMATCH,
    exclude_successors=frozenset(),
    descriptor_cache: dict | None = None,
) -> AffinityGraph:
    """Score every causal pair in one window.

    `exclude_successors` removes ids already linked to a predecessor in an
    earlier window; `descriptor_cache` (id -> descriptor) avoids re-embedding
    across windows.
    """
    trs = sorted(trs, key=lambda tr: tr.id)
    ids = tuple(tr.id for tr in trs)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sub-trajectory ids")

    ext = bundle.exterior_gates
    edges = [
        (u, v)
        for u in trs
        for v in trs
        if u.id != v.id
        and v.id not in exclude_successors
        and u.end_gate not in ext
        and v.start_gate not in ext
        and temporal_precedes(u, v)
    ]
    cache = descriptor_cache if descriptor_cache is not None else {}
    weights = {}
    for u, v in edges:
        if bundle.use_p1:
            for tr in (u, v):
                if tr.id not in cache:
                    cache[tr.id] = bundle.descriptor(tr)
            p1 = bundle.p1_from_descriptors(cache[u.id], cache[v.id])
        else:
            p1 = 1.0
        p2 = p2_spatial(u.end_gate, v.start_gate, bundle.q) if bundle.use_p2 else 1.0
        p3 = (
            p3_temporal(v.t_start - u.t_end, bundle.tt, (u.end_gate, v.start_gate))
            if bundle.use_p3
            else 1.0
        )
        weights[(u.id, v.id)] = p1 * p2 * p3

    v1 = tuple(sorted({u for u, _ in weights}))
    v2 = tuple(sorted({v for _, v in weights}))
    return AffinityGraph(nodes=ids, v1=v1, v2=v2, weights=weights, tau=tau)


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # (u, v, affinity), ascending by u
    terminals: tuple  # ids with no selected successor
    sequences: tuple  # maximal chains (tuples of ids)

    def total_affinity(self) -> float:
        return float(sum(w for _, _, w in self.pairs))


def _assemble(nodes, selected) -> MatchResult:
    succ = {u: v for u, v, _ in selected}
    heads = [n for n in nodes if n not in {v for _, v, _ in selected}]
    sequences = []
    for h in heads:
        chain = [h]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        if len(chain) > 1:
            sequences.append(tuple(chain))
    terminals = tuple(n for n in nodes if n not in succ)
    return MatchResult(
        pairs=tuple(sorted(selected)),
        terminals=terminals,
        sequences=tuple(sorted(sequences)),
    )


def solve_matching(g: AffinityGraph) -> MatchResult:
    """Exact maximum-affinity one-to-one matching over the padded graph."""
    n1, n2 = len(g.v1), len(g.v2)
    if n1 == 0:
        return _assemble(g.nodes, [])
    n = n1 + n2
    # rows: real predecessors then per-successor dummies;
    # cols: real successors then per-predecessor dummies
    cost = np.full((n, n), FORBIDDEN)
    row_of = {u: i for i, u in enumerate(g.v1)}
    col_of = {v: j for j, v in enumerate(g.v2)}
    for (u, v), w in g.weights.items():
        cost[row_of[u], col_of[v]] = -w
    for i in range(n1):
        cost[i, n2 + i] = -g.tau  # private dummy partner of predecessor i
    for j in range(n2):
        cost[n1 + j, j] = -g.tau  # private dummy partner of successor j
    cost[n1:, n2:] = -g.tau  # dummy-dummy, keeps the threshold at exactly tau

    col_of_row = lexicographic_optimal_assignment(cost)
    selected = []
    for i in range(n1):
        j = int(col_of_row[i])
        if j < n2:
            u, v = g.v1[i], g.v2[j]
            w = g.weights[(u, v)]
            if w > g.tau:  # at or below the no-match price: terminal instead
                selected.append((u, v, w))
    return _assemble(g.nodes, selected)


def match_trajectories(trs, bundle: ModelBundle, tau: float = TAU_NOMATCH) -> MatchResult:
    """Batch convenience: build the graph over all sub-trajectories and solve."""
    return solve_matching(build_graph(trs, bundle, tau))


@dataclass
class OnlineMatcher:
    """Windowed streaming variant.

    Sub-trajectories arrive ordered by t_end. A window is solved when enough
    pending predecessors accumulate or the oldest buffered entry exceeds the
    expiry age. Matched predecessors leave the buffer; successors stay (they
    may precede later arrivals) but are never matched as successor twice.
    """

    bundle: ModelBundle
    tau: float = TAU_NOMATCH
    count_trigger: int = COUNT_TRIGGER
    expiry: float = WINDOW_EXPIRY
    min_commit_age: float = 10.0  # a pair is final only once the predecessor
    # is old enough that its true successor must already have streamed in
    buffer: list = field(default_factory=list)
    consumed_successors: set = field(default_factory=set)
    _cache: dict = field(default_factory=dict)
    _last_t: float = -np.inf

    def push(self, tr: SubTrajectory):
        if tr.t_end < self._last_t:
            raise ValueError("stream must be ordered by t_end")
        self._last_t = tr.t_end
        self.buffer.append(tr)
        now = tr.t_end
        n_pending = self._pending_predecessors(now)
        expired = any(b.t_end < now - self.expiry for b in self.buffer)
        if n_pending >= self.count_trigger or expired:
            return self._solve(final=False, now=now)
        return None

    def flush(self):
        if not self.buffer:
            return None
        return self._solve(final=True, now=np.inf)

    def _pending_predecessors(self, now: float) -> int:
        aged = [u for u in self.buffer if u.t_end <= now - self.min_commit_age]
        return sum(
            1
            for u in aged
            if any(
                v.id not in self.consumed_successors and temporal_precedes(u, v)
                for v in self.buffer
            )
        )

    def _solve(self, final: bool, now: float) -> MatchResult:
        g = build_graph(
            self.buffer,
            self.bundle,
            self.tau,
            exclude_successors=frozenset(self.consumed_successors),
            descriptor_cache=self._cache,
        )
        res = solve_matching(g)
        committed = [
            (u, v, w)
            for u, v, w in res.pairs
            if final or self._by_id(u).t_end <= now - self.min_commit_age
        ]
        matched_pred = {u for u, _, _ in committed}
        for _, v, _ in committed:
            self.consumed_successors.add(v)

        emitted_terminals = []
        keep = []
        for tr in self.buffer:
            if tr.id in matched_pred:
                self._cache.pop(tr.id, None)
                continue
            if final or tr.t_end < now - self.expiry:
                emitted_terminals.append(tr.id)
                self._cache.pop(tr.id, None)
            else:
                keep.append(tr)
        self.buffer = keep
        self.consumed_successors &= {tr.id for tr in keep}
        involved = {u for u, _, _ in committed} | {v for _, v, _ in committed}
        involved |= set(emitted_terminals)
        partial = _assemble(sorted(involved), committed)
        return MatchResult(
            pairs=tuple(sorted(committed)),
            terminals=tuple(sorted(emitted_terminals)),
            sequences=partial.sequences,
        )

    def _by_id(self, id_) -> SubTrajectory:
        for tr in self.buffer:
            if tr.id == id_:
                return tr
        raise KeyError(id_)
