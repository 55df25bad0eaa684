"""Spatial and temporal linkage evidence between sensor views.

Virtual gates sit on trajectory-area boundaries. A transition count matrix over
gate pairs yields the spatial factor P2; per-gate-pair travel-time densities,
updated from unambiguous single-pedestrian transits, yield the temporal factor
P3. Both factors live in [0, 1] and start uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

UNKNOWN = "UNKNOWN"

DEFAULT_DT_MAX = 120.0
DEFAULT_N_MIN = 5
DEFAULT_PRIOR_A = 3.0
DEFAULT_PRIOR_B = 2.0


@dataclass(frozen=True)
class Gate:
    """Line segment on a trajectory-area boundary through which people pass."""

    id: str
    sensor_id: str
    p0: tuple[float, float]
    p1: tuple[float, float]
    exterior: bool = False  # on the world boundary: traffic appears/vanishes here

    def __post_init__(self):
        if tuple(self.p0) == tuple(self.p1):
            raise ValueError(f"gate {self.id}: endpoints must be distinct")

    def distance_to(self, xy) -> float:
        """Euclidean distance from an XY point to this segment."""
        p = np.asarray(xy, dtype=np.float64)
        a = np.asarray(self.p0, dtype=np.float64)
        b = np.asarray(self.p1, dtype=np.float64)
        ab = b - a
        s = float(np.dot(p - a, ab) / np.dot(ab, ab))
        s = min(1.0, max(0.0, s))
        return float(np.linalg.norm(p - (a + s * ab)))


@dataclass(frozen=True)
class TransitionMatrix:
    """Gate-to-gate transit counts; column-normalized ratios give P2."""

    gates: tuple[str, ...]
    counts: np.ndarray  # (G, G), counts[i, j] = transits gate i -> gate j

    def __post_init__(self):
        if len(self.gates) == 0:
            raise ValueError("transition matrix needs at least one gate")
        c = np.asarray(self.counts, dtype=np.float64)
        if c.shape != (len(self.gates), len(self.gates)):
            raise ValueError("counts shape must be (G, G)")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @classmethod
    def uniform(cls, gates, pseudo_count: float = 1.0) -> "TransitionMatrix":
        """All-ones pseudo-counts: every P2 column starts uniform."""
        g = tuple(gates)
        return cls(gates=g, counts=np.full((len(g), len(g)), pseudo_count))

    def index(self, gate_id: str):
        try:
            return self.gates.index(gate_id)
        except ValueError:
            return None


def p2_spatial(g1: str, g2: str, q: TransitionMatrix) -> float:
    """Fraction of arrivals at g2 that came from g1; uniform 1/G when either
    gate is unknown or nothing has ever arrived at g2."""
    n = len(q.gates)
    i, j = q.index(g1), q.index(g2)
    if g1 == UNKNOWN or g2 == UNKNOWN or i is None or j is None:
        return 1.0 / n
    col = q.counts[:, j].sum()
    if col <= 0.0:
        return 1.0 / n
    return float(q.counts[i, j] / col)


def update_spatial(q: TransitionMatrix, samples) -> TransitionMatrix:
    """Add one count per observed (g1, g2) transit; value-returning.
    Samples naming gates outside the matrix are ignored."""
    counts = q.counts.copy()
    for g1, g2, *_ in samples:
        i, j = q.index(g1), q.index(g2)
        if i is not None and j is not None:
            counts[i, j] += 1.0
    return TransitionMatrix(gates=q.gates, counts=counts)


@dataclass(frozen=True)
class PairTimeState:
    """Travel-time knowledge for one gate pair.

    Keeps the conjugate bookkeeping (running mean of transit times, inverse
    gamma over the normal variance) plus the derived inverse-gamma density
    over dt itself; `shape`/`scale` stay None while the pair is uniform.
    """

    n: int = 0
    mean: float = 0.0
    var_a: float = DEFAULT_PRIOR_A
    var_b: float = DEFAULT_PRIOR_B
    shape: float | None = None
    scale: float | None = None
    location: float = 0.0

    @property
    def is_uniform(self) -> bool:
        return self.shape is None


@dataclass(frozen=True)
class TravelTimeModel:
    """Per-gate-pair travel-time densities; uniform over (0, dt_max] until a
    pair has accumulated n_min high-confidence samples."""

    dt_max: float = DEFAULT_DT_MAX
    n_min: int = DEFAULT_N_MIN
    prior_a: float = DEFAULT_PRIOR_A
    prior_b: float = DEFAULT_PRIOR_B
    pairs: dict = field(default_factory=dict)  # (g1, g2) -> PairTimeState

    def state(self, pair) -> PairTimeState:
        return self.pairs.get(tuple(pair), PairTimeState(var_a=self.prior_a, var_b=self.prior_b))


def _matched_invgamma(mean: float, variance: float) -> tuple[float, float]:
    """Inverse-gamma (shape, scale) with the given mean and variance.
    Shape always exceeds 2, so the matched density has finite variance."""
    shape = mean * mean / variance + 2.0
    scale = mean * (shape - 1.0)
    return shape, scale


def update_temporal(model: TravelTimeModel, pair, samples) -> TravelTimeModel:
    """Fold new high-confidence transit times into one gate pair.

    Travel times are modeled as Normal(mean, sigma^2) with an inverse-gamma
    prior on sigma^2; the conjugate update is a += n/2, b += sum of squared
    deviations about the updated running mean / 2. The reported density over
    dt is the predictive moment-matched to an inverse gamma. Value-returning.
    """
    xs = np.asarray(list(samples), dtype=np.float64)
    if xs.size == 0:
        return model
    if np.any(xs <= 0.0):
        raise ValueError("travel times must be positive")
    st = model.state(pair)
    n_new = st.n + xs.size
    mean_new = (st.n * st.mean + xs.sum()) / n_new
    a_new = st.var_a + xs.size / 2.0
    b_new = st.var_b + float(np.sum((xs - mean_new) ** 2)) / 2.0

    if n_new >= model.n_min:
        variance = b_new / (a_new - 1.0)
        shape, scale = _matched_invgamma(mean_new, variance)
        st_new = PairTimeState(n=n_new, mean=mean_new, var_a=a_new, var_b=b_new,
                               shape=shape, scale=scale, location=0.0)
    else:
        # not enough evidence yet: stay uniform, keep accumulating
        st_new = PairTimeState(n=n_new, mean=mean_new, var_a=a_new, var_b=b_new)

    pairs = dict(model.pairs)
    pairs[tuple(pair)] = st_new
    return replace(model, pairs=pairs)


def travel_time_logpdf(state: PairTimeState, x: float, dt_max: float = DEFAULT_DT_MAX) -> float:
    """Log density of the travel-time distribution at x."""
    if state.is_uniform:
        return -math.log(dt_max) if 0.0 < x <= dt_max else -math.inf
    z = x - state.location
    if z <= 0.0:
        return -math.inf
    a, b = state.shape, state.scale
    return float(a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(z) - b / z)


def travel_time_mode(state: PairTimeState, dt_max: float = DEFAULT_DT_MAX) -> float:
    if state.is_uniform:
        return dt_max / 2.0  # any interior point; flat density
    return state.location + state.scale / (state.shape + 1.0)


def p3_temporal(dt: float, model: TravelTimeModel, pair) -> float:
    """Travel-time density at dt normalized by its mode value, in [0, 1]."""
    if dt <= 0.0:
        raise ValueError("non-causal pair: dt must be positive")
    st = model.state(pair)
    if st.is_uniform:
        return 1.0 if dt <= model.dt_max else 0.0
    log_at = travel_time_logpdf(st, dt, model.dt_max)
    log_mode = travel_time_logpdf(st, travel_time_mode(st, model.dt_max), model.dt_max)
    return float(np.exp(log_at - log_mode))


@dataclass(frozen=True)
class GateEvent:
    """One endpoint of a sub-trajectory hitting a gate."""

    t: float
    kind: str  # "end": sub-trajectory left through the gate; "start": entered
    gate: str
    sub_id: object = None

    def __post_init__(self):
        if self.kind not in ("end", "start"):
            raise ValueError(f"unknown event kind {self.kind!r}")


def detect_high_confidence(events, window: float):
    """Unambiguous gate-to-gate transits from a time-ordered event log.

    A transit (g1, g2, dt) is emitted when exactly one pedestrian was in the
    blank region between an end and the next start: pending ends taint each
    other, a start consumes the oldest pending end, and pendings older than
    `window` expire (the person presumably left the area).
    """
    ordered = sorted(events, key=lambda e: (e.t, 0 if e.kind == "end" else 1))
    pending = []  # [t, gate, tainted]
    out = []
    for ev in ordered:
        pending = [p for p in pending if ev.t - p[0] <= window]
        if ev.kind == "end":
            if pending:
                for p in pending:
                    p[2] = True
                pending.append([ev.t, ev.gate, True])
            else:
                pending.append([ev.t, ev.gate, False])
        else:
            if not pending:
                continue
            t0, g0, tainted = pending.pop(0)
            dt = ev.t - t0
            if not tainted and not pending and 0.0 < dt <= window:
                out.append((g0, ev.gate, dt))
    return out
