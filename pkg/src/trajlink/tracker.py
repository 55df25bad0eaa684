"""Per-sensor tracking of human segments into sub-trajectories.

Constant-velocity Kalman filters follow segment centroids frame to frame;
gated nearest-assignment links detections to tracks, unmatched detections
spawn tracks, and tracks missing too long terminate and emit sub-trajectories
whose endpoints are snapped to virtual gates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import HumanSegment
from .spatiotemporal import UNKNOWN, Gate


@dataclass(frozen=True)
class SubTrajectory:
    """One person's track inside one sensor's view, entry to exit."""

    id: str
    sensor_id: str
    samples: np.ndarray  # (K, 3) rows (t, x, y), strictly increasing t
    start_gate: str = UNKNOWN
    end_gate: str = UNKNOWN
    segments: tuple = ()  # HumanSegment references for feature extraction

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 3 or len(s) == 0:
            raise ValueError("samples must be a non-empty (K, 3) array of (t, x, y)")
        if np.any(np.diff(s[:, 0]) <= 0):
            raise ValueError("sample times must be strictly increasing")
        object.__setattr__(self, "samples", s)

    @property
    def t_start(self) -> float:
        return float(self.samples[0, 0])

    @property
    def t_end(self) -> float:
        return float(self.samples[-1, 0])

    @property
    def start_xy(self) -> np.ndarray:
        return self.samples[0, 1:3].copy()

    @property
    def end_xy(self) -> np.ndarray:
        return self.samples[-1, 1:3].copy()


def temporal_precedes(a: SubTrajectory, b: SubTrajectory) -> bool:
    """True iff a ends strictly before b starts."""
    return a.t_end < b.t_start


@dataclass
class TrackerConfig:
    sigma_a: float = 0.5  # process noise, m/s^2
    sigma_z: float = 0.1  # measurement noise, m
    r_gate: float = 0.8  # association gate, m
    m_miss: int = 5  # missed frames before termination
    min_track_len: int = 3  # shorter emissions are clutter
    delta_gate: float = 0.5  # endpoint-to-gate snap distance, m


@dataclass
class TrackState:
    """Constant-velocity Kalman state plus accumulation buffers."""

    x: np.ndarray  # (4,) [x, y, vx, vy]
    cov: np.ndarray  # (4, 4)
    frames_missed: int = 0
    track_id: int = 0
    samples: list = field(default_factory=list)  # [(t, x, y)]
    segments: list = field(default_factory=list)

    @property
    def position(self) -> np.ndarray:
        return self.x[:2].copy()

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:].copy()


_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def _predict(tr: TrackState, dt: float, sigma_a: float) -> None:
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    q1 = sigma_a ** 2 * np.array([[dt ** 4 / 4.0, dt ** 3 / 2.0], [dt ** 3 / 2.0, dt ** 2]])
    q = np.zeros((4, 4))
    q[np.ix_([0, 2], [0, 2])] = q1
    q[np.ix_([1, 3], [1, 3])] = q1
    tr.x = f @ tr.x
    tr.cov = f @ tr.cov @ f.T + q


def _correct(tr: TrackState, z: np.ndarray, sigma_z: float) -> None:
    r = sigma_z ** 2 * np.eye(2)
    s = _H @ tr.cov @ _H.T + r
    k = tr.cov @ _H.T @ np.linalg.inv(s)
    tr.x = tr.x + k @ (z - _H @ tr.x)
    tr.cov = (np.eye(4) - k @ _H) @ tr.cov

def _new_track(z: np.ndarray, track_id: int, sigma_z: float) -> TrackState:
    x = np.array([z[0], z[1], 0.0, 0.0])
    cov = np.diag([sigma_z ** 2, sigma_z ** 2, 4.0, 4.0])
    return TrackState(x=x, cov=cov, track_id=track_id)


def associate(predicted_xy: np.ndarray, measured_xy: np.ndarray, r_gate: float):
    """Gated min-cost pairing of track predictions with detections.
    Returns (pairs, unmatched_tracks, unmatched_measurements)."""
    n_t, n_m = len(predicted_xy), len(measured_xy)
    if n_t == 0 or n_m == 0:
        return [], list(range(n_t)), list(range(n_m))
    d = np.linalg.norm(predicted_xy[:, None, :] - measured_xy[None, :, :], axis=2)
    cost = np.where(d <= r_gate, d, 1e6)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if d[i, j] <= r_gate]
    used_t = {i for i, _ in pairs}
    used_m = {j for _, j in pairs}
    return (
        pairs,
        [i for i in range(n_t) if i not in used_t],
        [j for j in range(n_m) if j not in used_m],
    )


def track_step(
    active: list[TrackState],
    segments: list[HumanSegment],
    dt: float,
    config: TrackerConfig | None = None,
    t: float | None = None,
    next_id: int = 0,
):
    """Advance one frame: predict, associate, update, spawn, terminate.

    Returns (surviving tracks, spawned tracks, finished track states, next_id).
    Finished states still need gate snapping and the min-length filter before
    becoming SubTrajectories.
    """
    cfg = config or TrackerConfig()
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t is None:
        t = segments[0].t if segments else 0.0

    for tr in active:
        _predict(tr, dt, cfg.sigma_a)

    meas = np.array([s.centroid_xy for s in segments]).reshape(len(segments), 2)
    pred = np.array([tr.x[:2] for tr in active]).reshape(len(active), 2)
    pairs, lost_t, new_m = associate(pred, meas, cfg.r_gate)

    for i, j in pairs:
        tr = active[i]
        _correct(tr, meas[j], cfg.sigma_z)
        tr.frames_missed = 0
        tr.samples.append((t, float(tr.x[0]), float(tr.x[1])))
        tr.segments.append(segments[j])
    for i in lost_t:
        active[i].frames_missed += 1

    spawned = []
    for j in new_m:
        tr = _new_track(meas[j], next_id, cfg.sigma_z)
        next_id += 1
        tr.samples.append((t, float(tr.x[0]), float(tr.x[1])))
        tr.segments.append(segments[j])
        spawned.append(tr)

    survivors, finished = [], []
    for tr in active:
        (finished if tr.frames_missed > cfg.m_miss else survivors).append(tr)
    return survivors + spawned, spawned, finished, next_id


def assign_gates(tr: SubTrajectory, gates, delta_gate: float = 0.5) -> SubTrajectory:
    """Snap both endpoints to the nearest gate within delta_gate, else UNKNOWN.
    Equidistant gates resolve to the smallest gate id."""
    def nearest(xy):
        best = (np.inf, None)
        for g in sorted(gates, key=lambda g: g.id):
            d = g.distance_to(xy)
            if d <= delta_gate and d < best[0] - 1e-12:
                best = (d, g.id)
        return best[1] if best[1] is not None else UNKNOWN

    return replace(tr, start_gate=nearest(tr.start_xy), end_gate=nearest(tr.end_xy))


class SensorTracker:
    """Stateful frame-by-frame driver for one sensor."""

    def __init__(self, sensor_id: str, gates=(), config: TrackerConfig | None = None):
        self.sensor_id = sensor_id
        self.gates = [g for g in gates if g.sensor_id == sensor_id]
        self.config = config or TrackerConfig()
        self.active: list[TrackState] = []
        self.next_id = 0
        self.emitted = 0
        self.last_t: float | None = None

    def _finalize(self, states: list[TrackState]) -> list[SubTrajectory]:
        out = []
        for st in states:
            if len(st.samples) < self.config.min_track_len:
                continue
            tr = SubTrajectory(
                id=f"{self.sensor_id}:{self.emitted:05d}",
                sensor_id=self.sensor_id,
                samples=np.asarray(st.samples),
                segments=tuple(st.segments),
            )
            self.emitted += 1
            out.append(assign_gates(tr, self.gates, self.config.delta_gate))
        return out

    def step(self, t: float, segments: list[HumanSegment]) -> list[SubTrajectory]:
        dt = 0.1 if self.last_t is None else t - self.last_t
        if dt <= 0:
            raise ValueError("frame timestamps must be strictly increasing")
        self.last_t = t
        self.active, _, finished, self.next_id = track_step(
            self.active, segments, dt, self.config, t=t, next_id=self.next_id
        )
        return self._finalize(finished)

    def finish(self) -> list[SubTrajectory]:
        done = self._finalize(self.active)
        self.active = []
        return done
