"""Synthetic multi-sensor pedestrian scenes.

Stands in for a physical multi-LiDAR deployment: pedestrians with distinct
body geometry walk waypoint routes through per-sensor trajectory areas
separated by deliberately blanked regions. Each sensor samples body surface
points with a distance-squared density falloff, range noise, and FoV/range
limits. Fully deterministic: every (seed, sensor, tick) triple has its own
random substream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Frame
from .spatiotemporal import Gate

FPS = 10.0
SUPPORTED_SUBJECT_COUNTS = (2, 4, 8, 16, 32)


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: str
    position: tuple  # (x, y, z) mount point, meters
    yaw_deg: float  # boresight azimuth
    hfov_deg: float
    vfov_deg: float
    max_range: float
    points_budget: float  # emitted points per body at 1 m distance
    area: tuple  # trajectory area (xmin, ymin, xmax, ymax)
    pitch_deg: float = 0.0  # boresight elevation (negative = downward)


@dataclass(frozen=True)
class Pillar:
    """Static cylindrical clutter; exercises background subtraction."""

    x: float
    y: float
    radius: float
    height: float


@dataclass(frozen=True)
class MapSpec:
    floor: tuple  # polygon vertices ((x, y), ...)
    sensors: tuple
    blank_regions: tuple  # rectangles (xmin, ymin, xmax, ymax)
    gates: tuple
    pillars: tuple = ()


@dataclass(frozen=True)
class BodyModel:
    person_id: int
    height: float
    shoulder_width: float
    torso_radius: float
    gait_amplitude: float  # leg swing half-stroke, m
    gait_frequency: float  # strides per second

    def __post_init__(self):
        if not 1.4 <= self.height <= 2.0:
            raise ValueError("height must lie in [1.4, 2.0] m")
        for name in ("shoulder_width", "torso_radius", "gait_amplitude", "gait_frequency"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def body_for_person(person_id: int) -> BodyModel:
    """Deterministic body bank: subject k always has the same anatomy."""
    rng = np.random.default_rng(np.random.SeedSequence((9100, person_id)))
    return BodyModel(
        person_id=person_id,
        height=float(rng.uniform(1.45, 1.95)),
        shoulder_width=float(rng.uniform(0.38, 0.52)),
        torso_radius=float(rng.uniform(0.10, 0.14)),
        gait_amplitude=float(rng.uniform(0.08, 0.20)),
        gait_frequency=float(rng.uniform(1.5, 2.2)),
    )


@dataclass(frozen=True)
class ScenarioSpec:
    n_subjects: int
    route: tuple  # waypoints ((x, y), ...); closed routes loop, open ones transit
    start_interval: float  # seconds between consecutive subject starts
    duration: float
    density: str = "dense"  # sensor profile tag, informational
    seed: int = 0
    routes_per_subject: tuple = ()  # optional per-subject route override
    # route distance each subject has already covered when it appears, cycled
    # over subjects; lets loop scenarios spawn people mid-zone instead of all
    # at the first waypoint
    start_offsets: tuple = ()

    def __post_init__(self):
        if self.start_interval < 0:
            raise ValueError("start interval must be >= 0")
        if self.n_subjects < 0:
            raise ValueError("subject count must be >= 0")
        if self.density not in ("dense", "sparse"):
            raise ValueError("density must be 'dense' or 'sparse'")


@dataclass
class SimulationResult:
    frames: dict  # sensor_id -> [Frame]
    positions: dict  # person_id -> (T, 3) array of (t, x, y)
    bodies: dict  # person_id -> BodyModel


def _point_in_polygon(x: float, y: float, poly) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            if x < x1 + t * (x2 - x1):
                inside = not inside
    return inside


def _in_rect(xy: np.ndarray, rect) -> np.ndarray:
    xmin, ymin, xmax, ymax = rect
    return (xy[:, 0] >= xmin) & (xy[:, 0] <= xmax) & (xy[:, 1] >= ymin) & (xy[:, 1] <= ymax)


class _Walker:
    """Position along a waypoint route at constant personal speed."""

    def __init__(self, route, speed: float, start_time: float, phase: float,
                 start_offset: float = 0.0):
        w = np.asarray(route, dtype=np.float64)
        if len(w) < 2:
            raise ValueError("route needs at least two waypoints")
        seg = np.diff(w, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        if np.any(seg_len == 0):
            raise ValueError("route has zero-length segments")
        self.w = w
        self.cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.total = float(self.cum[-1])
        self.loop = bool(np.allclose(w[0], w[-1]))
        self.speed = speed
        self.start_time = start_time
        self.phase = phase
        self.start_offset = start_offset

    def present(self, t: float, t_max: float) -> bool:
        if t < self.start_time or t > t_max:
            return False
        if self.loop:
            return True
        return (t - self.start_time) * self.speed + self.start_offset <= self.total

    def state(self, t: float):
        """(xy position, heading unit vector, seconds walked)."""
        walked = (t - self.start_time) * self.speed + self.start_offset
        d = walked % self.total if self.loop else min(walked, self.total)
        i = int(np.searchsorted(self.cum, d, side="right")) - 1
        i = min(i, len(self.w) - 2)
        seg = self.w[i + 1] - self.w[i]
        seg_len = np.linalg.norm(seg)
        xy = self.w[i] + seg * ((d - self.cum[i]) / seg_len)
        return xy, seg / seg_len, t - self.start_time


def _sample_ellipsoid(rng, center, semi, n: int) -> np.ndarray:
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return center + u * semi


def _sample_body(rng, body: BodyModel, xy, heading, t_walk: float, n: int) -> np.ndarray:
    """Surface points of one pedestrian: elliptic-cylinder torso, sphere head,
    two gait-swinging ellipsoid legs."""
    if n <= 0:
        return np.empty((0, 3))
    h = body.height
    fwd = np.array([heading[0], heading[1], 0.0])
    lat = np.array([-heading[1], heading[0], 0.0])
    base = np.array([xy[0], xy[1], 0.0])

    n_torso = max(1, int(n * 0.5))
    n_head = max(1, int(n * 0.2))
    n_leg = max(1, (n - n_torso - n_head) // 2)

    theta = rng.uniform(0.0, 2.0 * math.pi, n_torso)
    z = rng.uniform(0.50 * h, 0.78 * h, n_torso)
    torso = (
        base
        + lat * (0.5 * body.shoulder_width * np.cos(theta))[:, None]
        + fwd * (body.torso_radius * np.sin(theta))[:, None]
    )
    torso[:, 2] = z

    head = _sample_ellipsoid(rng, base + np.array([0.0, 0.0, h - 0.09]), np.array([0.09, 0.09, 0.11]), n_head)

    swing = body.gait_amplitude * math.sin(2.0 * math.pi * body.gait_frequency * t_walk)
    legs = []
    for side, ph in ((-1.0, swing), (1.0, -swing)):
        c = base + lat * (side * 0.09) + fwd * ph + np.array([0.0, 0.0, 0.25 * h])
        legs.append(_sample_ellipsoid(rng, c, np.array([0.07, 0.07, 0.25 * h]), n_leg))
    return np.concatenate([torso, head] + legs)


def _sample_pillar(rng, pillar: Pillar, n: int) -> np.ndarray:
    if n <= 0:
        return np.empty((0, 3))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    z = rng.uniform(0.0, pillar.height, n)
    return np.stack(
        [pillar.x + pillar.radius * np.cos(theta), pillar.y + pillar.radius * np.sin(theta), z],
        axis=1,
    )


def _sensor_filter(points: np.ndarray, sensor: SensorSpec, blanks) -> np.ndarray:
    """Range, FoV cone, blank-region, and trajectory-area filters."""
    if len(points) == 0:
        return points
    rel = points - np.asarray(sensor.position)
    dist = np.linalg.norm(rel, axis=1)
    horiz = np.linalg.norm(rel[:, :2], axis=1)
    az = np.degrees(np.arctan2(rel[:, 1], rel[:, 0]))
    d_az = (az - sensor.yaw_deg + 180.0) % 360.0 - 180.0
    elev = np.degrees(np.arctan2(rel[:, 2], horiz)) - sensor.pitch_deg
    keep = (
        (dist <= sensor.max_range)
        & (np.abs(d_az) <= sensor.hfov_deg / 2.0)
        & (np.abs(elev) <= sensor.vfov_deg / 2.0)
        & _in_rect(points[:, :2], sensor.area)
    )
    pts = points[keep]
    for rect in blanks:
        if len(pts) == 0:
            break
        pts = pts[~_in_rect(pts[:, :2], rect)]
    return pts


def _visible_count(budget: float, dist: float, rng) -> int:
    lam = budget / max(dist, 1.0) ** 2
    return int(rng.poisson(min(lam, 2000.0)))


def simulate_stream(map_spec: MapSpec, scenario: ScenarioSpec):
    """Yield (t, {sensor_id: points}, {person_id: (x, y)}) per 0.1 s tick."""
    all_routes = [scenario.route, *scenario.routes_per_subject]
    for route in all_routes:
        for wx, wy in route:
            if not _point_in_polygon(wx, wy, map_spec.floor):
                raise ValueError("route exits the floor polygon")

    rng_people = np.random.default_rng(np.random.SeedSequence((scenario.seed, 777)))
    walkers = []
    for i in range(scenario.n_subjects):
        route = (
            scenario.routes_per_subject[i]
            if scenario.routes_per_subject
            else scenario.route
        )
        offsets = scenario.start_offsets
        walkers.append(
            _Walker(
                route,
                speed=float(rng_people.uniform(1.0, 1.5)),
                start_time=i * scenario.start_interval,
                phase=float(rng_people.uniform(0.0, 2.0 * math.pi)),
                start_offset=float(offsets[i % len(offsets)]) if offsets else 0.0,
            )
        )
    bodies = {i: body_for_person(i) for i in range(scenario.n_subjects)}

    n_ticks = int(round(scenario.duration * FPS)) + 1
    sensor_pos = {s.sensor_id: np.asarray(s.position) for s in map_spec.sensors}
    for tick in range(n_ticks):
        t = tick / FPS
        present = {
            i: walkers[i].state(t)
            for i in range(scenario.n_subjects)
            if walkers[i].present(t, scenario.duration)
        }
        truth = {i: (float(st[0][0]), float(st[0][1])) for i, st in present.items()}
        per_sensor = {}
        for k, sensor in enumerate(map_spec.sensors):
            rng = np.random.default_rng(np.random.SeedSequence((scenario.seed, k, tick)))
            chunks = []
            for i, (xy, heading, t_walk) in present.items():
                d = float(np.linalg.norm(np.asarray([xy[0], xy[1], 1.0]) - sensor_pos[sensor.sensor_id]))
                if d > sensor.max_range + 1.0:
                    continue
                n = _visible_count(sensor.points_budget, d, rng)
                if n == 0:
                    continue
                chunks.append(_sample_body(rng, bodies[i], xy, heading, t_walk + walkers[i].phase, n))
            for pillar in map_spec.pillars:
                d = float(math.hypot(pillar.x - sensor.position[0], pillar.y - sensor.position[1]))
                # dense enough that calibration marks every pillar voxel as
                # background; the cap keeps close pillars from dominating
                lam = min(3.0 * sensor.points_budget / max(d, 1.0) ** 2, 200.0)
                n = int(rng.poisson(lam))
                if n:
                    chunks.append(_sample_pillar(rng, pillar, n))
            pts = np.concatenate(chunks) if chunks else np.empty((0, 3))
            if len(pts):
                direction = pts - sensor_pos[sensor.sensor_id]
                direction /= np.linalg.norm(direction, axis=1, keepdims=True)
                pts = pts + direction * rng.normal(0.0, 0.02, size=(len(pts), 1))
            per_sensor[sensor.sensor_id] = _sensor_filter(pts, sensor, map_spec.blank_regions)
        yield t, per_sensor, truth


def simulate(map_spec: MapSpec, scenario: ScenarioSpec) -> SimulationResult:
    """Materialized stream; prefer simulate_stream for long scenarios."""
    frames = {s.sensor_id: [] for s in map_spec.sensors}
    tracks: dict = {}
    for t, per_sensor, truth in simulate_stream(map_spec, scenario):
        for sid, pts in per_sensor.items():
            frames[sid].append(Frame(sensor_id=sid, t=t, points=pts))
        for pid, (x, y) in truth.items():
            tracks.setdefault(pid, []).append((t, x, y))
    positions = {pid: np.asarray(v) for pid, v in tracks.items()}
    bodies = {i: body_for_person(i) for i in range(scenario.n_subjects)}
    return SimulationResult(frames=frames, positions=positions, bodies=bodies)


# ---------------------------------------------------------------------------
# built-in maps and scenarios


def square_route_map() -> MapSpec:
    """Rectangular 4 m x 7 m walking route; four dense sensors each own one
    side of the rectangle, with blanked corner squares between them."""
    blanks = (
        (-0.8, -0.8, 0.8, 0.8),
        (3.2, -0.8, 4.8, 0.8),
        (3.2, 6.2, 4.8, 7.8),
        (-0.8, 6.2, 0.8, 7.8),
    )
    # each sensor stands 4 m back from its zone's near edge so the whole zone,
    # gates included, fits inside the horizontal field of view
    areas = {
        "bottom": (0.8, -0.8, 3.2, 0.8),
        "right": (3.2, 0.8, 4.8, 6.2),
        "top": (0.8, 6.2, 3.2, 7.8),
        "left": (-0.8, 0.8, 0.8, 6.2),
    }
    sensors = (
        SensorSpec("bottom", (2.0, -4.8, 2.2), 90.0, 70.4, 77.2, 60.0, 4500.0, areas["bottom"], -22.0),
        SensorSpec("right", (8.8, 3.5, 2.2), 180.0, 70.4, 77.2, 60.0, 4500.0, areas["right"], -22.0),
        SensorSpec("top", (2.0, 11.8, 2.2), -90.0, 70.4, 77.2, 60.0, 4500.0, areas["top"], -22.0),
        SensorSpec("left", (-4.8, 3.5, 2.2), 0.0, 70.4, 77.2, 60.0, 4500.0, areas["left"], -22.0),
    )
    gates = (
        Gate("bottom_in", "bottom", (0.8, -0.8), (0.8, 0.8)),
        Gate("bottom_out", "bottom", (3.2, -0.8), (3.2, 0.8)),
        Gate("right_in", "right", (3.2, 0.8), (4.8, 0.8)),
        Gate("right_out", "right", (3.2, 6.2), (4.8, 6.2)),
        Gate("top_in", "top", (3.2, 6.2), (3.2, 7.8)),
        Gate("top_out", "top", (0.8, 6.2), (0.8, 7.8)),
        Gate("left_in", "left", (-0.8, 6.2), (0.8, 6.2)),
        Gate("left_out", "left", (-0.8, 0.8), (0.8, 0.8)),
    )
    floor = ((-7.0, -7.0), (11.0, -7.0), (11.0, 14.0), (-7.0, 14.0))
    pillars = (Pillar(2.0, -0.6, 0.15, 2.0), Pillar(4.6, 3.5, 0.15, 2.0))
    return MapSpec(floor=floor, sensors=sensors, blank_regions=blanks, gates=gates, pillars=pillars)


SQUARE_ROUTE = ((0.0, 0.0), (4.0, 0.0), (4.0, 7.0), (0.0, 7.0), (0.0, 0.0))

# route distance of each zone's midpoint; subjects appear there, never inside
# a blank corner, so a person's first gate event is always an exit
SQUARE_ZONE_MIDPOINTS = (2.0, 7.5, 13.0, 18.5)


def scenario_1a(
    n_subjects: int, interval: float = 10.0, seed: int = 0, duration: float | None = None
) -> ScenarioSpec:
    """Staggered-start laps of the rectangle route."""
    if n_subjects not in SUPPORTED_SUBJECT_COUNTS:
        raise ValueError(f"unsupported subject count {n_subjects}; pick from {SUPPORTED_SUBJECT_COUNTS}")
    if duration is None:
        duration = interval * (n_subjects - 1) + 45.0
    return ScenarioSpec(
        n_subjects=n_subjects,
        route=SQUARE_ROUTE,
        start_interval=interval,
        duration=duration,
        density="dense",
        seed=seed,
        start_offsets=SQUARE_ZONE_MIDPOINTS,
    )


def corridor_map() -> MapSpec:
    """Three sparse sensors along a straight corridor with two blank gaps."""
    areas = {
        "zone_a": (0.0, -1.0, 4.0, 1.0),
        "zone_b": (6.0, -1.0, 10.0, 1.0),
        "zone_c": (12.0, -1.0, 16.0, 1.0),
    }
    blanks = ((4.0, -1.0, 6.0, 1.0), (10.0, -1.0, 12.0, 1.0))
    sensors = (
        SensorSpec("zone_a", (2.0, -2.6, 1.2), 90.0, 210.0, 40.0, 35.0, 420.0, areas["zone_a"]),
        SensorSpec("zone_b", (8.0, -2.6, 1.2), 90.0, 210.0, 40.0, 35.0, 420.0, areas["zone_b"]),
        SensorSpec("zone_c", (14.0, -2.6, 1.2), 90.0, 210.0, 40.0, 35.0, 420.0, areas["zone_c"]),
    )
    gates = (
        Gate("a_w", "zone_a", (0.0, -1.0), (0.0, 1.0), exterior=True),
        Gate("a_e", "zone_a", (4.0, -1.0), (4.0, 1.0)),
        Gate("b_w", "zone_b", (6.0, -1.0), (6.0, 1.0)),
        Gate("b_e", "zone_b", (10.0, -1.0), (10.0, 1.0)),
        Gate("c_w", "zone_c", (12.0, -1.0), (12.0, 1.0)),
        Gate("c_e", "zone_c", (16.0, -1.0), (16.0, 1.0), exterior=True),
    )
    floor = ((-3.0, -4.0), (19.0, -4.0), (19.0, 4.0), (-3.0, 4.0))
    pillars = (Pillar(8.0, 0.8, 0.12, 2.0),)
    return MapSpec(floor=floor, sensors=sensors, blank_regions=blanks, gates=gates, pillars=pillars)


# opposite directions keep to their own lane so passing bodies stay separable
CORRIDOR_EAST = ((-2.0, 0.5), (18.0, 0.5))
CORRIDOR_WEST = ((18.0, -0.5), (-2.0, -0.5))


def corridor_traffic(n_pedestrians: int, mean_gap: float = 9.0, seed: int = 0) -> ScenarioSpec:
    """Bidirectional corridor transits with staggered starts; person k walks
    east when k is even, west when odd."""
    routes = tuple(CORRIDOR_EAST if i % 2 == 0 else CORRIDOR_WEST for i in range(n_pedestrians))
    duration = mean_gap * max(n_pedestrians - 1, 0) + 30.0
    return ScenarioSpec(
        n_subjects=n_pedestrians,
        route=CORRIDOR_EAST,
        start_interval=mean_gap,
        duration=duration,
        density="sparse",
        seed=seed,
        routes_per_subject=routes,
    )


def calibration_scenario(base: ScenarioSpec, n_frames: int = 40) -> ScenarioSpec:
    """Empty-scene variant of a scenario, for background model building."""
    return ScenarioSpec(
        n_subjects=0,
        route=base.route,
        start_interval=0.0,
        duration=(n_frames - 1) / FPS,
        density=base.density,
        seed=base.seed + 424242,
    )
