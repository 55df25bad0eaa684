"""Point-cloud containers and the per-frame segmentation pipeline.

Raw sensor frames go through three stages before tracking: background
subtraction against a voxel-occupancy model, voxel-grid downsampling,
and DBSCAN clustering on the XY projection to isolate human segments.
Point sets are plain float64 arrays of shape (N, 3) in meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

DEFAULT_VOXEL_EDGE = 0.10
DEFAULT_OCCUPANCY_FRACTION = 0.5
DEFAULT_EPS = 0.35
DEFAULT_MIN_PTS = 5


def as_points(points) -> np.ndarray:
    """Coerce to a float64 (N, 3) array and reject non-finite coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) point array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("point coordinates must be finite")
    return pts


@dataclass(frozen=True)
class Frame:
    """One scan of a sensor's space: a timestamped point cloud."""

    sensor_id: str
    t: float
    points: np.ndarray  # (N, 3) float64, meters

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))


@dataclass(frozen=True)
class HumanSegment:
    """A clustered point cloud corresponding to one person in one frame."""

    sensor_id: str
    t: float
    points: np.ndarray  # (N, 3), non-empty
    centroid_xy: tuple[float, float]

    @classmethod
    def from_points(cls, sensor_id: str, t: float, points: np.ndarray) -> "HumanSegment":
        pts = as_points(points)
        if len(pts) == 0:
            raise ValueError("human segment requires at least one point")
        cx, cy = pts[:, 0].mean(), pts[:, 1].mean()
        return cls(sensor_id=sensor_id, t=t, points=pts, centroid_xy=(float(cx), float(cy)))


@dataclass
class BackgroundModel:
    """Voxel occupancy over calibration frames; a voxel is background when it
    was occupied in at least ``occupancy_fraction`` of the frames."""

    sensor_id: str
    voxel_edge: float
    occupancy_fraction: float
    background_voxels: frozenset = field(default_factory=frozenset)
    n_frames: int = 0
    _packed: np.ndarray | None = field(default=None, repr=False, compare=False)

    def is_background(self, point) -> bool:
        return voxel_key(np.asarray(point, dtype=np.float64), self.voxel_edge) in self.background_voxels

    def packed_voxels(self) -> np.ndarray:
        """Sorted int64 encoding of the background set, built on first use."""
        if self._packed is None:
            if self.background_voxels:
                keys = np.array(sorted(self.background_voxels), dtype=np.int64)
                self._packed = np.sort(_pack_keys(keys))
            else:
                self._packed = np.empty(0, dtype=np.int64)
        return self._packed


def voxel_key(point: np.ndarray, edge: float) -> tuple[int, int, int]:
    k = np.floor(point / edge).astype(np.int64)
    return (int(k[0]), int(k[1]), int(k[2]))


def _voxel_keys(points: np.ndarray, edge: float) -> np.ndarray:
    return np.floor(points / edge).astype(np.int64)


_PACK_BITS = 21  # voxel indices fit in a signed 21-bit range per axis
_PACK_OFF = 1 << 20


def _pack_keys(keys: np.ndarray) -> np.ndarray:
    """Fold (N, 3) integer voxel keys into one int64 per voxel."""
    if np.any(np.abs(keys) >= _PACK_OFF):
        raise ValueError("voxel index out of packable range")
    k = keys + _PACK_OFF
    return (k[:, 0] << (2 * _PACK_BITS)) | (k[:, 1] << _PACK_BITS) | k[:, 2]


def build_background(
    frames: list[Frame],
    voxel_edge: float = DEFAULT_VOXEL_EDGE,
    occupancy_fraction: float = DEFAULT_OCCUPANCY_FRACTION,
) -> BackgroundModel:
    """Build a static-scene occupancy model from pedestrian-free frames."""
    if not frames:
        raise ValueError("no calibration frames")
    if voxel_edge <= 0:
        raise ValueError("voxel_edge must be positive")
    sensor_id = frames[0].sensor_id
    if any(f.sensor_id != sensor_id for f in frames):
        raise ValueError("calibration frames must come from a single sensor")

    hits: dict[tuple[int, int, int], int] = {}
    for frame in frames:
        if len(frame.points) == 0:
            continue
        keys = np.unique(_voxel_keys(frame.points, voxel_edge), axis=0)
        for k in map(tuple, keys.tolist()):
            hits[k] = hits.get(k, 0) + 1

    n = len(frames)
    background = frozenset(k for k, c in hits.items() if c / n >= occupancy_fraction)
    return BackgroundModel(
        sensor_id=sensor_id,
        voxel_edge=voxel_edge,
        occupancy_fraction=occupancy_fraction,
        background_voxels=background,
        n_frames=n,
    )


def subtract_background(frame: Frame, model: BackgroundModel) -> Frame:
    """Keep only points whose voxel is not part of the background."""
    if frame.sensor_id != model.sensor_id:
        raise ValueError(
            f"background model for {model.sensor_id!r} applied to frame from {frame.sensor_id!r}"
        )
    if len(frame.points) == 0 or not model.background_voxels:
        return frame
    packed = _pack_keys(_voxel_keys(frame.points, model.voxel_edge))
    bg = model.packed_voxels()
    pos = np.searchsorted(bg, packed)
    pos[pos == len(bg)] = len(bg) - 1
    keep = bg[pos] != packed
    return Frame(sensor_id=frame.sensor_id, t=frame.t, points=frame.points[keep])


def voxel_downsample(points: np.ndarray, cell: float) -> np.ndarray:
    """Collapse each occupied voxel cell into a single virtual point at the
    centroid of the cell's members.

    Output points are ordered by voxel key, so the result is independent of
    the input point order.
    """
    if cell <= 0:
        raise ValueError("cell size must be positive")
    pts = as_points(points)
    if len(pts) == 0:
        return pts
    # packed int64 keys sort the same way as (kx, ky, kz) tuples
    packed = _pack_keys(_voxel_keys(pts, cell))
    uniq, inverse = np.unique(packed, return_inverse=True)
    sums = np.empty((len(uniq), 3))
    for k in range(3):
        sums[:, k] = np.bincount(inverse, weights=pts[:, k], minlength=len(uniq))
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    return sums / counts[:, None]


def _concat_ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenation of arange(starts[k], starts[k] + counts[k]) for all k."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    before = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return np.repeat(starts - before, counts) + np.arange(total, dtype=np.int64)


def _neighbor_pairs(xy: np.ndarray, eps: float):
    """All point pairs within eps in the XY plane (self-pairs included).

    Returns (ii, jj, bounds): pair arrays sorted by (ii, jj), and bounds such
    that jj[bounds[k]:bounds[k+1]] are point k's neighbors.
    """
    n = len(xy)
    cells = np.floor(xy / eps).astype(np.int64)
    off = np.int64(1 << 31)
    packed = ((cells[:, 0] + off) << np.int64(32)) | (cells[:, 1] + off)
    order = np.argsort(packed, kind="stable")
    sorted_packed = packed[order]

    eps2 = eps * eps
    x, y = xy[:, 0], xy[:, 1]
    all_i = []
    all_j = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            q = ((cells[:, 0] + dx + off) << np.int64(32)) | (cells[:, 1] + dy + off)
            left = np.searchsorted(sorted_packed, q, side="left")
            right = np.searchsorted(sorted_packed, q, side="right")
            counts = right - left
            ii = np.repeat(np.arange(n, dtype=np.int64), counts)
            jj = order[_concat_ranges(left, counts)]
            if len(ii) == 0:
                continue
            ddx = x[ii] - x[jj]
            ddy = y[ii] - y[jj]
            ok = ddx * ddx + ddy * ddy <= eps2
            all_i.append(ii[ok])
            all_j.append(jj[ok])

    ii = np.concatenate(all_i) if all_i else np.empty(0, dtype=np.int64)
    jj = np.concatenate(all_j) if all_j else np.empty(0, dtype=np.int64)
    # group by ii; the order of neighbors within a group carries no meaning
    keep = np.argsort(ii, kind="stable")
    ii, jj = ii[keep], jj[keep]
    bounds = np.searchsorted(ii, np.arange(n + 1, dtype=np.int64))
    return ii, jj, bounds


def _grid_neighbors(xy: np.ndarray, eps: float) -> list[np.ndarray]:
    """eps-neighborhoods (inclusive of self) via a uniform grid of cell size eps."""
    ii, jj, bounds = _neighbor_pairs(xy, eps)
    return [jj[bounds[k]:bounds[k + 1]] for k in range(len(xy))]


def segment_humans(
    frame: Frame,
    eps: float = DEFAULT_EPS,
    min_pts: int = DEFAULT_MIN_PTS,
) -> list[HumanSegment]:
    """Cluster a foreground frame into human segments.

    DBSCAN runs on the XY projection only (the Z axis is dropped for the
    neighborhood queries); each cluster keeps its full 3D member points.
    Noise points are discarded. Border points are attached to the cluster of
    their nearest core point, which makes the partition independent of the
    input point order.
    """
    pts = frame.points
    n = len(pts)
    if n == 0:
        return []
    xy = pts[:, :2]
    ii, jj, bounds = _neighbor_pairs(xy, eps)
    degree = bounds[1:] - bounds[:-1]
    core = degree >= min_pts
    if not core.any():
        return []

    # Connected components of core points under eps-adjacency; a component is
    # named after its smallest core point index.
    core_idx = np.flatnonzero(core)
    pos = np.full(n, -1, dtype=np.int64)
    pos[core_idx] = np.arange(len(core_idx))
    cc_mask = core[ii] & core[jj]
    graph = coo_matrix(
        (np.ones(int(cc_mask.sum()), dtype=bool), (pos[ii[cc_mask]], pos[jj[cc_mask]])),
        shape=(len(core_idx), len(core_idx)),
    )
    n_cc, cc = connected_components(graph, directed=False)
    root = np.full(n_cc, n, dtype=np.int64)
    np.minimum.at(root, cc, core_idx)

    labels = np.full(n, -1, dtype=np.int64)
    labels[core_idx] = root[cc]

    # Border points: nearest core neighbor wins; exact distance ties broken
    # by the core point's coordinates so the outcome is order-independent.
    bc_mask = ~core[ii] & core[jj]
    if bc_mask.any():
        bi, bj = ii[bc_mask], jj[bc_mask]
        d2 = np.sum((xy[bi] - xy[bj]) ** 2, axis=1)
        rank = np.lexsort((pts[bj, 2], pts[bj, 1], pts[bj, 0], d2, bi))
        bi, bj = bi[rank], bj[rank]
        first = np.unique(bi, return_index=True)[1]
        labels[bi[first]] = labels[bj[first]]

    # Emit clusters ordered by their lexicographically smallest member point.
    segments = []
    for lab in np.unique(labels[labels >= 0]):
        member_pts = pts[labels == lab]
        key = min(map(tuple, member_pts.tolist()))
        segments.append((key, member_pts))
    segments.sort(key=lambda kv: kv[0])
    return [HumanSegment.from_points(frame.sensor_id, frame.t, m) for _, m in segments]
