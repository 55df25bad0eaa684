"""Fisher-Vector signatures of human segments against a fixed 3D-grid GMM.

A segment's points are normalized into a body-centric box, scored against a
grid of isotropic Gaussians, and reduced with three symmetric functions
(sum, max, min) of the per-point normalized gradient terms. The result is a
fixed 20x54 matrix regardless of how many points the segment holds.

Row layout (columns index the Gaussian components):

    0      sum over points, weight gradient
    1-3    sum over points, mean gradient (x, y, z)
    4-6    sum over points, deviation gradient (x, y, z)
    7      max over points, weight gradient
    8-10   max over points, mean gradient
    11-13  max over points, deviation gradient
    14-16  min over points, mean gradient
    17-19  min over points, deviation gradient

The sum rows are divided by the point count; the max/min rows are taken over
the raw per-point terms, so duplicating every point leaves the matrix
unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import HumanSegment, as_points

FEATURE_ROWS = 20
DEFAULT_COMPONENTS = (3, 3, 6)  # x, y, z grid counts -> 54 Gaussians
DEFAULT_SIGMA = 0.25
BODY_HEIGHT_SCALE = 2.0  # meters mapped to one grid unit of height

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GmmGrid:
    """Isotropic GMM with means on a regular 3D grid and equal weights."""

    means: np.ndarray  # (C, 3)
    sigma: float
    weights: np.ndarray  # (C,), sums to 1
    alpha: np.ndarray  # (C,), weights == softmax(alpha)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")

    @property
    def n_components(self) -> int:
        return len(self.means)

    @classmethod
    def body_grid(
        cls,
        counts: tuple[int, int, int] = DEFAULT_COMPONENTS,
        sigma: float = DEFAULT_SIGMA,
    ) -> "GmmGrid":
        """Grid over the normalized body box [-0.5, 0.5]^2 x [0, 1].

        Means sit at cell centers; z varies fastest, then y, then x.
        """
        nx, ny, nz = counts
        xs = (np.arange(nx) + 0.5) / nx - 0.5
        ys = (np.arange(ny) + 0.5) / ny - 0.5
        zs = (np.arange(nz) + 0.5) / nz
        means = np.array([(x, y, z) for x in xs for y in ys for z in zs])
        c = len(means)
        weights = np.full(c, 1.0 / c)
        alpha = np.log(weights)
        return cls(means=means, sigma=sigma, weights=weights, alpha=alpha)


def normalize_to_body_box(points: np.ndarray, height_scale: float = BODY_HEIGHT_SCALE) -> np.ndarray:
    """Center XY at the segment centroid and scale z so that ``height_scale``
    meters map to one grid unit."""
    pts = as_points(points)
    out = pts.copy()
    out[:, 0] -= pts[:, 0].mean()
    out[:, 1] -= pts[:, 1].mean()
    out[:, 2] /= height_scale
    return out


def _log_component_likelihoods(points: np.ndarray, grid: GmmGrid) -> np.ndarray:
    """log u_c(p) for every point/component pair, shape (T, C)."""
    diff = points[:, None, :] - grid.means[None, :, :]  # (T, C, 3)
    sq = np.sum(diff * diff, axis=2)
    return -1.5 * _LOG_2PI - 3.0 * np.log(grid.sigma) - 0.5 * sq / (grid.sigma**2)


def component_likelihood(p, grid: GmmGrid, c: int) -> float:
    """Density of a single 3D point under component ``c``."""
    if not 0 <= c < grid.n_components:
        raise IndexError(f"component {c} out of range")
    pt = np.asarray(p, dtype=np.float64).reshape(1, 3)
    return float(np.exp(_log_component_likelihoods(pt, grid)[0, c]))


def responsibilities(p, grid: GmmGrid) -> np.ndarray:
    """Posterior component probabilities for one point or a batch of points.

    Accepts shape (3,) or (T, 3); returns (C,) or (T, C). Rows sum to 1.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    logp = _log_component_likelihoods(pts, grid) + np.log(grid.weights)[None, :]
    logp -= logp.max(axis=1, keepdims=True)
    gamma = np.exp(logp)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma[0] if single else gamma


def fisher_vector(segment: HumanSegment | np.ndarray, grid: GmmGrid) -> np.ndarray:
    """20 x C signature of a human segment (or a raw (N, 3) point array).

    Coincident points are collapsed to one row with a multiplicity weight and
    processed in lexicographic order, so the result is bit-identical under
    any permutation of the input and under exact duplication of the cloud
    (doubling every count doubles every partial sum exactly, and the 1/T
    scale removes the factor again).
    """
    pts = segment.points if isinstance(segment, HumanSegment) else as_points(segment)
    if len(pts) == 0:
        raise ValueError("cannot extract features from an empty segment")
    t_count = len(pts)
    uniq, counts = np.unique(pts, axis=0, return_counts=True)
    mult = counts.astype(np.float64)

    q = uniq.copy()
    q[:, 0] -= (mult @ uniq[:, 0]) / t_count
    q[:, 1] -= (mult @ uniq[:, 1]) / t_count
    q[:, 2] /= BODY_HEIGHT_SCALE

    gamma = responsibilities(q, grid)  # (U, C)
    w = grid.weights
    sqrt_w = np.sqrt(w)

    diff = (q[:, None, :] - grid.means[None, :, :]) / grid.sigma  # (U, C, 3)
    term_alpha = (gamma - w[None, :]) / sqrt_w[None, :]  # (U, C)
    term_mu = gamma[:, :, None] * diff / sqrt_w[None, :, None]  # (U, C, 3)
    term_sigma = gamma[:, :, None] * (diff * diff - 1.0) / np.sqrt(2.0 * w)[None, :, None]

    c = grid.n_components
    fm = np.empty((FEATURE_ROWS, c))
    fm[0] = (mult @ term_alpha) / t_count
    fm[1:4] = (term_mu * mult[:, None, None]).sum(axis=0).T / t_count
    fm[4:7] = (term_sigma * mult[:, None, None]).sum(axis=0).T / t_count
    fm[7] = term_alpha.max(axis=0)
    fm[8:11] = term_mu.max(axis=0).T
    fm[11:14] = term_sigma.max(axis=0).T
    fm[14:17] = term_mu.min(axis=0).T
    fm[17:20] = term_sigma.min(axis=0).T
    return fm


def pack_feature_matrix(fm: np.ndarray) -> bytes:
    """Serialize as a 2-integer shape header followed by the row-major values."""
    fm = np.ascontiguousarray(fm, dtype=np.float64)
    header = struct.pack("<2q", fm.shape[0], fm.shape[1])
    return header + fm.astype("<f8").tobytes()


def unpack_feature_matrix(data: bytes) -> np.ndarray:
    rows, cols = struct.unpack_from("<2q", data)
    body = np.frombuffer(data, dtype="<f8", offset=16, count=rows * cols)
    return body.reshape(rows, cols).copy()
