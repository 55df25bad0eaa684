"""Fisher-Vector signature extraction against the fixed grid GMM.

The full-matrix oracle below recomputes every entry with plain Python loops
straight from the density/gradient formulas, independently of the vectorized
production path.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import random_cloud

from trajlink.features import (
    BODY_HEIGHT_SCALE,
    GmmGrid,
    component_likelihood,
    fisher_vector,
    normalize_to_body_box,
    pack_feature_matrix,
    responsibilities,
    unpack_feature_matrix,
)
from trajlink.geometry import HumanSegment


def _two_component_grid(sigma: float = 1.0) -> GmmGrid:
    means = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    w = np.array([0.5, 0.5])
    return GmmGrid(means=means, sigma=sigma, weights=w, alpha=np.log(w))


# ---------------------------------------------------------------------------
# grid construction


def test_body_grid_layout(grid):
    assert grid.n_components == 54
    assert grid.means.shape == (54, 3)
    assert np.allclose(grid.weights, 1.0 / 54.0)
    assert grid.sigma == 0.25
    # means stay inside the normalized body box
    assert grid.means[:, 0].min() > -0.5 and grid.means[:, 0].max() < 0.5
    assert grid.means[:, 2].min() > 0.0 and grid.means[:, 2].max() < 1.0
    # weights are the softmax of alpha
    soft = np.exp(grid.alpha) / np.exp(grid.alpha).sum()
    assert np.allclose(soft, grid.weights, atol=1e-12)


def test_grid_validation():
    with pytest.raises(ValueError):
        GmmGrid(means=np.zeros((2, 3)), sigma=0.0, weights=np.array([0.5, 0.5]),
                alpha=np.log([0.5, 0.5]))
    with pytest.raises(ValueError):
        GmmGrid(means=np.zeros((2, 3)), sigma=1.0, weights=np.array([0.7, 0.7]),
                alpha=np.log([0.7, 0.7]))


def test_normalize_to_body_box():
    pts = np.array([[1.0, 2.0, 0.0], [3.0, 4.0, 1.8]])
    out = normalize_to_body_box(pts)
    assert np.allclose(out[:, 0], [-1.0, 1.0])
    assert np.allclose(out[:, 1], [-1.0, 1.0])
    assert np.allclose(out[:, 2], [0.0, 1.8 / BODY_HEIGHT_SCALE])


# ---------------------------------------------------------------------------
# densities


def test_likelihood_at_mean_unit_sigma():
    g = _two_component_grid(sigma=1.0)
    val = component_likelihood(g.means[0], g, 0)
    assert abs(val - (2.0 * math.pi) ** -1.5) < 1e-9
    assert abs(val - 0.063494) < 1e-6


def test_likelihood_one_sigma_away():
    g = _two_component_grid(sigma=1.0)
    at_mean = component_likelihood(g.means[0], g, 0)
    off = component_likelihood(g.means[0] + np.array([1.0, 0.0, 0.0]), g, 0)
    assert abs(off - at_mean * math.exp(-0.5)) < 1e-12


def test_likelihood_formula_oracle(grid):
    rng = np.random.default_rng(12)
    for _ in range(50):
        p = rng.uniform(-0.6, 1.1, size=3)
        c = int(rng.integers(grid.n_components))
        got = component_likelihood(p, grid, c)
        d2 = float(np.sum((p - grid.means[c]) ** 2))
        ref = math.exp(-0.5 * d2 / grid.sigma**2) / ((2.0 * math.pi) ** 1.5 * grid.sigma**3)
        assert abs(got - ref) <= 1e-12 * ref


def test_likelihood_component_range(grid):
    with pytest.raises(IndexError):
        component_likelihood(np.zeros(3), grid, 54)


def test_responsibility_dominance():
    g = _two_component_grid(sigma=0.1)  # means 20 sigma apart
    gamma = responsibilities(g.means[0], g)
    assert gamma[0] > 1.0 - 1e-12


def test_responsibility_equidistant_split():
    g = _two_component_grid()
    mid = (g.means[0] + g.means[1]) / 2.0
    gamma = responsibilities(mid, g)
    assert np.allclose(gamma, [0.5, 0.5], atol=1e-12)


def test_responsibilities_sum_to_one(grid):
    rng = np.random.default_rng(13)
    pts = rng.uniform(-1, 2, size=(40, 3))
    gamma = responsibilities(pts, grid)
    assert gamma.shape == (40, 54)
    assert np.all(gamma >= 0)
    assert np.max(np.abs(gamma.sum(axis=1) - 1.0)) < 1e-12


# ---------------------------------------------------------------------------
# fisher vector


def test_single_point_at_component_mean(grid):
    # a lone point centers to XY (0, 0), so target a center-column component
    c = 27
    assert grid.means[c, 0] == 0.0 and grid.means[c, 1] == 0.0
    raw = np.array([[5.0, -3.0, grid.means[c, 2] * BODY_HEIGHT_SCALE]])
    fm = fisher_vector(raw, grid)

    gamma = responsibilities(grid.means[c], grid)
    # mean-gradient rows vanish at the mean, deviation rows hit -gamma/sqrt(2w)
    assert np.allclose(fm[1:4, c], 0.0, atol=1e-12)
    expected_sigma = -gamma[c] / math.sqrt(2.0 * grid.weights[c])
    assert np.allclose(fm[4:7, c], expected_sigma, atol=1e-12)
    # with one point the sum and max alpha rows agree
    assert np.allclose(fm[0], fm[7], atol=1e-12)


def test_shape_fixed_regardless_of_size(grid):
    rng = np.random.default_rng(14)
    for n in (1, 2, 17, 400):
        fm = fisher_vector(random_cloud(rng, n), grid)
        assert fm.shape == (20, 54)
        assert np.isfinite(fm).all()


def test_empty_segment_rejected(grid):
    with pytest.raises(ValueError):
        fisher_vector(np.empty((0, 3)), grid)


def test_permutation_invariance_bit_exact(grid):
    rng = np.random.default_rng(15)
    for _ in range(10):
        pts = random_cloud(rng, 80)
        base = fisher_vector(pts, grid)
        shuffled = fisher_vector(pts[rng.permutation(len(pts))], grid)
        assert np.array_equal(base, shuffled)


def test_duplication_invariance(grid):
    # duplicate points collapse to one weighted row, so this is bit-exact
    rng = np.random.default_rng(16)
    for _ in range(10):
        pts = random_cloud(rng, 50)
        base = fisher_vector(pts, grid)
        doubled = fisher_vector(np.concatenate([pts, pts]), grid)
        assert np.array_equal(doubled, base)


def test_alpha_row_weighted_zero_sum(grid):
    rng = np.random.default_rng(17)
    for _ in range(5):
        fm = fisher_vector(random_cloud(rng, 60), grid)
        assert abs(float(np.sqrt(grid.weights) @ fm[0])) < 1e-9


def test_accepts_segment_objects(grid):
    rng = np.random.default_rng(18)
    pts = random_cloud(rng, 40)
    seg = HumanSegment.from_points("s0", 0.0, pts)
    assert np.array_equal(fisher_vector(seg, grid), fisher_vector(pts, grid))


def _loop_fisher_vector(pts: np.ndarray, grid: GmmGrid) -> np.ndarray:
    """Entrywise re-derivation with scalar loops over points and components."""
    pts = pts[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))]
    q = pts.copy()
    q[:, 0] -= pts[:, 0].mean()
    q[:, 1] -= pts[:, 1].mean()
    q[:, 2] /= BODY_HEIGHT_SCALE

    t_count = len(q)
    c_count = grid.n_components
    sig = grid.sigma

    dens = np.empty((t_count, c_count))
    for t in range(t_count):
        for c in range(c_count):
            d2 = float(np.sum((q[t] - grid.means[c]) ** 2))
            dens[t, c] = math.exp(-0.5 * d2 / sig**2) / ((2 * math.pi) ** 1.5 * sig**3)
    gamma = np.empty_like(dens)
    for t in range(t_count):
        mix = float(np.dot(grid.weights, dens[t]))
        for c in range(c_count):
            gamma[t, c] = grid.weights[c] * dens[t, c] / mix

    ta = np.empty((t_count, c_count))
    tm = np.empty((t_count, c_count, 3))
    ts = np.empty((t_count, c_count, 3))
    for t in range(t_count):
        for c in range(c_count):
            w = grid.weights[c]
            ta[t, c] = (gamma[t, c] - w) / math.sqrt(w)
            for k in range(3):
                d = (q[t, k] - grid.means[c, k]) / sig
                tm[t, c, k] = gamma[t, c] * d / math.sqrt(w)
                ts[t, c, k] = gamma[t, c] * (d * d - 1.0) / math.sqrt(2.0 * w)

    fm = np.empty((20, c_count))
    fm[0] = ta.sum(axis=0) / t_count
    fm[1:4] = tm.sum(axis=0).T / t_count
    fm[4:7] = ts.sum(axis=0).T / t_count
    fm[7] = ta.max(axis=0)
    fm[8:11] = tm.max(axis=0).T
    fm[11:14] = ts.max(axis=0).T
    fm[14:17] = tm.min(axis=0).T
    fm[17:20] = ts.min(axis=0).T
    return fm


def test_full_matrix_against_loop_oracle(grid):
    rng = np.random.default_rng(19)
    pts = random_cloud(rng, 30)
    got = fisher_vector(pts, grid)
    ref = _loop_fisher_vector(pts, grid)
    denom = np.maximum(np.abs(ref), 1e-12)
    assert np.max(np.abs(got - ref) / denom) <= 1e-10


# ---------------------------------------------------------------------------
# serialization


def test_pack_unpack_round_trip(grid):
    rng = np.random.default_rng(20)
    fm = fisher_vector(random_cloud(rng, 25), grid)
    again = unpack_feature_matrix(pack_feature_matrix(fm))
    assert again.shape == fm.shape
    assert np.array_equal(again, fm)
