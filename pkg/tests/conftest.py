"""Shared fixtures and synthetic-data helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from trajlink.features import GmmGrid
from trajlink.geometry import HumanSegment
from trajlink.tracker import SubTrajectory


@pytest.fixture(scope="session")
def grid() -> GmmGrid:
    return GmmGrid.body_grid()


def random_cloud(rng, n: int = 60, center=(0.0, 0.0, 0.9), spread=(0.2, 0.2, 0.5)) -> np.ndarray:
    """Blob of points roughly the size of a standing person."""
    return np.asarray(center) + rng.normal(size=(n, 3)) * np.asarray(spread)


def make_segment(rng, n: int = 60, center=(0.0, 0.0, 0.9), sensor_id="s0", t=0.0) -> HumanSegment:
    return HumanSegment.from_points(sensor_id, t, random_cloud(rng, n, center))


def shape_cloud(rng, kind: str, n: int = 80) -> np.ndarray:
    """Two clearly different body shapes for appearance tests.

    "tall": 1.9 m narrow cylinder; "short": 1.5 m wide cylinder.
    """
    if kind == "tall":
        height, radius = 1.9, 0.10
    else:
        height, radius = 1.5, 0.22
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    r = radius * np.sqrt(rng.uniform(0.2, 1.0, n))
    z = rng.uniform(0.0, height, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def make_tr(id_: str, t0: float, t1: float, start_gate="UNKNOWN", end_gate="UNKNOWN",
            sensor_id="s0", xy=(0.0, 0.0)) -> SubTrajectory:
    """Minimal sub-trajectory: three samples spanning [t0, t1] at a fixed spot."""
    tm = (t0 + t1) / 2.0
    samples = np.array([[t0, xy[0], xy[1]], [tm, xy[0], xy[1]], [t1, xy[0], xy[1]]])
    return SubTrajectory(id=id_, sensor_id=sensor_id, samples=samples,
                         start_gate=start_gate, end_gate=end_gate)
