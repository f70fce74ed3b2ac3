"""Shared fixtures: small synthetic scenes reused across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from dynsfm.geometry import Pose, so3_exp
from dynsfm.synthbench import SynthConfig, SynthScene, SynthTracks, gen_scene, project_tracks


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def pose_from_matrix(rotation: np.ndarray, t: np.ndarray) -> Pose:
    return Pose.from_rt(rotation, np.asarray(t, dtype=np.float64))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def static_scene() -> SynthScene:
    """Noise-free all-static orbit scene for view-graph and pipeline checks."""
    cfg = SynthConfig(n_static=90, n_dynamic=0, num_frames=10, trajectory_kind="orbit")
    return gen_scene(3, cfg)


@pytest.fixture(scope="session")
def static_tracks(static_scene: SynthScene) -> SynthTracks:
    return project_tracks(static_scene, build_flows=False)


@pytest.fixture(scope="session")
def dynamic_scene() -> SynthScene:
    """Orbit scene with a large coherently moving foreground cluster."""
    cfg = SynthConfig(n_static=70, n_dynamic=30, num_frames=30, trajectory_kind="orbit")
    return gen_scene(0, cfg)


@pytest.fixture(scope="session")
def dynamic_tracks(dynamic_scene: SynthScene) -> SynthTracks:
    return project_tracks(dynamic_scene, build_flows=False)
