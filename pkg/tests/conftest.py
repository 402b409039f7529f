# conftest.py
import json
import math
from pathlib import Path

import numpy as np
import pytest

from lidarkit.geometry import DetectorGeometry
from lidarkit.medium import MediumModel, PiecewiseLinearProfile, TabulatedPhase


@pytest.fixture
def geom() -> DetectorGeometry:
    return DetectorGeometry.from_epsilon(rho0=0.1, epsilon=0.1)


@pytest.fixture
def dense_medium() -> MediumModel:
    """sigma0 = 0.1, isotropic s = 0.05."""
    return MediumModel.homogeneous(sigma_t=0.1, scattering=0.05)


@pytest.fixture
def thin_medium() -> MediumModel:
    """sigma0 = 0.01, isotropic s = 0.008."""
    return MediumModel.homogeneous(sigma_t=0.01, scattering=0.008)


@pytest.fixture
def layer_medium() -> MediumModel:
    return MediumModel.layer(sigma_t=0.004, scattering=0.003, thickness=40.0, shape="rayleigh")


@pytest.fixture
def table_phase() -> TabulatedPhase:
    mu = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    z = np.array([0.0, 50.0, 100.0])
    table = np.array(
        [
            [4.0e-4, 3.0e-4, 1.0e-4],
            [2.5e-4, 2.0e-4, 0.6e-4],
            [2.0e-4, 1.5e-4, 0.5e-4],
            [2.5e-4, 2.0e-4, 0.6e-4],
            [4.0e-4, 3.0e-4, 1.0e-4],
        ]
    )
    return TabulatedPhase(mu, z, table)


@pytest.fixture
def table_medium(table_phase) -> MediumModel:
    extinction = PiecewiseLinearProfile(np.array([0.0, 20.0, 60.0, 100.0]), np.array([0.004, 0.006, 0.003, 0.001]))
    return MediumModel(extinction, table_phase, "tabulated")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def config_dict() -> dict:
    """A small valid run configuration."""
    return {
        "mode": "single",
        "medium": {"kind": "homogeneous", "sigma_t": 0.1, "scattering": 0.05},
        "geometry": {"rho0": 0.1, "epsilon": 0.1},
        "time_grid": {"times": [20.0, 50.0, 100.0]},
        "montecarlo": {"histories": 2000, "blocks": 4, "seed": 7},
    }


@pytest.fixture
def write_config(tmp_path: Path):
    """Write a config dict as JSON into tmp_path and return the path."""

    def _write(data: dict, name: str = "run.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write


def isotropic_sigma(s: float) -> float:
    return s / (4.0 * math.pi)
