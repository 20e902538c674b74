import numpy as np
import pytest

from bubbletier.geometry import SurfaceSpec, build_grid
from bubbletier.hamiltonian import VortexConfig


@pytest.fixture(scope="session")
def torus():
    return SurfaceSpec("torus", np.eye(2))


@pytest.fixture(scope="session")
def sphere():
    return SurfaceSpec("sphere")


@pytest.fixture(scope="session")
def saddle_config(torus):
    base = np.array([0.25, 0.25])
    return VortexConfig(torus, 1, 1, 1.0, [base, base + np.array([0.5, 0.0])])


@pytest.fixture(scope="session")
def min_config(torus):
    # xi1 - xi2 at the half-period minimum of the torus Green function
    base = np.array([0.25, 0.25])
    return VortexConfig(torus, 1, 1, 1.0, [base, base + np.array([0.5, 0.5])])


@pytest.fixture(scope="session")
def antipodal_config(sphere):
    return VortexConfig(
        sphere, 1, 1, 1.0, [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    )


@pytest.fixture(scope="session")
def torus_grid_256(torus):
    return build_grid(torus, 256)


@pytest.fixture(scope="session")
def torus_grid_512(torus):
    return build_grid(torus, 512)


@pytest.fixture(scope="session")
def sphere_grid_48(sphere):
    return build_grid(sphere, 48)
