import numpy as np
import pytest

from topodetect import mesh as meshmod


@pytest.fixture(scope="session")
def coarse_mesh():
    return meshmod.generate_disk_mesh(0.06)


@pytest.fixture(scope="session")
def medium_mesh():
    return meshmod.generate_disk_mesh(0.03)


@pytest.fixture(scope="session")
def desk_mesh():
    """Reconstruction mesh at the desk-scale resolution (about 40k triangles)."""
    return meshmod.generate_disk_mesh(0.012)


@pytest.fixture(scope="session")
def gen_mesh():
    """Data-generation mesh: 1.5x finer than the desk mesh, different ring seed."""
    return meshmod.generate_disk_mesh(0.008, 7)


def single_triangle_mesh(p0=(0.0, 0.0), p1=(1.0, 0.0), p2=(0.0, 1.0)):
    nodes = np.array([p0, p1, p2], dtype=float)
    return meshmod.Mesh(nodes, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]))
