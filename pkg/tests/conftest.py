import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running full-resolution runs")


def random_mesh_positions(mesh, rng, amplitude=0.3):
    """Perturb the interior vertices of a structured mesh while keeping it valid."""
    from mmdg.mesh import compute_geometry

    x0 = mesh.vertices
    h = np.min(compute_geometry(mesh, x0).height)
    free = ~mesh.boundary_vertex_mask()
    for _ in range(50):
        x = x0 + amplitude * h * rng.uniform(-1, 1, size=x0.shape) * free
        # keep periodic partners together
        x = x[mesh.periodic_map] + (x0 - x0[mesh.periodic_map])
        if np.all(compute_geometry(mesh, x, check=False).measure > 0):
            return x
        amplitude *= 0.5
    return x0.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_delaunay_mesh(seed, n_points=30):
    from scipy.spatial import Delaunay

    from mmdg.mesh import build_mesh

    rng = np.random.default_rng(seed)
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float)
    pts = np.vstack([corners, rng.uniform(0.02, 0.98, size=(n_points, 2))])
    return build_mesh(pts, Delaunay(pts).simplices, [0, 0], [1, 1])


def random_interval_mesh(seed, n_cells=None):
    from mmdg.mesh import build_mesh

    rng = np.random.default_rng(seed)
    n = n_cells or int(rng.integers(2, 60))
    widths = rng.uniform(0.05, 1.0, size=n) ** 2
    x = np.concatenate([[0.0], np.cumsum(widths)])
    return build_mesh(x[:, None], np.column_stack([np.arange(n), np.arange(1, n + 1)]), 0.0, x[-1])


def random_simplicial_mesh(seed):
    """A valid mesh with random geometry; even seeds are 1D, odd seeds 2D."""
    if seed % 2 == 0:
        return random_interval_mesh(seed)
    rng = np.random.default_rng(seed)
    return random_delaunay_mesh(seed, int(rng.integers(5, 60)))
