import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmdg.dg import DGSpace, l2_project
from mmdg.flux import Burgers, Euler
from mmdg.limiter import Limiter, LimiterSpec, minmod, tvb_minmod
from mmdg.mesh import build_structured_mesh

from conftest import random_mesh_positions


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_minmod_oracle(a, b, c):
    vals = [a, b, c]
    if all(v > 0 for v in vals):
        expected = min(vals)
    elif all(v < 0 for v in vals):
        expected = max(vals)
    else:
        expected = 0.0
    assert minmod(np.array(a), np.array(b), np.array(c)) == expected


def test_tvb_keeps_small_slopes():
    assert tvb_minmod(np.array(0.01), np.array(-1.0), np.array(1.0), 0.02) == 0.01
    assert tvb_minmod(np.array(0.5), np.array(-1.0), np.array(1.0), 0.02) == 0.0


def _space(d, k, periodic=False, n=6):
    if d == 1:
        mesh = build_structured_mesh([0.0], [1.0], [n], periodic=[periodic])
    else:
        mesh = build_structured_mesh([0, 0], [1, 1], [n, n], "four_triangles_per_cell", [periodic] * 2)
    return DGSpace(mesh, k, 1)


def _interior(mesh):
    bnd = set(mesh.face_elements[mesh.boundary_faces].ravel()) - {-1}
    return np.array([K for K in range(mesh.n_elements) if K not in bnd])


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("k", [1, 2])
def test_linear_field_unchanged(d, k, rng):
    space = _space(d, k)
    x = space.mesh.vertices if d == 1 else random_mesh_positions(space.mesh, rng, 0.2)
    c = l2_project(lambda p: 0.3 + 2.0 * p[:, :1] - (p[:, 1:2] if d == 2 else 0.0), x, space).coeffs
    out = Limiter(space, Burgers(d), LimiterSpec())(c, x)
    inner = _interior(space.mesh)
    assert np.allclose(out[inner], c[inner], atol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
@given(seed=st.integers(0, 10_000))
def test_averages_preserved_and_idempotent(d, seed):
    rng = np.random.default_rng(seed)
    space = _space(d, 2, periodic=True, n=4)
    x = random_mesh_positions(space.mesh, rng, 0.2)
    c = rng.normal(size=(space.mesh.n_elements, 1, space.n_basis))
    lim = Limiter(space, Burgers(d), LimiterSpec())
    once = lim(c, x)
    assert np.array_equal(once[:, :, 0], c[:, :, 0])
    if d == 1:
        assert np.allclose(lim(once, x), once, atol=1e-12)


@given(seed=st.integers(0, 10_000))
def test_1d_limited_traces_within_neighbour_averages(seed):
    rng = np.random.default_rng(seed)
    space = _space(1, 1, periodic=True, n=8)
    c = rng.normal(size=(8, 1, 2))
    out = Limiter(space, Burgers(1), LimiterSpec())(c, space.mesh.vertices)
    avg = out[:, 0, 0]
    ends = out[:, 0, 0][:, None] + np.sqrt(3) * out[:, 0, 1][:, None] * np.array([-1.0, 1.0])
    lo = np.minimum.reduce([np.roll(avg, 1), avg, np.roll(avg, -1)])
    hi = np.maximum.reduce([np.roll(avg, 1), avg, np.roll(avg, -1)])
    assert np.all(ends >= lo[:, None] - 1e-12) and np.all(ends <= hi[:, None] + 1e-12)


def test_characteristic_limiting_keeps_smooth_euler_state():
    space = DGSpace(build_structured_mesh([0.0], [1.0], [20], periodic=[True]), 1, 3)
    m = Euler(1)
    f = lambda p: m.conservative(1 + 0.01 * np.sin(2 * np.pi * p[:, 0]), np.zeros((len(p), 1)), np.ones(len(p)))
    c = l2_project(f, space.mesh.vertices, space).coeffs
    out = Limiter(space, m, LimiterSpec(tvb_m=50.0))(c, space.mesh.vertices)
    assert np.array_equal(out, c)


def test_inactive_and_p0_are_noops():
    space = _space(1, 1)
    c = np.random.default_rng(0).normal(size=(6, 1, 2))
    assert Limiter(space, Burgers(1), LimiterSpec("none"))(c, space.mesh.vertices) is c
    s0 = _space(1, 0)
    c0 = np.ones((6, 1, 1))
    assert Limiter(s0, Burgers(1), LimiterSpec())(c0, s0.mesh.vertices) is c0
