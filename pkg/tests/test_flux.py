import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmdg.flux import (
    AlphaPolicy,
    Burgers,
    Euler,
    LinearAdvection,
    StateError,
    alpha_aggregate,
    alpha_pointwise,
    lf_flux,
    modified_flux,
)
from mmdg.mesh import build_structured_mesh

pos = st.floats(0.1, 10.0)
speed = st.floats(-3.0, 3.0)


def euler_flux_oracle_1d(rho, u, P, gamma=1.4):
    E = P / (gamma - 1) + 0.5 * rho * u * u
    return np.array([rho * u, rho * u * u + P, (E + P) * u])


def fd_jacobian(fun, U, h=1e-7):
    n = len(U)
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(U[j]))
        J[:, j] = (fun(U + e) - fun(U - e)) / (2 * e[j])
    return J


# ---------------------------------------------------------------- alpha
def test_alpha_linear_advection():
    m = LinearAdvection(1.0)
    a = alpha_pointwise(m, np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)), 0.0, np.ones((1, 1)), np.zeros((1, 1)))
    assert a[0] == 1.0


def test_alpha_burgers_lagrangian_limit():
    m = Burgers(1)
    for s in (1.0, -1.0):
        a = alpha_pointwise(m, np.full((1, 1), 0.5), np.full((1, 1), 0.5), np.zeros((1, 1)), 0.0,
                            np.full((1, 1), s), np.full((1, 1), 0.5))
        assert a[0] == 0.0


def test_alpha_sod_left_state():
    m = Euler(1)
    U = m.conservative(np.array([1.0]), np.array([[0.0]]), np.array([1.0]))
    a = alpha_pointwise(m, U, U, np.zeros((1, 1)), 0.0, np.ones((1, 1)), np.zeros((1, 1)))
    assert a[0] == pytest.approx(math.sqrt(1.4), rel=1e-15)
    assert a[0] == pytest.approx(1.18322, abs=1e-5)


def test_nonphysical_state_raises():
    m = Euler(1)
    U = np.array([[1.0, 0.0, -1.0]])
    with pytest.raises(StateError):
        m.max_abs_eig(U, None, 0.0, np.ones((1, 1)), np.zeros((1, 1)))
    with pytest.raises(StateError):
        m.flux(np.array([[-1.0, 0.0, 1.0]]), None, 0.0)


def test_alpha_nonnegative_lagrangian_advection():
    a = lambda x, t: 1 + 0.5 * np.sin(2 * np.pi * x)
    m = LinearAdvection(a, d=1)
    x = np.linspace(0, 1, 11)[:, None]
    lam = m.max_abs_eig(None, x, 0.0, np.ones_like(x), a(x, 0.0))
    assert np.all(lam == 0.0)


# ---------------------------------------------------------------- aggregation
def test_aggregate_all_equal():
    mesh = build_structured_mesh([0, 0], [1, 1], [2, 2], "four_triangles_per_cell")
    tab = np.full((mesh.n_faces, 2), 0.37)
    for pol in AlphaPolicy:
        out = alpha_aggregate(pol, tab, mesh.face_elements, mesh.element_faces)
        assert np.all(out == 0.37)


def test_aggregate_per_edge_max():
    out = alpha_aggregate("per_edge", np.array([[0.2, 0.7]]))
    assert np.all(out == 0.7)


def test_aggregate_empty():
    with pytest.raises(ValueError):
        alpha_aggregate("global", np.zeros((0, 2)))


def test_policy_aliases():
    assert AlphaPolicy.parse("e") is AlphaPolicy.PER_EDGE
    assert AlphaPolicy.parse("h") is AlphaPolicy.GLOBAL
    assert AlphaPolicy.parse("per_element") is AlphaPolicy.PER_ELEMENT
    assert [p.rank for p in AlphaPolicy] == [0, 1, 2, 3]


@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_policy_chain_brute_force(seed, d):
    rng = np.random.default_rng(seed)
    mesh = (build_structured_mesh([0.0], [1.0], [7], periodic=[bool(seed % 2)]) if d == 1 else
            build_structured_mesh([0, 0], [1, 1], [3, 2], "four_triangles_per_cell", [bool(seed % 2)] * 2))
    q = 1 if d == 1 else 3
    tab = rng.exponential(size=(mesh.n_faces, q))
    agg = {p: alpha_aggregate(p, tab, mesh.face_elements, mesh.element_faces) for p in AlphaPolicy}
    # brute-force oracle
    for f in range(mesh.n_faces):
        assert np.all(agg[AlphaPolicy.PER_EDGE][f] == max(tab[f]))
        elems = [k for k in mesh.face_elements[f] if k >= 0]
        faces = {g for k in elems for g in mesh.element_faces[k]}
        assert np.all(agg[AlphaPolicy.PER_ELEMENT][f] == max(tab[g].max() for g in faces))
    assert np.all(agg[AlphaPolicy.GLOBAL] == tab.max())
    chain = [agg[p] for p in AlphaPolicy]
    for lo, hi in zip(chain, chain[1:]):
        assert np.all(lo <= hi)


# ---------------------------------------------------------------- LF flux
def _state(model, rho, u, P):
    return model.conservative(np.array([rho]), np.array([[u]]), np.array([P]))


@given(pos, speed, pos, st.floats(0, 5), speed, st.sampled_from([-1.0, 1.0]))
def test_lf_consistency_euler(rho, u, P, alpha, xdot, n):
    m = Euler(1)
    U = _state(m, rho, u, P)
    nn, xd = np.array([[n]]), np.array([[xdot]])
    F = lf_flux(m, U, U, None, 0.0, nn, xd, np.array([alpha]))
    assert np.allclose(F, m.normal_flux(U, None, 0.0, nn, xd), rtol=1e-15, atol=0)


@given(pos, speed, pos, pos, speed, pos, st.floats(0, 5), speed)
def test_lf_conservation_euler(r1, u1, p1, r2, u2, p2, alpha, xdot):
    m = Euler(1)
    a, b = _state(m, r1, u1, p1), _state(m, r2, u2, p2)
    xd = np.array([[xdot]])
    f1 = lf_flux(m, a, b, None, 0.0, np.array([[1.0]]), xd, np.array([alpha]))
    f2 = lf_flux(m, b, a, None, 0.0, np.array([[-1.0]]), xd, np.array([alpha]))
    assert np.array_equal(f1, -f2)


@given(st.floats(0.01, 5), st.floats(-2, 2), st.floats(-2, 2))
def test_lf_upwind_linear_advection(lam, ui, ue):
    m = LinearAdvection(lam)
    F = lf_flux(m, np.array([[ui]]), np.array([[ue]]), np.zeros((1, 1)), 0.0, np.ones((1, 1)),
                np.zeros((1, 1)), np.array([lam]))
    assert F[0, 0] == pytest.approx(lam * ui, rel=1e-14, abs=1e-15)


def test_lf_rejects_negative_alpha():
    m = Burgers(1)
    with pytest.raises(ValueError):
        lf_flux(m, np.ones((1, 1)), np.ones((1, 1)), None, 0.0, np.ones((1, 1)), np.zeros((1, 1)), np.array([-1.0]))


# ---------------------------------------------------------------- modified flux
def test_modified_flux_zero_velocity():
    m = Euler(2)
    U = m.conservative(np.array([1.2]), np.array([[0.3, -0.4]]), np.array([0.9]))
    assert np.array_equal(modified_flux(m, U, None, 0.0, np.zeros((1, 2))), m.flux(U, None, 0.0))


def test_modified_flux_lagrangian_advection():
    m = LinearAdvection([0.7, -0.2])
    U = np.array([[2.5]])
    H = modified_flux(m, U, np.zeros((1, 2)), 0.0, np.array([[0.7, -0.2]]))
    assert np.all(H == 0.0)


def test_modified_flux_sod_left_oracle():
    m = Euler(1)
    U = _state(m, 1.0, 0.0, 1.0)
    H = modified_flux(m, U, None, 0.0, np.array([[0.1]]))[0, :, 0]
    expected = euler_flux_oracle_1d(1.0, 0.0, 1.0) - 0.1 * U[0]
    assert np.allclose(H, expected, rtol=1e-15, atol=1e-16)


@given(pos, speed, pos, speed)
def test_euler_flux_oracle_1d(rho, u, P, xdot):
    m = Euler(1)
    U = _state(m, rho, u, P)
    H = modified_flux(m, U, None, 0.0, np.array([[xdot]]))[0, :, 0]
    assert np.allclose(H, euler_flux_oracle_1d(rho, u, P) - xdot * U[0], rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- eigenvalue bounds
@given(pos, speed, pos, speed)
def test_euler_1d_spectral_radius_fd(rho, u, P, xdot):
    m = Euler(1)
    U = _state(m, rho, u, P)[0]
    n, xd = np.array([1.0]), np.array([xdot])
    fun = lambda V: m.normal_flux(V[None], None, 0.0, n[None], xd[None])[0]
    J = fd_jacobian(fun, U)
    rho_fd = np.max(np.abs(np.linalg.eigvals(J)))
    lam = m.max_abs_eig(U[None], None, 0.0, n[None], xd[None])[0]
    assert lam == pytest.approx(rho_fd, rel=1e-6, abs=1e-6)


@given(pos, speed, speed, pos, speed, speed, st.floats(0, 2 * np.pi))
def test_euler_2d_spectral_radius_fd(rho, u, v, P, xd0, xd1, theta):
    m = Euler(2)
    U = m.conservative(np.array([rho]), np.array([[u, v]]), np.array([P]))[0]
    n, xd = np.array([np.cos(theta), np.sin(theta)]), np.array([xd0, xd1])
    fun = lambda V: m.normal_flux(V[None], None, 0.0, n[None], xd[None])[0]
    J = fd_jacobian(fun, U)
    rho_fd = np.max(np.abs(np.linalg.eigvals(J)))
    lam = m.max_abs_eig(U[None], None, 0.0, n[None], xd[None])[0]
    assert lam == pytest.approx(rho_fd, rel=1e-6, abs=1e-6)


@given(pos, speed, speed, pos, st.floats(0, 2 * np.pi))
def test_euler_rotational_consistency(rho, u, v, P, theta):
    m2, m1 = Euler(2), Euler(1)
    n = np.array([np.cos(theta), np.sin(theta)])
    U = m2.conservative(np.array([rho]), np.array([[u, v]]), np.array([P]))
    Fn = m2.normal_flux(U, None, 0.0, n[None], np.zeros((1, 2)))[0]
    un, ut = u * n[0] + v * n[1], -u * n[1] + v * n[0]
    U1 = m1.conservative(np.array([rho]), np.array([[un]]), np.array([P]))
    F1 = m1.flux(U1, None, 0.0)[0, :, 0]
    mom_n, mom_t = F1[1], rho * un * ut
    # the 1D energy lacks the tangential kinetic energy carried along with the normal flow
    energy = F1[2] + 0.5 * rho * ut * ut * un
    expected = np.array([F1[0], mom_n * n[0] - mom_t * n[1], mom_n * n[1] + mom_t * n[0], energy])
    assert np.allclose(Fn, expected, rtol=1e-12, atol=1e-12)


@given(st.floats(-3, 3), speed, st.sampled_from([-1.0, 1.0]))
def test_burgers_spectral_radius_fd(u, xdot, n):
    m = Burgers(1)
    nn, xd = np.array([[n]]), np.array([[xdot]])
    h = 1e-6
    g = lambda w: m.normal_flux(np.array([[w]]), None, 0.0, nn, xd)[0, 0]
    deriv = (g(u + h) - g(u - h)) / (2 * h)
    assert m.max_abs_eig(np.array([[u]]), None, 0.0, nn, xd)[0] == pytest.approx(abs(deriv), abs=1e-7)
