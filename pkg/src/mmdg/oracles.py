"""Exact solutions used as verification oracles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq


class VacuumError(ValueError):
    """The Riemann data generate vacuum, which the exact solver does not handle."""


@dataclass(frozen=True)
class StarState:
    p: float
    u: float
    rho_left: float
    rho_right: float


def _f_side(p, rho, pk, ck, gamma):
    """Pressure function of one side and its derivative."""
    if p > pk:
        A = 2.0 / ((gamma + 1.0) * rho)
        B = (gamma - 1.0) / (gamma + 1.0) * pk
        s = np.sqrt(A / (p + B))
        return (p - pk) * s, s * (1.0 - 0.5 * (p - pk) / (p + B))
    r = p / pk
    e = (gamma - 1.0) / (2.0 * gamma)
    f = 2.0 * ck / (gamma - 1.0) * (r**e - 1.0)
    return f, (1.0 / (rho * ck)) * r ** (-(gamma + 1.0) / (2.0 * gamma))


def star_state(left, right, gamma: float = 1.4, tol: float = 1e-14) -> StarState:
    """Star-region pressure and velocity for primitive ``(rho, u, P)`` data."""
    rl, ul, pl = map(float, left)
    rr, ur, pr = map(float, right)
    if min(rl, rr, pl, pr) <= 0:
        raise ValueError("Riemann data must have positive density and pressure")
    cl = np.sqrt(gamma * pl / rl)
    cr = np.sqrt(gamma * pr / rr)
    du = ur - ul
    if 2.0 * (cl + cr) / (gamma - 1.0) <= du:
        raise VacuumError("pressure positivity condition violated (vacuum)")

    def g(p):
        return _f_side(p, rl, pl, cl, gamma)[0] + _f_side(p, rr, pr, cr, gamma)[0] + du

    lo = 1e-14 * min(pl, pr)
    hi = max(pl, pr)
    while g(hi) < 0:
        hi *= 2.0
    if g(lo) > 0:
        raise VacuumError("no positive star pressure")
    p = brentq(g, lo, hi, xtol=tol * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish
    for _ in range(3):
        fl, dl = _f_side(p, rl, pl, cl, gamma)
        fr, dr = _f_side(p, rr, pr, cr, gamma)
        step = (fl + fr + du) / (dl + dr)
        if abs(step) < 1e-300:
            break
        p = max(p - step, lo)
    fl = _f_side(p, rl, pl, cl, gamma)[0]
    fr = _f_side(p, rr, pr, cr, gamma)[0]
    u = 0.5 * (ul + ur) + 0.5 * (fr - fl)
    gm = (gamma - 1.0) / (gamma + 1.0)

    def rho_star(rho, pk):
        if p > pk:
            return rho * (p / pk + gm) / (gm * p / pk + 1.0)
        return rho * (p / pk) ** (1.0 / gamma)

    return StarState(p, u, rho_star(rl, pl), rho_star(rr, pr))


def pressure_function(p: float, left, right, gamma: float = 1.4) -> float:
    """``f_L(p) + f_R(p) + u_R - u_L``; zero at the star pressure."""
    rl, ul, pl = left
    rr, ur, pr = right
    cl = np.sqrt(gamma * pl / rl)
    cr = np.sqrt(gamma * pr / rr)
    return _f_side(p, rl, pl, cl, gamma)[0] + _f_side(p, rr, pr, cr, gamma)[0] + ur - ul


def exact_riemann(left, right, gamma: float, xi) -> np.ndarray:
    """Sample the self-similar solution at ``xi = x/t``; returns ``(len(xi), 3)`` rows of ``(rho, u, P)``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    rl, ul, pl = map(float, left)
    rr, ur, pr = map(float, right)
    st = star_state(left, right, gamma)
    p, u = st.p, st.u
    cl = np.sqrt(gamma * pl / rl)
    cr = np.sqrt(gamma * pr / rr)
    g1 = (gamma - 1.0) / (gamma + 1.0)
    g2 = 2.0 / (gamma + 1.0)
    out = np.empty((len(xi), 3))

    # left side of the contact
    left_mask = xi <= u
    if p > pl:
        s = ul - cl * np.sqrt((gamma + 1) / (2 * gamma) * p / pl + (gamma - 1) / (2 * gamma))
        m = left_mask & (xi < s)
        out[m] = (rl, ul, pl)
        m = left_mask & (xi >= s)
        out[m] = (st.rho_left, u, p)
    else:
        c_star = cl * (p / pl) ** ((gamma - 1) / (2 * gamma))
        head, tail = ul - cl, u - c_star
        m = left_mask & (xi < head)
        out[m] = (rl, ul, pl)
        m = left_mask & (xi >= tail)
        out[m] = (st.rho_left, u, p)
        m = left_mask & (xi >= head) & (xi < tail)
        c = g2 * cl + g1 * (ul - xi[m])
        out[m, 0] = rl * (c / cl) ** (2 / (gamma - 1))
        out[m, 1] = g2 * (cl + 0.5 * (gamma - 1) * ul + xi[m])
        out[m, 2] = pl * (c / cl) ** (2 * gamma / (gamma - 1))

    right_mask = ~left_mask
    if p > pr:
        s = ur + cr * np.sqrt((gamma + 1) / (2 * gamma) * p / pr + (gamma - 1) / (2 * gamma))
        m = right_mask & (xi > s)
        out[m] = (rr, ur, pr)
        m = right_mask & (xi <= s)
        out[m] = (st.rho_right, u, p)
    else:
        c_star = cr * (p / pr) ** ((gamma - 1) / (2 * gamma))
        head, tail = ur + cr, u + c_star
        m = right_mask & (xi > head)
        out[m] = (rr, ur, pr)
        m = right_mask & (xi <= tail)
        out[m] = (st.rho_right, u, p)
        m = right_mask & (xi > tail) & (xi <= head)
        c = g2 * cr - g1 * (ur - xi[m])
        out[m, 0] = rr * (c / cr) ** (2 / (gamma - 1))
        out[m, 1] = g2 * (-cr + 0.5 * (gamma - 1) * ur + xi[m])
        out[m, 2] = pr * (c / cr) ** (2 * gamma / (gamma - 1))
    return out


def rankine_hugoniot_residual(pre, post, gamma: float = 1.4) -> float:
    """Largest relative jump-condition residual for a shock joining primitive states."""
    def cons(w):
        r, u, p = w
        return np.array([r, r * u, p / (gamma - 1) + 0.5 * r * u * u])

    def flux(w):
        r, u, p = w
        E = p / (gamma - 1) + 0.5 * r * u * u
        return np.array([r * u, r * u * u + p, u * (E + p)])

    dU = cons(post) - cons(pre)
    dF = flux(post) - flux(pre)
    s = dF[0] / dU[0]
    return float(np.max(np.abs(dF - s * dU)) / max(np.max(np.abs(dF)), 1e-300))


# ---------------------------------------------------------------- Burgers
def burgers_breaking_time(u0_prime_min: float) -> float:
    return -1.0 / u0_prime_min if u0_prime_min < 0 else np.inf


def burgers_exact(x, t: float, u0=None, du0=None, tol: float = 1e-14, maxiter: int = 100) -> np.ndarray:
    """Characteristic-traced solution of ``u_t + (u^2/2)_x = 0`` before breaking.

    Solves ``xi + t u0(xi) = x`` by Newton's method.  Defaults to
    ``u0 = 1/2 + sin(pi x)``.
    """
    if u0 is None:
        u0 = lambda s: 0.5 + np.sin(np.pi * s)  # noqa: E731
        du0 = lambda s: np.pi * np.cos(np.pi * s)  # noqa: E731
        if t >= 1.0 / np.pi:
            raise ValueError("characteristics have crossed (t >= 1/pi)")
    x = np.asarray(x, dtype=float)
    xi = x - t * u0(x)
    for _ in range(maxiter):
        r = xi + t * u0(xi) - x
        step = r / (1.0 + t * du0(xi))
        xi = xi - step
        if np.max(np.abs(step)) < tol:
            break
    else:
        raise RuntimeError("characteristic tracing did not converge")
    return u0(xi)


def advection_exact(f, a, x, t: float) -> np.ndarray:
    """Exact transport ``f(x - a t)`` for a constant velocity ``a``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return f(x - t * np.asarray(a, dtype=float))
