"""Benchmark problems: initial data, domains and run defaults."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .flux import Burgers, Euler, FluxModel, LinearAdvection

GAMMA = 1.4

SOD_LEFT = (1.0, 0.0, 1.0)
SOD_RIGHT = (0.125, 0.0, 0.1)
LAX_LEFT = (0.445, 0.698, 3.528)
LAX_RIGHT = (0.5, 0.0, 0.571)
# (rho, u, v, P) per quadrant: NE, NW, SW, SE
RIEMANN2D_QUADRANTS = {
    "ne": (1.1, 0.0, 0.0, 1.1),
    "nw": (0.5065, 0.8939, 0.0, 0.35),
    "sw": (1.1, 0.8939, 0.8939, 1.1),
    "se": (0.5065, 0.0, 0.8939, 0.35),
}
BURGERS2D_C = -np.log(1e-16)


@dataclass(frozen=True)
class Problem:
    name: str
    dim: int
    lower: tuple
    upper: tuple
    periodic: tuple
    t_end: float
    n_cells: tuple
    model_factory: Callable[[], FluxModel]
    initial: Callable[[np.ndarray], np.ndarray]
    metric_source: str  # "u" or "rho_entropy"

    def model(self) -> FluxModel:
        return self.model_factory()


def _riemann_1d(left, right):
    model = Euler(1, GAMMA)
    uL = model.conservative(np.array(left[0]), np.array([left[1]]), np.array(left[2]))
    uR = model.conservative(np.array(right[0]), np.array([right[1]]), np.array(right[2]))

    def f(x):
        x = np.atleast_2d(x)
        return np.where((x[:, 0] <= 0.0)[:, None], uL, uR)

    return f


def burgers1d_initial(x):
    x = np.atleast_2d(x)
    return (0.5 + np.sin(np.pi * x[:, 0]))[:, None]


def burgers2d_initial(x):
    x = np.atleast_2d(x)
    return np.exp(-BURGERS2D_C * (x[:, 0] ** 2 + x[:, 1] ** 2))[:, None]


def riemann2d_primitive(x):
    """Quadrant data as ``(rho, u, v, P)`` rows."""
    x = np.atleast_2d(x)
    east = x[:, 0] >= 0.5
    north = x[:, 1] >= 0.5
    out = np.empty((len(x), 4))
    out[east & north] = RIEMANN2D_QUADRANTS["ne"]
    out[~east & north] = RIEMANN2D_QUADRANTS["nw"]
    out[~east & ~north] = RIEMANN2D_QUADRANTS["sw"]
    out[east & ~north] = RIEMANN2D_QUADRANTS["se"]
    return out


def riemann2d_initial(x):
    w = riemann2d_primitive(x)
    return Euler(2, GAMMA).conservative(w[:, 0], w[:, 1:3], w[:, 3])


PROBLEMS = {
    "burgers1d": Problem("burgers1d", 1, (0.0,), (2.0,), (True,), 1.0, (100,),
                         lambda: Burgers(1), burgers1d_initial, "u"),
    "sod": Problem("sod", 1, (-5.0,), (5.0,), (False,), 2.0, (200,),
                   lambda: Euler(1, GAMMA), _riemann_1d(SOD_LEFT, SOD_RIGHT), "rho_entropy"),
    "lax": Problem("lax", 1, (-5.0,), (5.0,), (False,), 1.3, (200,),
                   lambda: Euler(1, GAMMA), _riemann_1d(LAX_LEFT, LAX_RIGHT), "rho_entropy"),
    "burgers2d": Problem("burgers2d", 2, (0.0, 0.0), (2.0, 2.0), (True, True), 2.0, (30, 30),
                         lambda: Burgers(2), burgers2d_initial, "u"),
    "riemann2d": Problem("riemann2d", 2, (0.0, 0.0), (1.0, 1.0), (False, False), 0.25, (50, 50),
                         lambda: Euler(2, GAMMA), riemann2d_initial, "rho_entropy"),
}


def get_problem(name: str) -> Problem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def initial_condition(name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Conservative initial state ``f(x[P, d]) -> (P, m)`` of a named problem."""
    return get_problem(name).initial


def initial_primitive(name: str, x) -> np.ndarray:
    """Primitive initial state; identical to the conservative one for scalar problems."""
    prob = get_problem(name)
    U = prob.initial(np.atleast_2d(np.asarray(x, dtype=float)))
    model = prob.model()
    if isinstance(model, Euler):
        rho, vel, P = model.primitive(U)
        return np.column_stack([rho, vel, P])
    return U


def advection_velocity(kind: str):
    """Velocity fields for the linear-advection stability laboratory."""
    if kind == "constant1d":
        return LinearAdvection([1.0])
    if kind == "varying1d":
        return LinearAdvection(lambda x, t: 1.0 + 0.5 * np.sin(2 * np.pi * x) * np.sin(t), d=1)
    if kind == "constant2d":
        return LinearAdvection([1.0, 0.5])
    if kind == "peaked1d":
        # strongly varying local wave speed with distinct maxima
        return LinearAdvection(lambda x, t: 0.2 + 3.0 * np.exp(-200 * (x - 0.3) ** 2)
                               + 1.5 * np.exp(-200 * (x - 0.7) ** 2), d=1)
    raise ValueError(f"unknown advection field {kind!r}")
