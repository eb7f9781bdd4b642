"""Parametric ODE systems, fixed-step RK4 solving and parameter Jacobians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from ._accel import is_compiled
from .errors import GridError, NonFiniteState, OutOfRange

DEFAULT_SUBSTEPS = 2048


@dataclass(frozen=True)
class OdeModel:
    """A right-hand side ``f(t, x, theta)`` with its dimensions.

    ``rhs`` has the signature ``rhs(t, x, theta, consts) -> ndarray(p)``
    where ``consts`` is a float array of fixed constants (time scale,
    disturbance switches, forcing tables). Passing a numba-compiled ``rhs``
    enables the compiled integrator.
    """

    name: str
    p: int
    q: int
    rhs: Callable
    consts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_bounds: Optional[np.ndarray] = None
    param_names: tuple = ()
    state_names: tuple = ()
    analytic_solution: Optional[Callable] = None

    def __post_init__(self):
        if self.p < 1 or self.q < 0:
            raise ValueError("p must be positive and q non-negative")
        object.__setattr__(self, "consts", np.ascontiguousarray(self.consts, dtype=float))
        if self.theta_bounds is None:
            bounds = np.tile([-np.inf, np.inf], (self.q, 1))
        else:
            bounds = np.asarray(self.theta_bounds, dtype=float).reshape(self.q, 2)
        object.__setattr__(self, "theta_bounds", bounds)
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"theta{j + 1}" for j in range(self.q)))
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"X{j + 1}" for j in range(self.p)))

    def f(self, t, x, theta):
        return self.rhs(float(t), np.asarray(x, dtype=float), np.asarray(theta, dtype=float), self.consts)

    def f_batch(self, ts, xs, theta):
        """Evaluate the right-hand side at many (t, x) pairs; returns (m, p)."""
        ts = np.ascontiguousarray(ts, dtype=float)
        xs = np.ascontiguousarray(xs, dtype=float)
        theta = np.ascontiguousarray(theta, dtype=float)
        if is_compiled(self.rhs):
            return kernels.rhs_batch(self.rhs, ts, xs, theta, self.consts)
        out = np.empty(xs.shape)
        for i in range(ts.shape[0]):
            out[i] = self.rhs(ts[i], xs[i], theta, self.consts)
        return out

    def with_consts(self, consts, name=None) -> "OdeModel":
        return OdeModel(
            name=name or self.name,
            p=self.p,
            q=self.q,
            rhs=self.rhs,
            consts=np.asarray(consts, dtype=float),
            theta_bounds=self.theta_bounds,
            param_names=self.param_names,
            state_names=self.state_names,
            analytic_solution=self.analytic_solution,
        )


@dataclass(frozen=True)
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    theta: np.ndarray
    x0: np.ndarray
    max_step: float
    interpolation: str = "hermite"

    @property
    def p(self):
        return self.states.shape[1]

    def __call__(self, t):
        return trajectory_at(self, t)


def _check_grid(grid):
    grid = np.ascontiguousarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise GridError("grid must be a non-empty 1-d array")
    if not np.all(np.isfinite(grid)):
        raise GridError("grid contains non-finite values")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise GridError("grid must be strictly increasing")
    return grid


def rk4_solve(model: OdeModel, theta, x0, grid, max_step=None, substeps=DEFAULT_SUBSTEPS) -> Trajectory:
    """Classic RK4 through ``grid``; each interval is cut into equal substeps.

    The substep never exceeds ``max_step`` (default ``span / substeps``).
    """
    grid = _check_grid(grid)
    theta = np.ascontiguousarray(theta, dtype=float).reshape(model.q)
    x0 = np.ascontiguousarray(x0, dtype=float).reshape(model.p)
    span = grid[-1] - grid[0]
    if max_step is None:
        max_step = span / substeps if span > 0 else 1.0
    if is_compiled(model.rhs):
        states, derivs, ok = kernels.rk4_grid(model.rhs, theta, model.consts, x0, grid, float(max_step))
    else:
        states, derivs, ok = _rk4_python(model, theta, x0, grid, float(max_step))
    if not ok:
        raise NonFiniteState(f"{model.name}: non-finite state for theta={theta.tolist()}")
    return Trajectory(grid=grid, states=states, derivs=derivs, theta=theta, x0=x0, max_step=float(max_step))


def _rk4_python(model, theta, x0, grid, max_step):
    # uncompiled rhs (closures, perturbed systems) runs the same loop in Python
    rk4 = getattr(kernels.rk4_grid, "py_func", kernels.rk4_grid)
    return rk4(model.rhs, theta, model.consts, x0, grid, max_step)


def trajectory_at(traj: Trajectory, t):
    """State at time(s) ``t`` by cubic Hermite interpolation; exact on the grid."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    g = traj.grid
    if np.any(t < g[0]) or np.any(t > g[-1]):
        raise OutOfRange(f"t outside [{g[0]}, {g[-1]}]")
    if g.size == 1:
        out = np.repeat(traj.states[:1], t.size, axis=0)
        return out[0] if scalar else out
    k = np.clip(np.searchsorted(g, t, side="right") - 1, 0, g.size - 2)
    dt = g[k + 1] - g[k]
    s = ((t - g[k]) / dt)[:, None]
    y0, y1 = traj.states[k], traj.states[k + 1]
    if traj.interpolation == "linear":
        out = (1 - s) * y0 + s * y1
    else:
        d0, d1 = traj.derivs[k] * dt[:, None], traj.derivs[k + 1] * dt[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1
    exact = t == g[np.minimum(k + 1, g.size - 1)]
    out[exact] = traj.states[k[exact] + 1]
    exact0 = t == g[k]
    out[exact0] = traj.states[k[exact0]]
    return out[0] if scalar else out


def solve_at(model: OdeModel, theta, x0, times, t0=None, substeps=DEFAULT_SUBSTEPS, span=None):
    """States at (possibly unsorted, repeated) ``times`` starting from ``x0`` at ``t0``.

    The integration grid is the distinct times with ``t0`` prepended; the
    substep bound is ``(T - t0) / substeps`` where ``span=(t0, T)`` if given.
    """
    times = np.asarray(times, dtype=float)
    if t0 is None:
        t0 = float(times.min()) if span is None else span[0]
    uniq, inverse = np.unique(times, return_inverse=True)
    if uniq[0] < t0:
        raise OutOfRange("observation time before the initial time")
    grid = uniq if uniq[0] == t0 else np.concatenate([[t0], uniq])
    offset = 0 if uniq[0] == t0 else 1
    length = (span[1] - span[0]) if span is not None else (grid[-1] - grid[0])
    max_step = length / substeps if length > 0 else 1.0
    traj = rk4_solve(model, theta, x0, grid, max_step=max_step)
    return traj.states[inverse + offset]


def jacobian_theta_fd(model: OdeModel, theta, x0, grid, rel_step=1e-6, max_step=None):
    """Central-difference ``dF/dtheta`` on ``grid``; shape ``(len(grid), p, q)``."""
    grid = _check_grid(grid)
    theta = np.asarray(theta, dtype=float).reshape(model.q)
    jac = np.empty((grid.size, model.p, model.q))
    for j in range(model.q):
        step = rel_step * max(abs(theta[j]), 1.0)
        up = theta.copy()
        dn = theta.copy()
        up[j] += step
        dn[j] -= step
        f_up = rk4_solve(model, up, x0, grid, max_step=max_step).states
        f_dn = rk4_solve(model, dn, x0, grid, max_step=max_step).states
        jac[:, :, j] = (f_up - f_dn) / (2 * step)
    return jac
