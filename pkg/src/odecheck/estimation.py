"""Parameter estimation: trajectory-matching least squares and the two-step
collocation (gradient matching) estimator, both driven by a box-constrained
Levenberg-Marquardt loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateWindow, NoConvergence, OdeCheckError
from .ode import DEFAULT_SUBSTEPS, OdeModel, solve_at
from .smoothing import ObservationSet, coverage_bandwidth, local_linear, local_quadratic_deriv, rot_bandwidth

# Stand-in box for random starts on unbounded coordinates.
_UNBOUNDED_START_RANGE = 10.0


@dataclass(frozen=True)
class LmSettings:
    max_iter: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    damping: float = 1e-3

    def __post_init__(self):
        if self.max_iter < 1 or min(self.grad_tol, self.step_tol, self.damping) <= 0:
            raise ValueError("LM tolerances must be positive")


@dataclass(frozen=True)
class NlsConfig:
    lm: LmSettings = field(default_factory=LmSettings)
    multistart: int = 8
    seed: int = 0
    substeps: int = DEFAULT_SUBSTEPS
    rel_step: float = 1e-6

    def __post_init__(self):
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")


@dataclass(frozen=True)
class TwoStepConfig:
    component: int = 0
    m: Optional[int] = None
    h_e: Optional[object] = None  # scalar or one value per state component
    delta_w: float = 0.1
    lm: LmSettings = field(default_factory=LmSettings)
    multistart: int = 1
    seed: int = 0
    rel_step: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.delta_w < 0.5:
            raise ValueError("delta_w must lie in (0, 0.5)")
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")


@dataclass
class LmResult:
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: list
    unidentified: np.ndarray


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    method: str
    objective: float
    iterations: int
    converged: bool
    start_used: int
    unidentified: tuple = ()
    component: Optional[int] = None
    bandwidths: dict = field(default_factory=dict)
    m: Optional[int] = None

    def to_dict(self):
        return {
            "kind": "estimation",
            "theta_hat": [float(v) for v in self.theta_hat],
            "method": self.method,
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "start_used": int(self.start_used),
            "unidentified": [bool(v) for v in self.unidentified],
            "component": self.component,
            "bandwidths": {k: _jsonable(v) for k, v in self.bandwidths.items()},
            "m": self.m,
        }


def _jsonable(v):
    if np.ndim(v) == 0:
        return float(v)
    return [float(x) for x in np.ravel(v)]


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------


def fd_jacobian(fun, theta, bounds, rel_step=1e-6, active=None):
    """Central differences of a vector function; stencils are shifted to stay in the box."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    base = None
    for j in range(theta.size):
        if active is not None and not active[j]:
            cols.append(None)
            continue
        step = rel_step * max(abs(theta[j]), 1.0)
        lo, hi = bounds[j]
        up, dn = theta.copy(), theta.copy()
        up[j] = min(theta[j] + step, hi)
        dn[j] = max(theta[j] - step, lo)
        if up[j] == dn[j]:
            cols.append(None)
            continue
        cols.append((fun(up) - fun(dn)) / (up[j] - dn[j]))
        base = cols[-1]
    if base is None:
        base = fun(theta)
    jac = np.zeros((base.size, theta.size))
    for j, col in enumerate(cols):
        if col is not None:
            jac[:, j] = col
    return jac


def _safe_eval(fun, theta):
    try:
        r = fun(theta)
    except OdeCheckError:
        return None, math.inf
    ss = float(r @ r)
    if not math.isfinite(ss):
        return None, math.inf
    return r, ss


def levenberg_marquardt(fun, theta0, bounds, settings: LmSettings = LmSettings(), rel_step=1e-6, jac=None) -> LmResult:
    """Minimize ``||fun(theta)||^2`` over a box.

    Steps are projected onto the box; damping follows Nielsen's update.
    Coordinates whose Jacobian column is exactly zero at the start are
    held fixed and reported as unidentified.
    """
    bounds = np.asarray(bounds, dtype=float)
    theta = np.clip(np.asarray(theta0, dtype=float), bounds[:, 0], bounds[:, 1])
    if jac is None:
        def jac(th, active=None):
            return fd_jacobian(fun, th, bounds, rel_step, active)

    r, ss = _safe_eval(fun, theta)
    if r is None:
        raise NoConvergence("objective not finite at the starting point")
    history = [ss]
    J = jac(theta)
    unidentified = ~np.any(J != 0.0, axis=0)
    active = ~unidentified
    mu = None
    nu = 2.0
    converged = False
    it = 0
    while it < settings.max_iter:
        g = J.T @ r
        if np.max(np.abs(g[active]), initial=0.0) <= settings.grad_tol or not np.any(active):
            converged = True
            break
        A = J[:, active].T @ J[:, active]
        diag = np.maximum(np.diag(A), 1e-12 * max(1.0, float(np.max(np.diag(A)))))
        if mu is None:
            mu = settings.damping * float(np.max(diag))
        it += 1
        try:
            delta = np.linalg.solve(A + mu * np.diag(diag), -g[active])
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            continue
        cand = theta.copy()
        cand[active] = np.clip(theta[active] + delta, bounds[active, 0], bounds[active, 1])
        step = cand - theta
        step_norm = float(np.linalg.norm(step))
        if step_norm <= settings.step_tol * (float(np.linalg.norm(theta)) + settings.step_tol):
            converged = True
            break
        r_new, ss_new = _safe_eval(fun, cand)
        sa = step[active]
        predicted = -(2.0 * sa @ g[active] + sa @ A @ sa)
        rho = (ss - ss_new) / predicted if predicted > 0 else -1.0
        if r_new is not None and ss_new < ss and rho > 0:
            theta, r, ss = cand, r_new, ss_new
            history.append(ss)
            J = jac(theta, active)
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
        else:
            mu *= nu
            nu *= 2.0
            if not math.isfinite(mu) or mu > 1e300:
                break
    return LmResult(theta=theta, objective=ss, iterations=it, converged=converged, history=history, unidentified=unidentified)


def _start_points(theta_init, bounds, count, seed):
    bounds = np.asarray(bounds, dtype=float)
    lo = np.where(np.isfinite(bounds[:, 0]), bounds[:, 0], -_UNBOUNDED_START_RANGE)
    hi = np.where(np.isfinite(bounds[:, 1]), bounds[:, 1], _UNBOUNDED_START_RANGE)
    starts = []
    if theta_init is not None:
        starts.append(np.asarray(theta_init, dtype=float))
    rng = np.random.default_rng(seed)
    while len(starts) < count:
        starts.append(rng.uniform(lo, hi))
    return starts


def _multistart(fun, bounds, starts, settings, rel_step, method, **extra) -> EstimationResult:
    best = None
    best_idx = -1
    for idx, start in enumerate(starts):
        try:
            res = levenberg_marquardt(fun, start, bounds, settings, rel_step)
        except OdeCheckError:
            continue
        if best is None or res.objective < best.objective:
            best, best_idx = res, idx
    if best is None:
        raise NoConvergence(f"{method}: every start failed")
    return EstimationResult(
        theta_hat=best.theta,
        method=method,
        objective=best.objective,
        iterations=best.iterations,
        converged=best.converged,
        start_used=best_idx,
        unidentified=tuple(bool(v) for v in best.unidentified),
        **extra,
    )


# ---------------------------------------------------------------------------
# Trajectory matching
# ---------------------------------------------------------------------------


def trajectory_values(model: OdeModel, theta, x0, times, span, substeps=DEFAULT_SUBSTEPS):
    """F(t_i; theta) for observation times, using the closed form when the model has one."""
    t0 = span[0]
    if model.analytic_solution is not None:
        return np.asarray(model.analytic_solution(np.asarray(times) - t0, np.asarray(theta), np.asarray(x0)))
    return solve_at(model, theta, x0, times, t0=t0, substeps=substeps, span=span)


def nls_estimate(model: OdeModel, data: ObservationSet, x0, config: NlsConfig = NlsConfig(), theta_init=None) -> EstimationResult:
    """Least-squares fit of the solved trajectory to all components of ``data``."""
    if data.p != model.p:
        raise ValueError(f"data has {data.p} components, model expects {model.p}")
    x0 = np.asarray(x0, dtype=float)
    y = data.values

    def fun(theta):
        return (y - trajectory_values(model, theta, x0, data.times, data.span, config.substeps)).ravel()

    starts = _start_points(theta_init, model.theta_bounds, config.multistart, config.seed)
    return _multistart(fun, model.theta_bounds, starts, config.lm, config.rel_step, "NLS")


# ---------------------------------------------------------------------------
# Two-step collocation
# ---------------------------------------------------------------------------


def weight_function(t, span, delta_w=0.1):
    """Trapezoidal weight: 1 on the interior, linear ramps to 0 at both ends."""
    t0, t1 = span
    ramp = delta_w * (t1 - t0)
    t = np.asarray(t, dtype=float)
    w = np.clip(np.minimum(t - t0, t1 - t) / ramp, 0.0, 1.0)
    return float(w) if w.ndim == 0 else w


def default_m(n):
    return 2 * int(math.floor(n ** (4.0 / 3.0) + 1e-9))


def default_h_e(data: ObservationSet):
    n = data.n
    factor = n ** (-2.0 / 15.0) * math.sqrt(math.log(n))
    floor = coverage_bandwidth(data.times, 3, data.span)
    return np.array([max(rot_bandwidth(data, j) * factor, floor) for j in range(data.p)])


def two_step_estimate(
    model: OdeModel,
    data: ObservationSet,
    config: TwoStepConfig = TwoStepConfig(),
    theta_init=None,
    x_curve: Optional[Callable] = None,
    dx_curve: Optional[Callable] = None,
) -> EstimationResult:
    """Gradient matching for component ``config.component``.

    ``x_curve``/``dx_curve`` replace the smoothed state and derivative
    (``t -> (m, p)`` and ``t -> (m,)``), e.g. with the true curves.
    """
    k = config.component
    if not 0 <= k < model.p:
        raise IndexError(f"component {k} out of range")
    n = data.n
    m = config.m if config.m is not None else default_m(n)
    if config.h_e is None:
        h_e = default_h_e(data) if x_curve is None or dx_curve is None else np.zeros(data.p)
    else:
        h_e = np.broadcast_to(np.asarray(config.h_e, dtype=float), (data.p,)).copy()
    t0, t1 = data.span
    edge = float(np.max(h_e))
    if t0 + edge >= t1 - edge:
        raise DegenerateWindow("bandwidth too large for the observation span", t=t0)
    grid = np.linspace(t0 + edge, t1 - edge, m)
    if x_curve is None:
        x_curve = local_linear(data, tuple(h_e))
    if dx_curve is None:
        dx_curve = local_quadratic_deriv(data, h_e[k], components=(k,))
    xs = np.asarray(x_curve(grid), dtype=float).reshape(m, model.p)
    dxk = np.asarray(dx_curve(grid), dtype=float).reshape(m)
    sw = np.sqrt(weight_function(grid, data.span, config.delta_w) / m)

    def fun(theta):
        return sw * (dxk - model.f_batch(grid, xs, theta)[:, k])

    starts = _start_points(theta_init, model.theta_bounds, config.multistart, config.seed)
    res = _multistart(
        fun,
        model.theta_bounds,
        starts,
        config.lm,
        config.rel_step,
        "TwoStep",
        component=k,
        bandwidths={"h_e": h_e},
        m=m,
    )
    return res


def two_step_objective(model, grid, xs, dxk, weights, k, theta):
    """(1/m) sum w_j [X'_k - f_k]^2; exposed for gradient checks."""
    r = dxk - model.f_batch(grid, xs, theta)[:, k]
    return float(np.sum(weights * r * r) / grid.size)
