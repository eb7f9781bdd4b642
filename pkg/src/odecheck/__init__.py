"""Goodness-of-fit tests for parametric ODE models observed with noise."""

from ._accel import backend_name
from .errors import OdeCheckError
from .ode import OdeModel, Trajectory, jacobian_theta_fd, rk4_solve, solve_at, trajectory_at
from .smoothing import KernelSpec, ObservationSet, SmoothedCurve

__version__ = "0.1.0"

__all__ = [
    "KernelSpec",
    "ObservationSet",
    "OdeCheckError",
    "OdeModel",
    "SmoothedCurve",
    "Trajectory",
    "backend_name",
    "jacobian_theta_fd",
    "rk4_solve",
    "solve_at",
    "trajectory_at",
]
