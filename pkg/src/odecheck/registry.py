"""Benchmark systems: the linear disturbance family, FitzHugh-Nagumo,
Lotka-Volterra and the CD8+ T-cell kinetics model.

Every system is written on normalized time ``t`` in [0, 1] with the
right-hand side multiplied by the time scale ``tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ._accel import njit
from .ode import OdeModel

DATA_DIR = Path(__file__).parent / "data"

LINEAR_VARIANTS = {"H11": 1, "H12": 2, "H13": 3}


# ---------------------------------------------------------------------------
# Right-hand sides. consts layouts are documented per function.
# ---------------------------------------------------------------------------


@njit
def linear_rhs(t, x, theta, c):
    # c = [tau, alpha, beta, variant]
    tau, alpha, beta, variant = c[0], c[1], c[2], c[3]
    a, b = theta[0], theta[1]
    u1 = a * x[0]
    u2 = a * x[0] + b * x[1]
    out = np.empty(2)
    if variant == 1.0:
        d1 = 0.4 * alpha * math.cos(u1)
        d2 = 0.4 * beta * math.cos(u2)
    elif variant == 2.0:
        d1 = 0.1 * alpha * u1**3
        d2 = 0.1 * beta * u2**3
    else:
        d1 = 2.0 * alpha * math.exp(u1)
        d2 = 5.0 * beta * math.exp(u2)
    out[0] = tau * (u1 + d1)
    out[1] = tau * (u2 + d2)
    return out


@njit
def fhn_rhs(t, x, theta, c):
    # c = [tau, alpha, beta]
    tau, alpha, beta = c[0], c[1], c[2]
    a, b, cc = theta[0], theta[1], theta[2]
    out = np.empty(2)
    out[0] = tau * (a * (x[0] + x[1] - x[0] ** 3 / 3.0) + alpha * x[0] * x[1])
    out[1] = tau * (-(x[0] + b * x[1] - cc) / a + 0.4 * beta * x[0] * x[1])
    return out


@njit
def lv_rhs(t, x, theta, c):
    # c = [tau, alpha, beta]
    tau, alpha, beta = c[0], c[1], c[2]
    out = np.empty(2)
    out[0] = tau * (theta[0] * x[0] + theta[1] * x[0] * x[1] + 0.8 * alpha * x[1])
    out[1] = tau * (theta[2] * x[1] + theta[3] * x[0] * x[1] + 4.0 * beta * x[0])
    return out


@njit
def _interp_clamped(s, tf, vf):
    n = tf.shape[0]
    if s <= tf[0]:
        return vf[0]
    if s >= tf[n - 1]:
        return vf[n - 1]
    k = np.searchsorted(tf, s, side="right") - 1
    w = (s - tf[k]) / (tf[k + 1] - tf[k])
    return (1.0 - w) * vf[k] + w * vf[k + 1]


@njit
def tcell_rhs(t, x, theta, c):
    # c = [tau, delta_m, delta_s, gamma_ml, delay, nf, tf[0:nf], vf[0:nf]]
    tau, delta_m, delta_s, gamma_ml, delay = c[0], c[1], c[2], c[3], c[4]
    nf = int(c[5])
    tf = c[6 : 6 + nf]
    vf = c[6 + nf : 6 + 2 * nf]
    rho_m, rho_s, delta_l, gamma_ms, gamma_sl = theta[0], theta[1], theta[2], theta[3], theta[4]
    d = _interp_clamped(t - delay, tf, vf)
    out = np.empty(3)
    out[0] = tau * (rho_m * d - delta_m - gamma_ms - gamma_ml)
    out[1] = tau * (rho_s * d - delta_s - gamma_sl + gamma_ms * math.exp(x[0] - x[1]))
    out[2] = tau * (gamma_ml * math.exp(x[0] - x[2]) + gamma_sl * math.exp(x[1] - x[2]) - delta_l)
    return out


def linear_null_solution(t, theta, x0, tau=10.0):
    """Closed form for the undisturbed linear system started at t = 0."""
    t = np.asarray(t, dtype=float)
    a, b = tau * theta[0], tau * theta[1]
    x1 = x0[0] * np.exp(a * t)
    if abs(a - b) > 1e-12:
        x2 = x0[1] * np.exp(b * t) + theta[0] * tau * x0[0] * (np.exp(a * t) - np.exp(b * t)) / (a - b)
    else:
        x2 = x0[1] * np.exp(b * t) + tau * theta[0] * x0[0] * t * np.exp(a * t)
    return np.stack([x1, x2], axis=-1)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegistryEntry:
    """A benchmark system with its true parameters and study defaults."""

    key: str
    description: str
    model: OdeModel
    theta0: np.ndarray
    x0: np.ndarray
    tau: float
    gm_c: float
    make_truth: Callable = field(repr=False, default=None)
    aliases: tuple = ()

    def truth(self, alpha=0.0, beta=0.0, variant=None, tau=None) -> OdeModel:
        """The data-generating system with disturbance switches applied."""
        return self.make_truth(alpha, beta, variant, self.tau if tau is None else tau)

    def null_model(self, tau=None) -> OdeModel:
        return self.truth(0.0, 0.0, None, tau)


# Initial state for the linear family; not stated with the study design.
LINEAR_X0 = np.array([15.0, 15.0])
LINEAR_THETA0 = np.array([-0.06, -0.24])

FHN_THETA0 = np.array([3.0, 0.2, 0.34])
FHN_X0 = np.array([1.0, -1.0])

LV_THETA0 = np.array([1.0, -1.5, -1.5, 2.0])
LV_X0 = np.array([1.0, 2.0])

# CD8+ T-cell model: known constants (delta_m, delta_s, gamma_ml) and the
# delay of 3.08 days expressed in model time units (10 days per unit).
TCELL_KNOWN = {"delta_m": 0.0, "delta_s": 0.0, "gamma_ml": 0.0, "delay_days": 3.08}
TCELL_TIME_UNIT_DAYS = 10.0
TCELL_THETA0 = np.array([0.6, 0.5, 0.4, 0.15, 0.2])
TCELL_X0 = np.array([8.0, 9.0, 7.0])


def _linear_model(alpha, beta, variant, tau):
    code = LINEAR_VARIANTS[variant or "H11"]
    sol = None
    if alpha == 0.0 and beta == 0.0:
        def sol(t, theta, x0, _tau=tau):
            return linear_null_solution(t, theta, x0, _tau)
    return OdeModel(
        name=f"study1-{variant or 'H11'}" if (alpha or beta) else "study1",
        p=2,
        q=2,
        rhs=linear_rhs,
        consts=np.array([tau, alpha, beta, float(code)]),
        theta_bounds=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        param_names=("a", "b"),
        state_names=("X1", "X2"),
        analytic_solution=sol,
    )


def _fhn_model(alpha, beta, variant, tau):
    return OdeModel(
        name="fhn",
        p=2,
        q=3,
        rhs=fhn_rhs,
        consts=np.array([tau, alpha, beta]),
        theta_bounds=np.array([[0.5, 6.0], [0.0, 1.0], [0.0, 1.0]]),
        param_names=("a", "b", "c"),
        state_names=("V", "R"),
    )


def _lv_model(alpha, beta, variant, tau):
    return OdeModel(
        name="lotka-volterra",
        p=2,
        q=4,
        rhs=lv_rhs,
        consts=np.array([tau, alpha, beta]),
        theta_bounds=np.array([[0.0, 3.0], [-3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]]),
        param_names=("a", "b", "c", "d"),
        state_names=("prey", "predator"),
    )


def tcell_model(forcing_t=None, forcing_v=None, tau=10.0) -> OdeModel:
    """T-cell model with the dendritic-cell forcing curve baked into consts."""
    if forcing_t is None:
        forcing_t, forcing_v = load_forcing(DATA_DIR / "tcell_forcing.csv")
    tf = np.asarray(forcing_t, dtype=float)
    vf = np.asarray(forcing_v, dtype=float)
    order = np.argsort(tf, kind="stable")
    tf, vf = tf[order], vf[order]
    consts = np.concatenate(
        [
            [
                tau,
                TCELL_KNOWN["delta_m"],
                TCELL_KNOWN["delta_s"],
                TCELL_KNOWN["gamma_ml"],
                TCELL_KNOWN["delay_days"] / TCELL_TIME_UNIT_DAYS,
                float(tf.size),
            ],
            tf,
            vf,
        ]
    )
    return OdeModel(
        name="tcell",
        p=3,
        q=5,
        rhs=tcell_rhs,
        consts=consts,
        theta_bounds=np.array([[0.0, 5.0]] * 5),
        param_names=("rho_m", "rho_s", "delta_l", "gamma_ms", "gamma_sl"),
        state_names=("logTm", "logTs", "logTl"),
    )


def load_forcing(path):
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return raw[:, 0], raw[:, 1]


def _tcell_truth(alpha, beta, variant, tau):
    return tcell_model(tau=tau)


_ENTRIES = {
    "study1": RegistryEntry(
        key="study1",
        description="linear two-state system with cos/cubic/exp disturbances (variants H11, H12, H13)",
        model=_linear_model(0.0, 0.0, None, 10.0),
        theta0=LINEAR_THETA0,
        x0=LINEAR_X0,
        tau=10.0,
        gm_c=1.0,
        make_truth=_linear_model,
        aliases=("linear", "1"),
    ),
    "fhn": RegistryEntry(
        key="fhn",
        description="FitzHugh-Nagumo with product-term disturbances",
        model=_fhn_model(0.0, 0.0, None, 10.0),
        theta0=FHN_THETA0,
        x0=FHN_X0,
        tau=10.0,
        gm_c=0.2,
        make_truth=_fhn_model,
        aliases=("fitzhugh-nagumo", "2"),
    ),
    "lotka-volterra": RegistryEntry(
        key="lotka-volterra",
        description="Lotka-Volterra predator-prey with linear cross disturbances",
        model=_lv_model(0.0, 0.0, None, 10.0),
        theta0=LV_THETA0,
        x0=LV_X0,
        tau=10.0,
        gm_c=0.2,
        make_truth=_lv_model,
        aliases=("lv", "3"),
    ),
    "tcell": RegistryEntry(
        key="tcell",
        description="CD8+ T-cell kinetics across lymph node, spleen and lung (log scale), delayed DC forcing",
        model=None,
        theta0=TCELL_THETA0,
        x0=TCELL_X0,
        tau=10.0,
        gm_c=0.2,
        make_truth=_tcell_truth,
        aliases=("cd8",),
    ),
}


def keys():
    return list(_ENTRIES)


def get(key: str) -> RegistryEntry:
    key = key.lower()
    if key in _ENTRIES:
        entry = _ENTRIES[key]
    else:
        for entry in _ENTRIES.values():
            if key in entry.aliases:
                break
        else:
            raise KeyError(f"unknown model {key!r}; known: {', '.join(_ENTRIES)}")
    if entry.model is None:
        entry = RegistryEntry(**{**entry.__dict__, "model": entry.make_truth(0.0, 0.0, None, entry.tau)})
    return entry


def study_key(study: int) -> str:
    return {1: "study1", 2: "fhn", 3: "lotka-volterra"}[int(study)]


def default_gm_c(model_name: str) -> float:
    """Bias-term gain: 1 for the linear family, 0.2 for nonlinear systems."""
    return 1.0 if model_name.startswith("study1") else 0.2
