"""Specification tests for ODE models.

TM tests the whole system through trajectory-matching residuals; IM and GM
test a single component through integral-matching pseudo-residuals and a
gradient-matching V-statistic with sample splitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate, linalg, special

from . import kernels
from .errors import InsufficientData, QuadratureError, SingularSigma, ZeroDenominator, ZeroVariance
from .estimation import (
    NlsConfig,
    TwoStepConfig,
    nls_estimate,
    trajectory_values,
    two_step_estimate,
)
from .ode import OdeModel
from .smoothing import ObservationSet, local_linear, local_quadratic_deriv, rot_bandwidth

SIGMA_COND_MAX = 1e12
QUADRUPLE_RULES = ("random", "consecutive")


# ---------------------------------------------------------------------------
# Reports and configuration
# ---------------------------------------------------------------------------


@dataclass
class TestReport:
    __test__ = False  # keep pytest from collecting this class

    test: str
    statistic: float
    reference: str
    p_value: float
    level: float
    reject: bool
    component: object
    bandwidths: dict = field(default_factory=dict)
    theta_hat: Optional[np.ndarray] = None
    intermediates: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self, include_arrays=False):
        inter = {}
        for key, val in self.intermediates.items():
            if isinstance(val, np.ndarray) and val.ndim >= 1 and val.size > 16 and not include_arrays:
                continue
            inter[key] = _plain(val)
        return {
            "test": self.test,
            "statistic": float(self.statistic),
            "reference": self.reference,
            "p_value": float(self.p_value),
            "level": float(self.level),
            "reject": bool(self.reject),
            "component": self.component,
            "bandwidths": {k: _plain(v) for k, v in self.bandwidths.items()},
            "theta_hat": None if self.theta_hat is None else _plain(self.theta_hat),
            "intermediates": inter,
            "config": {k: _plain(v) for k, v in self.config.items()},
        }


def _plain(val):
    if isinstance(val, np.ndarray):
        return val.tolist()
    if isinstance(val, (np.floating, np.integer, np.bool_)):
        return val.item()
    if isinstance(val, (list, tuple)):
        return [_plain(v) for v in val]
    if isinstance(val, dict):
        return {k: _plain(v) for k, v in val.items()}
    return val


@dataclass(frozen=True)
class ImConfig:
    h: Optional[float] = None
    h0: Optional[object] = None  # scalar or one value per component
    adjusted: bool = True
    n_l: int = 8
    restrict: Optional[tuple] = (0.1, 0.9)  # fractions of the span; None means the whole span
    mu: bool = True
    quad_panels: int = 64

    def __post_init__(self):
        if self.n_l < 1:
            raise ValueError("n_l must be >= 1")
        if self.restrict is not None and not (0.0 <= self.restrict[0] < self.restrict[1] <= 1.0):
            raise ValueError("restrict must be fractions 0 <= a < b <= 1")
        if self.quad_panels < 1:
            raise ValueError("quad_panels must be positive")


@dataclass(frozen=True)
class GmConfig:
    c: Optional[float] = None
    h: Optional[float] = None
    h0: Optional[object] = None
    h1: Optional[float] = None
    split_seed: int = 0
    shat_panels: int = 512
    swap_halves: bool = False  # exchange V roles, Sigma stays on half 1
    quadruples: str = "random"  # or "consecutive"
    projection_scale: float = 25.0  # squared U-statistic order; 1.0 gives the bare projection variance

    def __post_init__(self):
        if self.c is not None and not self.c > 0:
            raise ValueError("c must be positive")
        if self.quadruples not in QUADRUPLE_RULES:
            raise ValueError(f"quadruples must be one of {QUADRUPLE_RULES}")
        if not self.projection_scale > 0:
            raise ValueError("projection_scale must be positive")


def mu_factor(n):
    return 1.0 + 3.0 / math.sqrt(n)


def p_value(statistic, reference="normal", df=None):
    """Upper-tail probability under chi-square(df) or the standard normal."""
    x = float(statistic)
    if reference == "chi2":
        if df is None or df <= 0:
            raise ValueError("chi2 reference needs df > 0")
        if x <= 0.0:
            return 1.0
        return float(special.gammaincc(df / 2.0, x / 2.0))
    if reference == "normal":
        return float(0.5 * special.erfc(x / math.sqrt(2.0)))
    raise ValueError(f"unknown reference {reference!r}")


def _sorted(t, e):
    order = np.argsort(t, kind="stable")
    return np.ascontiguousarray(t[order]), np.ascontiguousarray(e[order])


# ---------------------------------------------------------------------------
# Trajectory matching
# ---------------------------------------------------------------------------


def residuals_tm(data: ObservationSet, model: OdeModel, theta_hat, x0, substeps=2048):
    """e_i = Y_i - F(t_i; theta_hat)."""
    return data.values - trajectory_values(model, theta_hat, x0, data.times, data.span, substeps)


def vn_statistic(e, t, h):
    """V_nk = 1/(n(n-1)) sum_{i != j} (1/h) K((t_i - t_j)/h) e_ik e_jk."""
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    n = e.shape[0]
    if n < 2:
        raise InsufficientData("need at least two residuals")
    ts, es = _sorted(np.asarray(t, dtype=float), e)
    s, _ = kernels.pair_sums(ts, es, float(h))
    return s / (n * (n - 1) * h)


def sigma_hat_tm(e, t, h):
    """2/(n(n-1)) sum_{i != j} (1/h) K^2 (e_i * e_j)(e_i * e_j)^T."""
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    n = e.shape[0]
    if n < 2:
        raise InsufficientData("need at least two residuals")
    ts, es = _sorted(np.asarray(t, dtype=float), e)
    _, q = kernels.pair_sums(ts, es, float(h))
    sig = 2.0 * q / (n * (n - 1) * h)
    return 0.5 * (sig + sig.T)


def tm_quadratic_form(v, sigma, n, h):
    """n^2 h V^T Sigma^{-1} V with a condition-number guard."""
    sigma = np.atleast_2d(sigma)
    eig = np.linalg.eigvalsh(sigma)
    if eig[0] <= 0.0 or eig[-1] / eig[0] > SIGMA_COND_MAX:
        raise SingularSigma(f"variance matrix is singular or ill-conditioned (eigenvalues {eig.tolist()})")
    sol = linalg.cho_solve(linalg.cho_factor(sigma), v)
    return float(n * n * h * (v @ sol))


def default_tm_h(n, length=1.0):
    return 0.05 * n ** (-2.0 / 5.0) * length


def tm_test(
    data: ObservationSet,
    model: OdeModel,
    x0,
    nls_config: Optional[NlsConfig] = None,
    h: Optional[float] = None,
    theta_hat=None,
    theta_init=None,
    level: float = 0.05,
) -> TestReport:
    """Whole-system trajectory-matching test, chi-square(p) reference."""
    n = data.n
    h = default_tm_h(n, data.length) if h is None else float(h)
    estimation = None
    if theta_hat is None:
        estimation = nls_estimate(model, data, x0, nls_config or NlsConfig(), theta_init=theta_init)
        theta_hat = estimation.theta_hat
    theta_hat = np.asarray(theta_hat, dtype=float)
    e = residuals_tm(data, model, theta_hat, x0)
    v = vn_statistic(e, data.times, h)
    sigma = sigma_hat_tm(e, data.times, h)
    stat = tm_quadratic_form(v, sigma, n, h)
    pv = p_value(stat, "chi2", df=model.p)
    inter = {"V_n": v, "Sigma_hat": sigma, "residuals": e}
    if estimation is not None:
        inter["estimation"] = estimation.to_dict()
    return TestReport(
        test="TM",
        statistic=stat,
        reference=f"chi2({model.p})",
        p_value=pv,
        level=level,
        reject=pv < level,
        component="system",
        bandwidths={"h": h},
        theta_hat=theta_hat,
        intermediates=inter,
        config={"n": n, "x0": np.asarray(x0, dtype=float)},
    )


# ---------------------------------------------------------------------------
# Integral matching
# ---------------------------------------------------------------------------


def default_im_h(n, length=1.0):
    return 0.025 * n ** (-3.0 / 5.0) * math.sqrt(math.log(n)) * length


def default_h0(data: ObservationSet):
    return np.array([rot_bandwidth(data, j) for j in range(data.p)])


def _fk_along(model, theta, k, x_curve):
    theta = np.asarray(theta, dtype=float)

    def integrand(t):
        xs = np.asarray(x_curve(t), dtype=float).reshape(t.size, model.p)
        return model.f_batch(t, xs, theta)[:, k]

    return integrand


def cumulative_integral(integrand, anchor, times, panels=64):
    """int_{anchor}^{t_i} g(t) dt for sorted ``times >= anchor``.

    Composite Simpson with ``panels`` panels between consecutive nodes.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.zeros(0)
    nodes = np.unique(np.concatenate([[anchor], times]))
    a, b = nodes[:-1], nodes[1:]
    ref = np.linspace(0.0, 1.0, 2 * panels + 1)
    pts = a[:, None] + (b - a)[:, None] * ref[None, :]
    vals = integrand(pts.ravel()).reshape(pts.shape)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError("integrand is not finite")
    seg = integrate.simpson(vals, dx=ref[1], axis=1) * (b - a)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum[np.searchsorted(nodes, times)]


def _subintervals(span, restrict, n_l):
    t0, t1 = span
    lo, hi = (0.0, 1.0) if restrict is None else restrict
    edges = t0 + (t1 - t0) * np.linspace(lo, hi, n_l + 1)
    return edges


def im_pseudoresiduals(
    data: ObservationSet,
    model: OdeModel,
    theta_hat,
    k: int,
    h0=None,
    restrict=None,
    n_l: int = 1,
    quad_panels: int = 64,
    x_curve: Optional[Callable] = None,
):
    """Integral-matching pseudo-residuals for component ``k``.

    Observations are grouped into ``n_l`` half-open sub-intervals of the
    (optionally restricted) span; within each, the residual is anchored at
    the smoothed state at the sub-interval's left end. Observations outside
    every sub-interval get residual 0. Returns ``(residuals, labels)`` where
    ``labels`` is the sub-interval index or -1.
    """
    if x_curve is None:
        h0 = default_h0(data) if h0 is None else h0
        x_curve = local_linear(data, h0)
    edges = _subintervals(data.span, restrict, n_l)
    integrand = _fk_along(model, theta_hat, k, x_curve)
    t = data.times
    y = data.values[:, k]
    e = np.zeros(data.n)
    labels = np.full(data.n, -1, dtype=np.int64)
    for l in range(n_l):
        a, b = edges[l], edges[l + 1]
        if l == n_l - 1 and restrict is None:
            inside = (t >= a) & (t <= b)
        else:
            inside = (t >= a) & (t < b)
        if not np.any(inside):
            continue
        anchor_state = np.asarray(x_curve(np.array([a])), dtype=float).reshape(model.p)[k]
        e[inside] = y[inside] - anchor_state - cumulative_integral(integrand, a, t[inside], quad_panels)
        labels[inside] = l
    return e, labels


def im_ratio(e, t, h):
    """sum_{i != j} K e_i e_j / sqrt(sum_{i != j} 2 K^2 e_i^2 e_j^2)."""
    ts, es = _sorted(np.asarray(t, dtype=float), np.asarray(e, dtype=float).reshape(-1, 1))
    s, q = kernels.pair_sums(ts, es, float(h))
    if not q[0, 0] > 0.0:
        raise ZeroDenominator("no kernel-overlapping pair with non-zero residuals")
    return float(s[0] / math.sqrt(2.0 * q[0, 0]))


def im_test(
    data: ObservationSet,
    model: OdeModel,
    k: int,
    config: ImConfig = ImConfig(),
    theta_hat=None,
    two_step_config: Optional[TwoStepConfig] = None,
    theta_init=None,
    level: float = 0.05,
) -> TestReport:
    """Integral-matching test for component ``k`` (plain or interval-adjusted)."""
    n = data.n
    h = default_im_h(n, data.length) if config.h is None else float(config.h)
    h0 = default_h0(data) if config.h0 is None else np.broadcast_to(np.asarray(config.h0, dtype=float), (data.p,))
    estimation = None
    if theta_hat is None:
        cfg = replace(two_step_config or TwoStepConfig(), component=k)
        estimation = two_step_estimate(model, data, cfg, theta_init=theta_init)
        theta_hat = estimation.theta_hat
    theta_hat = np.asarray(theta_hat, dtype=float)
    x_curve = local_linear(data, tuple(h0))
    mu = mu_factor(n) if config.mu else 1.0
    inter = {}
    if config.adjusted:
        e, labels = im_pseudoresiduals(
            data, model, theta_hat, k, restrict=config.restrict, n_l=config.n_l,
            quad_panels=config.quad_panels, x_curve=x_curve,
        )
        parts = []
        used = []
        for l in range(config.n_l):
            mask = labels == l
            if mask.sum() < 2:
                continue
            try:
                parts.append(im_ratio(e[mask], data.times[mask], h))
                used.append(l)
            except ZeroDenominator:
                continue
        if not parts:
            raise ZeroDenominator("no sub-interval has a usable pair")
        im_star = float(np.sum(parts) / math.sqrt(len(parts)))
        stat = im_star / mu
        inter.update({"IM_l": np.array(parts), "intervals_used": used, "IM_star": im_star})
    else:
        e, _ = im_pseudoresiduals(
            data, model, theta_hat, k, restrict=None, n_l=1, quad_panels=config.quad_panels, x_curve=x_curve
        )
        raw = im_ratio(e, data.times, h)
        stat = raw / mu
        inter["IM_raw"] = raw
    inter["mu_n"] = mu
    inter["residuals"] = e
    if estimation is not None:
        inter["estimation"] = estimation.to_dict()
    pv = p_value(stat, "normal")
    return TestReport(
        test="IM",
        statistic=stat,
        reference="normal-upper",
        p_value=pv,
        level=level,
        reject=pv < level,
        component=k + 1,
        bandwidths={"h": h, "h0": h0.copy()},
        theta_hat=theta_hat,
        intermediates=inter,
        config={
            "n": n,
            "adjusted": config.adjusted,
            "n_l": config.n_l,
            "restrict": config.restrict,
            "quad_panels": config.quad_panels,
        },
    )


# ---------------------------------------------------------------------------
# Gradient matching
# ---------------------------------------------------------------------------


def default_gm_h(n, length=1.0):
    return n ** (-1.0 / 29.0) * length


def gm_vnf_values(t, y, f, h):
    """V^f from sorted times, one response column and f_k at each t_d."""
    t = np.ascontiguousarray(t, dtype=float)
    n = t.size
    if n < 5:
        raise InsufficientData("gradient-matching V needs at least 5 points")
    return float(kernels.gm_vnf_sum(t, np.ascontiguousarray(y, dtype=float), np.ascontiguousarray(f, dtype=float), float(h)))


def gm_vnf(data: ObservationSet, model: OdeModel, theta_hat, k: int, h, x_curve: Callable) -> float:
    """V^f on ``data`` (usually one half) with f_k evaluated along ``x_curve``."""
    f = _fk_along(model, theta_hat, k, x_curve)(data.times)
    return gm_vnf_values(data.times, data.values[:, k], f, h)


def gm_shat(
    model: OdeModel,
    theta_hat,
    k: int,
    h: float,
    domain: tuple,
    x_curve: Callable,
    dx_curve: Callable,
    panels: int = 512,
) -> float:
    """(1/h^2) int_domain [f_k(t, X_hat(t); theta) - X_hat'_k(t)]^2 dt by composite Simpson."""
    a, b = domain
    if not b > a:
        raise QuadratureError("empty integration domain")
    grid = np.linspace(a, b, 2 * (panels // 2) + 1 if panels % 2 else panels + 1)
    diff = _fk_along(model, theta_hat, k, x_curve)(grid) - np.asarray(dx_curve(grid), dtype=float).reshape(grid.size)
    vals = diff * diff
    if not np.all(np.isfinite(vals)):
        raise QuadratureError("integrand is not finite")
    return float(integrate.simpson(vals, x=grid) / (h * h))


def quadruple_blocks(n, rule="random", seed=0):
    """For each s, floor((n-1)/4) disjoint quadruples drawn from the other indices.

    ``random`` shuffles the other indices with a seeded generator before
    cutting them into blocks; ``consecutive`` cuts them in sorted order.
    """
    nq = (n - 1) // 4
    if nq < 2:
        raise InsufficientData("need at least 9 points for the projection variance")
    if rule not in QUADRUPLE_RULES:
        raise ValueError(f"unknown quadruple rule {rule!r}")
    rng = np.random.default_rng(seed) if rule == "random" else None
    blocks = np.empty((n, nq, 4), dtype=np.int64)
    idx = np.arange(n)
    for s in range(n):
        others = np.concatenate([idx[:s], idx[s + 1 :]])
        if rng is not None:
            others = rng.permutation(others)
        blocks[s] = others[: 4 * nq].reshape(nq, 4)
    return blocks


def gm_what_values(t, y, f, h, blocks):
    t = np.ascontiguousarray(t, dtype=float)
    return kernels.gm_what(
        t,
        np.ascontiguousarray(y, dtype=float),
        np.ascontiguousarray(f, dtype=float),
        float(h),
        np.ascontiguousarray(blocks, dtype=np.int64),
        kernels.PERMUTATIONS_5,
    )


def gm_variance_values(t, y, f, h, blocks=None, scale=25.0):
    """``scale`` times the sample variance of the projection estimates w_hat(z_s)."""
    if blocks is None:
        blocks = quadruple_blocks(np.size(t))
    w = gm_what_values(t, y, f, h, blocks)
    return float(scale * np.sum((w - w.mean()) ** 2) / (w.size - 1))


def gm_variance(
    data: ObservationSet, model: OdeModel, theta_hat, k: int, h, x_curve: Callable, rule="random", seed=0, scale=25.0
) -> float:
    f = _fk_along(model, theta_hat, k, x_curve)(data.times)
    blocks = quadruple_blocks(data.n, rule, seed)
    return gm_variance_values(data.times, data.values[:, k], f, h, blocks, scale)


def gm_combine(v1, v2, s_hat, sigma, n_tilde, c):
    if not sigma > 0.0:
        raise ZeroVariance("projection variance is zero")
    return math.sqrt(n_tilde) * (v1 - v2 + c * s_hat) / math.sqrt(2.0 * sigma)


def split_halves(n, seed):
    perm = np.random.default_rng(seed).permutation(n)
    n_tilde = n // 2
    return np.sort(perm[:n_tilde]), np.sort(perm[n_tilde:])


def gm_test(
    data: ObservationSet,
    model: OdeModel,
    k: int,
    config: GmConfig = GmConfig(),
    theta_hat=None,
    two_step_config: Optional[TwoStepConfig] = None,
    theta_init=None,
    level: float = 0.05,
) -> TestReport:
    """Gradient-matching test for component ``k`` with a seeded random split."""
    from .registry import default_gm_c

    n = data.n
    if n < 20:
        raise InsufficientData(f"gradient-matching test needs n >= 20, got {n}")
    c = default_gm_c(model.name) if config.c is None else float(config.c)
    h = default_gm_h(n, data.length) if config.h is None else float(config.h)
    h0 = default_h0(data) if config.h0 is None else np.broadcast_to(np.asarray(config.h0, dtype=float), (data.p,))
    h1 = rot_bandwidth(data, k, for_derivative=True) if config.h1 is None else float(config.h1)
    estimation = None
    if theta_hat is None:
        cfg = replace(two_step_config or TwoStepConfig(), component=k)
        estimation = two_step_estimate(model, data, cfg, theta_init=theta_init)
        theta_hat = estimation.theta_hat
    theta_hat = np.asarray(theta_hat, dtype=float)

    x_curve = local_linear(data, tuple(h0))
    dx_curve = local_quadratic_deriv(data, h1, components=(k,))
    edge = max(float(np.max(h0)), h1)
    s_hat = gm_shat(model, theta_hat, k, h, (data.span[0] + edge, data.span[1] - edge), x_curve, dx_curve, config.shat_panels)

    f_all = _fk_along(model, theta_hat, k, x_curve)(data.times)
    i1, i2 = split_halves(n, config.split_seed)
    y = data.values[:, k]
    v1 = gm_vnf_values(data.times[i1], y[i1], f_all[i1], h)
    v2 = gm_vnf_values(data.times[i2], y[i2], f_all[i2], h)
    blocks = quadruple_blocks(i1.size, config.quadruples, [config.split_seed, 1])
    sigma = gm_variance_values(data.times[i1], y[i1], f_all[i1], h, blocks, config.projection_scale)
    n_tilde = i1.size
    if config.swap_halves:
        stat = gm_combine(v2, v1, s_hat, sigma, n_tilde, c)
    else:
        stat = gm_combine(v1, v2, s_hat, sigma, n_tilde, c)
    pv = p_value(stat, "normal")
    inter = {
        "V1": v1,
        "V2": v2,
        "S_hat": s_hat,
        "Sigma_hat": sigma,
        "n_tilde": n_tilde,
        "split_seed": config.split_seed,
        "sigma_half": 1,
    }
    if estimation is not None:
        inter["estimation"] = estimation.to_dict()
    return TestReport(
        test="GM",
        statistic=stat,
        reference="normal-upper",
        p_value=pv,
        level=level,
        reject=pv < level,
        component=k + 1,
        bandwidths={"h": h, "h0": h0.copy(), "h1": h1},
        theta_hat=theta_hat,
        intermediates=inter,
        config={
            "n": n,
            "c": c,
            "split_seed": config.split_seed,
            "shat_panels": config.shat_panels,
            "swap_halves": config.swap_halves,
            "quadruples": config.quadruples,
            "projection_scale": config.projection_scale,
        },
    )
