"""Kernel smoothers on one-dimensional time: density, Nadaraya-Watson parts,
local linear and local quadratic fits, and plug-in bandwidths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from . import kernels
from .errors import BandwidthError, DegenerateWindow, InsufficientData

# Bandwidth guard rails as fractions of the observation span.
BANDWIDTH_CLAMP = (0.01, 0.25)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "epanechnikov"
    support: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.kind != "epanechnikov":
            raise ValueError(f"unsupported kernel {self.kind!r}")

    def __call__(self, u):
        return epanechnikov(u)

    def deriv(self, u):
        return epanechnikov_deriv(u)

    @property
    def mu2(self):
        return 0.2

    @property
    def roughness(self):
        return 0.6


def epanechnikov(u):
    """K(u) = 0.75 (1 - u^2) on [-1, 1], zero elsewhere."""
    out = kernels.epa_array(u)
    return float(out) if np.ndim(u) == 0 else out


def epanechnikov_deriv(u):
    out = kernels.epa_deriv_array(u)
    return float(out) if np.ndim(u) == 0 else out


@dataclass(frozen=True)
class ObservationSet:
    """Noisy samples ``(t_i, Y_i)`` sorted by time on the span ``(t0, T)``."""

    times: np.ndarray
    values: np.ndarray
    span: Optional[tuple] = None
    names: tuple = ()

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=float).reshape(-1)
        y = np.asarray(self.values, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        y = np.ascontiguousarray(y)
        if y.shape[0] != t.size:
            raise ValueError("times and values have different lengths")
        if t.size == 0:
            raise InsufficientData("empty observation set")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError("observations must be finite")
        if np.any(np.diff(t) < 0):
            raise ValueError("times must be sorted ascending; use ObservationSet.from_unsorted")
        span = self.span if self.span is not None else (float(t[0]), float(t[-1]))
        span = (float(span[0]), float(span[1]))
        if t[0] < span[0] or t[-1] > span[1]:
            raise ValueError("observation times fall outside the span")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "span", span)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"y{k + 1}" for k in range(y.shape[1])))

    @classmethod
    def from_unsorted(cls, times, values, span=None, names=()):
        times = np.asarray(times, dtype=float)
        order = np.argsort(times, kind="stable")
        values = np.asarray(values, dtype=float)
        return cls(times[order], values[order], span=span, names=names)

    @property
    def n(self):
        return self.times.size

    @property
    def p(self):
        return self.values.shape[1]

    @property
    def length(self):
        return self.span[1] - self.span[0]

    def component(self, k):
        return self.values[:, k]

    def subset(self, index):
        index = np.sort(np.asarray(index))
        return ObservationSet(self.times[index], self.values[index], span=self.span, names=self.names)


@dataclass(frozen=True)
class SmoothedCurve:
    """A nonparametric estimate evaluable at arbitrary times.

    Calling the curve returns shape ``(m,)`` for a single component and
    ``(m, c)`` otherwise; scalar input gives scalar / ``(c,)`` output.
    """

    kind: str
    h: tuple
    components: tuple
    evaluator: Callable = field(repr=False)
    span: tuple = (0.0, 1.0)

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.evaluator(t)
        if out.ndim == 2 and out.shape[1] == 1 and len(self.components) == 1:
            out = out[:, 0]
        return out[0] if scalar else out


def _check_h(h):
    h = float(h)
    if not h > 0 or not math.isfinite(h):
        raise BandwidthError(f"bandwidth must be positive, got {h}")
    return h


def _per_component(h, components):
    if np.ndim(h) == 0:
        return tuple(_check_h(h) for _ in components)
    h = tuple(_check_h(v) for v in h)
    if len(h) != len(components):
        raise BandwidthError("one bandwidth per component required")
    return h


def kde(data: ObservationSet, h) -> SmoothedCurve:
    """p_hat(t) = (1/n) sum (1/h) K((t - t_i)/h)."""
    h = _check_h(h)
    ti = data.times

    def ev(t):
        return kernels.epa_array((t[:, None] - ti[None, :]) / h).sum(axis=1) / (ti.size * h)

    return SmoothedCurve("KDE", (h,), (0,), ev, data.span)


def kde_deriv(data: ObservationSet, h) -> SmoothedCurve:
    """p_hat'(t) = (1/n) sum (1/h^2) K'((t - t_i)/h)."""
    h = _check_h(h)
    ti = data.times

    def ev(t):
        return kernels.epa_deriv_array((t[:, None] - ti[None, :]) / h).sum(axis=1) / (ti.size * h * h)

    return SmoothedCurve("KDE-derivative", (h,), (0,), ev, data.span)


def nw_parts(data: ObservationSet, h, k: int):
    """Un-normalized Nadaraya-Watson numerator for component ``k`` and its derivative."""
    h = _check_h(h)
    if not 0 <= k < data.p:
        raise IndexError(f"component {k} out of range")
    ti = data.times
    yk = data.values[:, k]
    n = ti.size

    def num(t):
        return kernels.epa_array((t[:, None] - ti[None, :]) / h) @ yk / (n * h)

    def num_d(t):
        return kernels.epa_deriv_array((t[:, None] - ti[None, :]) / h) @ yk / (n * h * h)

    return (
        SmoothedCurve("NW-numerator", (h,), (k,), num, data.span),
        SmoothedCurve("NW-numerator-derivative", (h,), (k,), num_d, data.span),
    )


def _moments(data, t, h, comps, degree):
    y = np.ascontiguousarray(data.values[:, list(comps)])
    return kernels.local_moments(np.ascontiguousarray(t, dtype=float), data.times, y, h, degree)


def _raise_degenerate(t, distinct, need):
    bad = np.flatnonzero(distinct < need)
    if bad.size:
        where = float(t[bad[0]])
        raise DegenerateWindow(
            f"fewer than {need} distinct design points within the kernel window at t={where:.6g}", t=where
        )


def _group_by_bandwidth(hs):
    groups = {}
    for pos, h in enumerate(hs):
        groups.setdefault(h, []).append(pos)
    return groups


def local_linear(data: ObservationSet, h, components: Optional[Sequence[int]] = None) -> SmoothedCurve:
    """Local linear estimate of X in the ratio form N_n(t) / M_n(t).

    ``h`` is a scalar or one bandwidth per requested component.
    """
    comps = tuple(range(data.p)) if components is None else tuple(components)
    hs = _per_component(h, comps)
    groups = _group_by_bandwidth(hs)

    def ev(t):
        out = np.empty((t.size, len(comps)))
        for hv, pos in groups.items():
            S, T, distinct = _moments(data, t, hv, [comps[i] for i in pos], 1)
            _raise_degenerate(t, distinct, 2)
            num = S[:, 2, None] * T[:, 0, :] - S[:, 1, None] * T[:, 1, :]
            den = S[:, 2] * S[:, 0] - S[:, 1] ** 2
            out[:, pos] = num / den[:, None]
        return out

    return SmoothedCurve("local-linear", hs, comps, ev, data.span)


def local_linear_wls(data: ObservationSet, h, t, k: int = 0):
    """Reference local linear fit by explicit weighted least squares (slow)."""
    h = _check_h(h)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t.size)
    for a, ta in enumerate(t):
        w = kernels.epa_array((data.times - ta) / h)
        keep = w > 0
        if np.unique(data.times[keep]).size < 2:
            raise DegenerateWindow("singular local design", t=float(ta))
        sw = np.sqrt(w[keep])
        design = np.column_stack([np.ones(keep.sum()), data.times[keep] - ta])
        coef, *_ = np.linalg.lstsq(design * sw[:, None], data.values[keep, k] * sw, rcond=None)
        out[a] = coef[0]
    return out


def local_quadratic_deriv(data: ObservationSet, h, components: Optional[Sequence[int]] = None) -> SmoothedCurve:
    """First-derivative coefficient of a kernel-weighted local quadratic fit."""
    comps = tuple(range(data.p)) if components is None else tuple(components)
    hs = _per_component(h, comps)
    groups = _group_by_bandwidth(hs)

    def ev(t):
        out = np.empty((t.size, len(comps)))
        for hv, pos in groups.items():
            S, T, distinct = _moments(data, t, hv, [comps[i] for i in pos], 2)
            _raise_degenerate(t, distinct, 3)
            A = np.stack(
                [S[:, 0:3], S[:, 1:4], S[:, 2:5]],
                axis=1,
            )
            beta = np.linalg.solve(A, T)  # (m, 3, c)
            out[:, pos] = beta[:, 1, :] / hv
        return out

    return SmoothedCurve("local-quadratic-derivative", hs, comps, ev, data.span)


def _rot_constant(deriv_order, degree):
    """Fan-Gijbels constant C_{nu,p}(K) for the Epanechnikov kernel."""
    if (deriv_order, degree) == (0, 1):
        roughness, moment = 0.6, 0.2  # int K^2, int u^2 K
    elif (deriv_order, degree) == (1, 2):
        # equivalent kernel u K(u) / mu2
        roughness = (9.0 / 105.0) / 0.2**2
        moment = (3.0 / 35.0) / 0.2
    else:
        raise ValueError("unsupported (derivative, degree) pair")
    pp = degree + 1
    num = math.factorial(pp) ** 2 * (2 * deriv_order + 1) * roughness
    den = 2 * (pp - deriv_order) * moment**2
    return (num / den) ** (1.0 / (2 * degree + 3))


def coverage_bandwidth(times, need: int, span=None) -> float:
    """Smallest h for which every t in the span has ``need`` distinct design
    points strictly inside (t - h, t + h); returned with a small margin.

    The need-th nearest-point distance is piecewise linear in t, so its
    maximum sits at a span end, a design point, or a midpoint of two design
    points at most ``need`` apart in rank.
    """
    d = np.unique(np.asarray(times, dtype=float))
    if d.size < need:
        raise DegenerateWindow(f"only {d.size} distinct design points, need {need}")
    lo, hi = (d[0], d[-1]) if span is None else span
    cand = [np.array([lo, hi]), d]
    for gap in range(1, need + 1):
        cand.append(0.5 * (d[gap:] + d[:-gap]))
    cand = np.concatenate(cand)
    dist = np.abs(cand[:, None] - d[None, :])
    radius = float(np.partition(dist, need - 1, axis=1)[:, need - 1].max())
    return radius * (1.0 + 1e-6) + 1e-12


def rot_bandwidth(
    data: ObservationSet, k: int, for_derivative: bool = False, clamp=BANDWIDTH_CLAMP, cover: bool = True
) -> float:
    """Rule-of-thumb plug-in bandwidth from a global quartic pilot fit.

    Local linear (``for_derivative=False``):
    ``h = C_{0,1} [sigma^2 L / sum_i m''(t_i)^2]^{1/5}``; the derivative
    analogue uses the local quadratic constant, ``m'''`` and the 1/7 power.
    The result is clamped to ``clamp * L`` with ``L`` the span length and,
    when ``cover`` is set, raised to the coverage radius of the design so
    that sparse designs (few distinct times) still give non-degenerate fits.
    """
    n = data.n
    if n < 20:
        raise InsufficientData(f"rot_bandwidth needs n >= 20, got {n}")
    t = data.times
    y = data.values[:, k]
    length = data.length
    pilot = Polynomial.fit(t, y, 4)
    resid = y - pilot(t)
    sigma2 = float(resid @ resid) / (n - 5)
    if for_derivative:
        curv = pilot.deriv(3)(t)
        const, power = _rot_constant(1, 2), 1.0 / 7.0
    else:
        curv = pilot.deriv(2)(t)
        const, power = _rot_constant(0, 1), 1.0 / 5.0
    denom = float(curv @ curv)
    lo, hi = clamp[0] * length, clamp[1] * length
    if denom <= 0.0 or not math.isfinite(denom):
        h = hi
    else:
        h = min(max(const * (sigma2 * length / denom) ** power, lo), hi)
    if cover:
        h = max(h, coverage_bandwidth(t, 3 if for_derivative else 2, data.span))
    return float(h)
