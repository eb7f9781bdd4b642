"""Hot numeric kernels.

Each kernel exists twice: a loop form (``*_loops``) compiled with numba when
available, and a vectorized numpy form (``*_numpy``). The public alias picks
one according to :mod:`odecheck._accel`. Both forms are importable so tests
and the benchmark can compare them directly.
"""

import itertools
import math

import numpy as np

from ._accel import USE_NUMBA, njit

# All 120 orderings of five argument slots, used by the symmetrized
# order-5 kernel of the gradient-matching variance estimate.
PERMUTATIONS_5 = np.array(list(itertools.permutations(range(5))), dtype=np.int64)


# ---------------------------------------------------------------------------
# Epanechnikov kernel
# ---------------------------------------------------------------------------


@njit
def _epa(u):
    if -1.0 < u < 1.0:
        return 0.75 * (1.0 - u * u)
    return 0.0


@njit
def _epa_deriv(u):
    if -1.0 < u < 1.0:
        return -1.5 * u
    return 0.0


def epa_array(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)


def epa_deriv_array(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, -1.5 * u, 0.0)


# ---------------------------------------------------------------------------
# Fixed-step RK4
# ---------------------------------------------------------------------------


@njit(cache=False)
def rk4_grid(rhs, theta, consts, x0, grid, max_step):
    """Integrate between consecutive grid points with equal substeps.

    Returns ``(states, derivs, ok)``; ``derivs`` holds the right-hand side at
    each stored state (used for Hermite dense output). ``ok`` is False as
    soon as a stage evaluation is non-finite.
    """
    n = grid.shape[0]
    p = x0.shape[0]
    states = np.empty((n, p))
    derivs = np.empty((n, p))
    x = x0.copy()
    states[0] = x
    k1 = rhs(grid[0], x, theta, consts)
    derivs[0] = k1
    for j in range(p):
        if not math.isfinite(k1[j]):
            return states, derivs, False
    for i in range(n - 1):
        t = grid[i]
        span = grid[i + 1] - t
        nsub = int(math.ceil(span / max_step - 1e-9))
        if nsub < 1:
            nsub = 1
        dt = span / nsub
        for s in range(nsub):
            ts = t + s * dt
            k1 = rhs(ts, x, theta, consts)
            k2 = rhs(ts + 0.5 * dt, x + 0.5 * dt * k1, theta, consts)
            k3 = rhs(ts + 0.5 * dt, x + 0.5 * dt * k2, theta, consts)
            k4 = rhs(ts + dt, x + dt * k3, theta, consts)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            for j in range(p):
                if not (math.isfinite(x[j]) and math.isfinite(k4[j])):
                    return states, derivs, False
        states[i + 1] = x
        d = rhs(grid[i + 1], x, theta, consts)
        for j in range(p):
            if not math.isfinite(d[j]):
                return states, derivs, False
        derivs[i + 1] = d
    return states, derivs, True


@njit(cache=False)
def rhs_batch(rhs, ts, xs, theta, consts):
    m = ts.shape[0]
    out = np.empty(xs.shape)
    for i in range(m):
        out[i] = rhs(ts[i], xs[i], theta, consts)
    return out


# ---------------------------------------------------------------------------
# Pairwise U-statistic sums (trajectory / integral matching)
# ---------------------------------------------------------------------------


@njit
def pair_sums_loops(t, e, h):
    """Sorted sliding-window pair sums over i != j.

    ``t`` must be sorted ascending. Returns ``(s, q)`` with
    ``s[k] = sum K((t_i-t_j)/h) e_ik e_jk`` and
    ``q[k,l] = sum K^2 (e_ik e_jk)(e_il e_jl)``.
    """
    n, p = e.shape
    s = np.zeros(p)
    q = np.zeros((p, p))
    prod = np.empty(p)
    for i in range(n):
        j = i + 1
        while j < n and t[j] - t[i] < h:
            w = _epa((t[i] - t[j]) / h)
            if w > 0.0:
                for k in range(p):
                    prod[k] = e[i, k] * e[j, k]
                    s[k] += 2.0 * w * prod[k]
                w2 = 2.0 * w * w
                for k in range(p):
                    for l in range(p):
                        q[k, l] += w2 * prod[k] * prod[l]
            j += 1
    return s, q


def pair_sums_numpy(t, e, h):
    t = np.asarray(t, dtype=float)
    e = np.asarray(e, dtype=float)
    w = epa_array((t[:, None] - t[None, :]) / h)
    np.fill_diagonal(w, 0.0)
    s = np.einsum("ij,ik,jk->k", w, e, e)
    prod = e[:, None, :] * e[None, :, :]
    q = np.einsum("ij,ijk,ijl->kl", w * w, prod, prod)
    return s, q


# ---------------------------------------------------------------------------
# Local polynomial moment sums
# ---------------------------------------------------------------------------


@njit
def local_moments_loops(te, t, y, h, degree):
    """Kernel-weighted moments around each evaluation point.

    With ``u_i = (t_i - te)/h`` and weights ``K(u_i)`` this returns
    ``S[:, j] = sum K u^j`` for ``j <= 2*degree``,
    ``T[:, j, :] = sum K u^j y`` for ``j <= degree`` and the number of
    distinct design times carrying positive weight. ``t`` sorted.
    """
    m = te.shape[0]
    n, p = y.shape
    S = np.zeros((m, 2 * degree + 1))
    T = np.zeros((m, degree + 1, p))
    distinct = np.zeros(m, dtype=np.int64)
    for a in range(m):
        lo = np.searchsorted(t, te[a] - h, side="right")
        hi = np.searchsorted(t, te[a] + h, side="left")
        last = np.nan
        for i in range(lo, hi):
            u = (t[i] - te[a]) / h
            w = _epa(u)
            if w <= 0.0:
                continue
            if t[i] != last:
                distinct[a] += 1
                last = t[i]
            uj = w
            for j in range(2 * degree + 1):
                S[a, j] += uj
                if j <= degree:
                    for k in range(p):
                        T[a, j, k] += uj * y[i, k]
                uj *= u
    return S, T, distinct


def local_moments_numpy(te, t, y, h, degree, chunk=2048):
    te = np.asarray(te, dtype=float)
    m = te.shape[0]
    p = y.shape[1]
    S = np.empty((m, 2 * degree + 1))
    T = np.empty((m, degree + 1, p))
    distinct = np.empty(m, dtype=np.int64)
    tu = np.unique(t)
    for start in range(0, m, chunk):
        sl = slice(start, min(m, start + chunk))
        u = (t[None, :] - te[sl, None]) / h
        w = epa_array(u)
        powers = w[:, :, None] * u[:, :, None] ** np.arange(2 * degree + 1)
        S[sl] = powers.sum(axis=1)
        T[sl] = np.einsum("mnj,nk->mjk", powers[:, :, : degree + 1], y)
        distinct[sl] = np.searchsorted(tu, te[sl] + h, side="left") - np.searchsorted(
            tu, te[sl] - h, side="right"
        )
    return S, T, distinct


# ---------------------------------------------------------------------------
# Gradient-matching sums
# ---------------------------------------------------------------------------


@njit
def gm_vnf_loops(t, y, f, h):
    """Windowed evaluation of the gradient-matching V statistic.

    The inner double sum over (i, j) factorizes into products of single
    sums, so each outer point costs one pass over its kernel window.
    Responses are centered at y_d, which leaves Y_i - Y_j unchanged and
    makes constant data give exactly zero.
    """
    n = t.shape[0]
    total = 0.0
    for d in range(n):
        a = 0.0  # sum K'_i (y_i - y_d)
        b = 0.0  # sum K'_i
        c = 0.0  # sum K_j
        dd = 0.0  # sum K_j (y_j - y_d)
        lo = np.searchsorted(t, t[d] - h, side="right")
        hi = np.searchsorted(t, t[d] + h, side="left")
        for i in range(lo, hi):
            u = (t[d] - t[i]) / h
            kd = _epa_deriv(u)
            kk = _epa(u)
            yc = y[i] - y[d]
            a += kd * yc
            b += kd
            c += kk
            dd += kk * yc
        inner = (a * c - b * dd) / h**3 - c * c * f[d] / h**2
        inner /= (n - 1) ** 2
        total += inner * inner
    return total / (n * h * h)


def gm_vnf_numpy(t, y, f, h):
    n = t.shape[0]
    u = (t[:, None] - t[None, :]) / h
    kd = epa_deriv_array(u)
    kk = epa_array(u)
    yc = y[None, :] - y[:, None]
    a = np.sum(kd * yc, axis=1)
    b = kd.sum(axis=1)
    c = kk.sum(axis=1)
    dd = np.sum(kk * yc, axis=1)
    inner = ((a * c - b * dd) / h**3 - c * c * f / h**2) / (n - 1) ** 2
    return float(np.sum(inner * inner) / (n * h * h))


@njit
def _w_prime(ta, tb, tc, td, ts, ya, yb, yc, yd, fs, h):
    ka = _epa((ts - ta) / h)
    kb = _epa((ts - tb) / h)
    if ka == 0.0 or kb == 0.0:
        return 0.0
    left = _epa_deriv((ts - tc) / h) * (yc - ya) / h**3 - _epa((ts - tc) / h) * fs / h**2
    right = _epa_deriv((ts - td) / h) * (yd - yb) / h**3 - _epa((ts - td) / h) * fs / h**2
    return ka * kb * left * right / h**2


@njit
def gm_what_loops(t, y, f, h, blocks, perms):
    """Projection estimates w_hat(z_s) for every s.

    ``blocks[s]`` lists the quadruples (rows of 4 indices) assigned to s.
    """
    n = t.shape[0]
    nq = blocks.shape[1]
    out = np.zeros(n)
    idx = np.empty(5, dtype=np.int64)
    for s in range(n):
        acc = 0.0
        for q in range(nq):
            idx[0] = blocks[s, q, 0]
            idx[1] = blocks[s, q, 1]
            idx[2] = blocks[s, q, 2]
            idx[3] = blocks[s, q, 3]
            idx[4] = s
            sym = 0.0
            for r in range(perms.shape[0]):
                a = idx[perms[r, 0]]
                b = idx[perms[r, 1]]
                c = idx[perms[r, 2]]
                d = idx[perms[r, 3]]
                e = idx[perms[r, 4]]
                sym += _w_prime(t[a], t[b], t[c], t[d], t[e], y[a], y[b], y[c], y[d], f[e], h)
            acc += sym / perms.shape[0]
        out[s] = acc / nq
    return out


def gm_what_numpy(t, y, f, h, blocks, perms):
    n = t.shape[0]
    idx = np.concatenate([blocks, np.broadcast_to(np.arange(n)[:, None, None], blocks.shape[:2] + (1,))], axis=2)
    g = idx[:, :, perms]  # (n, nq, 120, 5)
    ta, tb, tc, td, ts = (t[g[..., k]] for k in range(5))
    ya, yb, yc, yd = (y[g[..., k]] for k in range(4))
    fs = f[g[..., 4]]
    ka = epa_array((ts - ta) / h)
    kb = epa_array((ts - tb) / h)
    left = epa_deriv_array((ts - tc) / h) * (yc - ya) / h**3 - epa_array((ts - tc) / h) * fs / h**2
    right = epa_deriv_array((ts - td) / h) * (yd - yb) / h**3 - epa_array((ts - td) / h) * fs / h**2
    w = ka * kb * left * right / h**2
    return w.mean(axis=2).mean(axis=1)


if USE_NUMBA:
    pair_sums = pair_sums_loops
    local_moments = local_moments_loops
    gm_vnf_sum = gm_vnf_loops
    gm_what = gm_what_loops
else:
    pair_sums = pair_sums_numpy
    local_moments = local_moments_numpy
    gm_vnf_sum = gm_vnf_numpy
    gm_what = gm_what_numpy
