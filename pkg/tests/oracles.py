"""Naive full-enumeration oracles written straight from the definitions."""

import itertools
import math

import numpy as np


def K(u):
    return 0.75 * (1 - u * u) if abs(u) < 1 else 0.0


def dK(u):
    return -1.5 * u if abs(u) < 1 else 0.0


def naive_vn(e, t, h):
    n, p = e.shape
    out = np.zeros(p)
    for i in range(n):
        for j in range(n):
            if i != j:
                out += K((t[i] - t[j]) / h) / h * e[i] * e[j]
    return out / (n * (n - 1))


def naive_sigma(e, t, h):
    n, p = e.shape
    out = np.zeros((p, p))
    for i in range(n):
        for j in range(n):
            if i != j:
                v = e[i] * e[j]
                out += K((t[i] - t[j]) / h) ** 2 / h * np.outer(v, v)
    return 2 * out / (n * (n - 1))


def naive_vnf(t, y, f, h):
    n = len(t)
    total = 0.0
    for d in range(n):
        inner = 0.0
        for i in range(n):
            for j in range(n):
                ki, kj = K((t[d] - t[i]) / h), K((t[d] - t[j]) / h)
                inner += dK((t[d] - t[i]) / h) * kj * (y[i] - y[j]) / h**3 - ki * kj * f[d] / h**2
        total += (inner / (n - 1) ** 2) ** 2
    return total / (n * h * h)


def naive_w_prime(a, b, c, d, s, t, y, f, h):
    ka, kb, kc, kd = (K((t[s] - t[x]) / h) for x in (a, b, c, d))
    left = dK((t[s] - t[c]) / h) * (y[c] - y[a]) / h**3 - kc * f[s] / h**2
    right = dK((t[s] - t[d]) / h) * (y[d] - y[b]) / h**3 - kd * f[s] / h**2
    return ka * kb * left * right / h**2


def naive_what(s, quads, t, y, f, h):
    acc = 0.0
    for quad in quads:
        args = (*quad, s)
        acc += math.fsum(naive_w_prime(*perm, t, y, f, h) for perm in itertools.permutations(args)) / 120
    return acc / len(quads)
