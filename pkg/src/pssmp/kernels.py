"""Trapezoidal convolution and Volterra kernels.

Each kernel exists as a numba loop (``*_numba``) and a numpy version
(``*_numpy``); the unsuffixed name is bound according to
:mod:`pssmp._accel`.  All grids are uniform with node 0 at x = 0.

Trapezoid rule used throughout::

    (f * g)(x_k) ~ h [ f_0 g_k / 2 + sum_{0<j<k} f_j g_{k-j} + f_k g_0 / 2 ]
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "trap_convolve",
    "volterra_solve",
    "trap_convolve_numba",
    "trap_convolve_numpy",
    "volterra_solve_numba",
    "volterra_solve_numpy",
]


@njit()
def trap_convolve_numba(f, g, h):
    n = f.shape[0]
    out = np.zeros(n)
    for k in range(1, n):
        s = 0.5 * (f[0] * g[k] + f[k] * g[0])
        for j in range(1, k):
            s += f[j] * g[k - j]
        out[k] = h * s
    return out


def trap_convolve_numpy(f, g, h):
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n = f.shape[0]
    full = np.convolve(f, g)[:n]
    out = h * (full - 0.5 * (f[0] * g + f * g[0]))
    out[0] = 0.0
    return out


@njit()
def volterra_solve_numba(forcing, kernel, weight, q, h):
    """Solve ``F_k = forcing_k + q (K * (weight F))(x_k)`` by forward substitution."""
    n = forcing.shape[0]
    F = np.empty(n)
    wF = np.empty(n)
    F[0] = forcing[0]
    wF[0] = weight[0] * F[0]
    for k in range(1, n):
        s = 0.5 * kernel[k] * wF[0]
        for j in range(1, k):
            s += kernel[k - j] * wF[j]
        diag = 1.0 - 0.5 * q * h * kernel[0] * weight[k]
        F[k] = (forcing[k] + q * h * s) / diag
        wF[k] = weight[k] * F[k]
    return F


def volterra_solve_numpy(forcing, kernel, weight, q, h):
    forcing = np.asarray(forcing, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    weight = np.asarray(weight, dtype=float)
    n = forcing.shape[0]
    F = np.empty(n)
    wF = np.empty(n)
    F[0] = forcing[0]
    wF[0] = weight[0] * F[0]
    krev = kernel[::-1].copy()
    for k in range(1, n):
        # kernel[k-j], j = 0..k-1
        seg = krev[n - 1 - k : n - 1]
        s = seg @ wF[:k] - 0.5 * kernel[k] * wF[0]
        diag = 1.0 - 0.5 * q * h * kernel[0] * weight[k]
        F[k] = (forcing[k] + q * h * s) / diag
        wF[k] = weight[k] * F[k]
    return F


def min_diagonal(kernel0: float, weight_max: float, q: float, h: float) -> float:
    return 1.0 - 0.5 * q * h * kernel0 * weight_max


# np.convolve beats the compiled double loop (benchmarks/bench_backends.py),
# so the numba twin of the convolution is kept only as a cross-check
trap_convolve = trap_convolve_numpy
volterra_solve = volterra_solve_numba if USE_NUMBA else volterra_solve_numpy
