"""Scale functions of the Lamperti-transformed process on a log grid.

Everything is stored as functions of ``x = log y`` on ``[0, x_max]``:

    calW(x) = W^(p)(x) + q (W^(p) * (e^{alpha .} calW))(x)
    calZ(x) = Z^(p,theta)(x) + q (W^(p) * (e^{alpha .} 1_{[0,inf)} calZ))(x)

The discretised (trapezoid) equations are lower triangular and are solved by
forward substitution, which is the fixed point of the monotone iteration; the
iteration itself is available as ``method="iterate"``.  Trapezoid errors
expand in even powers of h, so ``richardson`` levels of extrapolation over
``h, h/2, h/4, ...`` raise the order to ``O(h^{2 + 2 * richardson})``.

x-derivatives come from differentiating the equation,

    calW'(x) = W'(x) + q [ W(0) e^{alpha x} calW(x) + (W' * (e^{alpha .} calW))(x) ],

with the closed-form right derivative W' of W^(p); they are right
derivatives at x = 0 and two-sided elsewhere (no atoms in the Levy measure).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.special import gammaln

from . import kernels
from .errors import NonConvergence, UnsupportedIndexError
from .levy_model import SnlpModel, dpsi, esscher, phi, psi
from .snlp_scale import LogGrid, ScaleClosedForm, convolve, sample, w_q, z_q_theta

__all__ = [
    "PssmpScaleSet",
    "PatieSeries",
    "ResidualReport",
    "LaplaceCheck",
    "DEFAULT_N",
    "build_calW",
    "build_calZ",
    "build_scale_set",
    "derivative_plus",
    "build_patie",
    "eval_patie",
    "log_eval_patie",
    "verify_equivalent_forms",
    "laplace_check_neg_alpha",
    "laplace_series_W",
    "laplace_series_Z",
    "asymptote_infinity",
    "series_tail_bound",
    "dump_scale_csv",
]

DEFAULT_N = 1024
MAX_TERMS = 10_000


# --------------------------------------------------------------------------
# grid solves


def _grid_args(grid, n):
    if isinstance(grid, LogGrid):
        return grid.x_max, grid.n
    if isinstance(grid, tuple):
        return float(grid[0]), int(grid[1])
    return float(grid), int(n)


def _solve_level(Wp: ScaleClosedForm, forcing_cf: ScaleClosedForm, q, alpha, x_max, n, method, tol, max_terms, lead=None):
    """Values and x-derivatives on one level; returns (F, dF, iterations).

    ``method="iterate"`` stops once both the last increment and the analytic
    tail bound of the dropped terms are below ``tol`` times ``sup |F|``.
    """
    x = LogGrid.nodes(x_max, n)
    h = x_max / n
    K = Wp(x)
    Kd = Wp.derivative(x)
    g = forcing_cf(x)
    gd = forcing_cf.derivative(x)
    omega = np.exp(alpha * x)
    iters = 0
    if q == 0:
        F = g.copy()
    elif method == "solve":
        diag = 1.0 - 0.5 * q * h * K[0] * omega.max()
        if diag <= 0.5:
            raise NonConvergence(f"grid too coarse for rate q={q}: refine n (h={h:g})")
        F = kernels.volterra_solve(g, K, omega, float(q), h)
    elif method == "iterate":
        F = g.copy()
        while True:
            iters += 1
            Fn = g + q * kernels.trap_convolve(K, omega * F, h)
            inc = np.max(np.abs(Fn - F))
            F = Fn
            target = tol * max(np.max(np.abs(F)), 1e-300)
            if inc <= target and series_tail_bound(q, alpha, x_max, float(K[-1]), iters, lead) <= target:
                break
            if iters >= max_terms:
                raise NonConvergence(f"monotone iteration not converged after {iters} terms")
    else:
        raise ValueError(f"unknown method {method!r}")
    if q == 0:
        dF = gd.copy()
    else:
        dF = gd + q * (K[0] * omega * F + kernels.trap_convolve(Kd, omega * F, h))
    return F, dF, iters


def _richardson(levels: list[np.ndarray]) -> np.ndarray:
    """Extrapolate coarse-node samples of successively halved grids."""
    T = [lv.copy() for lv in levels]
    for k in range(1, len(T)):
        fac = 4.0**k
        T = [T[i] + (T[i] - T[i - 1]) / (fac - 1.0) for i in range(1, len(T))]
    return T[-1]


def _solve(Wp, forcing_cf, q, alpha, x_max, n, richardson, method, tol, max_terms, lead=None):
    vals, ders, iters = [], [], 0
    for lev in range(richardson + 1):
        m = 2**lev
        F, dF, it = _solve_level(Wp, forcing_cf, q, alpha, x_max, n * m, method, tol, max_terms, lead)
        vals.append(F[::m])
        ders.append(dF[::m])
        iters = max(iters, it)
    return _richardson(vals), _richardson(ders), iters


def series_tail_bound(q: float, alpha: float, x_max: float, w_at_xmax: float, n: int, lead: float | None = None) -> float:
    """Bound on the dropped terms ``sum_{k>n} q^k (x e^{(alpha v 0) x})^k W(x)^{k+1} / k!``.

    With ``lead`` given, ``W(x)^{k+1}`` is replaced by ``lead * W(x)^k`` (the
    calZ series, ``lead = sup Z^(p,theta)`` on [0, x]).
    """
    if q == 0 or w_at_xmax == 0:
        return 0.0
    a = q * x_max * math.exp(max(alpha, 0.0) * x_max) * w_at_xmax
    base = math.log(lead) if lead is not None else math.log(w_at_xmax)
    la = math.log(a)
    k0 = n + 1
    K = k0 + max(200, int(3 * a))
    ks = np.arange(k0, K + 1, dtype=float)
    logt = ks * la + base - gammaln(ks + 1)
    m = logt.max()
    if m > 700:
        return math.inf
    total = float(np.exp(logt).sum())
    # remainder beyond K: ratio a/(k+1) < 1/3 there
    total += math.exp(logt[-1]) * (a / (K + 1)) / (1 - a / (K + 1))
    return total


# --------------------------------------------------------------------------
# result container


@dataclass(frozen=True, eq=False)
class PssmpScaleSet:
    """Grid representations of calW^(q)_{alpha,p}, calZ^(q,theta)_{alpha,p} and derivatives.

    ``gridW.values[k]`` is calW at ``y = e^{x_k}``; ``gridWd`` holds the
    y-derivative there.  The Z fields are ``None`` for a W-only build.
    """

    model: SnlpModel
    q: float
    theta: float
    gridW: LogGrid | None
    gridZ: LogGrid | None
    gridWd: LogGrid | None
    gridZd: LogGrid | None
    trunc_bound: float
    n_terms: int
    richardson: int = 2
    method: str = "solve"
    info: dict = field(default_factory=dict)

    @property
    def x_max(self) -> float:
        g = self.gridW if self.gridW is not None else self.gridZ
        return g.x_max

    @property
    def n(self) -> int:
        g = self.gridW if self.gridW is not None else self.gridZ
        return g.n

    @property
    def x(self) -> np.ndarray:
        g = self.gridW if self.gridW is not None else self.gridZ
        return g.x

    # log-scale derivatives (d/dx of f o exp)
    @cached_property
    def dW_dx(self) -> np.ndarray:
        return self.gridWd.values * np.exp(self.x)

    @cached_property
    def dZ_dx(self) -> np.ndarray:
        return self.gridZd.values * np.exp(self.x)

    @cached_property
    def _Wspline(self):
        return CubicHermiteSpline(self.x, self.gridW.values, self.dW_dx)

    @cached_property
    def _Zspline(self):
        return CubicHermiteSpline(self.x, self.gridZ.values, self.dZ_dx)

    @cached_property
    def _Wdspline(self):
        return CubicSpline(self.x, self.dW_dx)

    @cached_property
    def _Zdspline(self):
        return CubicSpline(self.x, self.dZ_dx)

    def _xs(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise ValueError("y must be positive")
        x = np.log(y)
        if np.any(x > self.x_max * (1 + 1e-12) + 1e-14):
            raise ValueError(f"y beyond the grid (y_max = e^{self.x_max})")
        return y, np.minimum(x, self.x_max)

    def _point(self, spline, x, below, y):
        out = np.where(x >= 0, spline(np.maximum(x, 0.0)), below(y))
        return out if out.ndim else float(out)

    def W(self, y):
        """calW at y; zero on (0, 1)."""
        y, x = self._xs(y)
        return self._point(self._Wspline, x, lambda y: np.zeros_like(y), y)

    def Z(self, y):
        """calZ at y; ``y^theta`` on (0, 1]."""
        y, x = self._xs(y)
        return self._point(self._Zspline, x, lambda y: y**self.theta, y)

    def Wd(self, y):
        y, x = self._xs(y)
        return self._point(self._Wdspline, x, lambda y: np.zeros_like(y), y) / y

    def Zd(self, y):
        y, x = self._xs(y)
        return self._point(self._Zdspline, x, lambda y: self.theta * y**self.theta, y) / y

    def W_log(self, x):
        """calW o exp at log-coordinate x."""
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 0, self._Wspline(np.clip(x, 0.0, self.x_max)), 0.0)
        return out if out.ndim else float(out)

    def Z_log(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 0, self._Zspline(np.clip(x, 0.0, self.x_max)), np.exp(self.theta * np.minimum(x, 0)))
        return out if out.ndim else float(out)

    def end_values(self) -> dict:
        """calW, d/dx calW, calZ, d/dx calZ at x_max (exact grid node)."""
        out = {}
        if self.gridW is not None:
            out["W"] = float(self.gridW.values[-1])
            out["dW"] = float(self.dW_dx[-1])
        if self.gridZ is not None:
            out["Z"] = float(self.gridZ.values[-1])
            out["dZ"] = float(self.dZ_dx[-1])
        return out


# --------------------------------------------------------------------------
# builders


def build_calW(
    model: SnlpModel,
    q: float,
    grid=None,
    *,
    n: int = DEFAULT_N,
    richardson: int = 2,
    method: str = "solve",
    tol: float = 1e-10,
    max_terms: int = MAX_TERMS,
) -> PssmpScaleSet:
    """calW^(q)_{alpha,p} and its derivative on ``[0, x_max]`` in log space."""
    if q < 0:
        raise ValueError("q must be >= 0")
    x_max, n = _grid_args(3.0 if grid is None else grid, n)
    Wp = w_q(model, model.p)
    F, dF, iters = _solve(Wp, Wp, q, model.alpha, x_max, n, richardson, method, tol, max_terms)
    trunc = 0.0
    if method == "iterate":
        trunc = series_tail_bound(q, model.alpha, x_max, float(Wp(x_max)), iters)
    y = np.exp(LogGrid.nodes(x_max, n))
    meta = (("q", q), ("kind", "calW"))
    return PssmpScaleSet(
        model=model,
        q=float(q),
        theta=0.0,
        gridW=LogGrid(x_max, F, meta),
        gridZ=None,
        gridWd=LogGrid(x_max, dF / y, meta),
        gridZd=None,
        trunc_bound=trunc,
        n_terms=iters,
        richardson=richardson,
        method=method,
    )


def build_calZ(
    model: SnlpModel,
    q: float,
    theta: float = 0.0,
    grid=None,
    *,
    n: int = DEFAULT_N,
    richardson: int = 2,
    method: str = "solve",
    tol: float = 1e-10,
    max_terms: int = MAX_TERMS,
) -> PssmpScaleSet:
    """calZ^(q,theta)_{alpha,p} and its derivative; the W fields stay ``None``."""
    if q < 0 or theta < 0:
        raise ValueError("q and theta must be >= 0")
    x_max, n = _grid_args(3.0 if grid is None else grid, n)
    Wp = w_q(model, model.p)
    Zp = z_q_theta(model, model.p, theta)
    lead = float(np.max(np.abs(Zp(LogGrid.nodes(x_max, n))))) * x_max
    F, dF, iters = _solve(Wp, Zp, q, model.alpha, x_max, n, richardson, method, tol, max_terms, lead)
    trunc = 0.0
    if method == "iterate":
        trunc = series_tail_bound(q, model.alpha, x_max, float(Wp(x_max)), iters, lead=lead)
    y = np.exp(LogGrid.nodes(x_max, n))
    meta = (("q", q), ("theta", theta), ("kind", "calZ"))
    return PssmpScaleSet(
        model=model,
        q=float(q),
        theta=float(theta),
        gridW=None,
        gridZ=LogGrid(x_max, F, meta),
        gridWd=None,
        gridZd=LogGrid(x_max, dF / y, meta),
        trunc_bound=trunc,
        n_terms=iters,
        richardson=richardson,
        method=method,
    )


def build_scale_set(
    model: SnlpModel,
    q: float,
    theta: float = 0.0,
    grid=None,
    *,
    n: int = DEFAULT_N,
    richardson: int = 2,
    method: str = "solve",
    tol: float = 1e-10,
    max_terms: int = MAX_TERMS,
) -> PssmpScaleSet:
    """Both calW and calZ (with derivatives) on one grid."""
    kw = dict(n=n, richardson=richardson, method=method, tol=tol, max_terms=max_terms)
    sw = build_calW(model, q, grid, **kw)
    sz = build_calZ(model, q, theta, grid, **kw)
    return PssmpScaleSet(
        model=model,
        q=float(q),
        theta=float(theta),
        gridW=sw.gridW,
        gridZ=sz.gridZ,
        gridWd=sw.gridWd,
        gridZd=sz.gridZd,
        trunc_bound=max(sw.trunc_bound, sz.trunc_bound),
        n_terms=max(sw.n_terms, sz.n_terms),
        richardson=richardson,
        method=method,
    )


def derivative_plus(s: PssmpScaleSet, which: str = "W", method: str = "fd") -> LogGrid:
    """y-derivative of calW (or calZ) at the grid nodes.

    ``method="fd"`` differences the stored values with second-order stencils
    (forward at x = 0, central inside, backward at x_max); ``"exact"`` returns
    the derivative obtained from the differentiated convolution equation.
    """
    grid = s.gridW if which == "W" else s.gridZ
    exact = s.gridWd if which == "W" else s.gridZd
    if grid is None:
        raise ValueError(f"scale set has no {which} part")
    if method == "exact":
        return exact
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    f, h = grid.values, grid.h
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    d[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return grid.with_values(d / grid.y, grid.meta)


# --------------------------------------------------------------------------
# Patie's scale functions (first passage upwards)


@dataclass(frozen=True, eq=False)
class PatieSeries:
    """``I(y) = y^{Phi(p)} sum_k c_k y^{alpha k}``, ``c_k = q^k / prod_{l<=k} (psi(Phi(p) + l alpha) - p)``.

    For ``alpha == 0`` the function is ``y^{Phi(q+p)}`` and ``log_coef`` is ``[0]``.
    """

    model: SnlpModel
    q: float
    exponent: float
    log_coef: np.ndarray

    @property
    def K(self) -> int:
        return self.log_coef.size - 1

    @property
    def coefficients(self) -> np.ndarray:
        return np.exp(self.log_coef)


def build_patie(model: SnlpModel, q: float, K: int | None = None, y_max: float = 1.0) -> PatieSeries:
    """Coefficients of Patie's series, truncated where the next term is below 1e-14 of the sum at ``y_max``."""
    alpha = model.alpha
    if alpha < 0:
        raise UnsupportedIndexError("Patie's scale function is only defined for alpha >= 0")
    if q < 0:
        raise ValueError("q must be >= 0")
    if alpha == 0 or q == 0:
        expo = phi(model, q + model.p) if alpha == 0 else phi(model, model.p)
        return PatieSeries(model, float(q), expo, np.zeros(1))
    phip = phi(model, model.p)
    lq = math.log(q)
    ly = alpha * math.log(y_max)
    logs = [0.0]
    acc = 0.0  # log of partial sum at y_max
    k = 0
    while True:
        k += 1
        den = psi(model, phip + k * alpha) - model.p
        logs.append(logs[-1] + lq - math.log(den))
        term = logs[-1] + k * ly
        if K is not None:
            if k >= K:
                break
            continue
        nxt = term + lq + ly - math.log(psi(model, phip + (k + 1) * alpha) - model.p)
        acc = np.logaddexp(acc, term)
        # terms decrease from here on once the ratio is below one
        if nxt < acc + math.log(1e-14) and nxt < term:
            break
        if k > 100_000:
            raise NonConvergence("Patie series did not settle")
    return PatieSeries(model, float(q), phip, np.array(logs))


def log_eval_patie(series: PatieSeries, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    ly = np.log(y)
    if series.log_coef.size == 1:
        out = series.exponent * ly
    else:
        k = np.arange(series.log_coef.size)
        a = series.model.alpha
        logs = series.log_coef[None, :] + a * k[None, :] * ly.reshape(-1, 1)
        out = (series.exponent * ly.reshape(-1) + np.logaddexp.reduce(logs, axis=1)).reshape(ly.shape)
    return out if np.ndim(out) else float(out)


def eval_patie(series: PatieSeries, y):
    return np.exp(log_eval_patie(series, y))


# --------------------------------------------------------------------------
# consistency checks


@dataclass(frozen=True)
class ResidualReport:
    """Sup-norm residuals of the equivalent convolution equations, relative to the solution's sup."""

    residuals: dict
    scale: dict
    h: float

    @property
    def max(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0


def verify_equivalent_forms(s: PssmpScaleSet) -> ResidualReport:
    """Plug the computed solution into each equivalent convolution equation (trapezoid on its grid)."""
    m = s.model
    q, p, a = s.q, m.p, m.alpha
    res, scale = {}, {}
    g = s.gridW if s.gridW is not None else s.gridZ
    x = g.x
    omega = np.exp(a * x)

    def grid_of(v):
        return g.with_values(v)

    W0 = sample(w_q(m, 0.0), g).values
    Wp = sample(w_q(m, p), g).values
    Wpq = sample(w_q(m, p + q), g).values
    if s.gridW is not None:
        F = s.gridW.values
        sc = max(np.max(np.abs(F)), 1e-300)
        r0 = F - Wp - q * convolve(grid_of(Wp), grid_of(omega * F)).values
        r1 = F - W0 - convolve(grid_of(W0), grid_of((q * omega + p) * F)).values
        r2 = F - Wpq - q * convolve(grid_of(Wpq), grid_of((omega - 1) * F)).values
        for name, r in (("W:defining", r0), ("W:unkilled", r1), ("W:rate_p+q", r2)):
            res[name] = float(np.max(np.abs(r)) / sc)
            scale[name] = sc
    if s.gridZ is not None:
        th = s.theta
        F = s.gridZ.values
        sc = max(np.max(np.abs(F)), 1e-300)
        Zp = sample(z_q_theta(m, p, th), g).values
        Z0 = sample(z_q_theta(m, 0.0, th), g).values
        Zpq = sample(z_q_theta(m, p + q, th), g).values
        r0 = F - Zp - q * convolve(grid_of(Wp), grid_of(omega * F)).values
        r1 = F - Z0 - convolve(grid_of(W0), grid_of((q * omega + p) * F)).values
        r2 = F - Zpq - q * convolve(grid_of(Wpq), grid_of((omega - 1) * F)).values
        for name, r in (("Z:defining", r0), ("Z:unkilled", r1), ("Z:rate_p+q", r2)):
            res[name] = float(np.max(np.abs(r)) / sc)
            scale[name] = sc
    return ResidualReport(res, scale, g.h)


def laplace_series_W(model: SnlpModel, q: float, lam: float, tol: float = 1e-16) -> float:
    """``sum_k q^k prod_{l=0..k} (psi(lam - l alpha) - p)^{-1}`` for alpha <= 0."""
    a, p = model.alpha, model.p
    if a > 0:
        raise UnsupportedIndexError("transform series requires alpha <= 0")
    prod = 1.0 / (psi(model, lam) - p)
    total = prod
    for k in range(1, MAX_TERMS):
        prod *= q / (psi(model, lam - k * a) - p)
        total += prod
        if prod <= tol * total:
            return total
    raise NonConvergence("transform series did not converge")


def laplace_series_Z(model: SnlpModel, q: float, theta: float, lam: float, tol: float = 1e-16) -> float:
    """Transform of calZ 1_{[0,inf)} for alpha <= 0."""
    a, p = model.alpha, model.p
    if a > 0:
        raise UnsupportedIndexError("transform series requires alpha <= 0")
    pth = psi(model, theta)
    prod = 1.0  # prod_{l<k} q/(psi(lam - l a) - p)
    total = 0.0
    for k in range(MAX_TERMS):
        lk = lam - k * a
        term = prod * (psi(model, lk) - pth) / ((lk - theta) * (psi(model, lk) - p))
        total += term
        if k > 0 and abs(term) <= tol * abs(total):
            return total
        if q == 0:
            return total
        prod *= q / (psi(model, lk) - p)
    raise NonConvergence("transform series did not converge")


@dataclass(frozen=True)
class LaplaceCheck:
    numeric: float
    analytic: float
    tail_bound: float
    x_max: float

    @property
    def rel_error(self) -> float:
        return abs(self.numeric - self.analytic) / abs(self.analytic)


def _simpson(f: np.ndarray, h: float) -> float:
    n = f.size - 1
    if n % 2:
        raise ValueError("Simpson needs an even number of intervals")
    return h / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())


def laplace_check_neg_alpha(
    model: SnlpModel,
    q: float,
    lam: float,
    which: str = "W",
    theta: float = 0.0,
    x_max: float | None = None,
    n: int = 4096,
) -> LaplaceCheck:
    """Grid transform of calW (or calZ) against the alpha <= 0 series.

    The grid integral runs over [0, x_max]; the tail is bounded through
    calW <= W^(p+q) (resp. calZ <= Z^(p+q,theta)), integrated in closed form.
    """
    if model.alpha > 0:
        raise UnsupportedIndexError("requires alpha <= 0")
    p = model.p
    bound_cf = w_q(model, p + q) if which == "W" else z_q_theta(model, p + q, theta)
    growth = max(phi(model, p + q), theta if which == "Z" else 0.0)
    if not lam > growth:
        raise ValueError(f"lam must exceed {growth}")
    if x_max is None:
        x_max = min(60.0, 40.0 / (lam - growth))
    if which == "W":
        s = build_calW(model, q, (x_max, n))
        F = s.gridW.values
        analytic = laplace_series_W(model, q, lam)
    else:
        s = build_calZ(model, q, theta, (x_max, n))
        F = s.gridZ.values
        analytic = laplace_series_Z(model, q, theta, lam)
    x = s.x
    numeric = _simpson(np.exp(-lam * x) * F, x_max / n)
    tail = bound_cf.laplace_tail(lam, x_max)
    return LaplaceCheck(numeric, analytic, tail, x_max)


def asymptote_infinity(model: SnlpModel, q: float, tol: float = 1e-16) -> float:
    """``lim calW(y) y^{-Phi(p+q)}`` as y -> infinity, for alpha < 0 and q > 0."""
    a, p = model.alpha, model.p
    if not (a < 0 and q > 0):
        raise UnsupportedIndexError("asymptote_infinity requires alpha < 0 and q > 0")
    ph = phi(model, p + q)
    num = 0.0
    den = 0.0
    prod = 1.0  # q^k / prod_{l=0..k}(psi(ph - l a) - p), built incrementally
    ratio_sum = 0.0
    for k in range(MAX_TERMS):
        lk = ph - k * a
        dk = psi(model, lk) - p
        prod = (prod / dk) if k == 0 else prod * q / dk
        ratio_sum += dpsi(model, lk) / dk
        num += prod
        den += prod * ratio_sum
        if k > 0 and prod * max(ratio_sum, 1.0) <= tol * min(num, den):
            return num * num / den
    raise NonConvergence("asymptotic constant series did not converge")


# --------------------------------------------------------------------------
# output


def dump_scale_csv(s: PssmpScaleSet) -> str:
    """CSV of (y, calW, calW'_+, calZ, calZ') with a metadata header line."""
    buf = io.StringIO()
    mk = hex(hash(s.model.key()) & 0xFFFFFFFF)
    buf.write(
        f"# model={mk} sigma2={s.model.sigma2!r} mu_tilde={s.model.mu!r} jumps={list(s.model.jumps)!r} "
        f"p={s.model.p!r} alpha={s.model.alpha!r} q={s.q!r} theta={s.theta!r} h={s.gridW.h!r} "
        f"n_terms={s.n_terms} trunc_bound={s.trunc_bound!r}\n"
    )
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y", "calW", "calW_d", "calZ", "calZ_d"])
    for row in zip(s.gridW.y, s.gridW.values, s.gridWd.values, s.gridZ.values, s.gridZd.values):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
