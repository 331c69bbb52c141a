"""Closed-form exit, drawdown and stop-loss quantities for the pssMp ``Y``.

Notation: ``Y = exp(X_{phi})`` started at ``y``; ``T_d^+`` / ``T_c^-`` are the
first passage times above ``d`` / below ``c``; ``R = sup Y / Y`` is the
drawdown ratio and ``Sigma_r`` the first time ``R`` exceeds ``r(sup Y)``.

Drawdown integrals run in ``u = log z`` (``z`` the running maximum) with
``s(u) = log r(e^u)``, where the integrands become

    A_rate(u) = d/dx log calW^{(rate)}(x) at x = s(u),       rate = q (z/r)^alpha
    B(u)      = A_q(u) calZ(s(u)) - d/dx calZ(s(u))        (theta-dependent)

so that survival is ``exp(-int A_q du)`` and the transform is
``int B exp(-int A_{q+gamma}) f du``.  Only the end values of a scale build
on ``[0, s(u)]`` are needed, so each quadrature node costs one grid solve;
node values are fitted piecewise by Chebyshev polynomials and integrated
analytically.
"""
from __future__ import annotations

import math
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.integrate import quad

from .errors import (
    BarrierOrderError,
    QuadratureFailure,
    TailNotCertified,
    UnsupportedModelError,
)
from .levy_model import SnlpModel, dpsi
from .pssmp_scale import DEFAULT_N, PssmpScaleSet, build_calW, build_calZ, build_patie, log_eval_patie

__all__ = [
    "ExitQuery",
    "DrawdownSpec",
    "ExitResult",
    "ScaleCache",
    "default_cache",
    "two_sided_up",
    "two_sided_down",
    "first_passage_up",
    "drawdown_survival",
    "drawdown_transform",
    "drawdown_density",
    "stoploss_value",
    "stoploss_supported",
    "COMPLEMENT_WARN",
]

COMPLEMENT_WARN = 1e-5


class ComplementWarning(RuntimeWarning):
    pass


# --------------------------------------------------------------------------
# inputs and outputs


@dataclass(frozen=True)
class ExitQuery:
    """Start ``y`` and barriers ``c <= y <= d`` for the two-sided problem."""

    y: float
    c: float
    d: float
    q: float = 0.0
    theta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (0 < self.c < self.d and self.c <= self.y <= self.d):
            raise BarrierOrderError(f"need 0 < c <= y <= d and c < d, got c={self.c}, y={self.y}, d={self.d}")
        if min(self.q, self.theta, self.gamma) < 0:
            raise ValueError("q, theta and gamma must be >= 0")


@dataclass(frozen=True)
class DrawdownSpec:
    """Drawdown threshold ``r(z) > 1`` as a function of the running maximum ``z``.

    Either a constant (``DrawdownSpec(2.0)``) or a piecewise-linear table via
    :meth:`table`; the table is held constant outside its knots.
    """

    r_const: float | None = None
    z_knots: tuple = ()
    r_values: tuple = ()

    def __post_init__(self):
        if self.r_const is not None:
            if not self.r_const > 1:
                raise ValueError("r must exceed 1")
            return
        z = np.asarray(self.z_knots, dtype=float)
        r = np.asarray(self.r_values, dtype=float)
        if z.size < 2 or z.size != r.size:
            raise ValueError("tabulated r needs >= 2 matching knots and values")
        if np.any(np.diff(z) <= 0) or np.any(z <= 0):
            raise ValueError("z knots must be positive and strictly increasing")
        if np.any(r <= 1):
            raise ValueError("r must exceed 1 at every knot")
        object.__setattr__(self, "z_knots", tuple(map(float, z)))
        object.__setattr__(self, "r_values", tuple(map(float, r)))

    @classmethod
    def table(cls, z_knots, r_values) -> "DrawdownSpec":
        return cls(None, tuple(z_knots), tuple(r_values))

    @property
    def is_constant(self) -> bool:
        return self.r_const is not None

    def r(self, z):
        if self.is_constant:
            return np.full_like(np.asarray(z, dtype=float), self.r_const)
        return np.interp(z, self.z_knots, self.r_values)

    def s_log(self, u):
        """``log r(e^u)``."""
        return np.log(self.r(np.exp(u)))

    def log_knots(self) -> np.ndarray:
        return np.log(np.asarray(self.z_knots, dtype=float)) if not self.is_constant else np.empty(0)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(z_knots, r_values) arrays, a single flat knot for a constant."""
        if self.is_constant:
            return np.array([1.0, 2.0]), np.array([self.r_const, self.r_const])
        return np.asarray(self.z_knots), np.asarray(self.r_values)


@dataclass(frozen=True)
class ExitResult:
    """Value plus its error budget (quadrature, truncation, discretisation, tail)."""

    value: float
    errors: dict = field(default_factory=dict)
    query: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value)

    @property
    def error_bound(self) -> float:
        return float(sum(self.errors.values()))


# --------------------------------------------------------------------------
# cache


def _round_rate(rate: float) -> float:
    return float(f"{rate:.12g}")


class ScaleCache:
    """LRU cache of scale builds keyed by model, rounded effective rate and grid.

    Builds are inserted only when complete; a lock guards the dictionary so
    concurrent readers never see a partially constructed set.
    """

    def __init__(self, maxsize: int = 512):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _get(self, key, builder):
        with self._lock:
            hit = self._data.get(key)
            if hit is not None:
                self._data.move_to_end(key)
                self.hits += 1
                return hit
            self.misses += 1
        built = builder()
        with self._lock:
            self._data[key] = built
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return built

    def calW(self, model: SnlpModel, rate: float, x_max: float, n: int = DEFAULT_N, richardson: int = 2) -> PssmpScaleSet:
        rate = _round_rate(rate)
        key = ("W", model.key(), rate, float(x_max), int(n), int(richardson))
        return self._get(key, lambda: build_calW(model, rate, (x_max, n), richardson=richardson))

    def calZ(self, model: SnlpModel, rate: float, theta: float, x_max: float, n: int = DEFAULT_N, richardson: int = 2) -> PssmpScaleSet:
        rate = _round_rate(rate)
        key = ("Z", model.key(), rate, float(theta), float(x_max), int(n), int(richardson))
        return self._get(key, lambda: build_calZ(model, rate, theta, (x_max, n), richardson=richardson))

    def clear(self) -> None:
        with self._lock:
            self._data.clear()


default_cache = ScaleCache()


# --------------------------------------------------------------------------
# two-sided exit and first passage


def _two_sided_parts(model, query: ExitQuery, cache: ScaleCache, n: int, need_Z: bool):
    rate = query.q * query.c**model.alpha
    xm = math.log(query.d / query.c)
    xy = math.log(query.y / query.c)
    sw = cache.calW(model, rate, xm, n)
    w_y, w_d = sw.W_log(xy), sw.gridW.values[-1]
    if not need_Z:
        return w_y, w_d, None, None
    sz = cache.calZ(model, rate, query.theta, xm, n)
    return w_y, w_d, sz.Z_log(xy), sz.gridZ.values[-1]


def _query(y, c=None, d=None, q=0.0, theta=0.0) -> ExitQuery:
    if isinstance(y, ExitQuery):
        return y
    return ExitQuery(float(y), float(c), float(d), float(q), float(theta))


def two_sided_up(model: SnlpModel, y, c=None, d=None, q=0.0, *, cache: ScaleCache | None = None, n: int = DEFAULT_N, full: bool = False):
    """``E_y[e^{-q T_d^+}; T_d^+ < T_c^-]`` as ``calW(y/c) / calW(d/c)`` at rate ``q c^alpha``.

    Accepts either an :class:`ExitQuery` or ``(y, c, d, q)``.
    """
    qr = _query(y, c, d, q)
    cache = cache or default_cache
    w_y, w_d, _, _ = _two_sided_parts(model, qr, cache, n, False)
    val = float(w_y / w_d)
    if not full:
        return val
    w_y2, w_d2, _, _ = _two_sided_parts(model, qr, cache, n // 2, False)
    errs = {"discretisation": abs(val - w_y2 / w_d2), "truncation": 0.0}
    return ExitResult(val, errs, qr.__dict__.copy())


def two_sided_down(model: SnlpModel, y, c=None, d=None, q=0.0, theta=0.0, *, cache: ScaleCache | None = None, n: int = DEFAULT_N, full: bool = False):
    """``E_y[e^{-q T_c^-} (Y_{T_c^-}/c)^theta; T_c^- < T_d^+]``."""
    qr = _query(y, c, d, q, theta)
    cache = cache or default_cache
    w_y, w_d, z_y, z_d = _two_sided_parts(model, qr, cache, n, True)
    val = float(z_y - w_y / w_d * z_d)
    if qr.q == 0 and qr.theta == 0 and model.p == 0:
        tot = val + float(w_y / w_d)
        if abs(tot - 1.0) > COMPLEMENT_WARN:
            warnings.warn(f"two-sided complement off by {tot - 1:.3g}", ComplementWarning, stacklevel=2)
    if not full:
        return val
    w_y2, w_d2, z_y2, z_d2 = _two_sided_parts(model, qr, cache, n // 2, True)
    errs = {"discretisation": abs(val - (z_y2 - w_y2 / w_d2 * z_d2)), "truncation": 0.0}
    return ExitResult(val, errs, qr.__dict__.copy())


def first_passage_up(model: SnlpModel, y: float, d: float, q: float = 0.0, *, full: bool = False):
    """``E_y[e^{-q T_d^+}; T_d^+ < zeta]`` for ``alpha >= 0`` via Patie's series."""
    if not (0 < y <= d):
        raise BarrierOrderError("need 0 < y <= d")
    series = build_patie(model, q, y_max=max(d, 1.0))
    val = float(math.exp(log_eval_patie(series, y) - log_eval_patie(series, d)))
    if not full:
        return val
    return ExitResult(val, {"truncation": 1e-14 * val}, {"y": y, "d": d, "q": q})


# --------------------------------------------------------------------------
# drawdown machinery

_CHEB_COARSE = 16
_CHEB_FINE = 32
_FIT_RTOL = 1e-10
_MAX_DEPTH = 24


def _lobatto(n: int) -> np.ndarray:
    """Chebyshev-Lobatto points on [-1, 1] in increasing order."""
    return -np.cos(np.pi * np.arange(n + 1) / n)


def _node_n(s: float) -> int:
    n = 256 * max(1, math.ceil(2 * s))
    return int(min(8192, 2 ** math.ceil(math.log2(n))))


class _DrawdownIntegrand:
    """End-value evaluations of the drawdown integrands at a node ``u``."""

    def __init__(self, model, q, gamma, theta, spec: DrawdownSpec, cache: ScaleCache, need_B: bool):
        self.model, self.q, self.gamma, self.theta = model, q, gamma, theta
        self.spec, self.cache, self.need_B = spec, cache, need_B
        self.n_builds = 0

    def _rate(self, base, u, s):
        # base * (z / r(z))^alpha with z = e^u
        return base * math.exp(self.model.alpha * (u - s))

    def _dlogW(self, base, u, s):
        sw = self.cache.calW(self.model, self._rate(base, u, s), s, _node_n(s))
        ev = sw.end_values()
        return ev["dW"] / ev["W"]

    def __call__(self, u: float) -> tuple[float, float, float]:
        """(A_q, A_{q+gamma}, B) at u."""
        s = float(self.spec.s_log(u))
        self.n_builds += 1
        a_q = self._dlogW(self.q, u, s)
        a_qg = a_q if self.gamma == 0 else self._dlogW(self.q + self.gamma, u, s)
        if not self.need_B:
            return a_q, a_qg, 0.0
        if self.q == 0 and self.theta == 0 and self.model.p == 0:
            return a_q, a_qg, a_q  # calZ == 1
        sz = self.cache.calZ(self.model, self._rate(self.q, u, s), self.theta, s, _node_n(s))
        ev = sz.end_values()
        return a_q, a_qg, a_q * ev["Z"] - ev["dZ"]


@dataclass
class _Piece:
    lo: float
    hi: float
    coefs: list  # Chebyshev coefficients (in t on [-1,1]) for A_q, A_qg, B
    tail: float  # coefficient-tail error estimate for the fit

    def t(self, u):
        return (2 * np.asarray(u) - self.lo - self.hi) / (self.hi - self.lo)

    def value(self, k: int, u):
        return C.chebval(self.t(u), self.coefs[k])

    def cumulative(self, k: int, u):
        """``int_lo^u`` of component k."""
        integ = C.chebint(self.coefs[k], lbnd=-1) * (self.hi - self.lo) / 2
        return C.chebval(self.t(u), integ)

    def total(self, k: int) -> float:
        return float(self.cumulative(k, self.hi))


def _fit_values(vals: np.ndarray, deg: int) -> np.ndarray:
    return C.chebfit(_lobatto(deg), vals, deg)


def _fit_piece(f: _DrawdownIntegrand, lo: float, hi: float, depth: int = 0) -> list[_Piece]:
    def nodes(deg):
        return lo + (hi - lo) * (_lobatto(deg) + 1) / 2

    coarse = np.array([f(u) for u in nodes(_CHEB_COARSE)])
    uf = nodes(_CHEB_FINE)
    fine = np.empty((uf.size, 3))
    fine[::2] = coarse  # Lobatto grids nest
    for j in range(1, uf.size, 2):
        fine[j] = f(uf[j])
    coefs, ok, tails = [], True, []
    for k in range(3):
        cf = _fit_values(fine[:, k], _CHEB_FINE)
        cc = _fit_values(coarse[:, k], _CHEB_COARSE)
        scale = max(np.max(np.abs(fine[:, k])), 1e-300)
        # agreement of the two fits on the fine nodes, and decay of the fine coefficients
        diff = np.max(np.abs(C.chebval(_lobatto(_CHEB_FINE), cc) - fine[:, k]))
        tail = float(np.max(np.abs(cf[-4:])))
        ok = ok and tail <= _FIT_RTOL * scale and (diff <= 1e-6 * scale or tail <= 1e-13 * scale)
        coefs.append(cf)
        tails.append(tail * (hi - lo))
    if ok:
        return [_Piece(lo, hi, coefs, float(max(tails)))]
    if depth >= _MAX_DEPTH:
        raise QuadratureFailure(f"Chebyshev fit did not resolve the integrand on [{lo}, {hi}]")
    mid = 0.5 * (lo + hi)
    return _fit_piece(f, lo, mid, depth + 1) + _fit_piece(f, mid, hi, depth + 1)


def _breaks(lo: float, hi: float, extra) -> list[float]:
    pts = {lo, hi}
    for k in extra:
        if lo < k < hi:
            pts.add(float(k))
    return sorted(pts)


class _Pieces:
    """Piecewise fit over consecutive intervals with running cumulative integrals."""

    def __init__(self):
        self.pieces: list[_Piece] = []
        self.offsets: list[np.ndarray] = []  # cumulative integrals (A_q, A_qg) at piece start
        self._run = np.zeros(2)

    def extend(self, new: list[_Piece]):
        for p in new:
            self.pieces.append(p)
            self.offsets.append(self._run.copy())
            self._run = self._run + np.array([p.total(0), p.total(1)])

    @property
    def cum(self) -> np.ndarray:
        return self._run

    @property
    def fit_error(self) -> float:
        return float(sum(p.tail for p in self.pieces))


def _piece_integral(p: _Piece, off_qg: float, f_weight: Callable, extra_breaks) -> tuple[float, float]:
    def g(u):
        return float(p.value(2, u) * math.exp(-(off_qg + p.cumulative(1, u))) * f_weight(u))

    pts = [b for b in extra_breaks if p.lo < b < p.hi] or None
    val, err = quad(g, p.lo, p.hi, epsabs=0.0, epsrel=1e-10, limit=200, points=pts)
    return val, err


def _check_spec(spec):
    if isinstance(spec, (int, float)):
        return DrawdownSpec(float(spec))
    if not isinstance(spec, DrawdownSpec):
        raise TypeError("spec must be a DrawdownSpec or a constant r")
    return spec


def drawdown_survival(model: SnlpModel, y: float, d: float, q: float, spec, *, cache: ScaleCache | None = None, full: bool = False):
    """``E_y[e^{-q T_d^+}; T_d^+ < Sigma_r]``."""
    spec = _check_spec(spec)
    if not (0 < y <= d < math.inf):
        raise BarrierOrderError("need 0 < y <= d < inf")
    if y == d:
        return 1.0 if not full else ExitResult(1.0, {}, {"y": y, "d": d})
    f = _DrawdownIntegrand(model, q, 0.0, 0.0, spec, cache or default_cache, need_B=False)
    pieces = _Pieces()
    bp = _breaks(math.log(y), math.log(d), spec.log_knots())
    for lo, hi in zip(bp, bp[1:]):
        pieces.extend(_fit_piece(f, lo, hi))
    val = math.exp(-pieces.cum[0])
    if not full:
        return val
    return ExitResult(val, {"quadrature": val * pieces.fit_error}, {"y": y, "d": d, "q": q, "n_nodes": f.n_builds})


def _transform(model, y, d, q, gamma, theta, spec, f_weight, f_breaks, cache, *, chunk=None, u_span=500.0):
    """Shared engine for the transform and density; ``d`` may be ``inf``."""
    integrand = _DrawdownIntegrand(model, q, gamma, theta, spec, cache, need_B=True)
    pieces = _Pieces()
    x0 = math.log(y)
    knots = list(spec.log_knots()) + list(f_breaks)
    total, qerr, tail = 0.0, 0.0, 0.0

    def run(lo, hi):
        nonlocal total, qerr
        bp = _breaks(lo, hi, knots)
        for a, b in zip(bp, bp[1:]):
            new = _fit_piece(integrand, a, b)
            start = len(pieces.pieces)
            pieces.extend(new)
            for p, off in zip(pieces.pieces[start:], pieces.offsets[start:]):
                v, e = _piece_integral(p, off[1], f_weight, f_breaks)
                total += v
                qerr += e

    if math.isfinite(d):
        run(x0, math.log(d))
    else:
        smax = float(np.max(spec.s_log(np.array([x0]))) if spec.is_constant else np.max(np.log(spec.r_values)))
        step = chunk or max(1.0, 2 * smax)
        lo = x0
        certified = False
        while lo < x0 + u_span:
            hi = lo + step
            run(lo, hi)
            last = pieces.pieces[-1]
            # local decay rate of the outer integrand on the final piece
            ua, ub = last.lo + 0.5 * (last.hi - last.lo), last.hi
            ga = abs(last.value(2, ua)) * math.exp(-(pieces.offsets[-1][1] + last.cumulative(1, ua))) * abs(f_weight(ua))
            gb = abs(last.value(2, ub)) * math.exp(-pieces.cum[1]) * abs(f_weight(ub))
            weight = math.exp(-pieces.cum[1])
            if gb == 0.0:
                kappa = math.inf
            elif ga == 0.0:
                kappa = -math.inf
            else:
                kappa = (math.log(ga) - math.log(gb)) / (ub - ua)
            if weight < 1e-12 and kappa > 0:
                tail = gb / kappa if math.isfinite(kappa) else 0.0
                if tail <= 1e-10 * max(abs(total), 1e-300) or tail < 1e-14:
                    certified = True
                    break
            lo = hi
        if not certified:
            raise TailNotCertified(f"integrand not decaying fast enough within u-span {u_span}")
    errs = {"quadrature": qerr, "fit": pieces.fit_error, "tail": tail}
    return total, errs, pieces, integrand


def drawdown_transform(
    model: SnlpModel,
    y: float,
    d: float,
    q: float,
    gamma: float,
    theta: float,
    spec,
    *,
    cache: ScaleCache | None = None,
    full: bool = False,
):
    """``E_y[e^{-q Sigma_r - gamma L} (r(sup Y)/R)^theta; Sigma_r < T_d^+]``; ``d = inf`` allowed."""
    spec = _check_spec(spec)
    if not (0 < y <= d):
        raise BarrierOrderError("need 0 < y <= d")
    if min(q, gamma, theta) < 0:
        raise ValueError("q, gamma, theta must be >= 0")
    if y == d:
        return 0.0 if not full else ExitResult(0.0, {}, {"y": y, "d": d})
    val, errs, pieces, integ = _transform(model, y, d, q, gamma, theta, spec, lambda u: 1.0, [], cache or default_cache)
    if q == gamma == theta == 0 and model.p == 0 and math.isfinite(d):
        tot = val + math.exp(-pieces.cum[0])
        if abs(tot - 1) > COMPLEMENT_WARN:
            warnings.warn(f"drawdown complement off by {tot - 1:.3g}", ComplementWarning, stacklevel=2)
    if not full:
        return val
    return ExitResult(val, errs, {"y": y, "d": d, "q": q, "gamma": gamma, "theta": theta, "n_nodes": integ.n_builds})


def drawdown_density(
    model: SnlpModel,
    y: float,
    q: float,
    gamma: float,
    theta: float,
    spec,
    f,
    *,
    breakpoints=(),
    cache: ScaleCache | None = None,
    full: bool = False,
):
    """``E_y[e^{-q Sigma_r - gamma L} (r/R)^theta f(sup Y at Sigma_r); Sigma_r < zeta]``.

    ``f`` is a callable of the maximum ``z`` or a tabulated ``(z_knots, values)``
    pair (piecewise linear, constant outside).  Discontinuities of a callable
    ``f`` should be passed as ``breakpoints`` (in z).
    """
    spec = _check_spec(spec)
    if isinstance(f, tuple):
        zk, fv = (np.asarray(a, dtype=float) for a in f)
        fcall = lambda z: float(np.interp(z, zk, fv))  # noqa: E731
        breakpoints = tuple(breakpoints) + tuple(zk)
    else:
        fcall = f
    fb = [math.log(b) for b in breakpoints if b > 0]
    # indicator-type f with support ending at a breakpoint: stop there
    val, errs, _, integ = _transform(
        model, y, math.inf, q, gamma, theta, spec, lambda u: fcall(math.exp(u)), fb, cache or default_cache
    )
    if not full:
        return val
    return ExitResult(val, errs, {"y": y, "q": q, "gamma": gamma, "theta": theta, "n_nodes": integ.n_builds})


def stoploss_supported(model: SnlpModel) -> bool:
    """False when Y can reach infinity in finite time (alpha < 0 with killing or upward drift)."""
    return not (model.alpha < 0 and (model.p > 0 or dpsi(model, 0.0) > 0))


def stoploss_value(model: SnlpModel, y: float, r_const: float, q: float = 0.0, *, cache: ScaleCache | None = None, full: bool = False):
    """Discounted sale price ``E_y[e^{-q Sigma_r} Y_{Sigma_r}; Sigma_r < zeta]`` for constant ``r``."""
    if not stoploss_supported(model):
        raise UnsupportedModelError("Y may explode in finite time (alpha < 0 with p > 0 or positive drift)")
    if not r_const > 1:
        raise ValueError("r must exceed 1")
    spec = DrawdownSpec(float(r_const))
    return drawdown_density(model, y, q, 0.0, 1.0, spec, lambda z: z / r_const, cache=cache, full=full)
