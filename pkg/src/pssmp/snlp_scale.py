"""Closed-form scale functions W^(q), Z^(q,theta) for hyperexponential snLp.

For this model class both Laplace transforms are proper rational functions,

    W^(q)^(lam)       = D(lam) / N_q(lam)
    Z^(q,theta)^(lam) = [N_{psi(theta)}(lam) / (lam - theta)] / N_q(lam)

with ``D(lam) = prod_i (lam + b_i)`` and ``N_q = (psi - q) D`` a polynomial.
The roots of ``N_q`` come from companion-matrix eigenvalues (Newton
polished); residues give a sum of ``c x^k e^{r x}`` terms.  Roots closer than
``ROOT_MERGE_TOL`` (relative) are merged into one pole of higher
multiplicity: this is what happens at q = 0 for an oscillating process, where
0 is a double root.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.polynomial import Polynomial

from .errors import GridMismatchError, RepeatedRootError
from .levy_model import SnlpModel, phi, psi
from . import kernels

__all__ = [
    "ScaleClosedForm",
    "LogGrid",
    "w_q",
    "z_q_theta",
    "sample",
    "convolve",
    "dump_grid_csv",
    "ROOT_MERGE_TOL",
]

ROOT_MERGE_TOL = 1e-7
_MAX_MULTIPLICITY = 3


@dataclass(frozen=True, eq=False)
class ScaleClosedForm:
    """``f(x) = Re sum_j c_j x^{k_j} e^{r_j x}`` on x >= 0.

    Below zero ``f`` vanishes for ``kind == "W"`` and equals ``e^{theta x}``
    for ``kind == "Z"``.
    """

    coef: np.ndarray
    rate: np.ndarray
    power: np.ndarray
    kind: Literal["W", "Z"]
    q: float
    theta: float = 0.0

    @property
    def terms(self) -> list[tuple]:
        return list(zip(self.coef.tolist(), self.rate.tolist(), self.power.tolist()))

    def _eval(self, x: np.ndarray, order: int) -> np.ndarray:
        xx = x[..., None]
        c, r, k = self.coef, self.rate, self.power
        e = np.exp(r * xx)
        if order == 0:
            val = c * xx**k * e
        elif order == 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                low = np.where(k >= 1, k * xx ** np.maximum(k - 1, 0), 0.0)
            val = c * (low + r * xx**k) * e
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                d1 = np.where(k >= 1, k * xx ** np.maximum(k - 1, 0), 0.0)
                d2 = np.where(k >= 2, k * (k - 1) * xx ** np.maximum(k - 2, 0), 0.0)
            val = c * (d2 + 2 * r * d1 + r * r * xx**k) * e
        out = val.sum(axis=-1)
        return out.real if np.iscomplexobj(out) else out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pos = self._eval(np.maximum(x, 0.0), 0)
        if self.kind == "W":
            out = np.where(x >= 0, pos, 0.0)
        else:
            out = np.where(x >= 0, pos, np.exp(self.theta * np.minimum(x, 0.0)))
        return out if out.ndim else float(out)

    def derivative(self, x, order: int = 1):
        """Right derivative(s) in x (order 1 or 2)."""
        x = np.asarray(x, dtype=float)
        pos = self._eval(np.maximum(x, 0.0), order)
        if self.kind == "W":
            out = np.where(x >= 0, pos, 0.0)
        else:
            neg = self.theta**order * np.exp(self.theta * np.minimum(x, 0.0))
            out = np.where(x >= 0, pos, neg)
        return out if out.ndim else float(out)

    def laplace_tail(self, lam: float, x0: float = 0.0) -> float:
        """``int_{x0}^inf e^{-lam x} f(x) dx`` for ``x0 >= 0`` and lam beyond all rates."""
        total = 0.0 + 0.0j
        for c, r, k in zip(self.coef, self.rate, self.power):
            beta = lam - r
            if beta.real <= 0:
                return math.inf
            k = int(k)
            # int_{x0}^inf x^k e^{-beta x} dx = e^{-beta x0} sum_j k!/j! x0^j / beta^{k-j+1}
            s = sum(math.factorial(k) / math.factorial(j) * x0**j / beta ** (k - j + 1) for j in range(k + 1))
            total += c * np.exp(-beta * x0) * s
        return float(np.real(total))

    def laplace(self, lam: float) -> float:
        return self.laplace_tail(lam, 0.0)

    @property
    def max_rate(self) -> float:
        return float(np.max(np.real(self.rate)))


@dataclass(frozen=True, eq=False)
class LogGrid:
    """Values of a function of ``x = log y`` at ``x_k = k h``, ``k = 0..n``."""

    x_max: float
    values: np.ndarray
    meta: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("LogGrid needs at least two nodes")
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def h(self) -> float:
        return self.x_max / self.n

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n + 1)

    @property
    def y(self) -> np.ndarray:
        return np.exp(self.x)

    @classmethod
    def nodes(cls, x_max: float, n: int) -> np.ndarray:
        return np.linspace(0.0, x_max, n + 1)

    def same_geometry(self, other: "LogGrid") -> bool:
        return self.n == other.n and self.x_max == other.x_max

    def with_values(self, values, meta: tuple = ()) -> "LogGrid":
        return LogGrid(self.x_max, values, meta)


# polynomial algebra ----------------------------------------------------------


def _denominator(model: SnlpModel) -> Polynomial:
    D = Polynomial([1.0])
    for b in model.decays:
        D = D * Polynomial([b, 1.0])
    return D


def _numerator(model: SnlpModel, q: float) -> Polynomial:
    """``N_q(lam) = (psi(lam) - q) prod_i (lam + b_i)`` as an exact polynomial."""
    a, b = model.rates, model.decays
    D = _denominator(model)
    N = Polynomial([-q - a.sum(), model.mu, 0.5 * model.sigma2]) * D
    for i in range(len(a)):
        others = Polynomial([1.0])
        for j in range(len(b)):
            if j != i:
                others = others * Polynomial([b[j], 1.0])
        N = N + a[i] * b[i] * others
    return N.trim()


def _polish(N: Polynomial, roots: np.ndarray) -> np.ndarray:
    dN = N.deriv()
    out = roots.astype(complex)
    for i, r in enumerate(out):
        for _ in range(3):
            f, d = N(r), dN(r)
            if d == 0:
                break
            cand = r - f / d
            if abs(N(cand)) < abs(f):
                r = cand
            else:
                break
        out[i] = r
    return out


def _clusters(roots: np.ndarray, tol: float) -> list[tuple[complex, int]]:
    """Group numerically coincident roots into (centre, multiplicity)."""
    remaining = list(roots)
    groups: list[tuple[complex, int]] = []
    while remaining:
        r0 = remaining.pop(0)
        members = [r0]
        keep = []
        for r in remaining:
            if abs(r - r0) <= tol * (1.0 + abs(r0)):
                members.append(r)
            else:
                keep.append(r)
        remaining = keep
        groups.append((complex(np.mean(members)), len(members)))
    return groups


def _taylor(poly: Polynomial, x0: complex, order: int) -> np.ndarray:
    """First ``order`` Taylor coefficients of ``poly`` about ``x0``."""
    out = np.zeros(order, dtype=complex)
    d = poly
    fact = 1.0
    for j in range(order):
        out[j] = d(x0) / fact
        d = d.deriv()
        fact *= j + 1
    return out


def _invert_rational(P: Polynomial, N: Polynomial, tol: float = ROOT_MERGE_TOL):
    """Inverse Laplace transform of the proper rational function ``P / N``."""
    lead = N.coef[-1]
    roots = _polish(N, N.roots())
    groups = _clusters(roots, tol)
    coefs, rates, powers = [], [], []
    for gi, (r0, m) in enumerate(groups):
        if m > _MAX_MULTIPLICITY:
            raise RepeatedRootError(f"root {r0} has multiplicity {m}")
        others = [r for gj, (r, mj) in enumerate(groups) if gj != gi for _ in range(mj)]
        if m == 1:
            Q0 = lead * np.prod([r0 - r for r in others]) if others else lead
            coefs.append(P(r0) / Q0)
            rates.append(r0)
            powers.append(0)
            continue
        Q = Polynomial.fromroots(others) * lead if others else Polynomial([lead])
        pc = _taylor(P, r0, m)
        qc = _taylor(Q, r0, m)
        g = np.zeros(m, dtype=complex)
        for j in range(m):  # series division g = p / q
            g[j] = (pc[j] - sum(g[i] * qc[j - i] for i in range(j))) / qc[0]
        for j in range(m):
            k = m - 1 - j
            coefs.append(g[j] / math.factorial(k))
            rates.append(r0)
            powers.append(k)
    coef = np.array(coefs, dtype=complex)
    rate = np.array(rates, dtype=complex)
    power = np.array(powers, dtype=np.int64)
    scale = max(1.0, float(np.max(np.abs(coef)))) if coef.size else 1.0
    if np.all(np.abs(rate.imag) <= 1e-12 * (1 + np.abs(rate.real))) and np.all(
        np.abs(coef.imag) <= 1e-12 * scale
    ):
        coef, rate = coef.real.copy(), rate.real.copy()
    return coef, rate, power


def w_q(model: SnlpModel, q: float) -> ScaleClosedForm:
    """Closed form of W^(q) by partial fractions of ``1/(psi - q)``."""
    if q < 0:
        raise ValueError("w_q requires q >= 0")
    coef, rate, power = _invert_rational(_denominator(model), _numerator(model, q))
    return ScaleClosedForm(coef, rate, power, "W", float(q))


def z_q_theta(model: SnlpModel, q: float, theta: float = 0.0) -> ScaleClosedForm:
    """Closed form of ``Z^(q,theta) = e^{theta x} + (q - psi(theta)) (e^{theta .} 1) * W^(q)``."""
    if q < 0 or theta < 0:
        raise ValueError("z_q_theta requires q, theta >= 0")
    Nth = _numerator(model, psi(model, theta))
    P, rem = divmod(Nth, Polynomial([-theta, 1.0]))
    coef, rate, power = _invert_rational(P, _numerator(model, q))
    return ScaleClosedForm(coef, rate, power, "Z", float(q), float(theta))


def sample(f: ScaleClosedForm, grid) -> LogGrid:
    """Evaluate a closed form at the nodes of ``grid`` (a LogGrid or ``(x_max, n)``)."""
    if isinstance(grid, LogGrid):
        x_max, n = grid.x_max, grid.n
    else:
        x_max, n = grid
    x = LogGrid.nodes(x_max, n)
    return LogGrid(x_max, f(x), (("kind", f.kind), ("q", f.q), ("theta", f.theta)))


def convolve(f: LogGrid, g: LogGrid) -> LogGrid:
    """Trapezoidal ``(f * g)(x_k)`` for functions vanishing below zero."""
    if not f.same_geometry(g):
        raise GridMismatchError(f"grids differ: (n={f.n}, x_max={f.x_max}) vs (n={g.n}, x_max={g.x_max})")
    return f.with_values(kernels.trap_convolve(f.values, g.values, f.h))


def dump_grid_csv(grid: LogGrid, meta: dict | None = None) -> str:
    buf = io.StringIO()
    info = dict(grid.meta)
    info.update(meta or {})
    if info:
        buf.write("# " + " ".join(f"{k}={v!r}" for k, v in info.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "value"])
    for x, v in zip(grid.x, grid.values):
        w.writerow([repr(float(x)), repr(float(v))])
    return buf.getvalue()


def w_limit_constant(model: SnlpModel, q: float) -> float:
    """``lim_{x->inf} W^(q)(x) e^{-Phi(q) x} = 1/psi'(Phi(q))``."""
    from .levy_model import dpsi

    return 1.0 / dpsi(model, phi(model, q))
