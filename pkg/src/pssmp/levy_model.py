"""Spectrally negative Levy models with hyperexponential downward jumps.

The Laplace exponent is parametrised as

    psi(lam) = sigma2/2 lam^2 + mu_tilde lam + sum_i a_i (b_i/(b_i+lam) - 1)

where jump component ``i`` arrives at rate ``a_i`` and has Exp(b_i) sizes,
i.e. the Levy measure is ``sum_i a_i b_i e^{-b_i u} du`` on jumps of size -u.
Since the jump part is left uncompensated, ``mu_tilde`` is the gross drift:
for ``sigma2 == 0`` it equals the finite-variation drift ``delta``.  The
drift of the truncated-compensation form ``psi = ... + mu lam +
int (e^{lam y} - 1 - lam y 1_{[-1,0)}(y)) nu(dy)`` is recovered by
``mu = mu_tilde - sum_i a_i (1 - e^{-b_i}(1 + b_i)) / b_i``
(see :func:`truncated_drift`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import ModelError

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

__all__ = [
    "SnlpModel",
    "InfiniteVariation",
    "FinVarDrift",
    "psi",
    "dpsi",
    "phi",
    "drift_delta",
    "esscher",
    "truncated_drift",
    "load_model",
    "loads_model",
    "dumps_model",
    "dump_model",
    "model_from_mapping",
]


class _InfiniteVariation:
    """Marker for paths of infinite variation (delta = infinity)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "InfiniteVariation"

    def __reduce__(self):
        return (_InfiniteVariation, ())


InfiniteVariation = _InfiniteVariation()


@dataclass(frozen=True)
class FinVarDrift:
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ModelError("finite-variation drift must be strictly positive")


@dataclass(frozen=True)
class SnlpModel:
    """Immutable snLp model plus killing rate ``p`` and self-similarity index ``alpha``.

    Parameters
    ----------
    sigma2 : float
        Gaussian coefficient, >= 0.
    mu : float
        Gross drift ``mu_tilde`` (see module docstring).
    jumps : sequence of (rate, decay)
        Hyperexponential mixture; decays must be pairwise distinct.
    p : float
        Killing rate of the independent exponential time.
    alpha : float
        Self-similarity index, any sign.
    """

    sigma2: float
    mu: float
    jumps: tuple = field(default=())
    p: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        jumps = tuple((float(a), float(b)) for a, b in self.jumps)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "alpha", float(self.alpha))
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise ModelError(f"sigma2 must be finite and >= 0, got {self.sigma2}")
        if not math.isfinite(self.mu):
            raise ModelError("mu must be finite")
        if not (self.p >= 0 and math.isfinite(self.p)):
            raise ModelError(f"killing rate p must be finite and >= 0, got {self.p}")
        if not math.isfinite(self.alpha):
            raise ModelError("alpha must be finite")
        for a, b in jumps:
            if not (a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)):
                raise ModelError(f"jump pair ({a}, {b}) must have positive finite entries")
        bs = sorted(b for _, b in jumps)
        for b1, b2 in zip(bs, bs[1:]):
            if abs(b2 - b1) <= 1e-10 * b2:
                raise ModelError("jump decays must be pairwise distinct; merge equal components")
        if self.sigma2 == 0:
            if not jumps:
                raise ModelError("sigma2 = 0 without jumps gives monotone paths")
            if not self.mu > 0:
                raise ModelError("finite-variation model needs drift delta = mu > 0")

    # convenience views -------------------------------------------------
    @property
    def rates(self) -> np.ndarray:
        return np.array([a for a, _ in self.jumps], dtype=float)

    @property
    def decays(self) -> np.ndarray:
        return np.array([b for _, b in self.jumps], dtype=float)

    @property
    def jump_intensity(self) -> float:
        return float(sum(a for a, _ in self.jumps))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def has_gaussian(self) -> bool:
        return self.sigma2 > 0

    def psi(self, lam):
        return psi(self, lam)

    def with_(self, **changes) -> "SnlpModel":
        return replace(self, **changes)

    def key(self) -> tuple:
        return (self.sigma2, self.mu, self.jumps, self.p, self.alpha)


def psi(model: SnlpModel, lam):
    """Laplace exponent; vectorised, valid for ``lam > -min(b_i)`` (complex allowed)."""
    lam = np.asarray(lam)
    out = 0.5 * model.sigma2 * lam * lam + model.mu * lam
    for a, b in model.jumps:
        out = out + a * (b / (b + lam) - 1.0)
    if out.ndim == 0:
        return out.item()
    return out


def dpsi(model: SnlpModel, lam):
    """Derivative of :func:`psi`."""
    lam = np.asarray(lam)
    out = model.sigma2 * lam + model.mu
    for a, b in model.jumps:
        out = out - a * b / (b + lam) ** 2
    if out.ndim == 0:
        return out.item()
    return out


def _phi0(model: SnlpModel) -> float:
    """Largest zero of psi on [0, inf)."""
    if dpsi(model, 0.0) >= 0:
        return 0.0
    hi = 1.0
    while dpsi(model, hi) <= 0:
        hi *= 2.0
    lmin = brentq(lambda l: dpsi(model, l), 0.0, hi, xtol=1e-15)
    hi = max(2 * lmin, 1.0)
    while psi(model, hi) <= 0:
        hi *= 2.0
    return brentq(lambda l: psi(model, l), lmin, hi, xtol=1e-15, rtol=1e-15)


def phi(model: SnlpModel, q: float) -> float:
    """Right inverse of psi: the unique ``lam >= Phi(0)`` with ``psi(lam) = q``."""
    if q < 0:
        raise ValueError("phi requires q >= 0")
    lo = _phi0(model)
    if q == 0:
        return lo
    hi = max(2 * lo, 1.0)
    while psi(model, hi) < q:
        hi *= 2.0
    root = brentq(lambda l: psi(model, l) - q, lo, hi, xtol=1e-15, rtol=1e-15)
    # one Newton step; psi is convex and increasing here
    d = dpsi(model, root)
    if d > 0:
        cand = root - (psi(model, root) - q) / d
        if abs(psi(model, cand) - q) < abs(psi(model, root) - q):
            root = cand
    return float(root)


def drift_delta(model: SnlpModel):
    """Finite-variation drift (the slope of psi at infinity) or :data:`InfiniteVariation`."""
    if model.sigma2 > 0:
        return InfiniteVariation
    return FinVarDrift(model.mu)


def truncated_drift(model: SnlpModel) -> float:
    """Drift ``mu`` of the truncated-compensation representation of psi."""
    corr = sum(a * (1.0 - math.exp(-b) * (1.0 + b)) / b for a, b in model.jumps)
    return model.mu - corr


def esscher(model: SnlpModel, theta: float) -> SnlpModel:
    """Model whose exponent is ``psi(lam + theta) - psi(theta)``; p and alpha unchanged."""
    if theta < 0:
        raise ValueError("Esscher tilt requires theta >= 0")
    if theta == 0:
        return model
    jumps = tuple((a * b / (b + theta), b + theta) for a, b in model.jumps)
    return replace(model, mu=model.mu + model.sigma2 * theta, jumps=jumps)


# serialisation -------------------------------------------------------------

_KEYS = ("sigma2", "mu_tilde", "jumps", "p", "alpha")


def model_from_mapping(data: dict) -> SnlpModel:
    unknown = set(data) - set(_KEYS)
    if unknown:
        raise ModelError(f"unknown model keys: {sorted(unknown)}")
    missing = {"sigma2", "mu_tilde"} - set(data)
    if missing:
        raise ModelError(f"missing model keys: {sorted(missing)}")
    jumps = data.get("jumps", [])
    try:
        jumps = tuple((float(a), float(b)) for a, b in jumps)
    except (TypeError, ValueError) as exc:
        raise ModelError("jumps must be a list of [rate, decay] pairs") from exc
    return SnlpModel(
        sigma2=float(data["sigma2"]),
        mu=float(data["mu_tilde"]),
        jumps=jumps,
        p=float(data.get("p", 0.0)),
        alpha=float(data.get("alpha", 0.0)),
    )


def loads_model(text: str) -> SnlpModel:
    try:
        data = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ModelError(f"cannot parse model file: {exc}") from exc
    return model_from_mapping(data)


def load_model(path) -> SnlpModel:
    return loads_model(Path(path).read_text())


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = repr(float(x))
    return s


def dumps_model(model: SnlpModel) -> str:
    jumps = ", ".join(f"[{_fmt(a)}, {_fmt(b)}]" for a, b in model.jumps)
    return (
        f"sigma2 = {_fmt(model.sigma2)}\n"
        f"mu_tilde = {_fmt(model.mu)}\n"
        f"jumps = [{jumps}]\n"
        f"p = {_fmt(model.p)}\n"
        f"alpha = {_fmt(model.alpha)}\n"
    )


def dump_model(model: SnlpModel, path) -> None:
    Path(path).write_text(dumps_model(model))
