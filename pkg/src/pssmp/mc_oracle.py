"""Monte Carlo estimates of the exit, drawdown and stop-loss functionals.

Paths of the killed Levy process ``X`` are simulated in Levy time with exact
compound-Poisson jump epochs and Euler-Gaussian filling of step ``dt``
(finite-variation models are simulated exactly between jumps); the Lamperti
clock ``I_t = int_0^t e^{alpha X_u} du`` converts every recorded time to the
clock of ``Y = exp(X_{phi})``.  With ``barrier_correction`` the maximum and
minimum of each Gaussian step are drawn from the Brownian bridge, so
continuous crossings inside a step are not missed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import mc_kernels as K
from ._accel import USE_NUMBA
from .exit_engine import DrawdownSpec, ExitQuery
from .levy_model import SnlpModel
from .pssmp_scale import build_calW, build_calZ

__all__ = [
    "PathConfig",
    "McEstimate",
    "PathRecord",
    "simulate_path",
    "run_paths",
    "estimate_two_sided",
    "estimate_first_passage",
    "estimate_drawdown",
    "estimate_drawdown_survival",
    "estimate_martingale",
    "estimate_stoploss",
    "sample_jump_sizes",
    "write_event_log",
    "mc_estimate",
]

EVENT_NAMES = {K.CENSORED: "censored", K.UP: "up", K.DOWN: "down", K.DRAWDOWN: "drawdown", K.KILLED: "killed"}


@dataclass(frozen=True)
class PathConfig:
    """Simulation settings.

    Parameters
    ----------
    dt : float
        Gaussian step between jump epochs.
    horizon : float
        Cap on the Lamperti (``Y``) clock; paths still running are censored.
    n_paths : int
    base_seed : int
        Root of the per-path streams; path ``i`` always gets the same stream.
    barrier_correction : bool
        Brownian-bridge extrema inside Gaussian steps (pure Euler when False).
    t_max : float
        Safety cap on Levy time.
    backend : str or None
        ``"numba"``, ``"numpy"`` or ``None`` for the process-wide default.
    chunk : int
        Paths per kernel call (bounds memory; results do not depend on it).
    """

    dt: float = 1e-4
    horizon: float = 50.0
    n_paths: int = 100_000
    base_seed: int = 20240611
    barrier_correction: bool = True
    t_max: float = 1e3
    backend: str | None = None
    chunk: int = 1 << 16

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not (0 <= self.base_seed < 2**64):
            raise ValueError("base_seed must fit in 64 bits")
        if self.backend not in (None, "numba", "numpy"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_effective: int
    seed_range: tuple
    n_censored: int = 0
    n_events: int = 0

    def z_score(self, target: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.std_error


def mc_estimate(values: np.ndarray, config: PathConfig, n_censored: int = 0, n_events: int = 0) -> McEstimate:
    """Mean and standard error with exactly rounded (order independent) sums."""
    v = np.asarray(values, dtype=float)
    n = v.size
    mean = math.fsum(v) / n
    var = math.fsum((v - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return McEstimate(mean, math.sqrt(var / n), n, (int(config.base_seed), 0, n - 1), int(n_censored), int(n_events))


# --------------------------------------------------------------------------
# kernel plumbing


def _pack(model: SnlpModel, x0, lo, hi, config: PathConfig, spec: DrawdownSpec | None):
    if spec is None:
        ddm, dds, zk, rv = 0, 0.0, np.array([1.0, 2.0]), np.array([2.0, 2.0])
    elif spec.is_constant:
        ddm, dds, zk, rv = 1, math.log(spec.r_const), np.array([1.0, 2.0]), np.array([spec.r_const] * 2)
    else:
        ddm, dds = 2, 0.0
        zk, rv = (np.asarray(a, dtype=float) for a in (spec.z_knots, spec.r_values))
    lam = model.jump_intensity
    cum_p = np.cumsum(model.rates) / lam if lam > 0 else np.ones(1)
    decays = model.decays if lam > 0 else np.ones(1)
    par = np.array(
        [model.sigma, model.mu, lam, model.p, model.alpha, x0, lo, hi, ddm, dds, config.dt, config.horizon, config.t_max,
         1.0 if config.barrier_correction else 0.0],
        dtype=float,
    )
    return par, np.ascontiguousarray(cum_p, dtype=float), np.ascontiguousarray(decays, dtype=float), zk, rv


def run_paths(model: SnlpModel, x0: float, lo: float, hi: float, config: PathConfig, spec: DrawdownSpec | None = None, s_grid=None) -> dict:
    """Simulate ``config.n_paths`` paths of X from ``x0`` until leaving ``(lo, hi)``, drawdown, kill or censoring."""
    sgrid = np.ascontiguousarray(np.asarray([] if s_grid is None else s_grid, dtype=float))
    if sgrid.size and np.any(np.diff(sgrid) < 0):
        raise ValueError("s_grid must be nondecreasing")
    packed = _pack(model, float(x0), float(lo), float(hi), config, spec)
    backend = config.backend or ("numba" if USE_NUMBA else "numpy")
    sim = K.simulate_numba if backend == "numba" else K.simulate_numpy
    parts = []
    for off in range(0, config.n_paths, config.chunk):
        n = min(config.chunk, config.n_paths - off)
        parts.append(sim(*packed, sgrid, int(config.base_seed), off, n))
    out = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    out["backend"] = backend
    return out


def _counts(out):
    return int(np.sum(out["code"] == K.CENSORED))


# --------------------------------------------------------------------------
# estimators


def estimate_two_sided(model: SnlpModel, query: ExitQuery, config: PathConfig):
    """(up, down) estimates of ``e^{-qT_d^+} 1{up}`` and ``e^{-qT_c^-} (Y/c)^theta 1{down}``."""
    a, b, x = math.log(query.c), math.log(query.d), math.log(query.y)
    out = run_paths(model, x, a, b, config)
    code, tau, xe = out["code"], out["tau_ev"], out["x_ev"]
    disc = np.exp(-query.q * tau)
    up = np.where(code == K.UP, disc, 0.0)
    down = np.where(code == K.DOWN, disc * np.exp(query.theta * (xe - a)), 0.0)
    cz = _counts(out)
    return (
        mc_estimate(up, config, cz, int(np.sum(code == K.UP))),
        mc_estimate(down, config, cz, int(np.sum(code == K.DOWN))),
    )


def estimate_first_passage(model: SnlpModel, y: float, d: float, q: float, config: PathConfig) -> McEstimate:
    out = run_paths(model, math.log(y), -math.inf, math.log(d), config)
    v = np.where(out["code"] == K.UP, np.exp(-q * out["tau_ev"]), 0.0)
    return mc_estimate(v, config, _counts(out), int(np.sum(out["code"] == K.UP)))


def _spec(spec):
    return DrawdownSpec(float(spec)) if isinstance(spec, (int, float)) else spec


def estimate_drawdown(model: SnlpModel, y: float, d: float, q: float, gamma: float, theta: float, spec, config: PathConfig) -> McEstimate:
    """``e^{-q Sigma - gamma L} (r(sup Y)/R)^theta`` on ``{Sigma_r < T_d^+}`` (``d`` may be inf)."""
    spec = _spec(spec)
    out = run_paths(model, math.log(y), -math.inf, math.log(d), config, spec)
    code = out["code"]
    xbar = out["xbar_ev"]
    level = xbar - spec.s_log(xbar)
    v = np.exp(-q * out["tau_ev"] - gamma * out["L_ev"] + theta * (out["x_ev"] - level))
    v = np.where(code == K.DRAWDOWN, v, 0.0)
    return mc_estimate(v, config, _counts(out), int(np.sum(code == K.DRAWDOWN)))


def estimate_drawdown_survival(model: SnlpModel, y: float, d: float, q: float, spec, config: PathConfig) -> McEstimate:
    """``e^{-q T_d^+}`` on ``{T_d^+ < Sigma_r}``."""
    spec = _spec(spec)
    out = run_paths(model, math.log(y), -math.inf, math.log(d), config, spec)
    v = np.where(out["code"] == K.UP, np.exp(-q * out["tau_ev"]), 0.0)
    return mc_estimate(v, config, _counts(out), int(np.sum(out["code"] == K.UP)))


def estimate_stoploss(model: SnlpModel, y: float, r_const: float, q: float, config: PathConfig) -> McEstimate:
    """Discounted sale price ``e^{-q Sigma_r} Y_{Sigma_r}`` on ``{Sigma_r < zeta}``."""
    spec = DrawdownSpec(float(r_const))
    out = run_paths(model, math.log(y), -math.inf, math.inf, config, spec)
    v = np.where(out["code"] == K.DRAWDOWN, np.exp(-q * out["tau_ev"] + out["x_ev"]), 0.0)
    return mc_estimate(v, config, _counts(out), int(np.sum(out["code"] == K.DRAWDOWN)))


def estimate_martingale(model: SnlpModel, y: float, d: float, q: float, s_grid, config: PathConfig, *, n_grid: int = 1024):
    """MC means of the calW- and calZ-processes stopped at ``T_1^- ^ T_d^+``, at each Lamperti time in ``s_grid``.

    Returns ``(w_estimates, z_estimates)``, lists aligned with ``s_grid``.
    """
    if not (1.0 <= y <= d):
        raise ValueError("need 1 <= y <= d")
    s_grid = np.asarray(s_grid, dtype=float)
    b = math.log(d)
    sw = build_calW(model, q, (b, n_grid))
    sz = build_calZ(model, q, 0.0, (b, n_grid))
    out = run_paths(model, math.log(y), 0.0, b, config, None, s_grid)
    mx, mtau, alive = out["mx"], out["mtau"], out["malive"]
    cz = _counts(out)
    ws, zs = [], []
    for k in range(s_grid.size):
        xk = np.minimum(mx[:, k], b)
        disc = np.exp(-q * mtau[:, k]) * alive[:, k]
        ws.append(mc_estimate(disc * sw.W_log(xk), config, cz))
        zs.append(mc_estimate(disc * sz.Z_log(xk), config, cz))
    return ws, zs


# --------------------------------------------------------------------------
# single path and diagnostics


@dataclass
class PathRecord:
    """Mesh of one path: Levy times ``t``, positions ``x``, Lamperti clock ``I``.

    Jump epochs appear twice (pre- and post-jump value).
    """

    t: np.ndarray
    x: np.ndarray
    I: np.ndarray
    kill_time: float
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def running_sup(self) -> np.ndarray:
        return np.maximum.accumulate(self.x)

    @property
    def lifetime(self) -> float:
        """Lamperti time of killing (inf if not killed on the mesh)."""
        if not math.isfinite(self.kill_time) or self.kill_time > self.t[-1]:
            return math.inf
        return float(np.interp(self.kill_time, self.t, self.I))

    def phi(self, s):
        """Levy time at Lamperti time ``s`` (inverse of ``I`` by interpolation)."""
        return np.interp(s, self.I, self.t)

    def y_at(self, s):
        """``Y_s = exp(X_{phi_s})`` (left limits at jump epochs)."""
        idx = np.searchsorted(self.I, s, side="right") - 1
        idx = np.clip(idx, 0, self.I.size - 2)
        i0, i1 = self.I[idx], self.I[idx + 1]
        w = np.where(i1 > i0, (np.asarray(s) - i0) / np.where(i1 > i0, i1 - i0, 1.0), 0.0)
        return np.exp(self.x[idx] + w * (self.x[idx + 1] - self.x[idx]))


def simulate_path(model: SnlpModel, x0: float, seed: int, config: PathConfig, t_end: float = 1.0) -> PathRecord:
    """One path on ``[0, t_end]`` in Levy time, unkilled mesh plus the killing epoch."""
    st = K._NumpyStreams(seed, np.array([0]))
    i0 = np.array([0])
    ek = -math.log(st.uniform(i0)[0]) / model.p if model.p > 0 else math.inf
    lam = model.jump_intensity
    tj = -math.log(st.uniform(i0)[0]) / lam if lam > 0 else math.inf
    cum_p = np.cumsum(model.rates) / lam if lam > 0 else np.ones(1)
    a, mu, sig = model.alpha, model.mu, model.sigma
    ts, xs, Is, jumps = [0.0], [x0], [0.0], []
    t, x, I = 0.0, float(x0), 0.0
    while t < t_end:
        if sig > 0:
            tend = min(t + config.dt, tj, t_end)
            D = tend - t
            x1 = x + mu * D + sig * math.sqrt(D) * st.normal(i0)[0]
            dI = D if a == 0 else 0.5 * D * (math.exp(a * x) + math.exp(a * x1))
        else:
            tend = min(tj, t_end)
            D = tend - t
            x1 = x + mu * D
            dI = D if a == 0 else (math.exp(a * x1) - math.exp(a * x)) / (a * mu)
        t, x, I = tend, x1, I + dI
        ts.append(t)
        xs.append(x)
        Is.append(I)
        if t == tj and t < t_end:
            k = 0
            if cum_p.size > 1:
                k = int(min(np.searchsorted(cum_p, st.uniform(i0)[0], side="right"), cum_p.size - 1))
            x -= -math.log(st.uniform(i0)[0]) / model.decays[k]
            tj = t + (-math.log(st.uniform(i0)[0]) / lam)
            jumps.append(t)
            ts.append(t)
            xs.append(x)
            Is.append(I)
    return PathRecord(np.array(ts), np.array(xs), np.array(Is), ek, np.array(jumps))


def sample_jump_sizes(model: SnlpModel, n: int, seed: int = 1) -> np.ndarray:
    """Jump sizes drawn exactly as in the simulator (component by rate, then exponential)."""
    lam = model.jump_intensity
    if lam == 0:
        raise ValueError("model has no jumps")
    cum_p = np.cumsum(model.rates) / lam
    st = K._NumpyStreams(seed, np.arange(n))
    idx = np.arange(n)
    comp = np.zeros(n, dtype=np.int64)
    if cum_p.size > 1:
        comp = np.minimum(np.searchsorted(cum_p, st.uniform(idx), side="right"), cum_p.size - 1)
    return -np.log(st.uniform(idx)) / model.decays[comp]


def write_event_log(out: dict, path, offset: int = 0) -> None:
    """CSV audit log: path_id, event, levy_time, lamperti_time, y_value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "event", "levy_time", "lamperti_time", "y_value"])
        for i, (c, t, s, x) in enumerate(zip(out["code"], out["t_ev"], out["tau_ev"], out["x_ev"])):
            w.writerow([i + offset, EVENT_NAMES[int(c)], repr(float(t)), repr(float(s)), repr(math.exp(float(x)))])
