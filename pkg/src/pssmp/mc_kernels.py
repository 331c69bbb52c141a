"""Path simulator for the killed, Lamperti-time-changed Levy process.

Two implementations with the same random streams: ``simulate_numba`` (one
path per ``prange`` iteration) and ``simulate_numpy`` (all paths advanced in
lockstep with boolean masks).  Each path owns a xoroshiro128+ stream seeded
by splitmix64 from ``(base_seed, path index)``, so results do not depend on
scheduling or on how many paths run together.

Packed scalar parameters ``par`` (float64 array)::

    0 sigma   1 mu_tilde  2 jump intensity  3 p       4 alpha
    5 x0      6 lo        7 hi              8 dd mode (0 off, 1 constant, 2 table)
    9 dd s    10 dt       11 Lamperti horizon          12 Levy time cap
    13 bridge flag

Event codes: 0 censored, 1 up-crossing of ``hi``, 2 down-crossing of ``lo``,
3 drawdown, 4 killed.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import njit, prange

__all__ = [
    "CENSORED",
    "UP",
    "DOWN",
    "DRAWDOWN",
    "KILLED",
    "simulate_numba",
    "simulate_numpy",
    "allocate_outputs",
    "uniform_stream_numpy",
    "uniform_stream_numba",
]

CENSORED, UP, DOWN, DRAWDOWN, KILLED = 0, 1, 2, 3, 4

_GOLD = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO53 = 1.0 / 9007199254740992.0
_TWOPI = 2.0 * math.pi
_BAND = 8.0


# --------------------------------------------------------------------------
# numba RNG


@njit()
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@njit()
def _seed(st, base, i):
    z = base + (np.uint64(i) + np.uint64(1)) * np.uint64(_GOLD)
    st[0] = _mix(z)
    st[1] = _mix(z + np.uint64(_GOLD))


@njit()
def _next(st):
    s0 = st[0]
    s1 = st[1]
    r = s0 + s1
    s1 ^= s0
    st[0] = ((s0 << np.uint64(24)) | (s0 >> np.uint64(40))) ^ s1 ^ (s1 << np.uint64(16))
    st[1] = (s1 << np.uint64(37)) | (s1 >> np.uint64(27))
    return r


@njit()
def _unif(st):
    return (float(_next(st) >> np.uint64(11)) + 0.5) * _TWO53


@njit()
def _normal(st, sp):
    if sp[0] > 0:
        sp[0] = 0.0
        return sp[1]
    u1 = _unif(st)
    u2 = _unif(st)
    rad = math.sqrt(-2.0 * math.log(u1))
    sp[0] = 1.0
    sp[1] = rad * math.sin(_TWOPI * u2)
    return rad * math.cos(_TWOPI * u2)


@njit()
def uniform_stream_numba(base, i, n):
    st = np.empty(2, np.uint64)
    _seed(st, np.uint64(base), i)
    out = np.empty(n)
    for k in range(n):
        out[k] = _unif(st)
    return out


@njit()
def _dd_s(m, mode, s_const, zk, rv):
    if mode == 1:
        return s_const
    return math.log(np.interp(math.exp(m), zk, rv))


# --------------------------------------------------------------------------
# numba per-path kernel


@njit()
def _path(i, gi, par, cum_p, decays, zk, rv, sgrid, base, code, t_ev, tau_ev, x_ev, xbar_ev, L_ev, nj, mx, mtau, malive):
    sigma = par[0]
    mu = par[1]
    lam = par[2]
    p = par[3]
    a = par[4]
    x = par[5]
    lo = par[6]
    hi = par[7]
    ddm = int(par[8])
    dds = par[9]
    dt = par[10]
    H = par[11]
    tmax = par[12]
    bridge = par[13] > 0
    ncomp = cum_p.shape[0]
    m = sgrid.shape[0]

    st = np.empty(2, np.uint64)
    _seed(st, base, gi)
    sp = np.zeros(2)

    t = 0.0
    I = 0.0
    xbar = x
    L = 0.0
    n = 0
    j = 0
    ek = np.inf
    if p > 0:
        ek = -math.log(_unif(st)) / p
    tj = np.inf
    if lam > 0:
        tj = -math.log(_unif(st)) / lam
    c = -1
    te = 0.0
    ta = 0.0
    xe = x
    if x >= hi:
        c = UP
        xe = x
    elif sigma > 0 and x <= lo:
        c = DOWN
        xe = x

    while c < 0:
        jumped = False
        if sigma > 0:
            tend = min(t + dt, tj, ek, tmax)
            D = tend - t
            z = _normal(st, sp)
            sd = sigma * math.sqrt(D)
            x1 = x + mu * D + sd * z
            if a == 0.0:
                dI = D
            else:
                dI = 0.5 * D * (math.exp(a * x) + math.exp(a * x1))
            hmax = max(x, x1)
            lmin = min(x, x1)
            band = _BAND * sd
            lev_old = -np.inf
            if ddm > 0:
                lev_old = xbar - _dd_s(xbar, ddm, dds, zk, rv)
            M = hmax
            mn = lmin
            need_max = False
            if bridge:
                need_max = (hi - hmax < band) or (ddm > 0 and xbar - hmax < band)
                if need_max:
                    u = _unif(st)
                    M = 0.5 * (x + x1 + math.sqrt((x1 - x) * (x1 - x) - 2.0 * sd * sd * math.log(u)))
                need_min = (lmin - lo < band) or (ddm > 0 and lmin - lev_old < band)
                if need_min:
                    u = _unif(st)
                    mn = 0.5 * (x + x1 - math.sqrt((x1 - x) * (x1 - x) - 2.0 * sd * sd * math.log(u)))
            ce = -1
            xce = x1
            if mn < lo:
                ce = DOWN
                xce = lo
            elif mn < lev_old:
                ce = DRAWDOWN
                xce = lev_old
            elif M >= hi:
                ce = UP
                xce = hi
            else:
                if M > xbar:
                    xbar = M
                    if need_max:
                        L = I + 0.5 * dI
                    else:
                        L = I + dI
                if ddm > 0:
                    lev = xbar - _dd_s(xbar, ddm, dds, zk, rv)
                    if x1 < lev:
                        ce = DRAWDOWN
                        xce = lev
            limit = I + dI
            if ce >= 0:
                limit = I + 0.5 * dI
            while j < m and sgrid[j] <= limit:
                fr = (sgrid[j] - I) / dI
                mx[i, j] = x + fr * (x1 - x)
                mtau[i, j] = sgrid[j]
                malive[i, j] = 1
                j += 1
            if ce >= 0:
                c = ce
                xe = xce
                te = t + 0.5 * D
                ta = I + 0.5 * dI
                if ce == UP:
                    xbar = hi
                break
            t = tend
            I += dI
            x = x1
            if t >= ek:
                c = KILLED
            elif t >= tj:
                jumped = True
            elif I >= H or t >= tmax:
                c = CENSORED
        else:
            Dj = tj - t
            Dk = ek - t
            Dh = (hi - x) / mu
            Dt = tmax - t
            R = H - I
            if a == 0.0:
                DH = R
            else:
                arg = math.exp(a * x) + a * mu * R
                DH = (math.log(arg) / a - x) / mu if arg > 0 else np.inf
            D = min(Dj, Dk, Dh, Dt, DH)
            x1 = x + mu * D
            if a == 0.0:
                dI = D
            else:
                dI = (math.exp(a * x1) - math.exp(a * x)) / (a * mu)
            while j < m and sgrid[j] <= I + dI:
                if a == 0.0:
                    xs = x + mu * (sgrid[j] - I)
                else:
                    xs = math.log(math.exp(a * x) + a * mu * (sgrid[j] - I)) / a
                mx[i, j] = xs
                mtau[i, j] = sgrid[j]
                malive[i, j] = 1
                j += 1
            t += D
            I += dI
            x = x1
            if x > xbar:
                xbar = x
                L = I
            if D == Dh:
                c = UP
                x = hi
                xbar = hi
            elif D == Dk:
                c = KILLED
            elif D == Dj:
                jumped = True
            else:
                c = CENSORED
            if c >= 0:
                te = t
                ta = I
                xe = x
                break
        if jumped:
            n += 1
            k = 0
            if ncomp > 1:
                u = _unif(st)
                while k < ncomp - 1 and u >= cum_p[k]:
                    k += 1
            x -= -math.log(_unif(st)) / decays[k]
            tj = t + (-math.log(_unif(st)) / lam)
            if x < lo:
                c = DOWN
            elif ddm > 0 and x < xbar - _dd_s(xbar, ddm, dds, zk, rv):
                c = DRAWDOWN
            elif I >= H or t >= tmax:
                c = CENSORED
        if c >= 0:
            te = t
            ta = I
            xe = x

    code[i] = c
    t_ev[i] = te
    tau_ev[i] = ta
    x_ev[i] = xe
    xbar_ev[i] = xbar
    L_ev[i] = L
    nj[i] = n
    while j < m:
        mx[i, j] = xe
        mtau[i, j] = ta
        malive[i, j] = 0 if c == KILLED else 1
        j += 1


@njit(parallel=True)
def _simulate_numba(par, cum_p, decays, zk, rv, sgrid, base, offset, code, t_ev, tau_ev, x_ev, xbar_ev, L_ev, nj, mx, mtau, malive):
    n = code.shape[0]
    for k in prange(n):
        _path(k, k + offset, par, cum_p, decays, zk, rv, sgrid, base, code, t_ev, tau_ev, x_ev, xbar_ev, L_ev, nj, mx, mtau, malive)


def allocate_outputs(n: int, m: int) -> dict:
    return {
        "code": np.full(n, -1, dtype=np.int64),
        "t_ev": np.zeros(n),
        "tau_ev": np.zeros(n),
        "x_ev": np.zeros(n),
        "xbar_ev": np.zeros(n),
        "L_ev": np.zeros(n),
        "n_jumps": np.zeros(n, dtype=np.int64),
        "mx": np.zeros((n, m)),
        "mtau": np.zeros((n, m)),
        "malive": np.zeros((n, m), dtype=np.int64),
    }


_ORDER = ("code", "t_ev", "tau_ev", "x_ev", "xbar_ev", "L_ev", "n_jumps", "mx", "mtau", "malive")


def simulate_numba(par, cum_p, decays, zk, rv, sgrid, base_seed: int, offset: int, n: int) -> dict:
    out = allocate_outputs(n, sgrid.shape[0])
    _simulate_numba(par, cum_p, decays, zk, rv, sgrid, np.uint64(base_seed), offset, *(out[k] for k in _ORDER))
    return out


# --------------------------------------------------------------------------
# numpy lockstep twin

_U11 = np.uint64(11)


class _NumpyStreams:
    """Vector of independent xoroshiro128+ streams (one per path)."""

    def __init__(self, base: int, gidx: np.ndarray):
        b = np.full(gidx.shape, base, dtype=np.uint64)
        z = b + (gidx.astype(np.uint64) + np.uint64(1)) * np.uint64(_GOLD)
        self.s0 = self._mix(z)
        self.s1 = self._mix(z + np.uint64(_GOLD))
        self.has_spare = np.zeros(gidx.shape, dtype=bool)
        self.spare = np.zeros(gidx.shape)

    @staticmethod
    def _mix(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, idx: np.ndarray) -> np.ndarray:
        s0 = self.s0[idx]
        s1 = self.s1[idx]
        r = s0 + s1
        s1 = s1 ^ s0
        self.s0[idx] = ((s0 << np.uint64(24)) | (s0 >> np.uint64(40))) ^ s1 ^ (s1 << np.uint64(16))
        self.s1[idx] = (s1 << np.uint64(37)) | (s1 >> np.uint64(27))
        return ((r >> _U11).astype(np.float64) + 0.5) * _TWO53

    def normal(self, idx: np.ndarray) -> np.ndarray:
        out = np.empty(idx.size)
        hs = self.has_spare[idx]
        if hs.any():
            ii = idx[hs]
            out[hs] = self.spare[ii]
            self.has_spare[ii] = False
        fresh = ~hs
        if fresh.any():
            ii = idx[fresh]
            u1 = self.uniform(ii)
            u2 = self.uniform(ii)
            rad = np.sqrt(-2.0 * np.log(u1))
            self.spare[ii] = rad * np.sin(_TWOPI * u2)
            self.has_spare[ii] = True
            out[fresh] = rad * np.cos(_TWOPI * u2)
        return out


def uniform_stream_numpy(base: int, i: int, n: int) -> np.ndarray:
    st = _NumpyStreams(base, np.array([i]))
    return np.array([st.uniform(np.array([0]))[0] for _ in range(n)])


def _dd_s_np(m, mode, s_const, zk, rv):
    if mode == 1:
        return np.full_like(m, s_const)
    return np.log(np.interp(np.exp(m), zk, rv))


def simulate_numpy(par, cum_p, decays, zk, rv, sgrid, base_seed: int, offset: int, n: int) -> dict:
    sigma, mu, lam, p, a, x0, lo, hi = (float(v) for v in par[:8])
    ddm, dds, dt, H, tmax, bridge = int(par[8]), float(par[9]), float(par[10]), float(par[11]), float(par[12]), par[13] > 0
    ncomp = cum_p.shape[0]
    m = sgrid.shape[0]
    out = allocate_outputs(n, m)
    code, te, ta, xe = out["code"], out["t_ev"], out["tau_ev"], out["x_ev"]
    mx, mtau, malive = out["mx"], out["mtau"], out["malive"]

    rng = _NumpyStreams(base_seed, np.arange(offset, offset + n))
    allidx = np.arange(n)
    t = np.zeros(n)
    I = np.zeros(n)
    x = np.full(n, x0)
    xbar = np.full(n, x0)
    L = np.zeros(n)
    nj = np.zeros(n, dtype=np.int64)
    j = np.zeros(n, dtype=np.int64)
    ek = -np.log(rng.uniform(allidx)) / p if p > 0 else np.full(n, np.inf)
    tj = -np.log(rng.uniform(allidx)) / lam if lam > 0 else np.full(n, np.inf)
    xe[:] = x0
    if x0 >= hi:
        code[:] = UP
    elif sigma > 0 and x0 <= lo:
        code[:] = DOWN

    def record(idx, limit, xa, x1, Ia, dI, exact_fv):
        # fill s-grid entries with sgrid[j] <= limit for paths idx
        if m == 0 or idx.size == 0:
            return
        while True:
            jj = j[idx]
            ok = jj < m
            if not ok.any():
                return
            sg = sgrid[np.minimum(jj, m - 1)]
            ok &= sg <= limit
            if not ok.any():
                return
            k = idx[ok]
            jk = jj[ok]
            s = sg[ok]
            if exact_fv:
                if a == 0.0:
                    xs = xa[ok] + mu * (s - Ia[ok])
                else:
                    xs = np.log(np.exp(a * xa[ok]) + a * mu * (s - Ia[ok])) / a
            else:
                fr = (s - Ia[ok]) / dI[ok]
                xs = xa[ok] + fr * (x1[ok] - xa[ok])
            mx[k, jk] = xs
            mtau[k, jk] = s
            malive[k, jk] = 1
            j[k] += 1

    def finish(idx, c, tt, II, xx):
        code[idx] = c
        te[idx] = tt
        ta[idx] = II
        xe[idx] = xx

    while True:
        A = np.nonzero(code < 0)[0]
        if A.size == 0:
            break
        jumped = np.zeros(A.size, dtype=bool)
        if sigma > 0:
            tA, IA, xA, xbA = t[A], I[A], x[A], xbar[A]
            tend = np.minimum(np.minimum(np.minimum(tA + dt, tj[A]), ek[A]), tmax)
            D = tend - tA
            z = rng.normal(A)
            sd = sigma * np.sqrt(D)
            x1 = xA + mu * D + sd * z
            dI = D if a == 0.0 else 0.5 * D * (np.exp(a * xA) + np.exp(a * x1))
            hmax = np.maximum(xA, x1)
            lmin = np.minimum(xA, x1)
            band = _BAND * sd
            lev_old = xbA - _dd_s_np(xbA, ddm, dds, zk, rv) if ddm > 0 else np.full(A.size, -np.inf)
            M = hmax.copy()
            mn = lmin.copy()
            need_max = np.zeros(A.size, dtype=bool)
            if bridge:
                need_max = hi - hmax < band
                if ddm > 0:
                    need_max |= xbA - hmax < band
                if need_max.any():
                    k = need_max
                    u = rng.uniform(A[k])
                    dx = x1[k] - xA[k]
                    M[k] = 0.5 * (xA[k] + x1[k] + np.sqrt(dx * dx - 2.0 * sd[k] * sd[k] * np.log(u)))
                need_min = lmin - lo < band
                if ddm > 0:
                    need_min |= lmin - lev_old < band
                if need_min.any():
                    k = need_min
                    u = rng.uniform(A[k])
                    dx = x1[k] - xA[k]
                    mn[k] = 0.5 * (xA[k] + x1[k] - np.sqrt(dx * dx - 2.0 * sd[k] * sd[k] * np.log(u)))
            ce = np.full(A.size, -1, dtype=np.int64)
            xce = x1.copy()
            down = mn < lo
            ce[down] = DOWN
            xce[down] = lo
            dd_old = ~down & (mn < lev_old)
            ce[dd_old] = DRAWDOWN
            xce[dd_old] = lev_old[dd_old]
            up = (ce < 0) & (M >= hi)
            ce[up] = UP
            xce[up] = hi
            rest = ce < 0
            newmax = rest & (M > xbA)
            xbA = np.where(newmax, M, xbA)
            L[A[newmax]] = np.where(need_max[newmax], IA[newmax] + 0.5 * dI[newmax], IA[newmax] + dI[newmax])
            xbar[A] = xbA
            if ddm > 0:
                lev = xbA - _dd_s_np(xbA, ddm, dds, zk, rv)
                dd_new = rest & (x1 < lev)
                ce[dd_new] = DRAWDOWN
                xce[dd_new] = lev[dd_new]
            limit = np.where(ce >= 0, IA + 0.5 * dI, IA + dI)
            record(A, limit, xA, x1, IA, dI, False) if m else None
            ev = ce >= 0
            if ev.any():
                k = A[ev]
                finish(k, ce[ev], tA[ev] + 0.5 * D[ev], IA[ev] + 0.5 * dI[ev], xce[ev])
                xbar[k[ce[ev] == UP]] = hi
            cont = ~ev
            k = A[cont]
            t[k] = tend[cont]
            I[k] = IA[cont] + dI[cont]
            x[k] = x1[cont]
            kill = t[k] >= ek[k]
            jmp = ~kill & (t[k] >= tj[k])
            cens = ~kill & ~jmp & ((I[k] >= H) | (t[k] >= tmax))
            finish(k[kill], KILLED, t[k[kill]], I[k[kill]], x[k[kill]])
            finish(k[cens], CENSORED, t[k[cens]], I[k[cens]], x[k[cens]])
            J = k[jmp]
        else:
            tA, IA, xA = t[A], I[A], x[A]
            Dj = tj[A] - tA
            Dk = ek[A] - tA
            Dh = (hi - xA) / mu
            Dt = tmax - tA
            R = H - IA
            if a == 0.0:
                DH = R
            else:
                arg = np.exp(a * xA) + a * mu * R
                with np.errstate(invalid="ignore", divide="ignore"):
                    DH = np.where(arg > 0, (np.log(np.where(arg > 0, arg, 1.0)) / a - xA) / mu, np.inf)
            D = np.minimum(np.minimum(np.minimum(np.minimum(Dj, Dk), Dh), Dt), DH)
            x1 = xA + mu * D
            dI = D if a == 0.0 else (np.exp(a * x1) - np.exp(a * xA)) / (a * mu)
            record(A, IA + dI, xA, x1, IA, dI, True) if m else None
            t[A] = tA + D
            I[A] = IA + dI
            x[A] = x1
            nm = x1 > xbar[A]
            xbar[A[nm]] = x1[nm]
            L[A[nm]] = I[A[nm]]
            hit = D == Dh
            kill = ~hit & (D == Dk)
            jmp = ~hit & ~kill & (D == Dj)
            cens = ~hit & ~kill & ~jmp
            x[A[hit]] = hi
            xbar[A[hit]] = hi
            for mask, c in ((hit, UP), (kill, KILLED), (cens, CENSORED)):
                k = A[mask]
                finish(k, c, t[k], I[k], x[k])
            J = A[jmp]
        if J.size:
            nj[J] += 1
            comp = np.zeros(J.size, dtype=np.int64)
            if ncomp > 1:
                u = rng.uniform(J)
                comp = np.minimum(np.searchsorted(cum_p, u, side="right"), ncomp - 1)
            x[J] = x[J] - (-np.log(rng.uniform(J)) / decays[comp])
            tj[J] = t[J] + (-np.log(rng.uniform(J)) / lam)
            dn = x[J] < lo
            if ddm > 0:
                dd = ~dn & (x[J] < xbar[J] - _dd_s_np(xbar[J], ddm, dds, zk, rv))
            else:
                dd = np.zeros(J.size, dtype=bool)
            cz = ~dn & ~dd & ((I[J] >= H) | (t[J] >= tmax))
            for mask, c in ((dn, DOWN), (dd, DRAWDOWN), (cz, CENSORED)):
                k = J[mask]
                finish(k, c, t[k], I[k], x[k])

    out["xbar_ev"][:] = xbar
    out["L_ev"][:] = L
    out["n_jumps"][:] = nj
    if m:
        for jj in range(m):
            rem = j <= jj
            mx[rem, jj] = xe[rem]
            mtau[rem, jj] = ta[rem]
            malive[rem, jj] = np.where(code[rem] == KILLED, 0, 1)
    return out
