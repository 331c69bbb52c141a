from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from scipy import stats

from pssmp import mc_kernels as K
from pssmp.exit_engine import DrawdownSpec, ExitQuery, drawdown_transform, two_sided_up
from pssmp.mc_oracle import (
    PathConfig,
    estimate_drawdown,
    estimate_first_passage,
    estimate_martingale,
    estimate_stoploss,
    estimate_two_sided,
    mc_estimate,
    run_paths,
    sample_jump_sizes,
    simulate_path,
    write_event_log,
)
from pssmp.pssmp_scale import build_calW

from conftest import BM, FV, HE

E = math.e
FAST = PathConfig(dt=1e-3, n_paths=4000, base_seed=7)


def test_config_validation():
    with pytest.raises(ValueError):
        PathConfig(dt=0.0)
    with pytest.raises(ValueError):
        PathConfig(n_paths=0)
    with pytest.raises(ValueError):
        PathConfig(backend="cuda")


def test_uniform_streams_match():
    for i in (0, 5, 123456):
        a = K.uniform_stream_numba(99, i, 50)
        b = K.uniform_stream_numpy(99, i, 50)
        assert np.array_equal(a, b)
        assert np.all((a > 0) & (a < 1))


@pytest.mark.parametrize(
    "m,spec,lo,hi",
    [
        (BM.with_(alpha=1.0, p=0.3), None, 0.0, math.log(2.0)),
        (HE.with_(alpha=-1.0, p=0.3), DrawdownSpec.table([1.0, 2.0], [1.5, 2.0]), -math.inf, math.log(3.0)),
        (FV.with_(alpha=0.5), DrawdownSpec(1.6), -math.inf, math.inf),
    ],
)
def test_backends_identical(m, spec, lo, hi):
    sgrid = [0.0, 0.1, 0.5]
    outs = [
        run_paths(m, 0.3, lo, hi, PathConfig(dt=1e-3, n_paths=1500, base_seed=11, backend=b, horizon=5.0), spec, sgrid)
        for b in ("numba", "numpy")
    ]
    for key in ("code", "t_ev", "tau_ev", "x_ev", "xbar_ev", "L_ev", "n_jumps", "mx", "mtau", "malive"):
        a, b = outs[0][key], outs[1][key]
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12, equal_nan=True), key
    assert np.array_equal(outs[0]["code"], outs[1]["code"])


def test_reproducible_and_chunk_independent():
    m = HE.with_(alpha=1.0, p=0.2)
    q = ExitQuery(1.5, 1.0, 2.0, 0.7, 1.0)
    a = estimate_two_sided(m, q, FAST)
    b = estimate_two_sided(m, q, FAST)
    c = estimate_two_sided(m, q, PathConfig(dt=1e-3, n_paths=4000, base_seed=7, chunk=999))
    assert a == b == c
    d = estimate_two_sided(m, q, PathConfig(dt=1e-3, n_paths=4000, base_seed=8))
    assert d[0].mean != a[0].mean


def test_mc_estimate_fsum():
    cfg = PathConfig(n_paths=3)
    est = mc_estimate(np.array([1e16, 1.0, -1e16]), cfg)
    assert est.mean == pytest.approx(1 / 3)
    assert est.seed_range == (cfg.base_seed, 0, 2)
    assert est.z_score(est.mean) == 0.0


def test_jump_sizes_ks():
    m = HE
    xs = sample_jump_sizes(m, 100_000, seed=3)
    a, b = m.rates, m.decays
    w = a / a.sum()

    def cdf(u):
        u = np.asarray(u)[..., None]
        return np.sum(w * (1 - np.exp(-b * u)), axis=-1)

    assert stats.kstest(xs, cdf).pvalue > 1e-3


def test_jump_counts_poisson():
    m = HE.with_(alpha=0.0)
    T = 2.0
    out = run_paths(m, 0.0, -math.inf, math.inf, PathConfig(dt=1e-2, n_paths=10_000, base_seed=5, horizon=T))
    assert np.all(out["code"] == K.CENSORED)
    counts = out["n_jumps"]
    lam = m.jump_intensity * T
    kmax = 8
    obs = np.array([np.sum(counts == k) for k in range(kmax)] + [np.sum(counts >= kmax)])
    pk = stats.poisson.pmf(np.arange(kmax), lam)
    exp = counts.size * np.append(pk, 1 - pk.sum())
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_simulate_path_structure():
    p = simulate_path(BM, 0.0, 3, PathConfig(dt=1e-3))
    assert np.all(np.diff(p.I) > 0) and p.lifetime == math.inf
    assert np.allclose(p.I, p.t)  # alpha = 0: the clock is Levy time
    q = simulate_path(HE.with_(alpha=1.0, p=0.5), 0.0, 4, PathConfig(dt=1e-3), t_end=3.0)
    assert np.all(np.diff(q.I) >= 0) and q.jump_times.size > 0
    assert np.all(q.running_sup >= q.x)
    s = np.array([0.0, 0.5 * q.I[-1]])
    assert np.allclose(q.phi(s)[0], 0.0) and q.y_at(s)[0] == pytest.approx(1.0)
    f = simulate_path(FV.with_(alpha=0.5), 0.0, 2, PathConfig(), t_end=2.0)
    assert np.all(np.diff(f.I) >= 0)


def test_degenerate_estimates():
    up, down = estimate_two_sided(HE, ExitQuery(2.0, 1.0, 2.0, 0.5), FAST)
    assert up.mean == 1.0 and up.std_error == 0.0 and down.mean == 0.0
    up, down = estimate_two_sided(BM.with_(p=500.0), ExitQuery(1.5, 1.0, 2.0), FAST)
    assert up.mean < 0.01 and down.mean < 0.01
    assert estimate_stoploss(BM.with_(alpha=1.0), 1.0, 1.5, 200.0, FAST).mean < 0.05


def test_two_sided_bm_half():
    up, down = estimate_two_sided(BM, ExitQuery(E, 1.0, E**2), PathConfig(dt=1e-3, n_paths=20_000, base_seed=1))
    assert abs(up.mean - 0.5) < 3.5 * up.std_error
    assert up.n_censored == 0


def test_drawdown_bm_example():
    est = estimate_drawdown(BM, 1.0, E, 0.0, 0.0, 0.0, E, PathConfig(dt=1e-3, n_paths=20_000, base_seed=2))
    assert abs(est.mean - (1 - math.exp(-1))) < 3.5 * est.std_error + 5e-3


def test_stoploss_small_r():
    est = estimate_stoploss(BM, 2.0, 1.01, 0.0, PathConfig(dt=1e-4, n_paths=2000, base_seed=3))
    assert est.mean == pytest.approx(2.0, rel=0.02)


def test_standard_error_scaling():
    m = HE.with_(alpha=1.0, p=0.2)
    a = estimate_first_passage(m, 1.5, 2.0, 0.5, PathConfig(dt=1e-3, n_paths=4000, base_seed=9))
    b = estimate_first_passage(m, 1.5, 2.0, 0.5, PathConfig(dt=1e-3, n_paths=16000, base_seed=9))
    assert a.std_error / b.std_error == pytest.approx(2.0, rel=0.2)


def test_dt_halving_moves_less_than_one_se():
    m = HE.with_(alpha=1.0, p=0.2)
    q = ExitQuery(1.5, 1.0, 2.0, 0.7)
    a = estimate_two_sided(m, q, PathConfig(dt=2e-4, n_paths=20_000, base_seed=4))[0]
    b = estimate_two_sided(m, q, PathConfig(dt=1e-4, n_paths=20_000, base_seed=4))[0]
    assert abs(a.mean - b.mean) < a.std_error


def test_formula_agreement_quick():
    m = HE.with_(alpha=1.0, p=0.2)
    f = two_sided_up(m, 1.5, 1.0, 2.0, 0.7)
    est = estimate_two_sided(m, ExitQuery(1.5, 1.0, 2.0, 0.7), PathConfig(dt=1e-4, n_paths=10_000, base_seed=10))[0]
    assert abs(est.z_score(f)) < 3
    spec = DrawdownSpec(2.0)
    mb = BM.with_(alpha=1.0)
    g = drawdown_transform(mb, 1.0, 3.0, 0.5, 0.3, 1.0, spec)
    est = estimate_drawdown(mb, 1.0, 3.0, 0.5, 0.3, 1.0, spec, PathConfig(dt=1e-4, n_paths=10_000, base_seed=10))
    assert abs(est.z_score(g)) < 3


def test_martingale_start_value():
    m = BM.with_(alpha=1.0)
    ws, zs = estimate_martingale(m, 1.5, 2.0, 0.5, [0.0, 0.05], FAST)
    w0 = build_calW(m, 0.5, (math.log(2.0), 1024)).W_log(math.log(1.5))
    assert ws[0].std_error == 0.0 and ws[0].mean == pytest.approx(w0, rel=1e-12)
    assert zs[0].std_error == 0.0
    with pytest.raises(ValueError):
        estimate_martingale(m, 0.5, 2.0, 0.5, [0.0], FAST)


def test_event_log(tmp_path):
    out = run_paths(BM, 0.5, 0.0, 1.0, PathConfig(dt=1e-3, n_paths=5, base_seed=1))
    path = tmp_path / "ev.csv"
    write_event_log(out, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["path_id", "event", "levy_time", "lamperti_time", "y_value"]
    assert len(rows) == 6 and {r[1] for r in rows[1:]} <= {"up", "down"}
