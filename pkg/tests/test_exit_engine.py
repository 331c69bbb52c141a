from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pssmp.errors import BarrierOrderError, UnsupportedIndexError, UnsupportedModelError
from pssmp.exit_engine import (
    ComplementWarning,
    DrawdownSpec,
    ExitQuery,
    ExitResult,
    ScaleCache,
    drawdown_density,
    drawdown_survival,
    drawdown_transform,
    first_passage_up,
    stoploss_supported,
    stoploss_value,
    two_sided_down,
    two_sided_up,
)
from pssmp.pssmp_scale import build_calW

from conftest import BM, FV, HE

E = math.e


def test_two_sided_examples():
    assert two_sided_up(BM, E, 1.0, E**2, 0.0) == pytest.approx(0.5, abs=1e-12)
    assert two_sided_down(BM, E, 1.0, E**2, 0.0, 0.0) == pytest.approx(0.5, abs=1e-12)
    m = HE.with_(alpha=1.0, p=0.2)
    assert two_sided_up(m, 2.0, 1.0, 2.0, 0.7) == 1.0
    assert two_sided_down(m, 2.0, 1.0, 2.0, 0.7, 1.0) == pytest.approx(0.0, abs=1e-14)
    assert two_sided_up(m, ExitQuery(1.5, 1.0, 2.0, 0.7)) == two_sided_up(m, 1.5, 1.0, 2.0, 0.7)


def test_exit_query_validation():
    with pytest.raises(BarrierOrderError):
        ExitQuery(0.5, 1.0, 2.0)
    with pytest.raises(BarrierOrderError):
        ExitQuery(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ExitQuery(1.5, 1.0, 2.0, q=-1.0)
    with pytest.raises(BarrierOrderError):
        two_sided_up(BM, 3.0, 1.0, 2.0, 0.0)


def test_full_result_has_error_budget():
    r = two_sided_down(HE.with_(alpha=1.0), 1.5, 1.0, 2.0, 0.5, 1.0, full=True)
    assert isinstance(r, ExitResult)
    assert r.errors["discretisation"] < 1e-7
    assert float(r) == r.value


def test_first_passage_examples():
    assert first_passage_up(BM, 1.0, E, 0.5) == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert first_passage_up(HE.with_(alpha=1.0), 2.0, 2.0, 0.5) == 1.0
    with pytest.raises(UnsupportedIndexError):
        first_passage_up(BM.with_(alpha=-1.0), 1.0, 2.0, 0.5)


def test_first_passage_is_limit_of_two_sided():
    m = HE.with_(alpha=1.0, p=0.1)
    fp = first_passage_up(m, 1.5, 2.0, 0.5)
    ts = two_sided_up(m, 1.5, 1e-3, 2.0, 0.5, n=4096)
    assert ts == pytest.approx(fp, rel=2e-4)


def test_self_similarity():
    m = HE.with_(alpha=1.3, p=0.2)
    base = two_sided_up(m, 1.5, 1.0, 2.0, 0.7)
    for k in (0.5, 2.0, 3.7):
        assert two_sided_up(m, 1.5 * k, k, 2 * k, 0.7 * k ** (-1.3)) == pytest.approx(base, abs=1e-10)


def test_monotonicity():
    m = HE.with_(alpha=1.0, p=0.2)
    ys = [1.1, 1.3, 1.5, 1.9]
    v = [two_sided_up(m, y, 1.0, 2.0, 0.7) for y in ys]
    assert all(b > a for a, b in zip(v, v[1:]))
    vq = [two_sided_up(m, 1.5, 1.0, 2.0, q) for q in (0.0, 0.5, 1.0, 4.0)]
    assert all(b < a for a, b in zip(vq, vq[1:]))
    vp = [two_sided_up(m.with_(p=p), 1.5, 1.0, 2.0, 0.7) for p in (0.0, 0.2, 1.0)]
    assert all(b < a for a, b in zip(vp, vp[1:]))


@pytest.mark.parametrize("m", [BM.with_(alpha=1.0), HE.with_(alpha=-1.0), FV.with_(alpha=0.5)])
def test_exit_complement(m):
    with warnings.catch_warnings():
        warnings.simplefilter("error", ComplementWarning)
        tot = two_sided_up(m, 1.5, 1.0, 2.0, 0.0) + two_sided_down(m, 1.5, 1.0, 2.0, 0.0, 0.0)
    assert tot == pytest.approx(1.0, abs=1e-6)


# drawdown ------------------------------------------------------------------


def test_drawdown_examples():
    spec = DrawdownSpec(E)
    assert drawdown_survival(BM, 1.0, E, 0.0, spec) == pytest.approx(math.exp(-1.0), rel=1e-8)
    assert drawdown_transform(BM, 1.0, E, 0.0, 0.0, 0.0, spec) == pytest.approx(1 - math.exp(-1.0), rel=1e-8)
    assert drawdown_survival(BM, 1.0, E**2, 0.0, 2.0) == pytest.approx(math.exp(-2 / math.log(2.0)), rel=1e-8)


def test_drawdown_spec_validation():
    with pytest.raises(ValueError):
        DrawdownSpec(1.0)
    with pytest.raises(ValueError):
        DrawdownSpec.table([1.0, 2.0], [1.5, 0.9])
    with pytest.raises(ValueError):
        DrawdownSpec.table([2.0, 1.0], [1.5, 1.6])
    s = DrawdownSpec.table([1.0, 3.0], [1.5, 2.5])
    assert s.r(2.0) == pytest.approx(2.0) and s.r(10.0) == 2.5


def test_drawdown_complement_piecewise():
    spec = DrawdownSpec.table([1.0, 1.6, 3.0], [1.4, 2.2, 1.8])
    for m in (HE.with_(alpha=-1.0), BM.with_(alpha=1.0)):
        with warnings.catch_warnings():
            warnings.simplefilter("error", ComplementWarning)
            tot = drawdown_survival(m, 1.0, 3.0, 0.0, spec) + drawdown_transform(m, 1.0, 3.0, 0.0, 0.0, 0.0, spec)
        assert tot == pytest.approx(1.0, abs=1e-6)


def test_log_survival_derivative_is_minus_integrand():
    m = HE.with_(alpha=1.0, p=0.1)
    q, r = 0.5, 1.8
    d = 2.5
    h = 1e-4
    f = lambda dd: math.log(drawdown_survival(m, 1.0, dd, q, r))  # noqa: E731
    slope = (f(d * math.exp(h)) - f(d * math.exp(-h))) / (2 * h)
    s = build_calW(m, q * (d / r) ** m.alpha, (math.log(r), 1024))
    integrand = s.dW_dx[-1] / s.gridW.values[-1]
    assert slope == pytest.approx(-integrand, rel=1e-6)


def test_survival_monotone_in_r():
    m = BM.with_(alpha=1.0)
    v = [drawdown_survival(m, 1.0, 3.0, 0.5, r) for r in (1.5, 2.0, 3.0, 6.0)]
    assert all(b > a for a, b in zip(v, v[1:]))


def test_infinite_barrier_with_killing_is_below_one():
    m = HE.with_(alpha=0.0, p=0.3)
    v = drawdown_transform(m, 1.0, math.inf, 0.0, 0.0, 0.0, 1.5)
    assert 0 < v < 1


def test_density_consistency():
    m = BM.with_(alpha=1.0, p=0.2)
    spec = DrawdownSpec(1.7)
    full = drawdown_transform(m, 1.0, math.inf, 0.3, 0.2, 0.5, spec)
    assert drawdown_density(m, 1.0, 0.3, 0.2, 0.5, spec, lambda z: 1.0) == pytest.approx(full, rel=1e-8)
    d = 2.5
    part = drawdown_transform(m, 1.0, d, 0.3, 0.2, 0.5, spec)
    ind = drawdown_density(m, 1.0, 0.3, 0.2, 0.5, spec, lambda z: 1.0 if z <= d else 0.0, breakpoints=(d,))
    assert ind == pytest.approx(part, rel=1e-7)
    tab = drawdown_density(m, 1.0, 0.3, 0.2, 0.5, spec, ([1.0, 50.0], [1.0, 1.0]))
    assert tab == pytest.approx(full, rel=1e-8)


def test_stoploss():
    m = BM.with_(alpha=1.0)
    v = stoploss_value(m, 1.0, 1.5, 0.3)
    dens = drawdown_density(m, 1.0, 0.3, 0.0, 1.0, DrawdownSpec(1.5), lambda z: z / 1.5)
    assert v == pytest.approx(dens, rel=1e-12)
    assert 0 < v < 1
    assert stoploss_value(BM, 2.0, 1.01, 0.0) == pytest.approx(2.0, rel=0.02)
    bad = BM.with_(alpha=-1.0, p=0.1)
    assert not stoploss_supported(bad)
    assert not stoploss_supported(BM.with_(alpha=-1.0, mu=0.5))
    assert stoploss_supported(BM.with_(alpha=-1.0, mu=-0.5))
    with pytest.raises(UnsupportedModelError):
        stoploss_value(bad, 1.0, 1.5, 0.1)
    with pytest.raises(ValueError):
        stoploss_value(m, 1.0, 1.0, 0.1)


def test_cache_reuse_and_threads():
    cache = ScaleCache(maxsize=4)
    m = HE.with_(alpha=1.0)
    a = two_sided_up(m, 1.5, 1.0, 2.0, 0.7, cache=cache)
    b = two_sided_up(m, 1.5, 1.0, 2.0, 0.7, cache=cache)
    assert a == b and cache.hits >= 1
    with ThreadPoolExecutor(4) as ex:
        vals = list(ex.map(lambda y: two_sided_up(m, y, 1.0, 2.0, 0.7, cache=cache), [1.2, 1.5, 1.8] * 4))
    serial = [two_sided_up(m, y, 1.0, 2.0, 0.7, cache=ScaleCache()) for y in [1.2, 1.5, 1.8] * 4]
    assert vals == serial
    for k in range(10):
        cache.calW(m, 0.1 * k, 1.0, 64)
    assert len(cache._data) <= 4
