from __future__ import annotations

import csv
import io
import math

import pytest

from pssmp import cli
from pssmp.exit_engine import two_sided_down, two_sided_up
from pssmp.levy_model import SnlpModel


def run(argv, capsys):
    status = cli.run([str(a) for a in argv])
    out = capsys.readouterr()
    return status, out.out, out.err


def kv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return {r[0]: float(r[1]) for r in rows[1:]}


@pytest.mark.parametrize(
    "text,value",
    [
        ("e", math.e),
        ("e^2", math.e**2),
        ("2*exp(1)", 2 * math.e),
        ("-1.5e-3", -1.5e-3),
        ("inf", math.inf),
        ("sqrt(2)/2", math.sqrt(2) / 2),
        ("log(e^3)", math.log(math.e**3)),
        ("pi", math.pi),
    ],
)
def test_parse_number(text, value):
    assert cli.parse_number(text) == value


@pytest.mark.parametrize("text", ["__import__('os')", "e.real", "1/0", "x", "exp(1, 2)", "[1]", "True"])
def test_parse_number_rejects(text):
    with pytest.raises(ValueError):
        cli.parse_number(text)


def test_exit_example(cfg_dir, capsys):
    st, out, _ = run(["exit", "--model", cfg_dir / "bm.cfg", "--y", "e", "--c", "1", "--d", "e^2", "--q", "0"], capsys)
    assert st == 0
    v = kv(out)
    assert v["up"] == pytest.approx(0.5, abs=1e-12) and v["down"] == pytest.approx(0.5, abs=1e-12)
    st, out, _ = run(["exit", "--model", cfg_dir / "bm.cfg", "--y", "1", "--d", "e", "--q", "0.5"], capsys)
    assert st == 0 and kv(out)["first_passage_up"] == pytest.approx(math.exp(-1), rel=1e-12)


def test_scale_example(cfg_dir, capsys, tmp_path):
    out_path = tmp_path / "scale.csv"
    argv = ["scale", "--model", cfg_dir / "bm.cfg", "--q", "0.5", "--xmax", "3", "--out", out_path]
    assert run(argv, capsys)[0] == 0
    first = out_path.read_bytes()
    lines = first.decode().splitlines()
    assert lines[1] == "y,calW,calW_d,calZ,calZ_d" and len(lines) == 2 + 1025
    y, w, wd, z, zd = map(float, lines[-1].split(","))
    assert y == pytest.approx(math.exp(3)) and w == pytest.approx(2 * math.sinh(3), rel=1e-9)
    assert z == pytest.approx(math.cosh(3), rel=1e-9) and wd == pytest.approx(2 * math.cosh(3) / y, rel=1e-8)
    assert run(argv, capsys)[0] == 0
    assert out_path.read_bytes() == first


def test_drawdown_and_stoploss(cfg_dir, capsys):
    st, out, _ = run(["drawdown", "--model", cfg_dir / "bm.cfg", "--y", "1", "--d", "e", "--r", "e"], capsys)
    v = kv(out)
    assert st == 0 and v["survival"] == pytest.approx(math.exp(-1), rel=1e-8)
    assert v["drawdown_transform"] == pytest.approx(1 - math.exp(-1), rel=1e-8)
    table = cfg_dir / "r.csv"
    table.write_text("z,r\n1,1.5\n2,2.0\n")
    st, out, _ = run(["drawdown", "--model", cfg_dir / "hyperexp.cfg", "--y", "1", "--d", "3", "--r-table", table, "--q", "0.2"], capsys)
    assert st == 0 and 0 < kv(out)["survival"] < 1
    st, out, _ = run(["stoploss", "--model", cfg_dir / "hyperexp.cfg", "--y", "1", "--r", "1.5", "--q", "0.3"], capsys)
    assert st == 0 and 0 < kv(out)["stoploss_value"] < 1


def test_exit_statuses(cfg_dir, capsys, tmp_path):
    m = cfg_dir / "bm.cfg"
    assert run(["exit", "--model", m, "--y", "3", "--c", "1", "--d", "2"], capsys)[0] == 1
    assert run(["exit", "--model", tmp_path / "missing.cfg", "--y", "1", "--d", "2"], capsys)[0] == 1
    assert run(["exit", "--model", m, "--y", "oops", "--d", "2"], capsys)[0] == 1
    assert run(["bogus"], capsys)[0] == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("sigma2 = 0\nmu_tilde = 1\n")
    assert run(["exit", "--model", bad, "--y", "1", "--d", "2"], capsys)[0] == 1
    neg = tmp_path / "neg.cfg"
    neg.write_text("sigma2 = 1\nmu_tilde = 0.5\np = 0.1\nalpha = -1\n")
    st, _, err = run(["stoploss", "--model", neg, "--y", "1", "--r", "1.5"], capsys)
    assert st == 1 and "explode" in err
    # a grid far too coarse for the rate: certification failure
    fv = tmp_path / "fv.cfg"
    fv.write_text("sigma2 = 0\nmu_tilde = 1.5\njumps = [[1.0, 3.0]]\n")
    st, _, err = run(["exit", "--model", fv, "--y", "2", "--c", "1", "--d", "1e6", "--q", "1e6", "--n", "8"], capsys)
    assert st == 2 and "certification" in err


def test_spectrally_positive_dual(tmp_path, capsys):
    # spectrally positive X' with upward hyperexponential jumps; its dual is the HE-type model below
    (tmp_path / "sp.cfg").write_text("sigma2 = 0.5\nmu_tilde = -0.3\njumps = [[1.0, 2.0]]\np = 0.1\nalpha = -1.0\n")
    dual = SnlpModel(0.5, 0.3, ((1.0, 2.0),), p=0.1, alpha=1.0)
    st, out, _ = run(
        ["exit", "--model", tmp_path / "sp.cfg", "--spectrally-positive", "--y", "1.5", "--c", "1", "--d", "2", "--q", "0.4"],
        capsys,
    )
    v = kv(out)
    # Y' = 1/Y: Y' leaves (1, 2) upwards exactly when Y leaves (1/2, 1) downwards
    assert v["up"] == pytest.approx(two_sided_down(dual, 1 / 1.5, 0.5, 1.0, 0.4, 0.0), rel=1e-12)
    assert v["down"] == pytest.approx(two_sided_up(dual, 1 / 1.5, 0.5, 1.0, 0.4), rel=1e-12)
    st, out, _ = run(
        ["mc", "--model", tmp_path / "sp.cfg", "--spectrally-positive", "--y", "1.5", "--c", "1", "--d", "2", "--q", "0.4",
         "--paths", "20000", "--dt", "1e-3", "--seed", "3"],
        capsys,
    )
    rows = {r[0]: r for r in csv.reader(io.StringIO(out))}
    mean, se = float(rows["down"][1]), float(rows["down"][2])
    assert abs(mean - v["down"]) < 4 * se
    st, out, _ = run(
        ["drawdown", "--model", tmp_path / "sp.cfg", "--spectrally-positive", "--y", "1", "--d", "0.5", "--r", "1.5"], capsys
    )
    assert st == 0 and "drawup_transform" in out


def test_mc_command(cfg_dir, capsys, tmp_path):
    log = tmp_path / "ev.csv"
    argv = ["mc", "--model", cfg_dir / "bm.cfg", "--y", "e", "--c", "1", "--d", "e^2", "--paths", "500", "--dt", "1e-3",
            "--event-log", log, "--backend", "numpy"]
    st, out, _ = run(argv, capsys)
    assert st == 0 and out.splitlines()[0] == "quantity,mc_mean,se,n_paths,n_censored"
    assert len(log.read_text().splitlines()) == 501


def test_verify_small_and_deterministic(cfg_dir, capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("PSSMP_NUM_THREADS", "1")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["verify", "--model", cfg_dir / "bm.cfg", "--paths", "3000", "--dt", "1e-3", "--seed", "42", "--q", "0.3"]
    sa = run(base + ["--out", a], capsys)[0]
    sb = run(base + ["--out", b], capsys)[0]
    assert sa == sb and a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert "name,formula,mc_mean,se,z,verdict" in text and "complement:up+down-1[q=0]" in text
    # an impossible z-threshold fails the suite with status 3
    assert run(base + ["--z-max", "0", "--out", b], capsys)[0] == 3
