"""Command-line front end.

Subcommands
-----------
scale      grid table of calW, calZ and their y-derivatives
exit       two-sided exit (and first passage when ``--c`` is omitted)
drawdown   drawdown survival and transform for constant or tabulated ``r``
stoploss   trailing stop-loss sale value
mc         Monte Carlo run for an exit or drawdown query, with event log
verify     formula-vs-simulation report for one model

Exit status: 0 ok, 1 invalid input, 2 numerical certification failure,
3 verification failure.  Diagnostics go to stderr; results go to stdout or
``--out``.  ``PSSMP_NUM_THREADS`` caps numba's thread pool.
"""
from __future__ import annotations

import argparse
import ast
import csv
import io
import math
import operator
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import NonConvergence, PssmpError, QuadratureFailure, TailNotCertified
from .exit_engine import (
    ComplementWarning,
    DrawdownSpec,
    ExitQuery,
    drawdown_survival,
    drawdown_transform,
    first_passage_up,
    stoploss_supported,
    stoploss_value,
    two_sided_down,
    two_sided_up,
)
from .levy_model import SnlpModel, load_model
from .mc_oracle import PathConfig, mc_estimate, run_paths, write_event_log
from . import mc_kernels as K
from .pssmp_scale import build_scale_set, dump_scale_csv

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

# --------------------------------------------------------------------------
# numeric literals such as ``e^2``, ``exp(1)/2``, ``inf``

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"e": math.e, "pi": math.pi, "inf": math.inf}
_FUNCS = {"exp": math.exp, "log": math.log, "sqrt": math.sqrt}


def parse_number(text: str) -> float:
    """Evaluate a small arithmetic expression to a float.

    ``^`` means power.  Names ``e``, ``pi``, ``inf`` and the functions
    ``exp``, ``log``, ``sqrt`` are available; nothing else is evaluated.
    The result is the correctly rounded double of each intermediate step,
    so ``e^2`` equals ``math.e ** 2`` rather than ``math.exp(2)``.
    """

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"unsupported expression element in {text!r}")

    try:
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
        return float(ev(tree))
    except (SyntaxError, ZeroDivisionError, OverflowError, TypeError) as exc:
        raise ValueError(f"cannot parse number {text!r}: {exc}") from exc


def _num(text: str) -> float:
    try:
        return parse_number(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


# --------------------------------------------------------------------------
# spectrally positive inputs


@dataclass(frozen=True)
class Dual:
    """Maps a query on a spectrally positive ``Y'`` to one on ``Y = 1/Y'``."""

    active: bool = False

    def model(self, m: SnlpModel) -> SnlpModel:
        if not self.active:
            return m
        return m.with_(mu=-m.mu, alpha=-m.alpha)

    def point(self, v: float) -> float:
        return 1.0 / v if self.active else v

    def barriers(self, c, d):
        """Lower/upper barriers of Y from those of Y'."""
        if not self.active:
            return c, d
        return (0.0 if d is None or math.isinf(d) else 1.0 / d), (math.inf if c is None or c == 0 else 1.0 / c)

    def spec(self, spec: DrawdownSpec) -> DrawdownSpec:
        """r as a function of the running infimum of Y' becomes r(1/z) of the sup of Y."""
        if not self.active or spec.is_constant:
            return spec
        z = 1.0 / np.asarray(spec.z_knots, dtype=float)[::-1]
        return DrawdownSpec.table(z, np.asarray(spec.r_values, dtype=float)[::-1])

    def label(self, name: str) -> str:
        if not self.active:
            return name
        swap = {"up": "down", "down": "up", "drawdown": "drawup", "sup": "inf"}
        return "_".join(swap.get(p, p) for p in name.split("_"))


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model file (sigma2, mu_tilde, jumps, p, alpha)")
    p.add_argument("--out", help="write the result here instead of stdout")
    p.add_argument(
        "--spectrally-positive",
        action="store_true",
        help="the model file describes upward jumps; work with the dual process 1/Y",
    )
    p.add_argument("--n", type=int, default=1024, help="log-grid intervals per scale build")


def _mc_flags(p: argparse.ArgumentParser, paths: int) -> None:
    p.add_argument("--paths", type=int, default=paths)
    p.add_argument("--seed", type=int, default=20240611)
    p.add_argument("--dt", type=_num, default=1e-4)
    p.add_argument("--horizon", type=_num, default=50.0, help="cap on the Y clock")
    p.add_argument("--no-bridge", action="store_true", help="disable Brownian-bridge extrema")
    p.add_argument("--backend", choices=["numba", "numpy"])


def _r_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--r", type=_num, help="constant drawdown ratio r > 1")
    g.add_argument("--r-table", help="CSV file of (z, r) knots, piecewise linear in z")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pssmp", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scale", help="tabulate calW, calZ and derivatives")
    _common(p)
    p.add_argument("--q", type=_num, default=0.0)
    p.add_argument("--theta", type=_num, default=0.0)
    p.add_argument("--xmax", type=_num, default=3.0, help="grid covers y in [1, e^xmax]")

    p = sub.add_parser("exit", help="two-sided exit or first passage upwards")
    _common(p)
    for k in ("y", "d"):
        p.add_argument(f"--{k}", type=_num, required=True)
    p.add_argument("--c", type=_num, help="lower barrier; omit for first passage upwards")
    p.add_argument("--q", type=_num, default=0.0)
    p.add_argument("--theta", type=_num, default=0.0)

    p = sub.add_parser("drawdown", help="drawdown survival and transform")
    _common(p)
    p.add_argument("--y", type=_num, required=True)
    p.add_argument("--d", type=_num, default=math.inf, help="upper barrier (lower barrier of Y' when dual)")
    p.add_argument("--q", type=_num, default=0.0)
    p.add_argument("--gamma", type=_num, default=0.0)
    p.add_argument("--theta", type=_num, default=0.0)
    _r_flags(p, required=True)

    p = sub.add_parser("stoploss", help="trailing stop-loss sale value")
    _common(p)
    p.add_argument("--y", type=_num, required=True)
    p.add_argument("--r", type=_num, required=True)
    p.add_argument("--q", type=_num, default=0.0)

    p = sub.add_parser("mc", help="simulate an exit or drawdown query")
    _common(p)
    p.add_argument("--y", type=_num, required=True)
    p.add_argument("--c", type=_num, default=0.0)
    p.add_argument("--d", type=_num, default=math.inf)
    p.add_argument("--q", type=_num, default=0.0)
    p.add_argument("--gamma", type=_num, default=0.0)
    p.add_argument("--theta", type=_num, default=0.0)
    _r_flags(p)
    p.add_argument("--event-log", help="per-path CSV of events")
    _mc_flags(p, 100_000)

    p = sub.add_parser("verify", help="formula vs Monte Carlo report")
    _common(p)
    p.add_argument("--y", type=_num, default=1.5)
    p.add_argument("--c", type=_num, default=1.0)
    p.add_argument("--d", type=_num, default=2.0)
    p.add_argument("--q", type=_num, default=0.5)
    p.add_argument("--gamma", type=_num, default=0.5)
    p.add_argument("--theta", type=_num, default=1.0)
    p.add_argument("--r", type=_num, default=1.5)
    p.add_argument("--z-max", type=_num, default=3.0, help="largest accepted |z-score|")
    _mc_flags(p, 100_000)
    return ap


def _read_r_table(path) -> DrawdownSpec:
    z, r = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                z.append(parse_number(row[0]))
                r.append(parse_number(row[1]))
            except (ValueError, IndexError):
                if z:  # only a header line may be non-numeric
                    raise
    return DrawdownSpec.table(z, r)


def _spec_from(args) -> DrawdownSpec | None:
    if getattr(args, "r_table", None):
        return _read_r_table(args.r_table)
    if getattr(args, "r", None) is not None:
        return DrawdownSpec(args.r)
    return None


def _path_config(args) -> PathConfig:
    return PathConfig(
        dt=args.dt,
        horizon=args.horizon,
        n_paths=args.paths,
        base_seed=args.seed,
        barrier_correction=not args.no_bridge,
        backend=args.backend,
    )


# --------------------------------------------------------------------------
# commands; each returns (text, status)


def _kv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for k, v in rows:
        w.writerow([k, _fmt(v)])
    return buf.getvalue()


def cmd_scale(args, model, dual):
    s = build_scale_set(model, args.q, args.theta, (args.xmax, args.n), n=args.n)
    text = dump_scale_csv(s)
    if dual.active:
        text = "# dual representative of a spectrally positive input; columns refer to 1/Y\n" + text
    return text, EXIT_OK


def cmd_exit(args, model, dual):
    y = dual.point(args.y)
    if args.c is None:
        if dual.active:
            raise ValueError("first passage for a spectrally positive input needs --c (use the two-sided form)")
        return _kv([("first_passage_up", first_passage_up(model, y, args.d, args.q))]), EXIT_OK
    c, d = dual.barriers(args.c, args.d)
    ExitQuery(y, c, d, args.q, args.theta)
    up = two_sided_up(model, y, c, d, args.q, n=args.n)
    down = two_sided_down(model, y, c, d, args.q, args.theta, n=args.n)
    return _kv([(dual.label("up"), up), (dual.label("down"), down)]), EXIT_OK


def cmd_drawdown(args, model, dual):
    y = dual.point(args.y)
    d = args.d
    if dual.active:  # --d is then the lower barrier of Y'
        d = 1.0 / d if 0 < d < math.inf else math.inf
    spec = dual.spec(_spec_from(args))
    rows = []
    if math.isfinite(d):
        rows.append((dual.label("survival"), drawdown_survival(model, y, d, args.q, spec)))
    rows.append((dual.label("drawdown_transform"), drawdown_transform(model, y, d, args.q, args.gamma, args.theta, spec)))
    return _kv(rows), EXIT_OK


def cmd_stoploss(args, model, dual):
    if dual.active:
        raise ValueError("stop-loss values are defined for spectrally negative inputs only")
    return _kv([("stoploss_value", stoploss_value(model, args.y, args.r, args.q))]), EXIT_OK


def cmd_mc(args, model, dual):
    y = dual.point(args.y)
    c, d = dual.barriers(args.c, args.d)
    spec = _spec_from(args)
    spec = dual.spec(spec) if spec is not None else None
    cfg = _path_config(args)
    lo = math.log(c) if c > 0 else -math.inf
    hi = math.log(d) if math.isfinite(d) else math.inf
    out = run_paths(model, math.log(y), lo, hi, cfg, spec)
    if args.event_log:
        write_event_log(out, args.event_log)
    code, tau = out["code"], out["tau_ev"]
    disc = np.exp(-args.q * tau)
    rows = []
    if math.isfinite(hi):
        rows.append(("up", np.where(code == K.UP, disc, 0.0)))
    if math.isfinite(lo):
        rows.append(("down", np.where(code == K.DOWN, disc * np.exp(args.theta * (out["x_ev"] - lo)), 0.0)))
    if spec is not None:
        level = out["xbar_ev"] - spec.s_log(out["xbar_ev"])
        v = disc * np.exp(-args.gamma * out["L_ev"] + args.theta * (out["x_ev"] - level))
        rows.append(("drawdown", np.where(code == K.DRAWDOWN, v, 0.0)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "mc_mean", "se", "n_paths", "n_censored"])
    for name, vals in rows:
        est = mc_estimate(vals, cfg, int(np.sum(code == K.CENSORED)))
        w.writerow([dual.label(name), _fmt(est.mean), _fmt(est.std_error), est.n_effective, est.n_censored])
    return buf.getvalue(), EXIT_OK


# --------------------------------------------------------------------------
# verification campaign


@dataclass
class ReportRow:
    name: str
    formula: float
    mc_mean: float | None = None
    se: float | None = None
    tol: float | None = None  # absolute tolerance for formula-only identities
    z: float | None = field(default=None, init=False)
    verdict: str = field(default="", init=False)

    def judge(self, z_max: float) -> None:
        if self.mc_mean is not None:
            diff = self.formula - self.mc_mean
            self.z = 0.0 if diff == 0 else (math.inf if self.se == 0 else diff / self.se)
            ok = abs(self.z) <= z_max
        else:
            ok = abs(self.formula) <= self.tol
        self.verdict = "PASS" if ok else "FAIL"


def _verify_rows(args, model: SnlpModel, dual: Dual) -> list[ReportRow]:
    cfg = _path_config(args)
    y = dual.point(args.y)
    c, d = dual.barriers(args.c, args.d)
    q, th, ga, r = args.q, args.theta, args.gamma, args.r
    xy, a, b = math.log(y), math.log(c), math.log(d)
    rows: list[ReportRow] = []
    L = dual.label

    def mc_row(name, formula, vals, out):
        est = mc_estimate(vals, cfg, int(np.sum(out["code"] == K.CENSORED)))
        rows.append(ReportRow(name, formula, est.mean, est.std_error))

    # two-sided exit: one simulation serves every weighting
    up = two_sided_up(model, y, c, d, q, n=args.n)
    dn0 = two_sided_down(model, y, c, d, q, 0.0, n=args.n)
    dnt = two_sided_down(model, y, c, d, q, th, n=args.n)
    out = run_paths(model, xy, a, b, cfg)
    code, disc = out["code"], np.exp(-q * out["tau_ev"])
    mc_row(L("up") + f"[q={q!r}]", up, np.where(code == K.UP, disc, 0.0), out)
    mc_row(L("down") + f"[q={q!r},theta=0]", dn0, np.where(code == K.DOWN, disc, 0.0), out)
    mc_row(
        L("down") + f"[q={q!r},theta={th!r}]",
        dnt,
        np.where(code == K.DOWN, disc * np.exp(th * (out["x_ev"] - a)), 0.0),
        out,
    )
    if model.p == 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ComplementWarning)
            tot = two_sided_up(model, y, c, d, 0.0, n=args.n) + two_sided_down(model, y, c, d, 0.0, 0.0, n=args.n)
        rows.append(ReportRow("complement:up+down-1[q=0]", tot - 1.0, tol=1e-6))

    if model.alpha >= 0 and not dual.active:
        fp = first_passage_up(model, y, d, q)
        out = run_paths(model, xy, -math.inf, b, cfg)
        mc_row(f"first_passage_up[q={q!r}]", fp, np.where(out["code"] == K.UP, np.exp(-q * out["tau_ev"]), 0.0), out)

    # drawdown with constant r below the upper barrier
    spec = DrawdownSpec(r)
    surv = drawdown_survival(model, y, d, q, spec)
    tr = drawdown_transform(model, y, d, q, ga, th, spec)
    out = run_paths(model, xy, -math.inf, b, cfg, spec)
    code, disc = out["code"], np.exp(-q * out["tau_ev"])
    mc_row(L("drawdown_survival") + f"[q={q!r},r={r!r}]", surv, np.where(code == K.UP, disc, 0.0), out)
    level = out["xbar_ev"] - math.log(r)
    v = disc * np.exp(-ga * out["L_ev"] + th * (out["x_ev"] - level))
    mc_row(L("drawdown_transform") + f"[q={q!r},gamma={ga!r},theta={th!r},r={r!r}]", tr, np.where(code == K.DRAWDOWN, v, 0.0), out)
    if model.p == 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ComplementWarning)
            tot = drawdown_survival(model, y, d, 0.0, spec) + drawdown_transform(model, y, d, 0.0, 0.0, 0.0, spec)
        rows.append(ReportRow("complement:survival+drawdown-1[q=0]", tot - 1.0, tol=1e-6))

    if not dual.active and stoploss_supported(model):
        sl = stoploss_value(model, y, r, q)
        out = run_paths(model, xy, -math.inf, math.inf, cfg, spec)
        vals = np.where(out["code"] == K.DRAWDOWN, np.exp(-q * out["tau_ev"] + out["x_ev"]), 0.0)
        mc_row(f"stoploss[q={q!r},r={r!r}]", sl, vals, out)
    return rows


def format_report(rows: list[ReportRow], header: dict) -> str:
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "formula", "mc_mean", "se", "z", "verdict"])
    for r in rows:
        w.writerow([r.name, _fmt(r.formula), _fmt(r.mc_mean), _fmt(r.se), _fmt(r.z), r.verdict])
    n_fail = sum(r.verdict == "FAIL" for r in rows)
    buf.write(f"# result={'PASS' if n_fail == 0 else 'FAIL'} failed={n_fail} total={len(rows)}\n")
    return buf.getvalue()


def cmd_verify(args, model, dual):
    rows = _verify_rows(args, model, dual)
    for r in rows:
        r.judge(args.z_max)
    header = {
        "model": f"sigma2={model.sigma2!r} mu_tilde={model.mu!r} jumps={list(model.jumps)!r} p={model.p!r} alpha={model.alpha!r}",
        "dual": str(dual.active).lower(),
        "query": f"y={args.y!r} c={args.c!r} d={args.d!r}",
        "paths": f"n={args.paths} seed={args.seed} dt={args.dt!r} horizon={args.horizon!r} bridge={str(not args.no_bridge).lower()}",
        "z_max": repr(args.z_max),
    }
    text = format_report(rows, header)
    status = EXIT_OK if all(r.verdict == "PASS" for r in rows) else EXIT_VERIFY
    return text, status


COMMANDS = {
    "scale": cmd_scale,
    "exit": cmd_exit,
    "drawdown": cmd_drawdown,
    "stoploss": cmd_stoploss,
    "mc": cmd_mc,
    "verify": cmd_verify,
}


def _threads_from_env() -> None:
    raw = os.environ.get("PSSMP_NUM_THREADS", "").strip()
    if raw:
        _accel.set_num_threads(int(raw))


def run(argv=None) -> int:
    """Parse ``argv``, dispatch, write the output; return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        _threads_from_env()
        if not os.path.exists(args.model):
            raise FileNotFoundError(f"model file not found: {args.model}")
        dual = Dual(args.spectrally_positive)
        model = dual.model(load_model(args.model))
        text, status = COMMANDS[args.command](args, model, dual)
    except (NonConvergence, TailNotCertified, QuadratureFailure) as exc:
        print(f"pssmp: numerical certification failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PssmpError, ValueError, OSError) as exc:
        print(f"pssmp: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if status == EXIT_VERIFY:
        print("pssmp: verification failed", file=sys.stderr)
    return status


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
