"""Config-driven experiment runner.

Usage::

    pqlab run <config> [--workers N] [--out DIR] [--seed S] [--resolution N]
    pqlab validate <config>
    pqlab list-experiments

``<config>`` is an INI file or the name of a bundled experiment.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
import configparser
import csv
from dataclasses import dataclass, field
import io
import json
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__, boundary
from . import estimates as est
from .grid import Disc, build_grid
from .integrand import GrowthParams, ModelPQ
from .solver import DirichletProblem, minimize

CONFIG_DIR = Path(__file__).parent / "configs"
KINDS = ("prop2", "prop1_upper", "theorem1", "caccioppoli")


class ConfigInvalid(ValueError):
    def __init__(self, diagnostics):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


class IoFailure(OSError):
    pass


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(float(x)) for x in str(text).split(",") if x.strip()]


@dataclass
class ExperimentConfig:
    name: str
    kind: str
    seed: int = 0
    description: str = ""
    resolutions: list = field(default_factory=lambda: [64])
    p: float = 2.0
    q: list = field(default_factory=lambda: [4.0])
    mu: float = 1.0
    nu: float = 1.0
    nu_tilde: float = 1.0
    family: str = "quadratic"
    amplitudes: list = field(default_factory=lambda: [1.0])
    eps: list = field(default_factory=lambda: [0.1 * 2.0 ** -k for k in range(5)])
    delta: list = field(default_factory=lambda: [0.1 * 2.0 ** -k for k in range(5)])
    lambdas: list = field(default_factory=list)
    trials: int = 50
    slope_window: list = field(default_factory=lambda: [0.23, 0.27])
    checks: list = field(default_factory=lambda: ["theorem1"])
    ball_radius: float = 0.5
    tol: float = 1e-8
    raw: dict = field(default_factory=dict)

    def echo(self):
        return {k: v for k, v in self.__dict__.items() if k != "raw"}


def _read_config(source):
    path = Path(source)
    if not path.exists():
        bundled = CONFIG_DIR / f"{source}.ini"
        if not bundled.exists():
            raise ConfigInvalid([f"config {source!r} not found"])
        path = bundled
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigInvalid([f"unparsable config: {exc}"]) from exc
    return parser


def parse_config(source):
    """Parse an INI file (or bundled name) into an ExperimentConfig.

    Raises ConfigInvalid for syntax and type errors; semantic checks live in
    :func:`validate`.
    """
    ps = _read_config(source)
    diags = []
    raw = {s: dict(ps[s]) for s in ps.sections()}

    def get(section, key, conv, default):
        if not ps.has_option(section, key):
            return default
        try:
            return conv(ps.get(section, key))
        except ValueError:
            diags.append(f"[{section}] {key}: cannot parse {ps.get(section, key)!r}")
            return default

    if not ps.has_option("experiment", "name"):
        diags.append("[experiment] name: missing")
    if not ps.has_option("experiment", "kind"):
        diags.append("[experiment] kind: missing")
    if diags:
        raise ConfigInvalid(diags)
    d = ExperimentConfig(name=ps.get("experiment", "name"), kind=ps.get("experiment", "kind"))
    cfg = ExperimentConfig(
        name=d.name, kind=d.kind,
        seed=get("experiment", "seed", int, d.seed),
        description=get("experiment", "description", str, ""),
        resolutions=get("domain", "resolution", _ints, d.resolutions),
        p=get("integrand", "p", float, d.p),
        q=get("integrand", "q", _floats, d.q),
        mu=get("integrand", "mu", float, d.mu),
        nu=get("integrand", "nu", float, d.nu),
        nu_tilde=get("integrand", "nu_tilde", float, d.nu_tilde),
        family=get("boundary", "family", str, d.family).strip(),
        amplitudes=get("boundary", "amplitudes", _floats, d.amplitudes),
        eps=get("schedule", "eps", _floats, d.eps),
        delta=get("schedule", "delta", _floats, d.delta),
        lambdas=get("sweep", "lambdas", _floats, d.lambdas),
        trials=get("sweep", "trials", int, d.trials),
        slope_window=get("sweep", "slope_window", _floats, d.slope_window),
        checks=get("checks", "run", lambda s: [x.strip() for x in s.split(",") if x.strip()],
                   d.checks),
        ball_radius=get("checks", "ball_radius", float, d.ball_radius),
        tol=get("solver", "tol", float, d.tol),
        raw=raw,
    )
    if diags:
        raise ConfigInvalid(diags)
    return cfg


def _strictly_decreasing(xs):
    return all(a > b for a, b in zip(xs, xs[1:]))


def validate(cfg):
    """Return a list of human-readable diagnostics (empty when valid)."""
    if not isinstance(cfg, ExperimentConfig):
        try:
            cfg = parse_config(cfg)
        except ConfigInvalid as exc:
            return exc.diagnostics
    out = []
    if cfg.kind not in KINDS:
        out.append(f"[experiment] kind: unknown {cfg.kind!r}; expected one of {', '.join(KINDS)}")
    if any(n < 8 for n in cfg.resolutions):
        out.append("[domain] resolution: must be >= 8")
    if cfg.family not in boundary.FAMILIES:
        out.append(f"[boundary] family: unknown {cfg.family!r}")
    for key in ("eps", "delta"):
        xs = getattr(cfg, key)
        if not _strictly_decreasing(xs):
            out.append(f"[schedule] {key}: not strictly decreasing")
        if any(not 0 < x < 1 for x in xs):
            out.append(f"[schedule] {key}: values must lie in (0, 1)")
    if len(cfg.eps) != len(cfg.delta):
        out.append("[schedule] eps and delta must have equal length")
    if cfg.kind in ("theorem1", "caccioppoli"):
        for q in cfg.q:
            try:
                P = GrowthParams(cfg.p, q, cfg.mu, cfg.nu, max(cfg.nu, 1.0),
                                 cfg.nu_tilde)
            except ValueError as exc:
                out.append(f"[integrand] {exc}")
                continue
            out += [f"[integrand] {m}" for m in P.diagnostics(theorem=cfg.kind == "theorem1")]
        unknown = set(cfg.checks) - {"theorem1", "apriori", "caccioppoli"}
        if unknown:
            out.append(f"[checks] run: unknown checks {sorted(unknown)}")
    if cfg.kind in ("prop2", "prop1_upper"):
        if any(x < 1 for x in cfg.lambdas):
            out.append("[sweep] lambdas: contrast values must be >= 1")
        if not cfg.lambdas:
            out.append("[sweep] lambdas: missing")
    if cfg.kind == "prop2" and len(cfg.lambdas) < 3:
        out.append("[sweep] lambdas: need at least 3 values for an exponent fit")
    if cfg.kind == "prop1_upper" and cfg.trials < 1:
        out.append("[sweep] trials: must be >= 1")
    return out


# ----------------------------------------------------------------------------
# instances


def _data(family, amplitude, seed):
    if family == "affine":
        return boundary.affine((amplitude, 0.5 * amplitude))
    if family == "counterexample":
        return boundary.counterexample(amplitude)
    if family == "random":
        return boundary.band_limited(seed, amplitude=amplitude)
    return boundary.make(family, amplitude=amplitude)


def instances(cfg):
    """Instance records (plain dicts) in deterministic config order."""
    out = []
    if cfg.kind == "prop2":
        for n in cfg.resolutions:
            for lam in cfg.lambdas:
                out.append({"key": f"n={n},lambda={lam!r}", "n": n, "lambda": lam})
    elif cfg.kind == "prop1_upper":
        for n in cfg.resolutions:
            for i, lam in enumerate(cfg.lambdas):
                out.append({"key": f"n={n},lambda={lam!r}", "n": n, "lambda": lam,
                            "trials": cfg.trials, "seed": cfg.seed * 1000 + i})
    else:
        for n in cfg.resolutions:
            for q in cfg.q:
                for A in cfg.amplitudes:
                    out.append({"key": f"n={n},q={q!r},amplitude={A!r}", "n": n, "q": q,
                                "amplitude": A})
    for inst in out:
        inst.update(kind=cfg.kind, p=cfg.p, mu=cfg.mu, nu=cfg.nu, nu_tilde=cfg.nu_tilde,
                    family=cfg.family, seed=inst.get("seed", cfg.seed), eps=cfg.eps,
                    delta=cfg.delta, checks=cfg.checks, ball_radius=cfg.ball_radius,
                    tol=cfg.tol)
    return out


def _report_row(inst, rep):
    row = {"key": inst["key"], "check": rep.name, "resolution": inst["n"]}
    for k in ("q", "amplitude", "lambda"):
        if k in inst:
            row[k] = inst[k]
    row.update(lhs=rep.lhs, rhs=rep.rhs, implied_constant=rep.implied_constant,
               budget=rep.budget, verdict=rep.verdict)
    for k in ("mean", "term_p", "term_3p_q", "schedule_spread", "grad_linf"):
        if k in rep.details:
            row[k] = rep.details[k]
    return row


def run_instance(inst):
    """Run one instance; never raises.  Returns a plain result dict."""
    kind = inst["kind"]
    try:
        if kind == "prop2":
            lam = inst["lambda"]
            v, rep = est.solve_contrast(lam, boundary.counterexample(lam), inst["n"])
            ratio = est.linfty_l2_ratio(v, center=(0.0, 0.0), order=2, refine=True)
            rows = [{"lambda": lam, "ratio": ratio, "resolution": inst["n"]}]
            return {"key": inst["key"], "status": "ok", "rows": rows, "reports": []}
        if kind == "prop1_upper":
            reps = est.contrast_sweep(inst["n"], lambdas=(inst["lambda"],),
                                      trials=inst["trials"], seed=inst["seed"])
            rows = [_report_row(inst, r) for r in reps]
            return {"key": inst["key"], "status": "ok", "rows": [], "reports": rows}
        F = ModelPQ(inst["p"], inst["q"], inst["mu"], inst["nu"], inst["nu_tilde"])
        data = _data(inst["family"], inst["amplitude"], inst["seed"])
        extra = {}
        if kind == "theorem1":
            u, history = None, []
            for eps, delta in zip(inst["eps"], inst["delta"]):
                u, srep, info = est.regularized_minimizer(F, data, eps, delta, inst["n"],
                                                          tol=inst["tol"])
                history.append(info["sigma"])
            extra["schedule_steps"] = len(history)
        else:
            g = build_grid(Disc((0.0, 0.0), 1.0), inst["n"])
            u, srep = minimize(DirichletProblem(g, data, integrand=F, tol=inst["tol"]))
        reports = []
        ball = ((0.0, 0.0), inst["ball_radius"])
        for check in inst["checks"]:
            if check == "theorem1":
                r = est.check_theorem1(u, F, F.params)
            elif check == "apriori":
                r = est.check_theorem1(u, F, F.params, variant="apriori")
            else:
                r = est.check_caccioppoli(u, F, ball)
            reports.append(_report_row(inst, r))
        return {"key": inst["key"], "status": "ok", "rows": [], "reports": reports,
                "solver": {"iterations": srep.iterations, "residual": srep.residual}, **extra}
    except Exception as exc:  # crash isolation: record and continue
        return {"key": inst["key"], "status": f"error:{type(exc).__name__}",
                "message": str(exc), "rows": [], "reports": []}


def _map(insts, workers):
    if workers <= 1 or len(insts) <= 1:
        return [run_instance(s) for s in insts]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_instance, insts))


# ----------------------------------------------------------------------------
# aggregation and emission


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def aggregate(cfg, results):
    """Turn instance results into named tables, fits and verdict flags."""
    tables, fits, verdicts = {}, [], []
    if cfg.kind == "prop2":
        rows = [r for res in results for r in res["rows"]]
        tables["prop2_ratios.csv"] = (rows, ["lambda", "ratio", "resolution"])
        for n in cfg.resolutions:
            pairs = [(r["lambda"], r["ratio"]) for r in rows if r["resolution"] == n]
            if len(pairs) < 3:
                continue
            try:
                f = est.exponent_fit(pairs)
            except ValueError as exc:
                fits.append({"resolution": n, "error": type(exc).__name__})
                verdicts.append(False)
                continue
            lo, hi = cfg.slope_window
            ok = lo <= f.slope <= hi
            fits.append({"resolution": n, **f.row(), "window_lo": lo, "window_hi": hi,
                         "verdict": "pass" if ok else "fail"})
            verdicts.append(ok)
        tables["prop2_fit.csv"] = (fits, ["resolution", "slope", "intercept", "residual",
                                          "half_width", "pairs", "window_lo", "window_hi",
                                          "verdict"])
        return tables, fits, verdicts
    reps = [r for res in results for r in res["reports"]]
    by_check = {}
    for r in reps:
        by_check.setdefault(r["check"], []).append(r)
        verdicts.append(r["verdict"] == "pass")
    for check, rows in by_check.items():
        cols = ["key", "check", "resolution"] + [k for k in ("q", "amplitude", "lambda")
                                                 if k in rows[0]]
        cols += ["lhs", "rhs", "implied_constant", "budget", "verdict"]
        cols += [k for k in ("mean", "term_p", "term_3p_q", "grad_linf") if k in rows[0]]
        tables[f"{check}_reports.csv"] = (rows, cols)
    if cfg.kind == "theorem1" and "theorem1" in by_check:
        for n in cfg.resolutions:
            for q in cfg.q:
                rows = [r for r in by_check["theorem1"] if r["resolution"] == n and r["q"] == q]
                if len(rows) < 3:
                    continue
                c = [r["implied_constant"] for r in rows]
                spread = max(c) / min(c) if min(c) > 0 else math.inf
                bound = max(1.0 / cfg.p, 2.0 / (3 * cfg.p - q)) + 0.05
                try:
                    f = est.exponent_fit([(r["mean"], r["lhs"]) for r in rows])
                    slope = f.slope
                except ValueError:
                    slope = math.nan
                ok_slope = slope <= bound
                ok_spread = spread < 2.0
                fits.append({"resolution": n, "q": q, "slope": slope, "slope_bound": bound,
                             "constant_spread": spread, "slope_ok": ok_slope,
                             "spread_ok": ok_spread})
                verdicts += [ok_slope, ok_spread]
        tables["theorem1_fit.csv"] = (fits, ["resolution", "q", "slope", "slope_bound",
                                             "constant_spread", "slope_ok", "spread_ok"])
    if cfg.kind == "caccioppoli" and "caccioppoli" in by_check:
        rows = by_check["caccioppoli"]
        for q in cfg.q:
            for A in cfg.amplitudes:
                c = [r["implied_constant"] for r in rows if r["q"] == q and r["amplitude"] == A]
                if len(c) >= 2:
                    spread = max(c) / min(c) if min(c) > 0 else math.inf
                    fits.append({"q": q, "amplitude": A, "constant_spread": spread,
                                 "spread_ok": spread < 2.0})
                    verdicts.append(spread < 2.0)
        tables["caccioppoli_refinement.csv"] = (fits, ["q", "amplitude", "constant_spread",
                                                       "spread_ok"])
    if cfg.kind == "prop1_upper" and "prop1_upper" in by_check:
        rows = by_check["prop1_upper"]
        maxima = {n: max(r["implied_constant"] for r in rows if r["resolution"] == n)
                  for n in cfg.resolutions}
        vals = list(maxima.values())
        spread = max(vals) / min(vals) if min(vals) > 0 else math.inf
        fits = [{"resolution": n, "max_implied_constant": m} for n, m in maxima.items()]
        fits.append({"resolution": "all", "max_implied_constant": max(vals),
                     "constant_spread": spread, "spread_ok": spread < 2.0})
        verdicts.append(spread < 2.0)
        tables["prop1_upper_maxima.csv"] = (fits, ["resolution", "max_implied_constant",
                                                   "constant_spread", "spread_ok"])
    return tables, fits, verdicts


def _summary(cfg, results, tables, fits, verdicts):
    lines = [f"experiment: {cfg.name} ({cfg.kind})", f"seed: {cfg.seed}",
             f"instances: {len(results)}, ok: {sum(r['status'] == 'ok' for r in results)}"]
    for res in results:
        if res["status"] != "ok":
            lines.append(f"  {res['key']}: {res['status']} {res.get('message', '')}")
    for name, (rows, _) in sorted(tables.items()):
        if name.endswith("_reports.csv") and rows:
            m = max(rows, key=lambda r: r["implied_constant"])
            lines.append(f"{name[:-12]}: max implied constant {m['implied_constant']:.6g} "
                         f"(budget {m['budget']:.6g}) at {m['key']}")
    for f in fits:
        if "slope" in f:
            extra = f" +/- {f['half_width']:.3g}" if "half_width" in f else ""
            rest = ", ".join(f"{k}={_fmt(v)}" for k, v in f.items()
                             if k not in ("slope", "half_width"))
            lines.append(f"fitted slope {f['slope']:.6g}{extra} ({rest})")
        elif "constant_spread" in f:
            lines.append("constant spread " + ", ".join(f"{k}={_fmt(v)}" for k, v in f.items()))
    ok = all(r["status"] == "ok" for r in results) and all(verdicts)
    lines.append(f"overall: {'pass' if ok else 'fail'}")
    return "\n".join(lines) + "\n"


def emit(cfg, results, directory, wall_time=0.0):
    """Write result tables, manifest.json and summary.txt; return the manifest."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
        tables, fits, verdicts = aggregate(cfg, results)
        files = []
        for name, (rows, cols) in sorted(tables.items()):
            (out / name).write_text(_csv_text(rows, cols), encoding="utf-8", newline="\n")
            files.append(name)
        summary = _summary(cfg, results, tables, fits, verdicts)
        (out / "summary.txt").write_text(summary, encoding="utf-8", newline="\n")
        files.append("summary.txt")
        ok = all(r["status"] == "ok" for r in results) and all(verdicts)
        manifest = {
            "tool": "pqlab", "version": __version__, "config": cfg.echo(),
            "instances": [{"key": r["key"], "status": r["status"],
                           **({"message": r["message"]} if "message" in r else {})}
                          for r in results],
            "files": files + ["manifest.json"], "all_passed": ok,
            "wall_time": wall_time,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                      default=_fmt) + "\n",
                                           encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write results to {out}: {exc}") from exc
    return manifest


def run(cfg, out=None, workers=1):
    """Validate, run every instance and emit results; return the manifest."""
    diags = validate(cfg)
    if diags:
        raise ConfigInvalid(diags)
    t0 = time.perf_counter()
    results = _map(instances(cfg), workers)
    out = Path("results") / cfg.name if out is None else Path(out)
    return emit(cfg, results, out, wall_time=time.perf_counter() - t0)


def bundled_experiments():
    """(name, kind, description) of every bundled config."""
    out = []
    for path in sorted(CONFIG_DIR.glob("*.ini")):
        cfg = parse_config(str(path))
        out.append((path.stem, cfg.kind, cfg.description))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(prog="pqlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--resolution", type=int, default=None)
    v = sub.add_parser("validate", help="check a config and print diagnostics")
    v.add_argument("config")
    sub.add_parser("list-experiments", help="list bundled configs")
    args = ap.parse_args(argv)

    if args.verb == "list-experiments":
        for name, kind, desc in bundled_experiments():
            print(f"{name:<22} {kind:<12} {desc}")
        return 0
    try:
        cfg = parse_config(args.config)
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return 2
    if args.verb == "validate":
        diags = validate(cfg)
        for d in diags:
            print(d)
        if not diags:
            print("ok")
        return 1 if diags else 0
    if args.seed is not None:
        cfg.seed = args.seed
    if args.resolution is not None:
        cfg.resolutions = [args.resolution]
    if args.workers < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return 2
    try:
        manifest = run(cfg, out=args.out, workers=args.workers)
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return 2
    except IoFailure as exc:
        print(exc, file=sys.stderr)
        return 3
    out = Path("results") / cfg.name if args.out is None else Path(args.out)
    sys.stdout.write((out / "summary.txt").read_text(encoding="utf-8"))
    return 0 if manifest["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
