"""Command-line interface.

Every subcommand accepts ``--config FILE``: a flat ``key = value`` file whose
keys are flag names (``max-evals`` or ``max_evals``). Flags given on the
command line override the file. Exit codes: 0 success, 2 usage error,
3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import SyntheticSpec, generate_synthetic, load_csv, save_csv
from .errors import (ConditioningError, DataError, DimensionError, ExprSyntaxError,
                     KernelForgeError)
from .experiments import (ALL_METHODS, LearningCurveSpec, run_learning_curve,
                          run_recovery_experiment)
from .report import (GRID_POINTS, ReportError, RunReport, data_section,
                     decomposition_section, emit_report, load_report, model_section,
                     prediction_section, query_grid, timestamp, trace_section,
                     training_metrics)
from .search import SearchConfig, greedy_search

log = logging.getLogger("kernelforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Repeated keys
    accumulate into a list."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key in out:
            prev = out[key]
            out[key] = (prev if isinstance(prev, list) else [prev]) + [value]
        else:
            out[key] = value
    return out


def _parse_range(text):
    """``a:b:step`` (inclusive) or a comma list of floats."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, step = (float(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(math.floor((b - a) / step + 1e-9)) + 1
            return tuple(round(a + i * step, 12) for i in range(n))
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}; use a:b:step or a,b,c") from None


def _parse_ints(text):
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            return tuple(range(*parts))
        return tuple(int(p) for p in text.split(",") if p.strip())
    except (ValueError, TypeError):
        raise argparse.ArgumentTypeError(f"invalid integer list {text!r}") from None


def _families(text):
    return tuple(f.strip().upper() for f in str(text).split(",") if f.strip())


def _methods(text):
    items = tuple(m.strip().lower() for m in str(text).split(",") if m.strip())
    bad = [m for m in items if m not in ALL_METHODS]
    if bad:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {', '.join(bad)}; choose from {', '.join(ALL_METHODS)}")
    return items


def _box(text):
    try:
        lo, hi = (float(p) for p in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid box {text!r}; use lo,hi") from None
    if not hi > lo:
        raise argparse.ArgumentTypeError("box needs lo < hi")
    return lo, hi


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _search_flags(p):
    g = p.add_argument_group("search")
    g.add_argument("--families", type=_families, default=("SE", "PER", "LIN", "RQ"),
                   help="base families, comma separated (default SE,PER,LIN,RQ)")
    g.add_argument("--depth", type=int, default=3, help="maximum search depth (default 3)")
    g.add_argument("--restarts", type=int, default=3, help="optimizer restarts per candidate")
    g.add_argument("--max-evals", type=int, default=200,
                   help="gradient evaluations per restart (default 200)")
    g.add_argument("--beam", type=int, default=1, help="frontier width (default 1)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--gtol", type=float, default=1e-6,
                   help="stop when the gradient max-norm falls below this")
    g.add_argument("--ftol", type=float, default=1e-9,
                   help="stop when the relative objective change falls below this")
    g.add_argument("--no-dedup", action="store_true",
                   help="keep structurally identical candidates within a depth")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key = value file with defaults")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="kernelforge",
        description="Compositional kernel search for Gaussian-process regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("search", parents=[common], help="search kernel structures on a CSV")
    p.add_argument("--data", required=True, metavar="F")
    p.add_argument("--target", help="target column name or 0-based index (default: last)")
    _search_flags(p)
    p.add_argument("--grid", type=int, default=GRID_POINTS, help="decomposition grid size")
    p.add_argument("--format", choices=("json", "csv", "both"), default="both")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("predict", parents=[common], help="predict with a saved model")
    p.add_argument("--model", required=True, metavar="REPORT")
    p.add_argument("--data", required=True, metavar="F",
                   help="query inputs; a target column, if present, is scored")
    p.add_argument("--include-noise", action="store_true")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("decompose", parents=[common], help="additive decomposition of a model")
    p.add_argument("--model", required=True, metavar="REPORT")
    p.add_argument("--data", metavar="F",
                   help="training data to condition on (default: the data in the report)")
    p.add_argument("--target")
    p.add_argument("--grid", type=int, default=GRID_POINTS)
    p.add_argument("--format", choices=("json", "csv", "both"), default="both")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("synth", parents=[common], help="sample a dataset from a GP prior")
    p.add_argument("--kernel", required=True, metavar="EXPR")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--D", type=int, default=None, dest="D")
    p.add_argument("--box", type=_box, default=(0.0, 10.0))
    p.add_argument("--snr", type=float, default=10.0, help="signal-to-noise ratio ('inf' for none)")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="F")

    p = sub.add_parser("recover", parents=[common], help="synthetic structure recovery")
    p.add_argument("--spec", required=True, metavar="FILE",
                   help="key = value file: kernel (repeatable), snr, seeds, n, box and search keys")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("curve", parents=[common], help="extrapolation learning curves")
    p.add_argument("--data", required=True, metavar="F")
    p.add_argument("--target")
    p.add_argument("--fractions", type=_parse_range, default=tuple(round(0.1 * k, 1) for k in range(1, 10)))
    p.add_argument("--methods", type=_methods, default=ALL_METHODS)
    _search_flags(p)
    p.add_argument("--out", required=True, metavar="DIR")
    return parser


def _apply_config(parser, argv):
    """Re-parse ``argv`` with defaults taken from the ``--config`` file.

    The first pass only locates the command and the file, so options the file
    may supply are not yet enforced as required.
    """
    subs = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    required = [a for sp in subs for p in sp.choices.values() for a in p._actions if a.required]
    for a in required:
        a.required = False
    try:
        args = parser.parse_args(argv)
    finally:
        for a in required:
            a.required = True
    if not args.config:
        return parser.parse_args(argv)
    values = read_config(args.config)
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        action = actions[key]
        if isinstance(raw, list):
            raise UsageError(f"{args.config}: key {key!r} given more than once")
        try:
            if action.const is not None and action.nargs == 0:   # store_true/false
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                defaults[key] = action.type(raw)
            else:
                defaults[key] = raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{args.config}: bad value for {key!r}: {exc}") from None
        if action.choices is not None and defaults[key] not in action.choices:
            raise UsageError(f"{args.config}: {key!r} must be one of {', '.join(action.choices)}")
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _search_config(args):
    try:
        return SearchConfig(families=args.families, max_depth=args.depth,
                            restarts=args.restarts, max_grad_evals=args.max_evals,
                            beam_width=args.beam, seed=args.seed, dedup=not args.no_dedup,
                            gtol=args.gtol, ftol=args.ftol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_echo(args):
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("verbose",):
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _write_outputs(report, out_dir, fmt):
    out_dir = Path(out_dir)
    files = []
    if fmt in ("json", "both"):
        files += emit_report(report, out_dir / "report.json", "json")
    if fmt in ("csv", "both"):
        files += emit_report(report, out_dir, "csv")
    return files


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_search(args):
    config = _search_config(args)
    data = load_csv(args.data, _target(args.target))
    data_std = data.standardized()

    def progress(rec):
        best = min((c for c in rec.candidates if c.feasible), key=lambda c: c.bic, default=None)
        log.info("depth %d: %d candidates, best %s", rec.depth, len(rec.candidates),
                 f"{best.canonical} (BIC {best.bic:.3f})" if best else "none feasible")

    trace = greedy_search(data_std, config, progress=progress)
    best = trace.best
    if best is None:
        raise ConditioningError("no candidate could be fitted")
    model = best.model
    report = RunReport("search", config=_config_echo(args), data=data_section(data_std),
                       search=trace_section(trace), model=model_section(model, data_std),
                       created=timestamp())
    _fill_decomposition(report, model, data_std, args.grid)
    _write_outputs(report, args.out, args.format)
    print(f"best: {best.canonical}  BIC {best.bic:.6g}  "
          f"(noise-only BIC {trace.noise_only_bic:.6g}; {trace.stop_reason})")
    print(f"kernel: {best.text()}")
    return EXIT_OK


def _fill_decomposition(report, model, data_std, n_grid):
    if n_grid < 1:
        raise UsageError("--grid must be >= 1")
    grid = query_grid(data_std.X, n_grid)
    comps, cross, full = decomposition_section(model, data_std, grid)
    res, metrics = training_metrics(model, data_std)
    report.components, report.cross_variance, report.posterior = comps, cross, full
    report.residuals = list(res)
    report.metrics.update(metrics)
    report.metrics["y_shift"] = data_std.y_shift
    report.metrics["n_components"] = len(comps)


def _target(value):
    if value is None:
        return None
    return int(value) if str(value).isdigit() else value


def _read_queries(path, report):
    """Query inputs, plus targets when the file carries the target column."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"query file not found: {path}")
    D = int(report.data["D"])
    names = list(report.data.get("columns") or [])
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")

    def num(cell, r, c):
        try:
            v = float(cell)
        except ValueError:
            raise DataError(f"{path}: row {r}, column {c + 1}: non-numeric value "
                            f"{cell.strip()!r}") from None
        if not math.isfinite(v):
            raise DataError(f"{path}: row {r}, column {c + 1}: value is not finite")
        return v

    try:
        [float(c) for c in rows[0]]
        header = None
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if header and names and all(n in header for n in names[:D]):
        x_idx = [header.index(n) for n in names[:D]]
        t_idx = header.index(names[D]) if len(names) > D and names[D] in header else None
    else:
        x_idx = list(range(D))
        width = len(header) if header else len(rows[0]) if rows else D
        t_idx = D if width > D else None
    X = np.empty((len(rows), D))
    y = np.empty(len(rows)) if t_idx is not None else None
    for r, row in enumerate(rows, start=1):
        need = max(x_idx + ([t_idx] if t_idx is not None else []))
        if len(row) <= need:
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected at least {need + 1}")
        X[r - 1] = [num(row[c], r, c) for c in x_idx]
        if y is not None:
            y[r - 1] = num(row[t_idx], r, t_idx)
    return X, y


def cmd_predict(args):
    report = load_report(args.model)
    model = report.gp_model()
    data_std = report.dataset().standardized()
    Xq, yq = _read_queries(args.data, report)
    pred, metrics = prediction_section(model, data_std, Xq, args.include_noise, yq)
    out = RunReport("predict", config=_config_echo(args), data=report.data,
                    model=report.model, predictions=pred, metrics=metrics,
                    created=timestamp())
    out_dir = Path(args.out)
    emit_report(out, out_dir / "report.json", "json")
    sd = np.sqrt(np.asarray(pred["variance"]))
    mean = np.asarray(pred["mean"])
    xcols = [f"x{i + 1}" for i in range(Xq.shape[1])]
    path = out_dir / "predictions.csv"
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(xcols + ["mean", "variance", "lower", "upper"])
            for i in range(Xq.shape[0]):
                w.writerow(["%.17g" % v for v in Xq[i]] +
                           ["%.17g" % v for v in (mean[i], sd[i] ** 2,
                                                  mean[i] - 2 * sd[i], mean[i] + 2 * sd[i])])
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    if metrics:
        print("  ".join(f"{k}={v:.6g}" for k, v in metrics.items()))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_decompose(args):
    report = load_report(args.model)
    model = report.gp_model()
    data = load_csv(args.data, _target(args.target)) if args.data else report.dataset()
    data_std = data.standardized()
    out = RunReport("decompose", config=_config_echo(args), data=data_section(data_std),
                    model=model_section(model, data_std), created=timestamp())
    _fill_decomposition(out, model, data_std, args.grid)
    _write_outputs(out, args.out, args.format)
    for comp in out.components:
        print(comp["label"])
    return EXIT_OK


def cmd_synth(args):
    try:
        spec = SyntheticSpec(args.kernel, n=args.n, D=args.D, box=tuple(args.box),
                             snr=args.snr, seed=args.seed, signal_amplitude=args.amplitude)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data, truth = generate_synthetic(spec)
    out = Path(args.out)
    try:
        save_csv(data, out)
        truth_path = out.with_name(out.name + ".truth.json")
        truth_path.write_text(json.dumps(truth, indent=1, default=float) + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write {out}: {exc.strerror or exc}") from exc
    print(f"wrote {out} ({data.n} rows, noise variance {truth['noise_variance']:.6g})")
    return EXIT_OK


_RECOVER_SEARCH_KEYS = {"families": _families, "depth": int, "restarts": int,
                        "max_evals": int, "beam": int, "gtol": float, "ftol": float,
                        "no_dedup": lambda v: v.lower() in ("1", "true", "yes")}


def _recover_specs(path):
    cfg = read_config(path)
    kernels = cfg.pop("kernel", None)
    if kernels is None:
        raise UsageError(f"{path}: at least one 'kernel = EXPR' line is required")
    kernels = kernels if isinstance(kernels, list) else [kernels]
    try:
        snrs = _parse_range(cfg.pop("snr", "10"))
        seeds = _parse_ints(cfg.pop("seeds", "0"))
        n = int(cfg.pop("n", 300))
        box = _box(cfg.pop("box", "0,10"))
        D = cfg.pop("D", None)
        D = int(D) if D is not None else None
        search = {"families": ("SE", "PER", "LIN", "RQ"), "depth": 3, "restarts": 3,
                  "max_evals": 200, "beam": 1, "gtol": 1e-6, "ftol": 1e-9,
                  "no_dedup": False}
        for key in list(cfg):
            if key not in _RECOVER_SEARCH_KEYS:
                raise UsageError(f"{path}: unknown key {key!r}")
            search[key] = _RECOVER_SEARCH_KEYS[key](cfg.pop(key))
        config = SearchConfig(families=search["families"], max_depth=search["depth"],
                              restarts=search["restarts"], max_grad_evals=search["max_evals"],
                              beam_width=search["beam"], dedup=not search["no_dedup"],
                              gtol=search["gtol"], ftol=search["ftol"])
        specs = [SyntheticSpec(k, n=n, D=D, box=box, snr=s, seed=seed)
                 for k in kernels for s in snrs for seed in seeds]
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    return specs, config


def cmd_recover(args):
    specs, config = _recover_specs(args.spec)
    rows = run_recovery_experiment(
        specs, config,
        progress=lambda r: log.info("%s snr=%g seed=%d: %s (%s)", r.true_kernel, r.snr,
                                    r.seed, r.recovered, r.verdict))
    out_dir = Path(args.out)
    table = [asdict(r) for r in rows]
    summary = {}
    for r in rows:
        key = f"{r.true_kernel} @ snr={r.snr:g}"
        s = summary.setdefault(key, {"runs": 0, "match": 0, "noise_only": 0})
        s["runs"] += 1
        s["match"] += r.full_match
        s["noise_only"] += r.verdict == "noise-only"
    report = RunReport("recover", config={"spec": args.spec, **asdict(config)},
                       extra={"rows": table, "summary": summary}, created=timestamp())
    emit_report(report, out_dir / "report.json", "json")
    path = out_dir / "recovery.csv"
    cols = ["true_kernel", "snr", "seed", "recovered", "verdict", "matched", "n_true",
            "best_bic", "noise_bic", "error"]
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in table:
                w.writerow([_csv_value(row[c]) for c in cols])
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    for key, s in summary.items():
        print(f"{key}: {s['match']}/{s['runs']} full matches, {s['noise_only']} noise-only")
    errors = sum(r.verdict == "error" for r in rows)
    return EXIT_NUMERIC if errors == len(rows) and rows else EXIT_OK


def _csv_value(v):
    if isinstance(v, float):
        return "%.17g" % v
    return "" if v is None else v


def cmd_curve(args):
    config = _search_config(args)
    try:
        spec = LearningCurveSpec(data_path=args.data, target=_target(args.target),
                                 fractions=tuple(args.fractions), methods=tuple(args.methods))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    curve = run_learning_curve(spec, config)
    out_dir = Path(args.out)
    cells = [asdict(c) for c in curve.cells]
    report = RunReport("curve", config=_config_echo(args), extra={"cells": cells},
                       metrics={f"mse[{c.method}@{c.fraction:g}]": c.mse for c in curve.cells},
                       created=timestamp())
    emit_report(report, out_dir / "report.json", "json")
    path = out_dir / "curve.csv"
    cols = ["method", "fraction", "n_train", "mse", "log_lik", "structure", "error"]
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for c in cells:
                w.writerow([_csv_value(c[k]) for k in cols])
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    for method, row in curve.table().items():
        print(f"{method:10s} " + " ".join(f"{v:10.4g}" for v in row.values()))
    return EXIT_OK


COMMANDS = {"search": cmd_search, "predict": cmd_predict, "decompose": cmd_decompose,
            "synth": cmd_synth, "recover": cmd_recover, "curve": cmd_curve}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"kernelforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # argparse reports usage errors this way
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kernelforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExprSyntaxError, DimensionError) as exc:
        print(f"kernelforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ReportError) as exc:
        print(f"kernelforge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KernelForgeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"kernelforge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
