"""Run reports: a self-contained JSON document and a plot-ready CSV bundle.

The JSON report embeds the training data and the fitted expression text, so
predictions and decompositions can be recomputed from the report alone.
Floats are written with 17 significant digits; non-finite values become
``null``.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .decomposition import decompose_posterior, residuals
from .errors import KernelForgeError
from .gp import Dataset, GpModel, log_marginal_likelihood, posterior_predict
from .search import bic_score
from .syntax import format_expr, parse

SCHEMA = "kernelforge-report/1"
GRID_POINTS = 400


class ReportError(KernelForgeError):
    """A report could not be written or read."""


def _clean(obj):
    """Plain JSON-ready structure: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _fmt_float(v):
    text = "%.17g" % v
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def dumps(obj, indent=1, _level=0):
    """JSON text with every float written as ``%.17g``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class RunReport:
    """Everything a run produced, as plain JSON-compatible values.

    ``components`` holds one entry per additive component with the query
    grid, mean and +-2 sigma band in original target scale (the target mean
    is carried by ``data.y_shift``, not by any component). ``cross_variance``
    holds the pointwise posterior covariance between component pairs.
    """

    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    data: Dict[str, Any] = field(default_factory=dict)
    search: Optional[Dict[str, Any]] = None
    model: Optional[Dict[str, Any]] = None
    predictions: Optional[Dict[str, Any]] = None
    components: List[Dict[str, Any]] = field(default_factory=list)
    cross_variance: List[Dict[str, Any]] = field(default_factory=list)
    posterior: Optional[Dict[str, Any]] = None
    residuals: Optional[List[float]] = None
    metrics: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)
    created: str = ""
    schema: str = SCHEMA

    def to_dict(self):
        return _clean(asdict(self))

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ReportError("report must be a JSON object")
        if d.get("schema") != SCHEMA:
            raise ReportError(f"unsupported report schema {d.get('schema')!r}; expected {SCHEMA}")
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})

    # reconstruction helpers -------------------------------------------------

    def dataset(self):
        """Training data in original units."""
        if not self.data or "X" not in self.data:
            raise ReportError("report does not embed training data")
        return Dataset(np.array(self.data["X"], dtype=float).reshape(len(self.data["y"]), -1),
                       np.array(self.data["y"], dtype=float),
                       source=self.data.get("source"),
                       columns=tuple(self.data.get("columns") or ()))

    def gp_model(self):
        if not self.model:
            raise ReportError("report has no fitted model")
        return GpModel(parse(self.model["kernel"]), float(self.model["noise_variance"]))


def timestamp():
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


def data_section(data):
    """Embedded training data (original units) and the target standardization."""
    return {
        "source": data.source,
        "columns": list(data.columns),
        "n": data.n,
        "D": data.D,
        "y_shift": data.y_shift,
        "y_scale": data.y_scale,
        "X": data.X,
        "y": data.to_original(data.y),
    }


def trace_section(trace):
    depths = []
    for rec in trace.depths:
        feas = [c for c in rec.candidates if c.feasible]
        best = min(feas, key=lambda c: c.bic) if feas else None
        depths.append({
            "depth": rec.depth,
            "frontier": list(rec.frontier),
            "best_bic": best.bic if best else None,
            "best_nlml": -best.log_ml if best else None,
            "candidates": [{
                "structure": c.canonical,
                "kernel": c.text() if c.feasible else None,
                "parent": c.parent,
                "operator": c.operator,
                "nlml": -c.log_ml,
                "bic": c.bic,
                "n_params": c.n_params,
                "noise_variance": c.noise_variance,
                "n_grad_evals": c.n_grad_evals,
                "seconds": c.seconds,
                "error": c.error,
            } for c in rec.candidates],
        })
    best = trace.best
    return {
        "noise_only_bic": trace.noise_only_bic,
        "beats_noise": trace.beats_noise,
        "stop_reason": trace.stop_reason,
        "best_structure": best.canonical if best else None,
        "depths": depths,
    }


def model_section(model, data_std):
    value = log_marginal_likelihood(model, data_std, grad=False)
    return {
        "kernel": format_expr(model.kernel, with_params=True),
        "structure": format_expr(model.kernel),
        "noise_variance": model.noise_variance,
        "nlml": -value,
        "bic": bic_score(value, model.kernel, data_std.n),
        "units": "standardized targets",
    }


def query_grid(X, n_points=GRID_POINTS):
    """Equispaced grid from ``min - 0.1 range`` to ``max + 0.25 range``.

    For several input dimensions each column gets its own grid and the
    points run along the diagonal of that box.
    """
    X = np.asarray(X, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    t = np.linspace(0.0, 1.0, n_points)[:, None]
    return (lo - 0.1 * span) + t * (1.35 * span)


def decomposition_section(model, data_std, grid):
    """Component dumps plus the full posterior on ``grid``, original scale."""
    post = decompose_posterior(model, data_std, grid, noise=False)
    scale = data_std.y_scale
    comps = []
    for i, label in enumerate(post.labels):
        sd = np.sqrt(post.variance(i)) * scale
        mean = post.means[i] * scale
        comps.append({"label": label, "x": grid, "mean": mean,
                      "lower": mean - 2 * sd, "upper": mean + 2 * sd})
    cross = []
    k = len(post.labels)
    for i in range(k):
        for j in range(i + 1, k):
            cross.append({"pair": [post.labels[i], post.labels[j]],
                          "cov": np.diag(post.cross[(i, j)]) * scale ** 2})
    total = data_std.to_original(post.total_mean())
    var = np.clip(np.diag(post.total_cov()), 0.0, None) * scale ** 2
    sd = np.sqrt(var)
    full = {"x": grid, "mean": total, "lower": total - 2 * sd, "upper": total + 2 * sd}
    return comps, cross, full


def prediction_section(model, data_std, Xq, include_noise=False, y_true=None):
    pred = posterior_predict(model, data_std, Xq, include_noise=include_noise)
    mean = data_std.to_original(pred.mean)
    var = pred.variance * data_std.y_scale ** 2
    out = {"x": Xq, "mean": mean, "variance": var, "include_noise": include_noise}
    metrics = {}
    if y_true is not None:
        y_true = np.asarray(y_true, dtype=float)
        metrics["mse"] = float(np.mean((y_true - mean) ** 2))
        pv = posterior_predict(model, data_std, Xq, include_noise=True).variance
        pv = pv * data_std.y_scale ** 2
        if np.all(pv > 0):
            metrics["mean_log_lik"] = float(np.mean(
                -0.5 * (np.log(2 * np.pi * pv) + (y_true - mean) ** 2 / pv)))
    return out, metrics


def training_metrics(model, data_std):
    res = residuals(model, data_std) * data_std.y_scale
    return res, {"train_mse": float(np.mean(res ** 2)),
                 "train_nlml": -log_marginal_likelihood(model, data_std, grad=False)}


# ---------------------------------------------------------------------------
# writing and reading
# ---------------------------------------------------------------------------

def _write_text(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _write_csv(path, header, rows):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return v


def _series_rows(block):
    X = np.asarray(block["x"], dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = [np.asarray(block[k], dtype=float) for k in ("mean", "lower", "upper")]
    for i in range(X.shape[0]):
        yield list(X[i]) + [c[i] for c in cols]


def emit_report(report: RunReport, path, fmt="json"):
    """Write ``report`` as JSON (``path`` is a file) or as a CSV bundle
    (``path`` is a directory). Returns the list of files written."""
    if fmt == "json":
        return [_write_text(path, dumps(report.to_dict()) + "\n")]
    if fmt not in ("csv", "csv-bundle"):
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(path)
    files = []
    d = report.to_dict()
    n_dims = 1
    if d["components"]:
        x0 = d["components"][0]["x"]
        n_dims = len(x0[0]) if x0 and isinstance(x0[0], list) else 1
    xcols = [f"x{i + 1}" for i in range(n_dims)]
    index = []
    for i, comp in enumerate(d["components"]):
        name = f"component_{i + 1:02d}.csv"
        files.append(_write_csv(out / name, xcols + ["mean", "lower", "upper"],
                                _series_rows(comp)))
        index.append([i + 1, comp["label"], name])
    if index:
        files.append(_write_csv(out / "components.csv", ["index", "label", "file"], index))
    if d.get("posterior"):
        files.append(_write_csv(out / "posterior.csv", xcols + ["mean", "lower", "upper"],
                                _series_rows(d["posterior"])))
    metrics = dict(d.get("metrics") or {})
    if d.get("data"):
        metrics.setdefault("y_shift", d["data"].get("y_shift", None))
    files.append(_write_csv(out / "metrics.csv", ["metric", "value"],
                            [[k, v] for k, v in metrics.items()]))
    return files


def load_report(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ReportError(f"cannot read report {path}: {exc.strerror or exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: not valid JSON ({exc})") from exc
    return RunReport.from_dict(d)


__all__ = ["SCHEMA", "RunReport", "ReportError", "emit_report", "load_report", "dumps",
           "query_grid", "data_section", "trace_section", "model_section",
           "decomposition_section", "prediction_section", "training_metrics"]
