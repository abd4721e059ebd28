"""Synthetic structure recovery and extrapolation learning curves."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import SyntheticSpec, generate_synthetic, load_csv
from .errors import KernelForgeError
from .gp import posterior_predict
from .kernels import canonical_string, leaves, strip_params, to_sum_of_products
from .search import SearchConfig, greedy_search, optimize_params
from .syntax import parse

log = logging.getLogger(__name__)

NOISE_ONLY = "noise-only"


def factor_set(expr):
    """Distinct ``(family, dim)`` pairs among the leaves of ``expr``."""
    return {(leaf.family, leaf.dim) for leaf in leaves(to_sum_of_products(expr))}


@dataclass
class RecoveryRow:
    true_kernel: str
    snr: float
    seed: int
    recovered: Optional[str]
    verdict: str                  # "match", "partial", "miss", "noise-only" or "error"
    matched: int
    n_true: int
    best_bic: float = math.nan
    noise_bic: float = math.nan
    seconds: float = 0.0
    error: Optional[str] = None

    @property
    def full_match(self):
        return self.verdict == "match"


def recovery_verdict(true_expr, recovered_expr):
    """``(verdict, matched, n_true)`` by containment of base factors.

    Every ``(family, dim)`` factor of the true kernel must appear somewhere
    in the recovered sum of products; extra factors are allowed.
    """
    want = factor_set(true_expr)
    got = factor_set(recovered_expr)
    matched = len(want & got)
    if matched == len(want):
        verdict = "match"
    elif matched:
        verdict = "partial"
    else:
        verdict = "miss"
    return verdict, matched, len(want)


def run_recovery_experiment(specs: Sequence[SyntheticSpec], config: SearchConfig,
                            progress=None) -> List[RecoveryRow]:
    """Generate each dataset, search it and score the recovered structure.

    The search seed is taken from each spec so rows are independent of
    order. Failures are recorded per row and never abort the batch.
    """
    rows = []
    for spec in specs:
        t0 = time.perf_counter()
        try:
            data, truth = generate_synthetic(spec)
            true_expr = parse(spec.kernel)
            cfg = replace(config, seed=spec.seed)
            trace = greedy_search(data.standardized(), cfg)
            best = trace.best
            n_true = len(factor_set(true_expr))
            if best is None or not trace.beats_noise:
                row = RecoveryRow(spec.kernel, spec.snr, spec.seed,
                                  None if best is None else best.canonical,
                                  NOISE_ONLY, 0, n_true,
                                  math.nan if best is None else best.bic,
                                  trace.noise_only_bic)
            else:
                verdict, matched, n_true = recovery_verdict(true_expr, best.expr)
                row = RecoveryRow(spec.kernel, spec.snr, spec.seed, best.canonical,
                                  verdict, matched, n_true, best.bic, trace.noise_only_bic)
        except (KernelForgeError, ValueError, np.linalg.LinAlgError) as exc:
            row = RecoveryRow(spec.kernel, spec.snr, spec.seed, None, "error", 0,
                              0, error=f"{type(exc).__name__}: {exc}")
        row.seconds = time.perf_counter() - t0
        log.info("recovery %s snr=%g seed=%d -> %s (%s)", row.true_kernel, row.snr,
                 row.seed, row.recovered, row.verdict)
        if progress is not None:
            progress(row)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# learning curves
# ---------------------------------------------------------------------------

FIXED_METHODS = {
    "se": "SE_1",
    "per": "PER_1",
    "se+per": "SE_1 + PER_1",
    "se*per": "SE_1 * PER_1",
}
ALL_METHODS = ("searched", "se", "per", "se+per", "se*per", "linear")
DEFAULT_FRACTIONS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass
class LearningCurveSpec:
    """Which data to use, where to cut it and which methods to compare.

    Each fraction takes the first ``ceil(fraction * n)`` rows (in file
    order) for training and the rest for testing.
    """

    data_path: Optional[str] = None
    target: Optional[str] = None
    fractions: Tuple[float, ...] = DEFAULT_FRACTIONS
    methods: Tuple[str, ...] = ALL_METHODS
    dataset: object = None          # a Dataset, instead of data_path

    def __post_init__(self):
        for f in self.fractions:
            if not 0.0 < f < 1.0:
                raise ValueError(f"train fraction must lie in (0, 1), got {f}")
        if any(b <= a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError(f"train fractions must be strictly increasing: {self.fractions}")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {', '.join(ALL_METHODS)}")
        if self.dataset is None and self.data_path is None:
            raise ValueError("either data_path or dataset is required")


@dataclass
class CurveCell:
    method: str
    fraction: float
    n_train: int
    mse: float                      # NaN when the cell failed
    log_lik: float = math.nan       # mean predictive log density per test point
    structure: Optional[str] = None
    error: Optional[str] = None


@dataclass
class LearningCurve:
    cells: List[CurveCell] = field(default_factory=list)

    def mse(self, method, fraction):
        for c in self.cells:
            if c.method == method and math.isclose(c.fraction, fraction):
                return c.mse
        raise KeyError((method, fraction))

    def table(self) -> Dict[str, Dict[float, float]]:
        out: Dict[str, Dict[float, float]] = {}
        for c in self.cells:
            out.setdefault(c.method, {})[c.fraction] = c.mse
        return out


def split_prefix(data, fraction):
    n_train = int(math.ceil(fraction * data.n - 1e-9))
    n_train = min(max(n_train, 1), data.n - 1)
    idx = np.arange(data.n)
    return data.subset(idx[:n_train]), data.subset(idx[n_train:])


def ols_predict(train, Xtest):
    """Ordinary least squares with intercept on the raw inputs."""
    A = np.column_stack([np.ones(train.n), train.X])
    coef, *_ = np.linalg.lstsq(A, train.y, rcond=None)
    return np.column_stack([np.ones(Xtest.shape[0]), Xtest]) @ coef


def _gp_forecast(model, train_std, test):
    pred = posterior_predict(model, train_std, test.X, include_noise=True)
    mean = train_std.to_original(pred.mean)
    var = pred.variance * train_std.y_scale ** 2
    resid = test.y - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = -0.5 * (np.log(2 * np.pi * var) + resid ** 2 / var)
    return mean, float(np.mean(ll)) if np.all(var > 0) else math.nan


def _fit_method(method, train_std, config):
    if method == "searched":
        trace = greedy_search(train_std, config)
        best = trace.best
        if best is None:
            raise KernelForgeError("search found no feasible candidate")
        return best.model
    fit = optimize_params(strip_params(parse(FIXED_METHODS[method])), train_std, config)
    if not fit.feasible:
        raise KernelForgeError(fit.error or "fit failed")
    return fit.model


def run_learning_curve(spec: LearningCurveSpec, config: SearchConfig,
                       progress=None) -> LearningCurve:
    """Mean squared error of each method at each training fraction.

    Errors are in original target units. A failing cell records NaN and the
    error message instead of stopping the run.
    """
    data = spec.dataset if spec.dataset is not None else load_csv(spec.data_path, spec.target)
    if data.n < 2:
        raise ValueError("need at least two rows for a train/test split")
    curve = LearningCurve()
    for frac in spec.fractions:
        train, test = split_prefix(data, frac)
        train_std = train.standardized()
        for method in spec.methods:
            cell = CurveCell(method, frac, train.n, math.nan)
            try:
                if method == "linear":
                    mean = ols_predict(train, test.X)
                else:
                    model = _fit_method(method, train_std, config)
                    cell.structure = canonical_string(model.kernel)
                    mean, cell.log_lik = _gp_forecast(model, train_std, test)
                cell.mse = float(np.mean((test.y - mean) ** 2))
            except (KernelForgeError, ValueError, np.linalg.LinAlgError) as exc:
                cell.error = f"{type(exc).__name__}: {exc}"
            log.info("curve %s @ %.2f -> mse %s", method, frac, cell.mse)
            if progress is not None:
                progress(cell)
            curve.cells.append(cell)
    return curve


__all__ = ["RecoveryRow", "recovery_verdict", "run_recovery_experiment", "factor_set",
           "LearningCurveSpec", "LearningCurve", "CurveCell", "run_learning_curve",
           "split_prefix", "ols_predict", "NOISE_ONLY", "FIXED_METHODS", "ALL_METHODS"]
