"""Reading CSV data and sampling synthetic datasets from GP priors."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import DataError
from .gp import Dataset, jittered_cholesky
from .kernels import cov_matrix, max_dim
from .syntax import format_expr, parse


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, target=None, header=None):
    """Load a numeric table; the target column becomes ``y``, the rest ``X``.

    ``target`` is a column name or a 0-based index (default: last column).
    ``header=None`` detects a header row by whether the first row parses as
    numbers. Rows are numbered from 1 over data rows in error messages.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    if header is None:
        header = not all(_is_number(c) for c in rows[0])
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    else:
        names = [f"col{i + 1}" for i in range(len(rows[0]))]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(names)
    if width < 2:
        raise DataError(f"{path}: need at least one input column and a target column")

    if target is None:
        t_idx = width - 1
    elif isinstance(target, int) or (isinstance(target, str) and target.isdigit()
                                      and target not in names):
        t_idx = int(target)
        if not 0 <= t_idx < width:
            raise DataError(f"{path}: target column index {t_idx} out of range")
    else:
        if target not in names:
            raise DataError(f"{path}: target column {target!r} not found "
                            f"(columns: {', '.join(names)})")
        t_idx = names.index(target)

    values = np.empty((len(rows), width))
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {width}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {names[c]!r}: "
                                f"non-numeric value {cell.strip()!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r}, column {names[c]!r}: "
                                f"value {cell.strip()!r} is not finite")
            values[r - 1, c] = v
    x_idx = [i for i in range(width) if i != t_idx]
    return Dataset(values[:, x_idx], values[:, t_idx], source=str(path),
                   columns=tuple(names[i] for i in x_idx) + (names[t_idx],))


def save_csv(data, path, original_units=True):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(data.columns) if data.columns else (
        [f"x{i + 1}" for i in range(data.D)] + ["y"])
    y = data.to_original(data.y) if original_units else data.y
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row, target in zip(data.X, y):
            w.writerow(["%.17g" % v for v in row] + ["%.17g" % target])
    return path


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic regression problem.

    ``snr`` is the ratio of the sample variance of the noise-free draw to
    the injected noise variance; ``math.inf`` means no noise. The draw is
    multiplied by ``signal_amplitude`` after the noise level is fixed, so an
    amplitude of 0 yields pure noise.
    """

    kernel: str
    n: int = 300
    D: Optional[int] = None
    box: Tuple[float, float] = (0.0, 10.0)
    snr: float = 10.0
    seed: int = 0
    signal_amplitude: float = 1.0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError(f"SNR must be positive, got {self.snr}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def sample_gp_prior(expr, X, rng, n_draws=None):
    """Draws of ``f ~ N(0, K(X, X) + jitter)``; shape ``(n,)`` or ``(n, n_draws)``."""
    K = cov_matrix(expr, X)
    L = jittered_cholesky(K, format_expr(expr)).L
    n = K.shape[0]
    z = rng.standard_normal(n if n_draws is None else (n, n_draws))
    return L @ z


def generate_synthetic(spec):
    """Sample ``X`` uniformly in the box, ``f ~ GP(0, k)`` and ``y = f + noise``.

    Returns ``(dataset, truth)`` where ``truth`` records the generating
    kernel text, noise variance and seed.
    """
    expr = parse(spec.kernel)
    D = spec.D if spec.D is not None else max_dim(expr) + 1
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.box
    X = rng.uniform(lo, hi, size=(spec.n, D))
    f = sample_gp_prior(expr, X, rng)
    noise_var = 0.0 if math.isinf(spec.snr) else float(np.var(f)) / spec.snr
    noise = math.sqrt(noise_var) * rng.standard_normal(spec.n)
    y = spec.signal_amplitude * f + noise
    truth = {
        "kernel": format_expr(expr, with_params=True),
        "structure": format_expr(expr),
        "noise_variance": noise_var,
        "snr": spec.snr,
        "seed": spec.seed,
        "n": spec.n,
        "D": D,
        "signal_amplitude": spec.signal_amplitude,
    }
    columns = tuple(f"x{i + 1}" for i in range(D)) + ("y",)
    return Dataset(X, y, source=f"synthetic:{spec.kernel}", columns=columns), truth
