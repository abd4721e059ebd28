"""Greedy kernel-structure search scored by BIC.

A search starts from every base family on every input dimension, keeps the
``beam_width`` best structures, expands them with the add / multiply /
replace operators and refits every new candidate. Parameters that already
existed in the parent start at the parent's optimum; only newly introduced
leaves (and the noise level at depth 0) are drawn at random.
"""
from __future__ import annotations

import functools
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ._accel import FAMILIES, N_PARAMS
from .errors import KernelForgeError
from .gp import GpModel, log_marginal_likelihood
from .kernels import (Base, add, canonical_form, canonical_string, leaves,
                      multiply, pack, param_count, unpack)
from .optimize import minimize_ncg
from .syntax import format_expr

log = logging.getLogger(__name__)

BIC_TIE = 1e-9


@dataclass(frozen=True)
class SearchConfig:
    families: tuple = FAMILIES
    max_depth: int = 3
    restarts: int = 3
    max_grad_evals: int = 200
    beam_width: int = 1
    seed: int = 0
    dedup: bool = True
    gtol: float = 1e-6
    ftol: float = 1e-9

    def __post_init__(self):
        fams = tuple(f.upper() for f in self.families)
        bad = [f for f in fams if f not in FAMILIES]
        if bad or not fams:
            raise ValueError(f"unknown or empty base families: {bad or fams}")
        object.__setattr__(self, "families", fams)
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        for name in ("restarts", "max_grad_evals", "beam_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expansion:
    expr: object
    operator: str


def _subexpressions(expr, path=()):
    yield path, expr
    if not isinstance(expr, Base):
        for i, child in enumerate(expr.children):
            yield from _subexpressions(child, path + (i,))


def _replace_at(expr, path, new):
    if not path:
        return new
    children = list(expr.children)
    children[path[0]] = _replace_at(children[path[0]], path[1:], new)
    return type(expr)(tuple(children))


def expand(expr, families, n_dims, dedup=True):
    """All one-step edits of ``expr``.

    For every subexpression S and base kernel B (family x dimension):
    ``S -> S + B`` and ``S -> S * B``; for every leaf, ``leaf -> B'`` for
    each other family on the same dimension. Sums and products absorb the
    new child instead of nesting. New leaves have unset parameters; all
    others keep theirs. Results are canonicalized and, with ``dedup``,
    unique by canonical string.
    """
    families = tuple(f.upper() for f in families)
    out = []
    for path, sub in _subexpressions(expr):
        for op, combine in (("add", add), ("multiply", multiply)):
            for fam in families:
                for d in range(n_dims):
                    new = combine(sub, Base(fam, d))
                    out.append(Expansion(canonical_form(_replace_at(expr, path, new)), op))
        if isinstance(sub, Base):
            for fam in families:
                if fam != sub.family:
                    new = Base(fam, sub.dim)
                    out.append(Expansion(canonical_form(_replace_at(expr, path, new)),
                                         "replace"))
    if not dedup:
        return out
    seen = set()
    unique = []
    for item in out:
        key = canonical_string(item.expr)
        if key not in seen:
            seen.add(key)
            unique.append(item)
    return unique


# ---------------------------------------------------------------------------
# scoring and parameter fitting
# ---------------------------------------------------------------------------

def bic_score(log_ml, expr, n):
    """Schwarz criterion ``-2 log L + (|theta| + 1) log n``; noise counts as one
    parameter. Lower is better."""
    return -2.0 * log_ml + (param_count(expr) + 1) * math.log(n)


def noise_only_log_ml(y):
    """Maximised log likelihood of ``y ~ N(0, s2 I)``."""
    n = y.size
    s2 = max(float(np.mean(y * y)), 1e-300)
    return -0.5 * n * (math.log(2.0 * math.pi * s2) + 1.0)


def noise_only_bic(y):
    return -2.0 * noise_only_log_ml(y) + math.log(y.size)


def candidate_rng(seed, canonical, parent=""):
    """Generator determined by the master seed and the candidate identity."""
    digest = hashlib.sha256(f"{seed}|{canonical}|{parent}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass(frozen=True)
class DataScale:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def of(cls, X):
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0))

    def range(self, d):
        r = float(self.hi[d] - self.lo[d])
        return r if r > 0 else 1.0

    def mid(self, d):
        return 0.5 * float(self.hi[d] + self.lo[d])


def draw_params(family, dim, scale, rng):
    """Random initial internal parameters for a new leaf."""
    D = len(scale.lo)
    rng_d = scale.range(dim)
    ell_mu = math.log(rng_d / math.sqrt(D) / 2.0)
    if family == "SE":
        return (rng.normal(0.0, 1.0), rng.normal(ell_mu, 1.0))
    if family == "RQ":
        return (rng.normal(0.0, 1.0), rng.normal(ell_mu, 1.0), rng.normal(0.0, 1.0))
    if family == "PER":
        k = rng.integers(2, 11)
        return (rng.normal(0.0, 1.0), rng.normal(0.0, 1.0),
                rng.normal(math.log(rng_d / k), 0.5))
    if family == "LIN":
        half = rng_d / 2.0
        return (rng.normal(0.0, 1.0), rng.normal(-2.0 * math.log(half), 1.0),
                rng.normal(scale.mid(dim), rng_d / 4.0))
    raise ValueError(family)


def draw_log_noise(rng):
    return rng.normal(math.log(0.1), 1.0)


@dataclass
class FitResult:
    model: Optional[GpModel]
    log_ml: float
    start_log_mls: List[float]
    n_grad_evals: int
    error: Optional[str] = None

    @property
    def feasible(self):
        return self.model is not None

    @property
    def params(self):
        return pack(self.model.kernel)

    @property
    def noise_variance(self):
        return self.model.noise_variance


def inheritance_mask(expr):
    """``(values, mask)`` over packed kernel parameters; unset leaves are new."""
    values, mask = [], []
    for leaf in leaves(expr):
        k = N_PARAMS[leaf.family]
        if leaf.params is None:
            values.extend([np.nan] * k)
            mask.extend([False] * k)
        else:
            values.extend(leaf.params)
            mask.extend([True] * k)
    return np.array(values, dtype=float), np.array(mask, dtype=bool)


def _start_point(expr, values, mask, scale, rng):
    theta = values.copy()
    pos = 0
    for leaf in leaves(expr):
        k = N_PARAMS[leaf.family]
        if not mask[pos:pos + k].all():
            fresh = draw_params(leaf.family, leaf.dim, scale, rng)
            sel = ~mask[pos:pos + k]
            theta[pos:pos + k][sel] = np.asarray(fresh)[sel]
        pos += k
    return theta


def optimize_params(expr, data, config, inherited=None, inherited_noise=None,
                    rng=None):
    """Maximise the log marginal likelihood over kernel and noise parameters.

    ``inherited`` is ``(values, mask)`` over the packed kernel parameters;
    by default it is read off the leaves (unset leaves are new). Inherited
    parameters start every restart at their inherited values, new ones are
    redrawn per restart. ``inherited_noise`` (a variance) does the same for
    the noise level. With nothing new to draw a single start is used.
    """
    if data.n < 1:
        raise ValueError("cannot fit a model to an empty dataset")
    if rng is None:
        rng = candidate_rng(config.seed, canonical_string(expr))
    if inherited is None:
        inherited = inheritance_mask(expr)
    values, mask = (np.asarray(a) for a in inherited)
    if values.size != param_count(expr):
        raise ValueError("inherited vector does not match the expression")
    scale = DataScale.of(data.X)
    template = GpModel(unpack(expr, np.zeros(values.size)), 1.0)
    n_restarts = config.restarts
    if mask.all() and inherited_noise is not None:
        n_restarts = 1

    def neg(theta):
        value, grad = log_marginal_likelihood(template.unpack(theta), data)
        return -value, -grad

    def neg_value(theta):
        return -log_marginal_likelihood(template.unpack(theta), data, grad=False)

    best, best_val = None, -math.inf
    starts, total_evals, errors = [], 0, []
    for _ in range(n_restarts):
        theta0 = _start_point(expr, values, mask, scale, rng)
        log_noise = (math.log(inherited_noise) if inherited_noise is not None
                     else draw_log_noise(rng))
        x0 = np.append(theta0, log_noise)
        try:
            start_value = -neg_value(x0)
            res = minimize_ncg(neg, x0,
                               max_grad_evals=config.max_grad_evals,
                               gtol=config.gtol, ftol=config.ftol)
        except (KernelForgeError, FloatingPointError, np.linalg.LinAlgError) as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
            continue
        total_evals += res.n_grad_evals
        starts.append(start_value)
        if -res.fun > best_val:
            best_val, best = -res.fun, res.x
    if best is None:
        cause = errors[0] if errors else "no restart succeeded"
        return FitResult(None, -math.inf, starts, total_evals, cause)
    return FitResult(template.unpack(best), float(best_val), starts, total_evals)


# ---------------------------------------------------------------------------
# greedy search
# ---------------------------------------------------------------------------

@dataclass
class ScoredCandidate:
    expr: object                    # canonical, fully parameterized (or bare if infeasible)
    canonical: str
    noise_variance: float
    log_ml: float
    bic: float
    n_params: int
    parent: Optional[str]
    operator: str
    depth: int
    seconds: float = 0.0
    n_grad_evals: int = 0
    error: Optional[str] = None

    @property
    def feasible(self):
        return self.error is None

    @property
    def params(self):
        return pack(self.expr)

    @property
    def model(self):
        return GpModel(self.expr, self.noise_variance)

    def text(self, with_params=True):
        return format_expr(self.expr, with_params=with_params)


@dataclass
class DepthRecord:
    depth: int
    candidates: List[ScoredCandidate]
    frontier: List[str]


@dataclass
class SearchTrace:
    config: SearchConfig
    n: int
    n_dims: int
    depths: List[DepthRecord] = field(default_factory=list)
    noise_only_bic: float = math.inf
    stop_reason: str = ""

    @property
    def best(self):
        pool = [c for rec in self.depths for c in rec.candidates if c.feasible]
        return _select(pool, 1)[0] if pool else None

    def best_per_depth(self):
        out = []
        for rec in self.depths:
            pool = [c for c in rec.candidates if c.feasible]
            out.append(_select(pool, 1)[0] if pool else None)
        return out

    @property
    def beats_noise(self):
        best = self.best
        return best is not None and best.bic < self.noise_only_bic


def _compare(a, b):
    if abs(a.bic - b.bic) > BIC_TIE and not (math.isinf(a.bic) and math.isinf(b.bic)):
        return -1 if a.bic < b.bic else 1
    if a.n_params != b.n_params:
        return -1 if a.n_params < b.n_params else 1
    return (a.canonical > b.canonical) - (a.canonical < b.canonical)


def _select(candidates, k):
    return sorted(candidates, key=functools.cmp_to_key(_compare))[:k]


def _score(expr, data, config, depth, sources):
    """Fit one structure from each ``(parent, operator, expr)`` source; keep the best."""
    canonical = canonical_string(expr)
    t0 = time.perf_counter()
    best, best_src, evals = None, sources[0], 0
    for src in sources:
        parent, op, src_expr = src
        parent_key = parent.canonical if parent is not None else ""
        rng = candidate_rng(config.seed, canonical, parent_key)
        fit = optimize_params(src_expr, data, config,
                              inherited_noise=None if parent is None else parent.noise_variance,
                              rng=rng)
        evals += fit.n_grad_evals
        if fit.feasible and (best is None or fit.log_ml > best.log_ml):
            best, best_src = fit, src
    parent, op, _ = best_src
    elapsed = time.perf_counter() - t0
    parent_key = parent.canonical if parent is not None else None
    if best is None:
        return ScoredCandidate(expr, canonical, math.nan, -math.inf, math.inf,
                               param_count(expr) + 1, parent_key, op, depth,
                               elapsed, evals, fit.error or "infeasible")
    fitted = canonical_form(best.model.kernel)
    return ScoredCandidate(fitted, canonical, best.noise_variance, best.log_ml,
                           bic_score(best.log_ml, fitted, data.n),
                           param_count(fitted) + 1, parent_key, op, depth,
                           elapsed, evals)


def greedy_search(data, config, progress=None):
    """Run the structure search on ``data`` (targets should be standardized).

    Returns the full :class:`SearchTrace`; ``trace.best`` is the lowest-BIC
    candidate seen at any depth. ``progress`` is called with each finished
    :class:`DepthRecord`.
    """
    trace = SearchTrace(config, data.n, data.D,
                        noise_only_bic=noise_only_bic(data.y))
    groups = {}
    for fam in config.families:
        for d in range(data.D):
            leaf = Base(fam, d)
            groups.setdefault(canonical_string(leaf), []).append((None, "base", leaf))
    incumbent = None
    depth = 0
    while True:
        scored = []
        for key, sources in groups.items():
            if config.dedup:
                scored.append(_score(sources[0][2], data, config, depth, sources))
            else:
                scored.extend(_score(s[2], data, config, depth, [s]) for s in sources)
        feasible = [c for c in scored if c.feasible]
        frontier = _select(feasible, config.beam_width)
        record = DepthRecord(depth, scored, [c.canonical for c in frontier])
        trace.depths.append(record)
        if progress is not None:
            progress(record)
        if frontier:
            log.info("depth %d: %d candidates, best %s (BIC %.3f)", depth,
                     len(scored), frontier[0].canonical, frontier[0].bic)
        if not frontier:
            trace.stop_reason = "no feasible candidate"
            break
        if incumbent is not None and _compare(frontier[0], incumbent) >= 0:
            trace.stop_reason = f"no improvement at depth {depth}"
            break
        incumbent = frontier[0]
        if depth >= config.max_depth:
            trace.stop_reason = "maximum depth reached"
            break
        depth += 1
        groups = {}
        for parent in frontier:
            for item in expand(parent.expr, config.families, data.D, dedup=config.dedup):
                key = canonical_string(item.expr)
                if config.dedup:
                    groups.setdefault(key, []).append((parent, item.operator, item.expr))
                else:
                    groups.setdefault(f"{key}#{len(groups)}", []).append(
                        (parent, item.operator, item.expr))
    return trace


__all__ = ["SearchConfig", "expand", "optimize_params", "bic_score", "greedy_search",
           "ScoredCandidate", "SearchTrace", "DepthRecord", "Expansion", "FitResult",
           "noise_only_bic", "inheritance_mask", "candidate_rng"]
