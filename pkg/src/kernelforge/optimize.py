"""Nonlinear conjugate gradients (Polak-Ribiere+) with a strong-Wolfe line
search.

The line search brackets a step satisfying the strong Wolfe conditions by
cubic extrapolation, then narrows the bracket by safeguarded cubic
interpolation. Objective failures (``KernelForgeError``, linear-algebra
errors or non-finite values) count as infinitely bad trial points, so the
search backs away from regions where the covariance cannot be factorized.
"""
from dataclasses import dataclass

import numpy as np

from .errors import KernelForgeError


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_grad_evals: int
    converged: bool
    message: str


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic through two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0 or not np.isfinite(disc):
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


class _Budget(Exception):
    pass


def minimize_ncg(fun_grad, x0, max_grad_evals=200, gtol=1e-6, ftol=1e-9,
                 max_step=5.0, c1=1e-4, c2=0.1, max_ls=20,
                 restart_every=None):
    """Minimise ``fun_grad(x) -> (f, g)`` from ``x0``.

    Stops when ``max|g| < gtol``, when an iteration decreases ``f`` by less
    than ``ftol`` relative, or after ``max_grad_evals`` evaluations of
    ``fun_grad`` (line-search trials included). ``max_step`` caps the
    infinity norm of a single move in parameter space.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")
    evals = 1
    if restart_every is None:
        restart_every = 2 * x.size

    def phi(point):
        nonlocal evals
        if evals >= max_grad_evals:
            raise _Budget
        evals += 1
        try:
            fv, gv = fun_grad(point)
        except (KernelForgeError, FloatingPointError, np.linalg.LinAlgError):
            return np.inf, None
        if not np.isfinite(fv) or not np.all(np.isfinite(gv)):
            return np.inf, None
        return fv, gv

    d = -g
    slope = g @ d
    alpha = 1.0 / max(np.sqrt(-slope), 1e-12)
    since_restart = 0
    converged, message = False, "gradient budget exhausted"
    try:
        while True:
            if np.abs(g).max() < gtol:
                converged, message = True, "gradient tolerance reached"
                break
            dmax = np.abs(d).max()
            a_max = max_step / dmax
            step = _wolfe(phi, x, f, g, d, slope, min(alpha, a_max), a_max, c1, c2, max_ls)
            if step is None:
                if since_restart == 0:
                    message = "line search failed along steepest descent"
                    break
                d, slope, since_restart = -g, -(g @ g), 0
                alpha = 1.0 / max(np.sqrt(-slope), 1e-12)
                continue
            a, f_new, g_new = step
            x = x + a * d
            df = f - f_new
            f_old, f = f, f_new
            beta = max(0.0, g_new @ (g_new - g) / (g @ g))
            g = g_new
            d_new = -g + beta * d
            since_restart += 1
            new_slope = g @ d_new
            if new_slope >= 0 or since_restart >= restart_every:
                d_new, new_slope, since_restart = -g, -(g @ g), 0
            # first trial step: a quadratic through the last decrease
            alpha = min(2.02 * (f_old - f) / -new_slope, 100.0 * a * slope / new_slope)
            d, slope = d_new, new_slope
            if abs(df) <= ftol * max(abs(f_old), abs(f), 1.0):
                converged, message = True, "relative change below tolerance"
                break
    except _Budget:
        pass
    return OptimizeResult(x, float(f), g, evals, converged, message)


def _wolfe(phi, x, f0, g0, d, slope0, a1, a_max, c1, c2, max_ls):
    """Step ``(a, f, g)`` meeting the strong Wolfe conditions, or None."""
    a_prev, f_prev, s_prev = 0.0, f0, slope0
    a = a1
    best = None
    for i in range(max_ls):
        fa, ga = phi(x + a * d)
        sa = ga @ d if ga is not None else np.nan
        if fa <= f0 + c1 * a * slope0 and (best is None or fa < best[1]):
            best = (a, fa, ga)
        if fa > f0 + c1 * a * slope0 or (i > 0 and fa >= f_prev):
            return _zoom(phi, x, f0, slope0, d, a_prev, f_prev, s_prev, a, fa, sa,
                         c1, c2, max_ls - i - 1, best)
        if abs(sa) <= -c2 * slope0:
            return a, fa, ga
        if sa >= 0:
            return _zoom(phi, x, f0, slope0, d, a, fa, sa, a_prev, f_prev, s_prev,
                         c1, c2, max_ls - i - 1, best)
        if a >= a_max:
            return best
        t = _cubic_min(a_prev, f_prev, s_prev, a, fa, sa)
        lo, hi = a + 1.1 * (a - a_prev), a + 4.0 * (a - a_prev)
        t = hi if t is None or t < lo or t > hi else t
        a_prev, f_prev, s_prev = a, fa, sa
        a = min(t, a_max)
    return best


def _zoom(phi, x, f0, slope0, d, a_lo, f_lo, s_lo, a_hi, f_hi, s_hi, c1, c2,
          budget, best):
    for _ in range(max(budget, 0)):
        width = a_hi - a_lo
        t = None
        if np.isfinite(f_hi) and np.isfinite(s_hi):
            t = _cubic_min(a_lo, f_lo, s_lo, a_hi, f_hi, s_hi)
        lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
        if not np.isfinite(f_hi):
            t = a_lo + 0.1 * width  # failed point: retreat sharply
        elif t is None:
            t = 0.5 * (a_lo + a_hi)
        else:
            t = min(max(t, lo_b), hi_b)
        ft, gt = phi(x + t * d)
        st = gt @ d if gt is not None else np.nan
        if ft <= f0 + c1 * t * slope0 and (best is None or ft < best[1]):
            best = (t, ft, gt)
        if ft > f0 + c1 * t * slope0 or ft >= f_lo:
            a_hi, f_hi, s_hi = t, ft, st
        else:
            if abs(st) <= -c2 * slope0:
                return t, ft, gt
            if st * (a_hi - a_lo) >= 0:
                a_hi, f_hi, s_hi = a_lo, f_lo, s_lo
            a_lo, f_lo, s_lo = t, ft, st
        if abs(a_hi - a_lo) < 1e-12 * max(abs(a_lo), 1e-12):
            break
    return best
