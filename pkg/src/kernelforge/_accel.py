"""Hot loops: base-kernel covariance blocks and their parameter derivatives.

Every covariance evaluation in a structure search funnels through
``base_block`` and every likelihood gradient through ``base_contract``.
Two interchangeable implementations exist: numba-compiled pair loops and
vectorised numpy. The numba path is used when numba imports and
``KERNELFORGE_NUMBA`` is not set to ``0``/``off``/``false``.

Parameters arrive in the internal (optimiser) space:

=====  ==========================================
SE     log sf2, log ell
PER    log sf2, log ell, log period
LIN    log sb2, log sv2, location
RQ     log sf2, log ell, log alpha
=====  ==========================================

``base_block`` returns ``(K, G)`` with ``G[t] = dK/dtheta_t`` (or ``None``);
``base_contract`` returns ``sum_ij W_ij G[t]_ij`` without forming ``G``.

The periodic kernel uses ``sin(a - b) = sin a cos b - cos a sin b`` with
per-point sines and cosines, which replaces a transcendental call per pair
with two multiplications.
"""
import math
import os

import numpy as np

FAMILIES = ("SE", "PER", "LIN", "RQ")
FAMILY_CODE = {name: i for i, name in enumerate(FAMILIES)}
N_PARAMS = {"SE": 2, "PER": 3, "LIN": 3, "RQ": 3}


def _numba_requested():
    flag = os.environ.get("KERNELFORGE_NUMBA", "1").strip().lower()
    return flag not in ("0", "off", "false", "no")


try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementation
# ---------------------------------------------------------------------------

def _np_block(code, theta, x1, x2, want_grad):
    if code == 0:
        sf2, ell = math.exp(theta[0]), math.exp(theta[1])
        r = x1[:, None] - x2[None, :]
        q = r * r / (ell * ell)
        K = sf2 * np.exp(-0.5 * q)
        if not want_grad:
            return K, None
        return K, np.stack([K, K * q])
    if code == 1:
        sf2, ell, per = math.exp(theta[0]), math.exp(theta[1]), math.exp(theta[2])
        inv_l2 = 1.0 / (ell * ell)
        a1, a2 = np.pi * x1 / per, np.pi * x2 / per
        s1, c1, s2, c2 = np.sin(a1), np.cos(a1), np.sin(a2), np.cos(a2)
        s = s1[:, None] * c2[None, :] - c1[:, None] * s2[None, :]
        K = sf2 * np.exp(-2.0 * s * s * inv_l2)
        if not want_grad:
            return K, None
        cu = c1[:, None] * c2[None, :] + s1[:, None] * s2[None, :]
        u = np.pi * (x1[:, None] - x2[None, :]) / per
        return K, np.stack([K, K * (4.0 * s * s * inv_l2),
                            K * (4.0 * u * s * cu * inv_l2)])
    if code == 2:
        sb2, sv2, loc = math.exp(theta[0]), math.exp(theta[1]), theta[2]
        a = x1[:, None] - loc
        b = x2[None, :] - loc
        prod = a * b
        K = sb2 + sv2 * prod
        if not want_grad:
            return K, None
        return K, np.stack([np.full_like(K, sb2), sv2 * prod, -sv2 * (a + b)])
    if code == 3:
        sf2, ell, alpha = math.exp(theta[0]), math.exp(theta[1]), math.exp(theta[2])
        r = x1[:, None] - x2[None, :]
        z = r * r / (2.0 * alpha * ell * ell)
        logb = np.log1p(z)
        K = sf2 * np.exp(-alpha * logb)
        if not want_grad:
            return K, None
        frac = z / (1.0 + z)
        return K, np.stack([K, K * (2.0 * alpha * frac), K * (alpha * (frac - logb))])
    raise ValueError(f"unknown kernel family code {code}")


def numpy_block(code, theta, x1, x2, want_grad=False, symmetric=False):
    K, G = _np_block(code, np.asarray(theta, dtype=float), np.asarray(x1, dtype=float),
                     np.asarray(x2, dtype=float), want_grad)
    if symmetric:
        # mirror the upper triangle so the result is exactly symmetric
        K = np.triu(K) + np.triu(K, 1).T
        if G is not None:
            G = np.triu(G) + np.swapaxes(np.triu(G, 1), 1, 2)
    return K, G


def numpy_contract(code, theta, x, W):
    """``sum_ij W_ij dK_ij/dtheta_t`` for the symmetric block on inputs ``x``."""
    x = np.asarray(x, dtype=float)
    _, G = _np_block(code, np.asarray(theta, dtype=float), x, x, True)
    return G.reshape(G.shape[0], -1) @ np.asarray(W, dtype=float).ravel()


# ---------------------------------------------------------------------------
# numba implementation
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _mirror(K, G):
        n = K.shape[0]
        for i in range(n):
            for j in range(i):
                K[i, j] = K[j, i]
        for t in range(G.shape[0]):
            for i in range(n):
                for j in range(i):
                    G[t, i, j] = G[t, j, i]

    @_jit
    def _se_block(theta, x1, x2, want_grad, symmetric):
        n, m = x1.shape[0], x2.shape[0]
        sf2 = np.exp(theta[0])
        inv_l2 = np.exp(-2.0 * theta[1])
        K = np.empty((n, m))
        G = np.empty((2 if want_grad else 0, n, m))
        for i in range(n):
            for j in range(i if symmetric else 0, m):
                r = x1[i] - x2[j]
                q = r * r * inv_l2
                k = sf2 * np.exp(-0.5 * q)
                K[i, j] = k
                if want_grad:
                    G[0, i, j] = k
                    G[1, i, j] = k * q
        if symmetric:
            _mirror(K, G)
        return K, G

    @_jit
    def _per_block(theta, x1, x2, want_grad, symmetric):
        n, m = x1.shape[0], x2.shape[0]
        sf2 = np.exp(theta[0])
        inv_l2 = np.exp(-2.0 * theta[1])
        per = np.exp(theta[2])
        s1 = np.sin(np.pi * x1 / per)
        c1 = np.cos(np.pi * x1 / per)
        s2 = np.sin(np.pi * x2 / per)
        c2 = np.cos(np.pi * x2 / per)
        K = np.empty((n, m))
        G = np.empty((3 if want_grad else 0, n, m))
        for i in range(n):
            for j in range(i if symmetric else 0, m):
                s = s1[i] * c2[j] - c1[i] * s2[j]
                k = sf2 * np.exp(-2.0 * s * s * inv_l2)
                K[i, j] = k
                if want_grad:
                    cu = c1[i] * c2[j] + s1[i] * s2[j]
                    u = np.pi * (x1[i] - x2[j]) / per
                    G[0, i, j] = k
                    G[1, i, j] = k * (4.0 * s * s * inv_l2)
                    G[2, i, j] = k * (4.0 * u * s * cu * inv_l2)
        if symmetric:
            _mirror(K, G)
        return K, G

    @_jit
    def _lin_block(theta, x1, x2, want_grad, symmetric):
        n, m = x1.shape[0], x2.shape[0]
        sb2 = np.exp(theta[0])
        sv2 = np.exp(theta[1])
        loc = theta[2]
        K = np.empty((n, m))
        G = np.empty((3 if want_grad else 0, n, m))
        for i in range(n):
            a = x1[i] - loc
            for j in range(i if symmetric else 0, m):
                b = x2[j] - loc
                K[i, j] = sb2 + sv2 * (a * b)
                if want_grad:
                    G[0, i, j] = sb2
                    G[1, i, j] = sv2 * (a * b)
                    G[2, i, j] = -sv2 * (a + b)
        if symmetric:
            _mirror(K, G)
        return K, G

    @_jit
    def _rq_block(theta, x1, x2, want_grad, symmetric):
        n, m = x1.shape[0], x2.shape[0]
        sf2 = np.exp(theta[0])
        alpha = np.exp(theta[2])
        scale = np.exp(-2.0 * theta[1]) / (2.0 * alpha)
        K = np.empty((n, m))
        G = np.empty((3 if want_grad else 0, n, m))
        for i in range(n):
            for j in range(i if symmetric else 0, m):
                r = x1[i] - x2[j]
                z = r * r * scale
                logb = np.log1p(z)
                k = sf2 * np.exp(-alpha * logb)
                K[i, j] = k
                if want_grad:
                    frac = z / (1.0 + z)
                    G[0, i, j] = k
                    G[1, i, j] = k * (2.0 * alpha * frac)
                    G[2, i, j] = k * (alpha * (frac - logb))
        if symmetric:
            _mirror(K, G)
        return K, G

    # Contractions take the block K already evaluated by the forward pass and
    # only read its upper triangle, so no exponentials are recomputed.

    @_jit
    def _se_contract(theta, x, W, K):
        n = x.shape[0]
        inv_l2 = np.exp(-2.0 * theta[1])
        g0 = 0.0
        g1 = 0.0
        for i in range(n):
            g0 += W[i, i] * K[i, i]
            for j in range(i + 1, n):
                r = x[i] - x[j]
                k = (W[i, j] + W[j, i]) * K[i, j]
                g0 += k
                g1 += k * (r * r * inv_l2)
        return np.array([g0, g1])

    @_jit
    def _per_contract(theta, x, W, K):
        n = x.shape[0]
        inv_l2 = np.exp(-2.0 * theta[1])
        per = np.exp(theta[2])
        sx = np.sin(np.pi * x / per)
        cx = np.cos(np.pi * x / per)
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for i in range(n):
            g0 += W[i, i] * K[i, i]
            for j in range(i + 1, n):
                s = sx[i] * cx[j] - cx[i] * sx[j]
                cu = cx[i] * cx[j] + sx[i] * sx[j]
                u = np.pi * (x[i] - x[j]) / per
                k = (W[i, j] + W[j, i]) * K[i, j] * (4.0 * s * inv_l2)
                g0 += (W[i, j] + W[j, i]) * K[i, j]
                g1 += k * s
                g2 += k * (u * cu)
        return np.array([g0, g1, g2])

    @_jit
    def _lin_contract(theta, x, W, K):
        n = x.shape[0]
        sb2 = np.exp(theta[0])
        sv2 = np.exp(theta[1])
        loc = theta[2]
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for i in range(n):
            a = x[i] - loc
            for j in range(n):
                b = x[j] - loc
                w = W[i, j]
                g0 += w
                g1 += w * (a * b)
                g2 += w * (a + b)
        return np.array([g0 * sb2, g1 * sv2, -g2 * sv2])

    @_jit
    def _rq_contract(theta, x, W, K):
        n = x.shape[0]
        alpha = np.exp(theta[2])
        scale = np.exp(-2.0 * theta[1]) / (2.0 * alpha)
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for i in range(n):
            g0 += W[i, i] * K[i, i]
            for j in range(i + 1, n):
                r = x[i] - x[j]
                z = r * r * scale
                k = (W[i, j] + W[j, i]) * K[i, j]
                frac = z / (1.0 + z)
                g0 += k
                g1 += k * (2.0 * alpha * frac)
                g2 += k * (alpha * (frac - np.log1p(z)))
        return np.array([g0, g1, g2])

    _NB_BLOCKS = (_se_block, _per_block, _lin_block, _rq_block)
    _NB_CONTRACTS = (_se_contract, _per_contract, _lin_contract, _rq_contract)

    def numba_block(code, theta, x1, x2, want_grad=False, symmetric=False):
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        x1 = np.ascontiguousarray(x1, dtype=np.float64)
        x2 = np.ascontiguousarray(x2, dtype=np.float64)
        symmetric = bool(symmetric and x1.shape[0] == x2.shape[0])
        K, G = _NB_BLOCKS[code](theta, x1, x2, bool(want_grad), symmetric)
        return K, (G if want_grad else None)

    def numba_contract(code, theta, x, W, K=None):
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        x = np.ascontiguousarray(x, dtype=np.float64)
        if K is None:
            K, _ = _NB_BLOCKS[code](theta, x, x, False, True)
        return _NB_CONTRACTS[code](theta, x, np.ascontiguousarray(W, dtype=np.float64),
                                   np.ascontiguousarray(K, dtype=np.float64))

else:  # pragma: no cover
    numba_block = numba_contract = None


USE_NUMBA = HAVE_NUMBA and _numba_requested()


def backend():
    return "numba" if USE_NUMBA else "numpy"


def base_block(family, theta, x1, x2, want_grad=False, symmetric=False):
    """Covariance block of one base kernel between 1-D input columns."""
    code = FAMILY_CODE[family]
    if USE_NUMBA:
        return numba_block(code, theta, x1, x2, want_grad, symmetric)
    return numpy_block(code, theta, x1, x2, want_grad, symmetric)


def base_contract(family, theta, x, W, K=None):
    """Parameter gradient of ``sum_ij W_ij K_ij`` for one base kernel.

    ``K`` may pass the already evaluated symmetric block on ``x``.
    """
    code = FAMILY_CODE[family]
    if USE_NUMBA:
        return numba_contract(code, theta, x, W, K)
    return numpy_contract(code, theta, x, W)
