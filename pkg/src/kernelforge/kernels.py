"""Kernel expression trees over base kernels, their covariance matrices and
hyperparameter gradients, and the rewrites used by the search.

Expressions are immutable. ``Sum`` and ``Product`` hold two or more
children and never directly contain a node of their own kind; use
:func:`add` / :func:`multiply` (or ``+`` / ``*``) to build them so that
nesting is flattened and single-child nodes collapse.

Each :class:`Base` leaf carries its hyperparameters in the internal space
used by the optimiser (see :mod:`kernelforge._accel`). A leaf whose
``params`` is ``None`` is structurally valid but cannot be evaluated; the
search uses such leaves to mark freshly introduced kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from ._accel import FAMILIES, N_PARAMS, base_block, base_contract
from .errors import DimensionError, ParamLengthError

# Linear-space names used in the text format, in packing order.
PARAM_NAMES = {
    "SE": ("sf", "ell"),
    "PER": ("sf", "ell", "p"),
    "LIN": ("sb", "sv", "loc"),
    "RQ": ("sf", "ell", "alpha"),
}
# Which internal parameters are stored as logs.
LOG_SPACE = {
    "SE": (True, True),
    "PER": (True, True, True),
    "LIN": (True, True, False),
    "RQ": (True, True, True),
}

# rank of node kinds in the structural order
_SUM_RANK, _BASE_RANK, _PROD_RANK = 0, 1, 2


@dataclass(frozen=True)
class Base:
    family: str
    dim: int
    params: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.family not in N_PARAMS:
            raise ValueError(f"unknown kernel family {self.family!r}; "
                             f"expected one of {', '.join(FAMILIES)}")
        if self.dim < 0:
            raise ValueError(f"dimension index must be non-negative, got {self.dim}")
        if self.params is not None:
            params = tuple(float(v) for v in self.params)
            if len(params) != N_PARAMS[self.family]:
                raise ParamLengthError(N_PARAMS[self.family], len(params))
            object.__setattr__(self, "params", params)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class _Composite:
    children: Tuple["KernelExpr", ...]

    def __post_init__(self):
        flat = []
        for child in self.children:
            if type(child) is type(self):
                flat.extend(child.children)
            else:
                flat.append(child)
        if len(flat) < 2:
            raise ValueError(f"{type(self).__name__} needs at least two children")
        object.__setattr__(self, "children", tuple(flat))

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __str__(self):
        return to_string(self)


class Sum(_Composite):
    pass


class Product(_Composite):
    pass


KernelExpr = Union[Base, Sum, Product]


def add(*exprs):
    """Sum of expressions, flattening nested sums; one argument is returned as is."""
    if len(exprs) == 1:
        return exprs[0]
    return Sum(tuple(exprs))


def multiply(*exprs):
    if len(exprs) == 1:
        return exprs[0]
    return Product(tuple(exprs))


def default_params(family):
    """All log-parameters 0 (linear value 1); LIN location 0."""
    return (0.0,) * N_PARAMS[family]


# ---------------------------------------------------------------------------
# traversal, parameters
# ---------------------------------------------------------------------------

def leaves(expr):
    """Base leaves in depth-first order (the packing order)."""
    if isinstance(expr, Base):
        return [expr]
    out = []
    for child in expr.children:
        out.extend(leaves(child))
    return out


def map_leaves(expr, fn):
    """Rebuild ``expr`` with every leaf replaced by ``fn(leaf)``."""
    if isinstance(expr, Base):
        return fn(expr)
    children = tuple(map_leaves(c, fn) for c in expr.children)
    return type(expr)(children)


def param_count(expr):
    return sum(N_PARAMS[leaf.family] for leaf in leaves(expr))


def is_parameterized(expr):
    return all(leaf.params is not None for leaf in leaves(expr))


def pack(expr):
    """Concatenate leaf parameters (internal space) in depth-first order."""
    chunks = []
    for leaf in leaves(expr):
        if leaf.params is None:
            raise ValueError(f"leaf {leaf.family}_{leaf.dim + 1} has no parameters set")
        chunks.extend(leaf.params)
    return np.array(chunks, dtype=float)


def unpack(expr, values):
    values = np.asarray(values, dtype=float).ravel()
    expected = param_count(expr)
    if values.size != expected:
        raise ParamLengthError(expected, values.size)
    pos = 0

    def assign(leaf):
        nonlocal pos
        k = N_PARAMS[leaf.family]
        chunk = tuple(float(v) for v in values[pos:pos + k])
        pos += k
        return Base(leaf.family, leaf.dim, chunk)

    return map_leaves(expr, assign)


def fill_defaults(expr):
    """Give every unset leaf the family defaults."""
    return map_leaves(expr, lambda leaf: leaf if leaf.params is not None
                      else Base(leaf.family, leaf.dim, default_params(leaf.family)))


def strip_params(expr):
    return map_leaves(expr, lambda leaf: Base(leaf.family, leaf.dim))


def linear_params(leaf):
    """Leaf parameters in linear (text) space."""
    return tuple(math.exp(v) if is_log else v
                 for v, is_log in zip(leaf.params, LOG_SPACE[leaf.family]))


def max_dim(expr):
    return max(leaf.dim for leaf in leaves(expr))


def check_dims(expr, n_dims):
    for leaf in leaves(expr):
        if leaf.dim >= n_dims:
            raise DimensionError(leaf, n_dims)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _as_points(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def evaluate(expr, x, x2):
    """k(x, x2) for two single D-dimensional points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    return float(cov_matrix(expr, x[None, :], x2[None, :])[0, 0])


def _params_of(leaf):
    if leaf.params is None:
        raise ValueError(f"leaf {leaf.family}_{leaf.dim + 1} has no parameters set")
    return np.asarray(leaf.params)


def _cov(expr, X1, X2, symmetric, cache):
    if isinstance(expr, Base):
        # expanded sums of products repeat the same leaf many times
        key = (expr.family, expr.dim, expr.params)
        K = cache.get(key)
        if K is None:
            K, _ = base_block(expr.family, _params_of(expr), X1[:, expr.dim],
                              X2[:, expr.dim], symmetric=symmetric)
            cache[key] = K
        return K
    blocks = [_cov(child, X1, X2, symmetric, cache) for child in expr.children]
    out = blocks[0].copy()
    if isinstance(expr, Sum):
        for b in blocks[1:]:
            out += b
    else:
        for b in blocks[1:]:
            out *= b
    return out


def cov_matrix(expr, X, X2=None):
    """Covariance matrix ``K[i, j] = k(X[i], X2[j])``.

    With ``X2`` omitted the matrix is built once per unordered pair and is
    exactly symmetric.
    """
    X = _as_points(X)
    symmetric = X2 is None
    X2 = X if symmetric else _as_points(X2)
    check_dims(expr, min(X.shape[1], X2.shape[1]))
    if X.shape[0] == 0 or X2.shape[0] == 0:
        return np.zeros((X.shape[0], X2.shape[0]))
    return _cov(expr, X, X2, symmetric, {})


def _cov_grad(expr, X):
    if isinstance(expr, Base):
        return base_block(expr.family, _params_of(expr), X[:, expr.dim],
                          X[:, expr.dim], want_grad=True, symmetric=True)
    parts = [_cov_grad(child, X) for child in expr.children]
    if isinstance(expr, Sum):
        K = parts[0][0].copy()
        for Kc, _ in parts[1:]:
            K += Kc
        return K, np.concatenate([G for _, G in parts])
    # product rule; prefix/suffix products avoid dividing by K_c
    mats = [Kc for Kc, _ in parts]
    n = len(mats)
    prefix = [None] * n
    suffix = [None] * n
    acc = np.ones_like(mats[0])
    for i in range(n):
        prefix[i] = acc
        acc = acc * mats[i]
    K = acc
    acc = np.ones_like(mats[0])
    for i in range(n - 1, -1, -1):
        suffix[i] = acc
        acc = acc * mats[i]
    grads = [G * (prefix[i] * suffix[i])[None] for i, (_, G) in enumerate(parts)]
    return K, np.concatenate(grads)


def cov_and_grad(expr, X):
    """``(K, G)`` with ``G[t] = dK/dtheta_t`` over the packed parameters."""
    X = _as_points(X)
    check_dims(expr, X.shape[1])
    n = X.shape[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros((param_count(expr), 0, 0))
    return _cov_grad(expr, X)


def _forward(expr, X):
    """Covariance of every node, as ``(K, [child results])``."""
    if isinstance(expr, Base):
        K, _ = base_block(expr.family, _params_of(expr), X[:, expr.dim],
                          X[:, expr.dim], symmetric=True)
        return K, None
    kids = [_forward(child, X) for child in expr.children]
    out = kids[0][0].copy()
    if isinstance(expr, Sum):
        for Kc, _ in kids[1:]:
            out += Kc
    else:
        for Kc, _ in kids[1:]:
            out *= Kc
    return out, kids


def _backward(expr, fwd, X, W, out):
    if isinstance(expr, Base):
        out.append(base_contract(expr.family, _params_of(expr), X[:, expr.dim], W,
                                 fwd[0]))
        return
    _, kids = fwd
    if isinstance(expr, Sum):
        for child, kid in zip(expr.children, kids):
            _backward(child, kid, X, W, out)
        return
    n = len(kids)
    suffix = [None] * n
    acc = None
    for i in range(n - 1, -1, -1):
        suffix[i] = acc
        acc = kids[i][0] if acc is None else acc * kids[i][0]
    prefix = W
    for i, (child, kid) in enumerate(zip(expr.children, kids)):
        weight = prefix if suffix[i] is None else prefix * suffix[i]
        _backward(child, kid, X, weight, out)
        prefix = prefix * kid[0]


def forward(expr, X):
    """Evaluate ``K(X, X)`` keeping every node's block for :func:`contract_grad`.

    The returned tree's first element is the full covariance matrix.
    """
    X = _as_points(X)
    check_dims(expr, X.shape[1])
    return _forward(expr, X)


def contract_grad(expr, tree, X, W):
    """``sum_ij W_ij dK_ij/dtheta_t`` over the packed parameters, for a tree
    from :func:`forward`.

    Only the symmetric part of ``W`` matters, so a weight holding the full
    value in one triangle and zero in the other is fine.
    """
    X = _as_points(X)
    out = []
    _backward(expr, tree, X, W, out)
    return np.concatenate(out) if out else np.zeros(0)


def grad_cov_matrix(expr, X):
    """List of ``dK/dtheta_t`` matrices, one per packed parameter."""
    _, G = cov_and_grad(expr, X)
    return list(G)


# ---------------------------------------------------------------------------
# rewrites
# ---------------------------------------------------------------------------

def _product_terms(expr):
    """Distribute products over sums: list of leaf lists, one per product."""
    if isinstance(expr, Base):
        return [[expr]]
    if isinstance(expr, Sum):
        return [term for child in expr.children for term in _product_terms(child)]
    terms = [[]]
    for child in expr.children:
        terms = [left + right for left in terms for right in _product_terms(child)]
    return terms


def to_sum_of_products(expr):
    """Expand by distributivity into a (canonical) sum of products of leaves."""
    terms = [multiply(*term) for term in _product_terms(expr)]
    return canonical_form(add(*terms))


def _param_key(expr):
    return tuple((0,) if leaf.params is None else (1,) + leaf.params
                 for leaf in leaves(expr))


def _order_key(expr):
    if isinstance(expr, Base):
        pk = (0,) if expr.params is None else (1,) + expr.params
        return (_BASE_RANK, expr.family, expr.dim, "", (pk,))
    rank = _SUM_RANK if isinstance(expr, Sum) else _PROD_RANK
    return (rank, "", -1, to_string(expr), _param_key(expr))


def canonical_form(expr):
    """Flatten nested sums/products and sort children by the structural order.

    The order is (node kind, family, dimension, printed subtree) with sums
    before leaves before products. Parameter values only break ties between
    structurally identical siblings.
    """
    if isinstance(expr, Base):
        return expr
    children = [canonical_form(child) for child in expr.children]
    flat = []
    for child in children:
        if type(child) is type(expr):
            flat.extend(child.children)
        else:
            flat.append(child)
    flat.sort(key=_order_key)
    return type(expr)(tuple(flat))


def to_string(expr):
    """Text form without parameters and without reordering."""
    from .syntax import format_expr
    return format_expr(expr, with_params=False, canonical=False)


def canonical_string(expr):
    return to_string(canonical_form(expr))


def structurally_equal(a, b):
    return canonical_string(a) == canonical_string(b)
