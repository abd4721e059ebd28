import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from _gen import central_diff, random_data, random_expr
from kernelforge.errors import DimensionError, ParamLengthError
from kernelforge.gp import jittered_cholesky
from kernelforge.kernels import (Base, Product, Sum, canonical_form, canonical_string,
                                 cov_matrix, evaluate, grad_cov_matrix, leaves, pack,
                                 param_count, to_sum_of_products, unpack)
from kernelforge.syntax import parse

def se(sf=1.0, ell=1.0, dim=0):
    return Base("SE", dim, (math.log(sf), math.log(ell)))


@pytest.mark.parametrize("expr, x, x2, expected", [
    (se(), [0.3], [0.3], 1.0),
    (se(), [0.0], [1.0], math.exp(-0.5)),
    (Base("PER", 0, (math.log(2.0), 0.0, math.log(3.0))), [0.0], [3.0], 2.0),
    (Base("LIN", 0, (-800.0, 0.0, 0.0)), [2.0], [3.0], 6.0),
    (Base("RQ", 0, (0.0, 0.0, 0.0)), [0.0], [math.sqrt(2.0)], 0.5),
    (Sum((se(), se())), [1.0], [1.0], 2.0),
])
def test_eval_examples(expr, x, x2, expected):
    assert evaluate(expr, x, x2) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_each_leaf_reads_only_its_dimension():
    e = se(dim=1)
    assert evaluate(e, [0.0, 2.0], [100.0, 2.0]) == 1.0


def test_dimension_out_of_range_names_leaf():
    with pytest.raises(DimensionError, match="SE_3"):
        cov_matrix(parse("SE_1 + SE_3"), np.zeros((4, 2)))


def test_empty_point_set():
    K = cov_matrix(parse("SE_1 * PER_1"), np.zeros((0, 1)), np.ones((5, 1)))
    assert K.shape == (0, 5)


def test_two_point_se_matrix():
    K = cov_matrix(se(), np.array([[0.0], [1.0]]))
    e = math.exp(-0.5)
    np.testing.assert_allclose(K, [[1.0, e], [e, 1.0]], rtol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_cov_matrix_matches_entrywise_eval(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng, 3, n_dims=2)
    X = rng.uniform(0, 3, (6, 2))
    X2 = rng.uniform(0, 3, (4, 2))
    K = cov_matrix(e, X, X2)
    loop = np.array([[evaluate(e, a, b) for b in X2] for a in X])
    np.testing.assert_allclose(K, loop, rtol=1e-13, atol=1e-15)
    S = cov_matrix(e, X)
    assert np.array_equal(S, S.T)


def test_grad_log_sf_is_k_and_diag_ell_zero():
    X = np.linspace(0, 2, 5)[:, None]
    e = Base("SE", 0, (0.3, -0.2))
    G = grad_cov_matrix(e, X)
    np.testing.assert_allclose(G[0], cov_matrix(e, X), rtol=1e-15)
    assert np.all(np.diag(G[1]) == 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_grad_cov_matrix_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    e = random_expr(rng, 3)
    X = rng.uniform(0, 3, (7, 1))
    G = np.array(grad_cov_matrix(e, X))
    assert len(G) == param_count(e)

    def K_of(theta):
        return cov_matrix(unpack(e, theta), X)

    theta = pack(e)
    h = 1e-6
    # the oracle's own round-off is about eps * |K| / h
    floor = 1e-9 * max(1.0, np.abs(cov_matrix(e, X)).max())
    for t in range(theta.size):
        step = np.zeros_like(theta)
        step[t] = h
        fd = (K_of(theta + step) - K_of(theta - step)) / (2 * h)
        err = np.abs(G[t] - fd)
        assert np.all(err <= np.maximum(1e-6 * np.abs(fd), floor))


@pytest.mark.parametrize("family, count", [("SE", 2), ("PER", 3), ("LIN", 3), ("RQ", 3)])
def test_param_count(family, count):
    assert param_count(Base(family, 0)) == count


def test_param_count_product():
    assert param_count(parse("SE_1 * PER_2")) == 5


def test_unpack_length_mismatch():
    with pytest.raises(ParamLengthError) as info:
        unpack(parse("SE_1"), [0.0])
    assert (info.value.expected, info.value.actual) == (2, 1)


@given(st.integers(0, 2**31 - 1))
def test_pack_unpack_bit_identical(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng, 4)
    v = pack(e)
    again = pack(unpack(e, v))
    assert again.tobytes() == v.tobytes()
    assert unpack(e, v) == e


@given(st.integers(0, 2**31 - 1))
def test_symmetry_of_eval(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng, 3, n_dims=2)
    a, b = rng.uniform(-2, 4, (2, 2))
    assert evaluate(e, a, b) == pytest.approx(evaluate(e, b, a), rel=1e-14, abs=1e-300)


@given(st.integers(0, 2**31 - 1))
def test_psd_closure(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng, 4, n_dims=2)
    X = rng.uniform(0, 3, (int(rng.integers(1, 21)), 2))
    jittered_cholesky(cov_matrix(e, X))


def test_distributivity_example():
    e = parse("SE_1 * (RQ_1 + LIN_1)")
    assert canonical_string(to_sum_of_products(e)) == "LIN_1 * SE_1 + RQ_1 * SE_1"


def test_sum_of_products_of_base_is_identity():
    b = se(2.0, 0.5)
    assert to_sum_of_products(b) == b


@given(st.integers(0, 2**31 - 1))
def test_sum_of_products_preserves_values(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng, 4)
    sop = to_sum_of_products(e)
    if isinstance(sop, Sum):
        for term in sop.children:
            assert isinstance(term, (Base, Product))
            if isinstance(term, Product):
                assert all(isinstance(c, Base) for c in term.children)
    X = rng.uniform(0, 3, (10, 1))
    X2 = rng.uniform(0, 3, (10, 1))
    np.testing.assert_allclose(cov_matrix(sop, X, X2), cov_matrix(e, X, X2), rtol=1e-12,
                               atol=1e-300)


def test_duplicated_leaves_keep_parameters():
    e = parse("SE_1{ell=0.5} * (PER_1 + LIN_1)")
    sop = to_sum_of_products(e)
    se_leaves = [l for l in leaves(sop) if l.family == "SE"]
    assert len(se_leaves) == 2 and se_leaves[0] == se_leaves[1] == leaves(e)[0]


@pytest.mark.parametrize("a, b, same", [
    ("PER_1 + SE_1", "SE_1 + PER_1", True),
    ("SE_1 + SE_1", "SE_1", False),
    ("(SE_1 + PER_1) + LIN_1", "LIN_1 + PER_1 + SE_1", True),
    ("SE_1 * (PER_1 * RQ_2)", "RQ_2 * SE_1 * PER_1", True),
])
def test_canonical_string(a, b, same):
    assert (canonical_string(parse(a)) == canonical_string(parse(b))) is same


def test_canonical_flattening_by_structural_order():
    nested = Sum((Sum((se(), Base("PER", 0, (0, 0, 0)))), Base("LIN", 0, (0, 0, 0))))
    flat = canonical_form(nested)
    assert [c.family for c in flat.children] == ["LIN", "PER", "SE"]


@given(st.integers(0, 2**31 - 1))
def test_canonical_form_preserves_values_and_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng, 3, n_dims=2)
    X = rng.uniform(0, 3, (6, 2))
    # reordering a sum changes rounding only
    np.testing.assert_allclose(cov_matrix(canonical_form(e), X), cov_matrix(e, X),
                               rtol=1e-14, atol=0)
    if not isinstance(e, Base):
        perm = type(e)(tuple(e.children[::-1]))
        assert canonical_string(perm) == canonical_string(e)


def test_arity_one_nodes_rejected():
    with pytest.raises(ValueError):
        Sum((se(),))


def test_nested_same_kind_is_flattened_on_construction():
    s = Sum((Sum((se(), se())), se()))
    assert len(s.children) == 3
