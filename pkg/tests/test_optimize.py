import numpy as np
import pytest
from hypothesis import given, strategies as st

from kernelforge.errors import ConditioningError
from kernelforge.optimize import _cubic_min, minimize_ncg


def quadratic(A, b):
    def fg(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b
    return fg


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


@given(st.integers(0, 2**31 - 1))
def test_quadratic_reaches_solution(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(5, 5))
    A = M @ M.T + 0.5 * np.eye(5)
    b = rng.normal(size=5)
    res = minimize_ncg(quadratic(A, b), np.zeros(5), max_grad_evals=400, ftol=0.0)
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-5)
    assert res.converged


def test_rosenbrock():
    res = minimize_ncg(rosenbrock, np.array([-1.2, 1.0]), max_grad_evals=1000, ftol=0.0,
                       gtol=1e-8)
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)


@pytest.mark.parametrize("budget", [1, 2, 7, 30])
def test_budget_counts_every_evaluation(budget):
    calls = []

    def fg(x):
        calls.append(1)
        return rosenbrock(x)

    res = minimize_ncg(fg, np.array([-1.2, 1.0]), max_grad_evals=budget)
    assert len(calls) == res.n_grad_evals <= budget


def test_result_is_never_worse_than_start():
    x0 = np.array([-1.2, 1.0])
    res = minimize_ncg(rosenbrock, x0, max_grad_evals=15)
    assert res.fun <= rosenbrock(x0)[0]


def test_failing_region_is_avoided():
    # minimum of the smooth part lies at 3, but x > 2 cannot be evaluated
    def fg(x):
        if x[0] > 2.0:
            raise ConditioningError("outside")
        return (x[0] - 3.0) ** 2, np.array([2 * (x[0] - 3.0)])

    res = minimize_ncg(fg, np.array([0.0]), max_grad_evals=60)
    assert 1.5 < res.x[0] <= 2.0


def test_non_finite_start_rejected():
    with pytest.raises(FloatingPointError):
        minimize_ncg(lambda x: (np.nan, x), np.zeros(2))


def test_already_optimal_start_converges_immediately():
    res = minimize_ncg(quadratic(np.eye(3), np.zeros(3)), np.zeros(3))
    assert res.converged and res.n_grad_evals == 1


def test_max_step_bounds_moves():
    # a linear objective has no minimiser; each move is capped
    res = minimize_ncg(lambda x: (float(-x.sum()), -np.ones(2)), np.zeros(2),
                       max_grad_evals=5, max_step=0.5)
    assert 0 < np.max(np.abs(res.x)) <= 0.5 * res.n_grad_evals


def test_cubic_minimiser_of_exact_cubic():
    # f(t) = (t - 1)^3 - 3 (t - 1), local minimum at t = 2
    f = lambda t: (t - 1) ** 3 - 3 * (t - 1)
    df = lambda t: 3 * (t - 1) ** 2 - 3
    assert _cubic_min(1.5, f(1.5), df(1.5), 3.0, f(3.0), df(3.0)) == pytest.approx(2.0)
