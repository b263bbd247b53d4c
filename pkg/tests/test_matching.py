import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import nnls

from gradmatch.bank import GradientBank
from gradmatch.errors import NoConvergence
from gradmatch.matching import (MatchObjective, eval_E_lambda, eval_F_lambda, kkt_report,
                                kkt_violation, nnls_ridge, residual_gradient, solve_nnls_ridge)


def _bank(rows, target):
    return GradientBank(np.asarray(rows, float), np.asarray(target, float))


def _augmented_oracle(A, b, lam):
    """NNLS on [A^T; sqrt(lam) I] w ~ [b; 0], solved by scipy."""
    m = A.shape[0]
    M = np.vstack([A.T, np.sqrt(lam) * np.eye(m)])
    return nnls(M, np.concatenate([b, np.zeros(m)]))[0]


def test_exact_fit():
    sol = solve_nnls_ridge(_bank(np.eye(2), [1, 2]), [0, 1], 0.0)
    assert np.allclose(sol.weights, [1, 2]) and sol.objective_value < 1e-20


def test_closed_form_ridge():
    sol = solve_nnls_ridge(_bank(np.eye(2), [1, 2]), [0, 1], 1.0)
    assert np.allclose(sol.weights, [0.5, 1.0])


def test_negative_clipped():
    sol = solve_nnls_ridge(_bank([[1, 0]], [-1, 0]), [0], 0.0)
    assert sol.weights.tolist() == [0.0] and np.isclose(sol.objective_value, 1.0)


def test_allow_negative_is_plain_ridge():
    sol = solve_nnls_ridge(_bank([[1, 0]], [-1, 0]), [0], 1.0, allow_negative_weights=True)
    assert np.allclose(sol.weights, [-0.5])


def test_empty_and_exact_column():
    bank = _bank([[1, 2], [3, 4]], [3, 4])
    assert eval_E_lambda(bank, [], 0.5) == 25.0
    assert eval_E_lambda(bank, [1], 0.0) < 1e-20
    with pytest.raises(ValueError):
        solve_nnls_ridge(bank, [], 0.5)
    with pytest.raises(ValueError):
        solve_nnls_ridge(bank, [1, 1], 0.5)


def test_residual_gradient_examples():
    bank = _bank([[1, 0], [0, 1]], [3, 4])
    r = residual_gradient(bank)
    assert np.allclose(r, [-6, -8]) and np.argmax(np.abs(r)) == 1
    sol = solve_nnls_ridge(bank, [0, 1], 0.0)
    assert np.allclose(residual_gradient(bank, sol, 0.0), 0)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 100_000), m=st.integers(1, 6), d=st.integers(1, 8),
       lam=st.sampled_from([0.0, 0.01, 0.5, 3.0]))
def test_matches_scipy_nnls(seed, m, d, lam):
    rng = np.random.default_rng(seed)
    A, b = rng.standard_normal((m, d)), rng.standard_normal(d)
    w, _ = nnls_ridge(A, b, lam)
    ref = _augmented_oracle(A, b, lam)
    f = lambda v: np.sum((A.T @ v - b) ** 2) + lam * v @ v  # noqa: E731
    assert np.all(w >= 0)
    assert f(w) <= f(ref) + 1e-9 * max(1.0, f(ref))


def test_kkt_and_warm_start():
    rng = np.random.default_rng(1)
    A, b = rng.standard_normal((30, 6)), rng.standard_normal(6)
    w, _ = nnls_ridge(A, b, 0.5)
    assert kkt_violation(A, b, w, 0.5) < 1e-6
    w2, iters = nnls_ridge(A, b, 0.5, init=w)
    assert np.allclose(w, w2, atol=1e-10) and iters <= 2
    bank = GradientBank(A, b)
    rep = kkt_report(bank, solve_nnls_ridge(bank, range(30), 0.5), 0.5)
    assert rep["max_violation"] <= 1e-8 * rep["tolerance_scale"] + 1e-12


def test_push_through_branch_agrees():
    rng = np.random.default_rng(2)
    A, b = rng.standard_normal((40, 5)), rng.standard_normal(5)
    w, _ = nnls_ridge(A, b, 0.7, allow_negative=True)
    direct = np.linalg.solve(A @ A.T + 0.7 * np.eye(40), A @ b)
    assert np.allclose(w, direct)


def test_no_convergence():
    rng = np.random.default_rng(3)
    A, b = rng.standard_normal((20, 4)), rng.standard_normal(4)
    with pytest.raises(NoConvergence) as info:
        nnls_ridge(A, b, 0.1, tol=1e-300, max_iters=1)
    assert info.value.max_iters == 1


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_monotone_refit_and_shrinkage(seed):
    rng = np.random.default_rng(seed)
    bank = _bank(rng.standard_normal((6, 3)), rng.standard_normal(3))
    X = list(rng.choice(6, 3, replace=False))
    j = next(i for i in range(6) if i not in X)
    assert eval_E_lambda(bank, X + [j], 0.5) <= eval_E_lambda(bank, X, 0.5) + 1e-9
    assert eval_E_lambda(bank, X, 0.1) <= eval_E_lambda(bank, X, 1.0) + 1e-9


def test_f_lambda_consistency():
    rng = np.random.default_rng(4)
    bank = _bank(rng.standard_normal((5, 3)), rng.standard_normal(3))
    obj = MatchObjective(bank, 0.5)
    assert obj.F([]) == 0.0
    assert obj.F([0, 2]) == obj.l_max - obj.E([0, 2])
    assert np.isclose(eval_F_lambda(bank, [0, 2], 0.5), obj.F([0, 2]))
    assert obj.F([0, 1, 2]) >= obj.F([0, 2]) - 1e-12
    with pytest.raises(ValueError):
        MatchObjective(bank, 0.5, l_max=0.0)


def test_projected_gradient_oracle_small():
    # fine-grid oracle on a 2-column instance
    rng = np.random.default_rng(5)
    bank = _bank(rng.standard_normal((5, 3)), rng.standard_normal(3))
    A = bank.rows[[1, 3]]
    grid = np.linspace(0, 3, 601)
    W = np.stack(np.meshgrid(grid, grid), -1).reshape(-1, 2)
    vals = np.sum((W @ A - bank.target) ** 2, axis=1) + 0.5 * np.sum(W ** 2, axis=1)
    assert eval_E_lambda(bank, [1, 3], 0.5) <= vals.min() + 1e-6
    assert vals.min() - eval_E_lambda(bank, [1, 3], 0.5) < 1e-3
