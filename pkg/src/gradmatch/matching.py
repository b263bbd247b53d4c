"""Regularized gradient-matching error and its nonnegative ridge minimizer.

For element gradients ``A`` (one per row) and a target ``b`` the matching error
of weights ``w`` is ``||A^T w - b||^2 + lam * ||w||^2``. ``E(X)`` is its minimum
over ``w >= 0`` supported on ``X`` and ``F(X) = l_max - E(X)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NoConvergence


@dataclass(frozen=True)
class WeightSolution:
    indices: np.ndarray
    weights: np.ndarray
    residual_vector: np.ndarray
    objective_value: float
    iterations: int = 0


def objective(A, b, w, lam) -> float:
    r = A.T @ w - b
    return float(r @ r + lam * (w @ w))


def objective_grad(A, b, w, lam) -> np.ndarray:
    return 2.0 * (A @ (A.T @ w - b) + lam * w)


def _kkt_tol(A, b, tol):
    return tol * max(1.0, float(np.max(np.abs(2.0 * (A @ b)), initial=0.0)))


def kkt_violation(A, b, w, lam, nonnegative=True) -> float:
    """Largest KKT violation, in gradient units, of ``w`` for the problem above."""
    g = objective_grad(A, b, w, lam)
    if not nonnegative:
        return float(np.max(np.abs(g), initial=0.0))
    active = w > 0
    worst_free = np.max(np.abs(g[active]), initial=0.0)
    worst_bound = np.max(-g[~active], initial=0.0)
    return float(max(worst_free, worst_bound))


def _subproblem(A, b, lam):
    """Unconstrained minimizer of the ridge objective on the rows of ``A``."""
    m, d = A.shape
    if lam > 0:
        if m <= d:
            return linalg.solve(A @ A.T + lam * np.eye(m), A @ b, assume_a="pos")
        # (A A^T + lam I)^-1 A b == A (A^T A + lam I)^-1 b
        return A @ linalg.solve(A.T @ A + lam * np.eye(d), b, assume_a="pos")
    return np.linalg.lstsq(A.T, b, rcond=None)[0]


def _coordinate_descent(A, b, lam, w, tol_eff, max_sweeps):
    diag = np.einsum("ij,ij->i", A, A) + lam
    u = A.T @ w
    for sweep in range(1, max_sweeps + 1):
        for j in range(w.size):
            if diag[j] <= 0:
                continue
            g = 2.0 * (A[j] @ (u - b) + lam * w[j])
            new = max(0.0, w[j] - g / (2.0 * diag[j]))
            if new != w[j]:
                u += (new - w[j]) * A[j]
                w[j] = new
        if kkt_violation(A, b, w, lam) <= tol_eff:
            return w, sweep
    return w, max_sweeps


def nnls_ridge(A, b, lam, tol=1e-8, max_iters=None, allow_negative=False, init=None):
    """Minimize ``||A^T w - b||^2 + lam ||w||^2`` over ``w >= 0``.

    Active-set method (Lawson-Hanson applied to the normal equations), with a
    coordinate-descent polish when the active-set answer misses the KKT
    tolerance. ``init`` is an optional feasible starting point; its positive
    entries seed the passive set. ``tol`` is relative to the largest entry of
    the objective gradient at ``w = 0``.

    Returns ``(w, iterations)``; raises ``NoConvergence`` when ``max_iters``
    is exhausted (default ``10 * m * d``, at least 100).
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    m, d = A.shape
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if max_iters is None:
        max_iters = max(100, 10 * m * d)
    if allow_negative:
        return _subproblem(A, b, lam), 1

    tol_eff = _kkt_tol(A, b, tol)
    w = np.zeros(m) if init is None else np.maximum(np.asarray(init, dtype=np.float64), 0.0)
    passive = w > 0
    banned = np.zeros(m, dtype=bool)
    iters = 0
    while iters < max_iters:
        neg_grad = A @ (b - A.T @ w) - lam * w
        candidates = ~passive & ~banned & (neg_grad > tol_eff / 2.0)
        if not candidates.any():
            break
        j = int(np.argmax(np.where(candidates, neg_grad, -np.inf)))
        passive[j] = True
        w_before = w.copy()
        while iters < max_iters:
            iters += 1
            s = np.zeros(m)
            s[passive] = _subproblem(A[passive], b, lam)
            infeasible = passive & (s <= 0)
            if not infeasible.any():
                w = s
                break
            ratio = w[infeasible] / (w[infeasible] - s[infeasible])
            alpha = float(np.min(ratio))
            w = w + alpha * (s - w)
            passive &= w > 1e-15 * max(1.0, float(np.max(np.abs(w))))
            w[~passive] = 0.0
        if np.array_equal(w, w_before):
            # numerically unable to enter; skip j until the iterate moves
            passive[j] = False
            banned[j] = True
        else:
            banned[:] = False

    if kkt_violation(A, b, w, lam) > tol_eff:
        w, sweeps = _coordinate_descent(A, b, lam, w.copy(), tol_eff, max(1, max_iters - iters))
        iters += sweeps
        if kkt_violation(A, b, w, lam) > tol_eff:
            raise NoConvergence(max_iters)
    return w, iters


def _as_index(X):
    return np.asarray(sorted(X) if isinstance(X, (set, frozenset)) else X, dtype=np.int64).reshape(-1)


def solve_nnls_ridge(bank, X, lam, tol=1e-8, max_iters=None,
                     allow_negative_weights=False, init=None) -> WeightSolution:
    """Optimal weights for the elements ``X`` of ``bank``."""
    idx = _as_index(X)
    if idx.size == 0:
        raise ValueError("X must be nonempty")
    if len(set(idx.tolist())) != idx.size:
        raise ValueError("X has repeated elements")
    A = bank.rows[idx]
    w, iters = nnls_ridge(A, bank.target, lam, tol, max_iters, allow_negative_weights, init)
    residual = A.T @ w - bank.target
    value = float(residual @ residual + lam * (w @ w))
    return WeightSolution(idx, w, residual, value, iters)


def eval_E_lambda(bank, X, lam, allow_negative_weights=False) -> float:
    """Minimum regularized matching error over weights on ``X``; ``||target||^2`` for empty ``X``."""
    idx = _as_index(X)
    if idx.size == 0:
        return float(bank.target @ bank.target)
    return solve_nnls_ridge(bank, idx, lam, allow_negative_weights=allow_negative_weights).objective_value


def default_l_max(bank) -> float:
    return float(bank.target @ bank.target)


def eval_F_lambda(bank, X, lam, l_max=None) -> float:
    l_max = default_l_max(bank) if l_max is None else l_max
    return l_max - eval_E_lambda(bank, X, lam)


def residual_gradient(bank, solution: WeightSolution | None = None, lam: float = 0.0) -> np.ndarray:
    """Gradient of the matching error with respect to every element weight.

    ``r_j = 2 g_j^T (sum_i w_i g_i - target) + 2 lam w_j``; weights outside the
    solution are zero.
    """
    w_full = np.zeros(bank.n_elements)
    if solution is None:
        residual = -bank.target
    else:
        w_full[solution.indices] = solution.weights
        residual = solution.residual_vector
    return 2.0 * (bank.rows @ residual) + 2.0 * lam * w_full


def kkt_report(bank, solution: WeightSolution, lam) -> dict:
    A = bank.rows[solution.indices]
    g = objective_grad(A, bank.target, solution.weights, lam)
    return {
        "indices": solution.indices.tolist(),
        "weights": solution.weights.tolist(),
        "gradient": g.tolist(),
        "max_violation": kkt_violation(A, bank.target, solution.weights, lam),
        "tolerance_scale": _kkt_tol(A, bank.target, 1.0),
    }


class MatchObjective:
    """Memoized ``E`` / ``F`` evaluations on one bank, for exhaustive checks.

    ``allow_negative_weights`` drops the sign constraint (plain ridge refit).
    """

    def __init__(self, bank, lam, l_max=None, allow_negative_weights=False):
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        self.bank = bank
        self.lam = lam
        self.allow_negative_weights = allow_negative_weights
        self.l_max = default_l_max(bank) if l_max is None else l_max
        if self.l_max < default_l_max(bank):
            raise ValueError("l_max must be at least E(empty) = ||target||^2")
        self._cache = {}

    def E(self, X) -> float:
        key = frozenset(int(i) for i in X)
        if key not in self._cache:
            self._cache[key] = eval_E_lambda(self.bank, key, self.lam, self.allow_negative_weights)
        return self._cache[key]

    def F(self, X) -> float:
        return self.l_max - self.E(X)

    def gain(self, j, X) -> float:
        X = frozenset(X)
        return self.F(X | {j}) - self.F(X)
