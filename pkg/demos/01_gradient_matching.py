"""Gradient matching on a hand-sized bank.

Builds a tiny bank of element gradients, solves the nonnegative ridge refit,
runs the greedy OMP selector and checks it against exhaustive search.
"""
from itertools import combinations

import numpy as np

from gradmatch.bank import GradientBank
from gradmatch.matching import eval_E_lambda, solve_nnls_ridge
from gradmatch.selectors import SelectorConfig, omp_select

rng = np.random.default_rng(0)
rows = rng.standard_normal((8, 3))
rows /= np.linalg.norm(rows, axis=1, keepdims=True)
bank = GradientBank(rows, rows[:5].sum(axis=0))
lam = 0.5

print("target:", np.round(bank.target, 3), " ||target||^2 =", round(bank.target @ bank.target, 3))

# weights for a fixed set; the refit never goes negative
sol = solve_nnls_ridge(bank, [0, 1, 2], lam)
print("refit on {0,1,2}: w =", np.round(sol.weights, 3), " E =", round(sol.objective_value, 4))

# greedy selection, one element at a time
sel = omp_select(bank, SelectorConfig(budget_k=3, lam=lam, epsilon=1e-9))
print("OMP picks", sel.indices.tolist(), "with weights", np.round(sel.weights, 3))
print("error after each step:", [round(e, 4) for e in sel.history[0]])

best = min(combinations(range(8), 3), key=lambda X: eval_E_lambda(bank, X, lam))
print("best 3-subset by enumeration:", list(best), " E =", round(eval_E_lambda(bank, best, lam), 4))
