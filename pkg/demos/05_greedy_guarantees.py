"""Checking the greedy guarantees by brute force.

For small banks every subset can be enumerated, so the greedy value can be
compared with the true optimum, and the diminishing-returns ratio measured
directly. Two versions of that ratio are shown: the element-wise one, which
can collapse to zero, and the summed one that the bound actually controls.
"""
import numpy as np

from gradmatch.bank import GradientBank
from gradmatch.matching import MatchObjective
from gradmatch.metrics import brute_force_verifier, gamma_hat, submodularity_ratio

rng = np.random.default_rng(3)
lam, k = 0.5, 2
print(f"{'F(OMP)':>9}{'F(opt)':>9}{'1-e^-g':>8}{'elementwise':>13}{'summed':>9}{'bound':>8}")
for _ in range(8):
    rows = rng.standard_normal((6, 4))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    bank = GradientBank(rows, rng.standard_normal(4))
    res = brute_force_verifier(bank, k, lam)
    summed = submodularity_ratio(MatchObjective(bank, lam), k)
    print(f"{res.omp_F:>9.4f}{res.optimum_F:>9.4f}{res.approximation_factor:>8.3f}"
          f"{res.gamma_hat:>13.4f}{summed:>9.4f}{res.bound:>8.3f}")

# the smallest case where the element-wise ratio is zero
bank = GradientBank(np.array([[0.7071, 0.7071], [0.0, -1.0]]), np.array([1.0, 0.0]))
obj = MatchObjective(bank, lam)
print("\nrow 1 is orthogonal to the target: gain alone", round(obj.gain(1, ()), 6),
      "| gain next to row 0", round(obj.gain(1, (0,)), 6), "| gamma_hat", gamma_hat(obj, 1))
