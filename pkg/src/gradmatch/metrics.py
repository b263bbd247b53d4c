"""Post-hoc analysis: summaries, gradient-error tables, redundancy, exhaustive theory checks."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from .errors import TooLarge
from .matching import MatchObjective
from .selectors import SelectorConfig, omp_select

MAX_EXHAUSTIVE = 12


@dataclass(frozen=True)
class ExperimentSummary:
    strategy: str
    budget_fraction: float
    final_accuracy: float
    relative_error_vs_full: float
    speedup: float
    mean_grad_error: float | None
    redundancy_pct: float | None
    run: str = ""

    def __post_init__(self):
        if not self.speedup > 0:
            raise ValueError("speedup must be positive")


def summarize(final: dict, full_final: dict, run="") -> ExperimentSummary:
    """Compare one run's summary with the full-training summary.

    Relative error is in accuracy percentage points; speedup is the ratio of
    wall-clock times, selection included.
    """
    return ExperimentSummary(
        strategy=final.get("tag", final["strategy"]),
        budget_fraction=final["budget_fraction"],
        final_accuracy=final["final_accuracy"],
        relative_error_vs_full=100.0 * (full_final["final_accuracy"] - final["final_accuracy"]),
        speedup=full_final["total_time_s"] / final["total_time_s"],
        mean_grad_error=final.get("mean_grad_error"),
        redundancy_pct=final.get("redundancy_pct"),
        run=run,
    )


def gradient_error_table(records) -> list[dict]:
    """Mean gradient error per (strategy, budget) over every selection epoch of every record.

    Records are ``RunRecord`` objects; the error is the norm of the difference
    between the weighted subset gradient and the target gradient.
    """
    groups: dict = {}
    for rec in records:
        key = (rec.final.get("tag", rec.config["strategy"]), rec.config["budget_fraction"])
        errs = [e.grad_error for e in rec.epochs if e.grad_error is not None]
        groups.setdefault(key, []).extend(errs)
    return [{"strategy": s, "budget_fraction": b,
             "mean_grad_error": float(np.mean(v)) if v else None, "n_samples": len(v)}
            for (s, b), v in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0]))]


def redundancy(selections, n: int) -> float:
    """Percentage of the ``n`` training samples never selected in any round."""
    used = np.zeros(n, dtype=bool)
    for sel in selections:
        idx = sel.sample_indices() if hasattr(sel, "sample_indices") else np.asarray(sel, dtype=np.int64)
        used[idx] = True
    return 100.0 * float(np.count_nonzero(~used)) / n


# ---------------------------------------------------------------------------
# table emitters


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def to_markdown(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])

    def fmt(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.4g}"
        return "" if v is None else str(v)

    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(fmt(r[c]) for c in cols) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def scatter_csv(summaries) -> str:
    """``x = speedup``, ``y = relative error`` rows for external plotting."""
    rows = [{"run": s.run, "strategy": s.strategy, "budget_fraction": s.budget_fraction,
             "speedup": s.speedup, "relative_error": s.relative_error_vs_full}
            for s in summaries]
    return to_csv(rows)


def summaries_table(summaries) -> list[dict]:
    return [asdict(s) for s in summaries]


# ---------------------------------------------------------------------------
# exhaustive verification of the greedy guarantees


def gamma_bound(lam: float, k: int, grad_max: float) -> float:
    """Weak-submodularity ratio lower bound ``lam / (lam + k * grad_max^2)``."""
    return lam / (lam + k * grad_max ** 2)


def gamma_hat(obj: MatchObjective, k: int, floor: float = 1e-12) -> float:
    """Smallest ``F(j | S) / F(j | T)`` over ``S`` within ``T``, ``|T| <= k``, ``j`` outside ``T``.

    Pairs whose denominator is at most ``floor`` are skipped; returns ``inf``
    when no pair qualifies.
    """
    n = obj.bank.n_elements
    best = math.inf
    for size in range(0, min(k, n - 1) + 1):
        for T in combinations(range(n), size):
            T_set = frozenset(T)
            outside = [j for j in range(n) if j not in T_set]
            denom = {j: obj.gain(j, T_set) for j in outside}
            for s_size in range(size + 1):
                for S in combinations(T, s_size):
                    S_set = frozenset(S)
                    for j in outside:
                        if denom[j] > floor:
                            best = min(best, obj.gain(j, S_set) / denom[j])
    return best


def submodularity_ratio(obj: MatchObjective, k: int, floor: float = 1e-12) -> float:
    """Sum-form ratio ``min sum_{j in L} F(j | S) / F(L | S)`` over disjoint ``|S|, |L| <= k``.

    This is the quantity restricted strong convexity bounds from below; the
    element-wise ``gamma_hat`` can be zero where this one is not.
    """
    n = obj.bank.n_elements
    best = math.inf
    for s_size in range(0, min(k, n) + 1):
        for S in combinations(range(n), s_size):
            rest = [j for j in range(n) if j not in S]
            singles = {j: obj.gain(j, S) for j in rest}
            base = obj.F(S)
            for l_size in range(1, min(k, len(rest)) + 1):
                for L in combinations(rest, l_size):
                    denom = obj.F(S + L) - base
                    if denom > floor:
                        best = min(best, sum(singles[j] for j in L) / denom)
    return best


def best_subset(obj: MatchObjective, k: int):
    """Exhaustive maximizer of ``F`` over sets of size at most ``k`` (first found on ties)."""
    n = obj.bank.n_elements
    best_set, best_val = frozenset(), obj.F(())
    for size in range(1, min(k, n) + 1):
        for X in combinations(range(n), size):
            val = obj.F(X)
            if val > best_val:
                best_set, best_val = frozenset(X), val
    return best_set, best_val


def smallest_cover(obj: MatchObjective, threshold: float):
    """Smallest set with ``E <= threshold``, or ``None`` if no subset reaches it."""
    n = obj.bank.n_elements
    for size in range(0, n + 1):
        for X in combinations(range(n), size):
            if obj.E(X) <= threshold:
                return frozenset(X)
    return None


@dataclass(frozen=True)
class VerifierResult:
    optimum_F: float
    omp_F: float
    gamma_hat: float
    bound: float
    optimum_set: frozenset
    omp_set: frozenset

    @property
    def approximation_factor(self) -> float:
        return 1.0 - math.exp(-self.bound)


def brute_force_verifier(bank, k: int, lam: float, with_gamma=True) -> VerifierResult:
    """Exact optimum, OMP value, empirical weak-submodularity ratio and its lower bound."""
    if bank.n_elements > MAX_EXHAUSTIVE:
        raise TooLarge(f"{bank.n_elements} elements; exhaustive checks allow at most {MAX_EXHAUSTIVE}")
    obj = MatchObjective(bank, lam)
    opt_set, opt_val = best_subset(obj, k)
    # epsilon tiny so only the budget stops the greedy
    sel = omp_select(bank, SelectorConfig(min(k, bank.n_elements), lam, epsilon=1e-300))
    omp_set = frozenset(sel.indices.tolist())
    grad_max = float(np.max(np.linalg.norm(bank.rows, axis=1)))
    return VerifierResult(
        optimum_F=opt_val,
        omp_F=obj.F(omp_set),
        gamma_hat=gamma_hat(obj, k) if with_gamma else math.nan,
        bound=gamma_bound(lam, k, grad_max),
        optimum_set=opt_set,
        omp_set=omp_set,
    )


@dataclass(frozen=True)
class SetCoverResult:
    omp_size: int
    optimal_size: int
    size_bound: float
    reached: bool

    @property
    def holds(self) -> bool:
        return self.omp_size <= self.size_bound + 1e-9


def set_cover_check(bank, lam: float, epsilon: float):
    """Compare the size of the ``E <= epsilon * ||target||^2`` stopped OMP set with the bound
    ``|X*| / gamma * ln(l_max / (epsilon * l_max))``.

    ``gamma`` is evaluated with ``k`` equal to the larger of the two set sizes.
    Returns ``None`` when no subset reaches the threshold.
    """
    if bank.n_elements > MAX_EXHAUSTIVE:
        raise TooLarge(f"{bank.n_elements} elements; exhaustive checks allow at most {MAX_EXHAUSTIVE}")
    obj = MatchObjective(bank, lam)
    threshold = epsilon * obj.l_max
    opt = smallest_cover(obj, threshold)
    if opt is None:
        return None
    sel = omp_select(bank, SelectorConfig(bank.n_elements, lam, epsilon=epsilon))
    reached = sel.residual < threshold or math.isclose(sel.residual, threshold)
    k = max(len(sel), len(opt), 1)
    grad_max = float(np.max(np.linalg.norm(bank.rows, axis=1)))
    gamma = gamma_bound(lam, k, grad_max)
    bound = len(opt) / gamma * math.log(obj.l_max / threshold)
    return SetCoverResult(len(sel), len(opt), bound, reached)
