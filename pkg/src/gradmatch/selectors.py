"""Subset selection strategies.

``omp_select`` is the gradient-matching greedy (orthogonal matching pursuit
over the element gradients). ``craig_select`` greedily maximizes the
facility-location surrogate, ``glister_taylor_select`` ranks elements by their
dot product with the target gradient and ``random_select`` is the uniform
baseline. ``select`` builds the right gradient bank for a model and dispatches.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist

from .bank import apportion_budget, build_per_batch, build_per_class, build_per_sample
from .errors import DegenerateBank
from .matching import residual_gradient, solve_nnls_ridge


class Strategy(str, Enum):
    GRADMATCH = "gradmatch"
    CRAIG = "craig"
    GLISTER = "glister"
    RANDOM = "random"
    FULL = "full"


_DISPLAY = {Strategy.GRADMATCH: "GradMatch", Strategy.CRAIG: "Craig",
            Strategy.GLISTER: "Glister", Strategy.RANDOM: "Random", Strategy.FULL: "Full"}


def strategy_tag(strategy, per_batch=False, warm=False) -> str:
    strategy = Strategy(strategy)
    tag = _DISPLAY[strategy]
    if per_batch and strategy in (Strategy.GRADMATCH, Strategy.CRAIG):
        tag += "PB"
    if warm and strategy is not Strategy.FULL:
        tag += "-Warm"
    return tag


@dataclass(frozen=True)
class SelectorConfig:
    budget_k: int
    lam: float = 0.5
    epsilon: float = 0.01
    per_batch: bool = False
    batch_B: int = 20
    per_class: bool = True
    is_valid: bool = False
    allow_negative_weights: bool = False

    def __post_init__(self):
        if self.budget_k < 1:
            raise ValueError("budget_k must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.batch_B < 1:
            raise ValueError("batch_B must be >= 1")


@dataclass(frozen=True)
class Selection:
    """Chosen elements and their weights.

    With a per-batch ground set ``indices`` are batch ids and ``element_map``
    lists each batch's samples; ``sample_indices`` expands either form.
    ``residual`` is the squared matching error at the returned weights.
    ``history`` holds one trace per greedy run (OMP only, one run per class in
    per-class mode); each trace is the error after every step, starting from
    the empty set.
    """

    indices: np.ndarray
    weights: np.ndarray
    residual: float
    elapsed: float
    strategy_tag: str
    element_map: tuple | None = None
    history: tuple = field(default=(), compare=False)
    # only the allow_negative_weights OMP variant produces signed weights
    signed_weights: bool = False

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        wts = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if idx.shape != wts.shape:
            raise ValueError("indices and weights must align")
        if not self.signed_weights and np.any(wts < 0):
            raise ValueError("selection weights must be nonnegative")
        if np.unique(idx).size != idx.size:
            raise ValueError("selection indices must be unique")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", wts)

    def __len__(self):
        return self.indices.size

    def expanded(self):
        """Sample-level ``(indices, weights)``."""
        if self.element_map is None:
            return self.indices, self.weights
        idx = [np.asarray(self.element_map[i], dtype=np.int64) for i in self.indices]
        wts = [np.full(m.size, w) for m, w in zip(idx, self.weights)]
        if not idx:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        return np.concatenate(idx), np.concatenate(wts)

    def sample_indices(self) -> np.ndarray:
        return self.expanded()[0]

    def to_json(self) -> dict:
        out = {
            "strategy": self.strategy_tag,
            "indices": self.indices.tolist(),
            "weights": self.weights.tolist(),
            "residual": None if np.isnan(self.residual) else self.residual,
            "elapsed_s": self.elapsed,
        }
        if self.element_map is not None:
            out["sample_indices"] = self.sample_indices().tolist()
        return out


def matching_error(bank, indices, weights, lam=0.0) -> float:
    """Squared matching error ``||sum w_i g_i - target||^2 + lam ||w||^2`` at given weights."""
    idx = np.asarray(indices, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    r = bank.rows[idx].T @ w - bank.target
    return float(r @ r + lam * (w @ w))


# ---------------------------------------------------------------------------
# gradient matching


def omp_select(bank, cfg: SelectorConfig, tag="GradMatch") -> Selection:
    """Greedy gradient matching.

    Starting from the empty set, repeatedly add the unselected element whose
    weight-gradient most strongly decreases the matching error, then refit all
    weights. Stops at ``budget_k`` elements, once ``E / ||target||^2`` falls
    below ``epsilon``, or when no unselected element can lower the error.
    """
    start = time.perf_counter()
    n = bank.n_elements
    if cfg.budget_k > n:
        raise ValueError(f"budget {cfg.budget_k} exceeds {n} elements")
    if not np.any(bank.rows):
        raise DegenerateBank("every element gradient is zero")
    lam, nonneg = cfg.lam, not cfg.allow_negative_weights
    target_sq = float(bank.target @ bank.target)
    selected: list[int] = []
    weights = np.zeros(0)
    error = target_sq
    history = [error]
    r = residual_gradient(bank, None, lam)
    while len(selected) < cfg.budget_k and target_sq > 0 and error >= cfg.epsilon * target_sq:
        # with w >= 0 only a negative gradient component can lower the error
        score = -r if nonneg else np.abs(r)
        score[selected] = -np.inf
        e = int(np.argmax(score))
        if score[e] <= 0:
            break
        selected.append(e)
        init = np.append(weights, 0.0) if nonneg else None
        sol = solve_nnls_ridge(bank, selected, lam, allow_negative_weights=not nonneg, init=init)
        weights, error = sol.weights, sol.objective_value
        history.append(error)
        r = residual_gradient(bank, sol, lam)
    return Selection(np.array(selected, dtype=np.int64), weights, error,
                     time.perf_counter() - start, tag, history=(tuple(history),),
                     signed_weights=not nonneg)


# ---------------------------------------------------------------------------
# facility location


def craig_upper_bound(bank, X) -> float:
    """``sum_i min_{j in X} ||g_i - g_j||`` over every element ``i`` of the bank."""
    idx = np.asarray(sorted(X) if isinstance(X, (set, frozenset)) else X, dtype=np.int64)
    if idx.size == 0:
        return float("inf")
    return float(cdist(bank.rows, bank.rows[idx]).min(axis=1).sum())


def medoid_weights(bank, indices) -> np.ndarray:
    """Number of elements whose nearest selected gradient is each selected element."""
    idx = np.asarray(indices, dtype=np.int64)
    order = np.argsort(idx, kind="stable")
    nearest = np.argmin(cdist(bank.rows, bank.rows[idx[order]]), axis=1)
    counts = np.bincount(nearest, minlength=idx.size).astype(np.float64)
    out = np.empty(idx.size)
    out[order] = counts
    return out


def craig_select(bank, budget_k: int, lazy=True, lam=0.0, tag="Craig") -> Selection:
    """Greedy facility location on gradient distances, weights = cluster sizes.

    The facility-location score of ``X`` is ``sum_i max_{j in X} (L - ||g_i - g_j||)``
    with ``L`` one more than the largest pairwise distance. The lazy variant
    keeps stale upper bounds in a heap and agrees exactly with the naive
    greedy, ties going to the lowest element index in both.
    """
    start = time.perf_counter()
    if budget_k < 1:
        raise ValueError("budget must be >= 1")
    n = bank.n_elements
    k = min(budget_k, n)
    dist = cdist(bank.rows, bank.rows)
    sim = dist.max() + 1.0 - dist
    best = np.zeros(n)

    def gain(j):
        return float(np.maximum(sim[:, j] - best, 0.0).sum())

    chosen: list[int] = []
    if lazy:
        heap = [(-gain(j), j) for j in range(n)]
        heapq.heapify(heap)
        while len(chosen) < k:
            _, j = heapq.heappop(heap)
            fresh = (-gain(j), j)
            if not heap or fresh <= heap[0]:
                chosen.append(j)
                np.maximum(best, sim[:, j], out=best)
            else:
                heapq.heappush(heap, fresh)
    else:
        available = np.ones(n, dtype=bool)
        while len(chosen) < k:
            gains = np.array([gain(j) if available[j] else -np.inf for j in range(n)])
            j = int(np.argmax(gains))
            chosen.append(j)
            available[j] = False
            np.maximum(best, sim[:, j], out=best)
    idx = np.array(chosen, dtype=np.int64)
    weights = medoid_weights(bank, idx)
    return Selection(idx, weights, matching_error(bank, idx, weights, lam),
                     time.perf_counter() - start, tag)


# ---------------------------------------------------------------------------
# simple baselines


def glister_taylor_select(bank_train, val_target, budget_k: int, lam=0.0, tag="Glister") -> Selection:
    """Top ``budget_k`` elements by ``g_i . val_target``, unit weights."""
    start = time.perf_counter()
    scores = bank_train.rows @ np.asarray(val_target, dtype=np.float64)
    idx = np.argsort(-scores, kind="stable")[:budget_k].astype(np.int64)
    weights = np.ones(idx.size)
    return Selection(idx, weights, matching_error(bank_train, idx, weights, lam),
                     time.perf_counter() - start, tag)


def random_select(n_elements: int, budget_k: int, seed, tag="Random") -> Selection:
    """Uniform draw without replacement, returned in ascending order with unit weights."""
    start = time.perf_counter()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if budget_k > n_elements:
        raise ValueError("budget exceeds the ground set")
    idx = np.sort(rng.choice(n_elements, size=budget_k, replace=False))
    return Selection(idx, np.ones(budget_k), float("nan"), time.perf_counter() - start, tag)


# ---------------------------------------------------------------------------
# dispatch


def _concat(parts, tag, elapsed):
    idx = np.concatenate([p.indices for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    wts = np.concatenate([p.weights for p in parts]) if parts else np.zeros(0)
    return Selection(idx, wts, float(sum(p.residual for p in parts)), elapsed, tag,
                     history=sum((p.history for p in parts), ()))


def select(strategy, model, data, cfg: SelectorConfig, seed=0) -> Selection:
    """Run one selection round for ``model`` on ``data = (train, validation)``.

    Returned indices address training samples, except in per-batch mode where
    they are batch ids resolved through ``element_map``. ``seed`` drives the
    random baseline and the mini-batch partition.
    """
    start = time.perf_counter()
    strategy = Strategy(strategy)
    train, val = data[0], (data[1] if len(data) > 1 else None)
    target_source = val if cfg.is_valid else None
    n = train.n_samples
    k = min(cfg.budget_k, n)
    tag = strategy_tag(strategy, cfg.per_batch)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    if strategy is Strategy.FULL:
        sel = Selection(np.arange(n), np.ones(n), 0.0, 0.0, tag)
    elif strategy is Strategy.RANDOM:
        sel = random_select(n, k, rng, tag)
    elif strategy is Strategy.GLISTER:
        bank = build_per_sample(model, train, target_source, cfg.is_valid)
        sel = glister_taylor_select(bank, bank.target, k, cfg.lam, tag)
    elif cfg.per_batch:
        batch_seed = int(rng.integers(2**63 - 1))
        bank = build_per_batch(model, train, cfg.batch_B, cfg.is_valid, target_source, batch_seed)
        kb = min(bank.n_elements, max(1, int(np.floor(k / cfg.batch_B + 0.5))))
        sel = _select_on_bank(strategy, bank, replace(cfg, budget_k=kb), tag)
        sel = replace(sel, element_map=bank.element_map)
    elif cfg.per_class:
        budgets = apportion_budget(k, train.class_counts())
        parts = []
        for c in range(train.class_count):
            if budgets[c] == 0:
                continue
            bank = build_per_class(model, train, c, cfg.is_valid, target_source)
            part = _select_on_bank(strategy, bank, replace(cfg, budget_k=int(budgets[c])), tag)
            members = np.concatenate([bank.members(i) for i in part.indices]) \
                if len(part) else np.zeros(0, dtype=np.int64)
            parts.append(replace(part, indices=members))
        sel = _concat(parts, tag, 0.0)
    else:
        bank = build_per_sample(model, train, target_source, cfg.is_valid)
        sel = _select_on_bank(strategy, bank, cfg, tag)
    return replace(sel, elapsed=time.perf_counter() - start)


def _select_on_bank(strategy, bank, cfg, tag):
    if strategy is Strategy.GRADMATCH:
        return omp_select(bank, cfg, tag)
    if strategy is Strategy.CRAIG:
        return craig_select(bank, cfg.budget_k, lam=cfg.lam, tag=tag)
    raise ValueError(f"{strategy} does not select on a gradient bank")
