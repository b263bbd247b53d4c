"""Adaptive subset training: reselect every R epochs, weighted mini-batch SGD in between."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bank import build_per_sample
from .errors import NonFiniteGradient, NonFiniteLoss, ZeroGradient
from .models import accuracy, forward_loss, loss_and_grad, save_checkpoint, sgd_step
from .selectors import Selection, SelectorConfig, Strategy, select, strategy_tag

# fields that carry wall-clock measurements; excluded from determinism checks
TIMING_FIELDS = ("selection_time_s", "train_time_s", "total_time_s", "elapsed_s", "speedup_vs_full")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    selection_interval: int = 20
    budget_fraction: float = 0.1
    strategy: str = "gradmatch"
    per_batch: bool = False
    per_class: bool = True
    warm_kappa: float = 0.0
    lr0: float = 0.01
    batch_size: int = 20
    seed: int = 0
    is_valid: bool = False
    lam: float = 0.5
    epsilon: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    diagnostics: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.selection_interval < 1:
            raise ValueError("selection_interval must be >= 1")
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ValueError("budget_fraction must be in (0, 1]")
        if not 0.0 <= self.warm_kappa <= 1.0:
            raise ValueError("warm_kappa must be in [0, 1]")
        if self.lr0 <= 0 or self.batch_size < 1:
            raise ValueError("lr0 must be positive and batch_size >= 1")
        Strategy(self.strategy)

    @property
    def tag(self) -> str:
        return strategy_tag(self.strategy, self.per_batch, self.warm_kappa > 0)


@dataclass
class EpochLog:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    test_accuracy: float | None
    n_trained: int
    selection_epoch: int | None
    selection_time_s: float
    train_time_s: float
    grad_error: float | None = None
    alignment_dot: float | None = None
    alignment_cos: float | None = None
    lr_bound: float | None = None


@dataclass
class RunRecord:
    config: dict
    epochs: list = field(default_factory=list)
    selections: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    # in-memory only: the Selection object active at each epoch (None in full phase)
    active: list = field(default_factory=list, repr=False)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e)) + "\n" for e in self.epochs)

    def save(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "records.jsonl").write_text(self.to_jsonl())
        (run_dir / "selections.jsonl").write_text(
            "".join(json.dumps(s) + "\n" for s in self.selections))
        (run_dir / "summary.json").write_text(
            json.dumps({"config": self.config, **self.final}, indent=2))
        return run_dir

    @classmethod
    def load(cls, run_dir) -> "RunRecord":
        run_dir = Path(run_dir)
        summary = json.loads((run_dir / "summary.json").read_text())
        config = summary.pop("config")
        epochs = [EpochLog(**json.loads(line))
                  for line in (run_dir / "records.jsonl").read_text().splitlines() if line]
        sel_path = run_dir / "selections.jsonl"
        selections = [json.loads(line) for line in sel_path.read_text().splitlines() if line] \
            if sel_path.exists() else []
        return cls(config, epochs, selections, summary)


def strip_timing(obj):
    """Copy of a JSON-like structure without wall-clock fields."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def _round_half_up(x):
    return int(math.floor(x + 0.5 + 1e-9))


def warm_schedule(T: int, kappa: float, budget_fraction: float):
    """``(T_f, T_s)`` with ``T_s = round(kappa * T)`` and ``T_f = round(T_s * budget_fraction)``.

    The first ``T_f`` epochs train on the full set.
    """
    if not 0.0 <= kappa <= 1.0:
        raise ValueError("kappa must be in [0, 1]")
    T_s = _round_half_up(kappa * T)
    return _round_half_up(T_s * budget_fraction), T_s


def cosine_lr(epoch: int, T: int, lr0: float) -> float:
    if not 0 <= epoch < T:
        raise ValueError("epoch must be in [0, T)")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / T))


def budget_size(fraction: float, n: int) -> int:
    return max(1, min(n, _round_half_up(fraction * n)))


@dataclass(frozen=True)
class AlignmentDiagnostic:
    dot: float
    cos_angle: float
    lr_bound: float


def alignment_diagnostic(bank, sel: Selection, smoothness=None, grad_bound=None) -> AlignmentDiagnostic:
    """Alignment of the weighted subset gradient with the bank target.

    ``dot`` uses the raw weights. ``lr_bound = 2 ||target|| cos / (smoothness * sigma)``
    is the largest step for which a step along the weight-normalized subset
    gradient provably lowers a ``smoothness``-smooth loss; ``sigma`` defaults
    to the norm of that normalized gradient. Without ``smoothness`` the bound
    is ``nan``.
    """
    if len(sel) == 0:
        raise ValueError("selection is empty")
    if bank.element_kind == "sample":
        idx, w = sel.expanded()
    else:
        idx, w = sel.indices, sel.weights
    u = bank.rows[idx].T @ w
    target_norm = float(np.linalg.norm(bank.target))
    u_norm = float(np.linalg.norm(u))
    if u_norm == 0 or target_norm == 0:
        raise ZeroGradient("subset or target gradient is zero")
    dot = float(u @ bank.target)
    cos = dot / (u_norm * target_norm)
    if smoothness is None or smoothness <= 0:
        return AlignmentDiagnostic(dot, cos, float("nan"))
    sigma = grad_bound if grad_bound is not None else u_norm / w.sum()
    return AlignmentDiagnostic(dot, cos, 2.0 * target_norm * cos / (smoothness * sigma))


class SmoothnessEstimator:
    """Running-max estimates of the smoothness constant and the subset-gradient bound.

    Smoothness is the largest secant ratio ``||g(a) - g(b)|| / ||a - b||`` seen
    between consecutive observations of (last-layer parameters, target gradient).
    """

    def __init__(self):
        self.smoothness = None
        self.grad_bound = 0.0
        self._last = None

    def update(self, params, grad, subset_grad_norm):
        params, grad = np.array(params, copy=True), np.array(grad, copy=True)
        if self._last is not None:
            step = np.linalg.norm(params - self._last[0])
            if step > 0:
                ratio = float(np.linalg.norm(grad - self._last[1]) / step)
                self.smoothness = ratio if self.smoothness is None else max(self.smoothness, ratio)
        self._last = (params, grad)
        self.grad_bound = max(self.grad_bound, float(subset_grad_norm))


def _run_epoch(model, train, idx, weights, lr, cfg, rng):
    order = rng.permutation(idx.size)
    for start in range(0, idx.size, cfg.batch_size):
        b = order[start:start + cfg.batch_size]
        _, grad = loss_and_grad(model, train.features[idx[b]], train.labels[idx[b]], weights[b])
        model = sgd_step(model, grad, lr, cfg.momentum, cfg.weight_decay)
    return model


def _selection_diagnostics(model, data, cfg, sel, estimator):
    train, val = data[0], data[1]
    bank = build_per_sample(model, train, val, cfg.is_valid and val is not None)
    idx, w = sel.expanded()
    u = bank.rows[idx].T @ w
    out = {"grad_error": float(np.linalg.norm(u - bank.target))}
    if w.sum() > 0:
        estimator.update(model.theta[model.last_layer_slice], bank.target, np.linalg.norm(u) / w.sum())
    try:
        diag = alignment_diagnostic(bank, sel, estimator.smoothness, estimator.grad_bound or None)
    except (ZeroGradient, ValueError):
        return out
    out.update(alignment_dot=diag.dot, alignment_cos=diag.cos_angle,
               lr_bound=None if math.isnan(diag.lr_bound) else diag.lr_bound)
    return out


def train(cfg: TrainConfig, data, model_init, time_budget=None, checkpoint_dir=None):
    """Run the adaptive selection loop.

    ``data`` is ``(train, validation, test)``; validation may be ``None`` unless
    ``cfg.is_valid``. The first ``T_f`` epochs (see ``warm_schedule``) use the
    full training set; afterwards a selection is made at the first subset
    epoch and every ``selection_interval`` epochs after it, and reused in
    between. With ``time_budget`` the loop stops before the first epoch that
    would start once the cumulative selection + training time reaches it.

    Returns ``(model, RunRecord)``.
    """
    train_d, val_d, test_d = data
    if train_d.n_samples == 0:
        raise ValueError("training set is empty")
    if cfg.is_valid and (val_d is None or val_d.n_samples == 0):
        raise ValueError("is_valid=True needs a nonempty validation set")
    strategy = Strategy(cfg.strategy)
    n = train_d.n_samples
    k = budget_size(cfg.budget_fraction, n)
    T = cfg.epochs
    T_f = T if strategy is Strategy.FULL else warm_schedule(T, cfg.warm_kappa, cfg.budget_fraction)[0]
    sel_cfg = SelectorConfig(k, cfg.lam, cfg.epsilon, cfg.per_batch, cfg.batch_size,
                             cfg.per_class, cfg.is_valid)
    shuffle_rng, select_rng = (np.random.default_rng(s)
                               for s in np.random.SeedSequence(cfg.seed).spawn(2))

    record = RunRecord(config=asdict(cfg))
    estimator = SmoothnessEstimator()
    model = model_init
    full_idx, full_w = np.arange(n), np.ones(n)
    selection, selection_epoch = None, None
    elapsed = 0.0
    for t in range(T):
        if time_budget is not None and elapsed >= time_budget:
            break
        lr = cosine_lr(t, T, cfg.lr0)
        sel_time, diag = 0.0, {}
        if t < T_f:
            phase, idx, w = "full", full_idx, full_w
            active = None
        else:
            phase = "subset"
            if selection is None or (t - T_f) % cfg.selection_interval == 0:
                t0 = time.perf_counter()
                selection = select(strategy, model, (train_d, val_d), sel_cfg, select_rng)
                sel_time = time.perf_counter() - t0
                selection_epoch = t
                record.selections.append({"epoch": t, **selection.to_json()})
                if cfg.diagnostics and len(selection):
                    diag = _selection_diagnostics(model, data, cfg, selection, estimator)
                if checkpoint_dir is not None:
                    Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                    save_checkpoint(model, Path(checkpoint_dir) / f"epoch_{t:04d}.json")
            idx, w = selection.expanded()
            keep = w > 0
            idx, w = idx[keep], w[keep]
            active = selection
        t0 = time.perf_counter()
        try:
            model = _run_epoch(model, train_d, idx, w, lr, cfg, shuffle_rng)
            train_loss = forward_loss(model, train_d)[0]
        except NonFiniteGradient as exc:
            train_loss, reason = math.nan, str(exc)
        else:
            reason = f"training loss became {train_loss}"
        train_time = time.perf_counter() - t0
        elapsed += sel_time + train_time
        if not math.isfinite(train_loss):
            raise NonFiniteLoss(f"{reason} at epoch {t}", {
                "epoch": t, "lr": lr, "phase": phase, "n_trained": int(idx.size),
                "theta_norm": float(np.linalg.norm(model.theta)),
                "config": asdict(cfg)})
        test_acc = accuracy(model, test_d) if test_d is not None and test_d.n_samples else None
        record.epochs.append(EpochLog(t, phase, lr, train_loss, test_acc, int(idx.size),
                                      selection_epoch if phase == "subset" else None,
                                      sel_time, train_time, **diag))
        record.active.append(active)

    record.final = _final_summary(cfg, record, n, k, elapsed)
    return model, record


def _final_summary(cfg, record, n, k, elapsed):
    from .metrics import redundancy

    logs = record.epochs
    errors = [e.grad_error for e in logs if e.grad_error is not None]
    sample_sets = [np.asarray(s.get("sample_indices", s["indices"])) for s in record.selections]
    return {
        "strategy": cfg.strategy,
        "tag": cfg.tag,
        "budget_fraction": cfg.budget_fraction,
        "budget_k": k,
        "seed": cfg.seed,
        "epochs_completed": len(logs),
        "final_accuracy": logs[-1].test_accuracy if logs else None,
        "final_train_loss": logs[-1].train_loss if logs else None,
        "selection_performed": bool(record.selections),
        "n_selections": len(record.selections),
        "mean_grad_error": float(np.mean(errors)) if errors else None,
        "redundancy_pct": redundancy(sample_sets, n) if sample_sets else None,
        "selection_time_s": float(sum(e.selection_time_s for e in logs)),
        "train_time_s": float(sum(e.train_time_s for e in logs)),
        "total_time_s": float(elapsed),
        "speedup_vs_full": None,
    }


def full_early_stop_baseline(cfg: TrainConfig, budget_time_s: float, data, model_init):
    """Full-data training cut off once its wall time reaches ``budget_time_s``."""
    return train(replace(cfg, strategy=Strategy.FULL.value, warm_kappa=0.0), data, model_init,
                 time_budget=budget_time_s)
