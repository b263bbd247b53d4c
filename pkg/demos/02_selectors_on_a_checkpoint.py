"""Compare the selectors on one frozen model.

Trains a small MLP for a few epochs, freezes it, and asks each strategy for a
10% subset. The gradient error is the distance between the weighted subset
gradient and the full training gradient.
"""
import numpy as np

from gradmatch.bank import build_per_sample
from gradmatch.data import SplitSpec, make_gaussian_blobs, split
from gradmatch.models import init_model
from gradmatch.selectors import SelectorConfig, select
from gradmatch.trainer import TrainConfig, train

data = split(make_gaussian_blobs(200, 4, 8, 2.5, 1), SplitSpec(0.8, 0.1, 1))
model, _ = train(TrainConfig(epochs=5, strategy="full", lr0=0.05), data, init_model("mlp", 8, 4, 16, seed=1))

train_set = data[0]
bank = build_per_sample(model, train_set)
k = train_set.n_samples // 10
print(f"{train_set.n_samples} training samples, budget {k}, ||full gradient|| = {np.linalg.norm(bank.target):.3f}\n")
print(f"{'strategy':<14}{'mode':<11}{'size':>5}{'grad error':>12}{'time (ms)':>11}")
for strategy in ("gradmatch", "craig", "glister", "random"):
    for mode in ("per-sample", "per-class", "per-batch"):
        if strategy in ("glister", "random") and mode != "per-sample":
            continue
        cfg = SelectorConfig(k, per_class=mode == "per-class", per_batch=mode == "per-batch", batch_B=8)
        sel = select(strategy, model, (train_set, None), cfg, seed=0)
        idx, w = sel.expanded()
        err = np.linalg.norm(bank.rows[idx].T @ w - bank.target)
        print(f"{sel.strategy_tag:<14}{mode:<11}{idx.size:>5}{err:>12.3f}{1000 * sel.elapsed:>11.2f}")
