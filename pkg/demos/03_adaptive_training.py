"""Speed versus accuracy of adaptive subset training.

Logistic regression on two Gaussian classes. Each run reselects its subset
every 20 epochs; wall time includes the selection cost.
"""
import numpy as np

from gradmatch.data import SplitSpec, make_gaussian_blobs, split
from gradmatch.metrics import summarize, to_markdown, summaries_table
from gradmatch.models import init_model
from gradmatch.trainer import TrainConfig, train

data = split(make_gaussian_blobs(1250, 2, 5, 2.0, 0), SplitSpec(0.8, 0.1, 0))
runs = {
    "full": dict(strategy="full"),
    "gradmatch-pb": dict(strategy="gradmatch", per_batch=True),
    "gradmatch-pb-warm": dict(strategy="gradmatch", per_batch=True, warm_kappa=0.5),
    "craig": dict(strategy="craig"),
    "glister": dict(strategy="glister"),
    "random": dict(strategy="random"),
}
finals = {}
for name, kw in runs.items():
    _, rec = train(TrainConfig(epochs=100, budget_fraction=0.1, seed=0, **kw), data, init_model("logreg", 5, 2))
    finals[name] = rec.final
    print(f"{name:<18} accuracy {rec.final['final_accuracy']:.3f}  time {rec.final['total_time_s']:.2f}s")

rows = [summarize(f, finals["full"], run=name) for name, f in finals.items()]
print()
print(to_markdown(summaries_table(rows)))
