"""Reading MNIST IDX files and training on them.

Pass the image and label paths to use the real files, e.g.

    python demos/06_mnist_files.py train-images-idx3-ubyte.gz train-labels-idx1-ubyte.gz

Without arguments a small synthetic pair with the same headers is written to a
temporary directory: each digit class is a bright horizontal bar at its own row.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from gradmatch.data import SplitSpec, load_mnist_idx, split, write_idx
from gradmatch.models import init_model
from gradmatch.trainer import TrainConfig, train

if len(sys.argv) == 3:
    images_path, labels_path = sys.argv[1:]
else:
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 10, 2000).astype(np.uint8)
    images = rng.integers(0, 60, (2000, 28, 28)).astype(np.uint8)
    for i, c in enumerate(labels):
        images[i, 2 + 2 * c: 4 + 2 * c, 4:24] = 230
    tmp = Path(tempfile.mkdtemp())
    images_path, labels_path = tmp / "images-idx3-ubyte", tmp / "labels-idx1-ubyte"
    write_idx(images_path, images)
    write_idx(labels_path, labels)
    print("wrote synthetic IDX pair to", tmp)

d = load_mnist_idx(images_path, labels_path)
print(f"{d.n_samples} images of {d.n_features} pixels, classes {d.class_counts().tolist()}")
data = split(d.subset(np.arange(min(d.n_samples, 5000))), SplitSpec(0.8, 0.1, 0))
for kw in (dict(strategy="full"), dict(strategy="gradmatch", per_batch=True)):
    _, rec = train(TrainConfig(epochs=20, selection_interval=5, budget_fraction=0.1, lr0=0.05, **kw),
                   data, init_model("mlp", d.n_features, d.class_count, 32, seed=0))
    print(f"{rec.final['tag']:<12} accuracy {rec.final['final_accuracy']:.3f}  time {rec.final['total_time_s']:.1f}s")
