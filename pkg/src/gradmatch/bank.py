"""Gradient banks: the element-gradient matrices and targets that selection works on."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClass
from .models import ModelState, last_layer_grads

SAMPLE = "sample"
BATCH = "batch"
CLASS = "class"


@dataclass(frozen=True)
class GradientBank:
    """Rows are element gradients; ``target`` is the gradient to be matched.

    ``element_map[i]`` lists the training-sample indices behind row ``i``. It is
    ``None`` for a plain per-sample bank, where row ``i`` is sample ``i``.
    """

    rows: np.ndarray
    target: np.ndarray
    element_kind: str = SAMPLE
    element_map: tuple | None = None
    batch_size: int | None = None
    class_id: int | None = None

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        if rows.shape[1] != target.size:
            raise ValueError("target length must equal the row dimension")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(target))):
            raise ValueError("bank has non-finite entries")
        if self.element_map is not None and len(self.element_map) != rows.shape[0]:
            raise ValueError("element_map must have one entry per row")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "target", target)

    @property
    def n_elements(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def members(self, i) -> np.ndarray:
        if self.element_map is None:
            return np.array([i], dtype=np.int64)
        return np.asarray(self.element_map[i], dtype=np.int64)

    def expand(self, indices, weights):
        """Map element-level (indices, weights) to sample-level arrays.

        Every member sample of a batch inherits the batch weight, so
        ``sum_b w_b * row_b == sum_i w_i * g_i`` for batch rows built as sums.
        """
        if self.element_map is None:
            return np.asarray(indices, dtype=np.int64), np.asarray(weights, dtype=np.float64)
        idx, wts = [], []
        for i, w in zip(indices, weights):
            members = self.members(int(i))
            idx.append(members)
            wts.append(np.full(members.size, float(w)))
        if not idx:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        return np.concatenate(idx), np.concatenate(wts)


def _target(model, train, rows, is_valid, target_source, class_id=None):
    if not is_valid:
        return rows.sum(axis=0)
    if target_source is None:
        raise ValueError("is_valid=True needs a target_source dataset")
    feats, labels = target_source.features, target_source.labels
    if class_id is not None:
        mask = labels == class_id
        feats, labels = feats[mask], labels[mask]
    if labels.size == 0:
        return np.zeros(rows.shape[1])
    grads = last_layer_grads(model, feats, labels)
    if class_id is not None:
        grads = _class_block(model, grads, class_id)
    return grads.sum(axis=0)


def _check_dims(model, *datasets):
    for d in datasets:
        if d is not None and (d.n_features != model.n_features or d.class_count != model.class_count):
            raise ValueError("model dimensions do not match the dataset")


def _class_block(model, grads, class_id):
    width = model.penultimate_width + 1
    return grads[:, class_id * width:(class_id + 1) * width]


def build_per_sample(model: ModelState, train, target_source=None, is_valid=False) -> GradientBank:
    """One row per training sample; target is the summed gradient of the training
    set (``is_valid=False``) or of ``target_source`` (``is_valid=True``)."""
    _check_dims(model, train, target_source)
    rows = last_layer_grads(model, train.features, train.labels)
    return GradientBank(rows, _target(model, train, rows, is_valid, target_source), SAMPLE)


def batch_partition(n: int, batch_size: int, seed: int = 0) -> list:
    """Seeded shuffle of ``range(n)`` cut into contiguous chunks of ``batch_size``."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.random.default_rng(seed).permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def build_per_batch(model: ModelState, train, batch_size: int, is_valid=False,
                    target_source=None, seed: int = 0) -> GradientBank:
    """Row ``i`` is the sum of the member-sample gradients of mini-batch ``i``."""
    _check_dims(model, train, target_source)
    per_sample = last_layer_grads(model, train.features, train.labels)
    batches = batch_partition(train.n_samples, batch_size, seed)
    rows = np.stack([per_sample[b].sum(axis=0) for b in batches])
    if is_valid:
        target = _target(model, train, per_sample, True, target_source)
    else:
        target = per_sample.sum(axis=0)
    return GradientBank(rows, target, BATCH, tuple(batches), batch_size=batch_size)


def build_per_class(model: ModelState, train, class_id: int, is_valid=False,
                    target_source=None) -> GradientBank:
    """Samples of one class, restricted to that class's block of the last layer."""
    _check_dims(model, train, target_source)
    members = np.flatnonzero(train.labels == class_id)
    if members.size == 0:
        raise EmptyClass(f"class {class_id} has no training samples")
    grads = last_layer_grads(model, train.features[members], train.labels[members])
    rows = _class_block(model, grads, class_id)
    target = _target(model, train, rows, is_valid, target_source, class_id)
    return GradientBank(rows, target, CLASS, tuple(members[:, None]), class_id=class_id)


def apportion_budget(k: int, class_counts) -> np.ndarray:
    """Per-class budgets ``max(1, round(k * n_c / n))`` capped at ``n_c``; empty classes get 0."""
    counts = np.asarray(class_counts, dtype=np.int64)
    n = counts.sum()
    raw = np.floor(k * counts / n + 0.5).astype(np.int64)
    return np.where(counts > 0, np.minimum(np.maximum(raw, 1), counts), 0)


def dump_bank(bank: GradientBank, path) -> None:
    """Write rows then target, row-major.

    ``.csv``: a header line ``n_elements,d_g`` with the two counts on the next
    line, then one line per row and a final line holding the target.
    Anything else: little-endian ``<q n_elements><q d_g>`` followed by the
    float64 rows and the float64 target.
    """
    path = Path(path)
    if path.suffix == ".csv":
        lines = ["n_elements,d_g", f"{bank.n_elements},{bank.dim}"]
        lines += [",".join(repr(float(v)) for v in row) for row in bank.rows]
        lines.append(",".join(repr(float(v)) for v in bank.target))
        path.write_text("\n".join(lines) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", bank.n_elements, bank.dim))
        fh.write(bank.rows.astype("<f8").tobytes())
        fh.write(bank.target.astype("<f8").tobytes())


def load_bank_dump(path) -> GradientBank:
    path = Path(path)
    if path.suffix == ".csv":
        lines = path.read_text().splitlines()
        n, d = (int(v) for v in lines[1].split(","))
        values = [[float(v) for v in line.split(",")] for line in lines[2:2 + n + 1]]
        return GradientBank(np.array(values[:n]).reshape(n, d), np.array(values[n]))
    raw = path.read_bytes()
    n, d = struct.unpack("<qq", raw[:16])
    data = np.frombuffer(raw[16:], dtype="<f8")
    return GradientBank(data[:n * d].reshape(n, d), data[n * d:n * d + d])
