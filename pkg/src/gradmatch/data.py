"""Datasets: MNIST IDX / CSV loading, synthetic blobs, class imbalance and splits.

Every function here is a pure function of its inputs and seed. Returned
``Dataset`` objects own read-only copies of their arrays.
"""
from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import BadMagic, CountMismatch, EmptyResult, TruncatedFile

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class SplitTag(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer labels in ``[0, class_count)``."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    split_tag: SplitTag = SplitTag.TRAIN
    name: str = field(default="", compare=False)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split_tag", SplitTag(self.split_tag))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n_samples

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices, split_tag=None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.class_count,
                       split_tag or self.split_tag, self.name)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.train_fraction + self.validation_fraction > 1.0 + 1e-12:
            raise ValueError("train_fraction + validation_fraction must not exceed 1")


def _floor_frac(fraction, count):
    # guards products like 0.29 * 100 == 28.999999999999996
    return int(math.floor(fraction * count + 1e-9))


# ---------------------------------------------------------------------------
# IDX files


def _open(path, mode="rb"):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file into an array of its declared shape."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: shorter than the IDX magic number")
    magic, = struct.unpack(">I", raw[:4])
    if magic >> 8 != 0x08:
        raise BadMagic(f"{path}: 0x{magic:08x} is not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise TruncatedFile(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(shape)) if shape else 1
    payload = raw[header_end:]
    if len(payload) < expected:
        raise TruncatedFile(f"{path}: expected {expected} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8, count=expected).reshape(shape)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("only unsigned-byte IDX files are supported")
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array).tobytes())


def load_mnist_idx(images_path, labels_path, name="mnist") -> Dataset:
    """Load an MNIST-style image/label IDX pair.

    Pixels are scaled to ``[0, 1]`` by dividing the raw bytes by 255 and each
    image is flattened row-major. Raises ``BadMagic`` when the magic numbers
    are not 0x00000803 / 0x00000801, ``CountMismatch`` when the item counts
    disagree and ``TruncatedFile`` when a file holds fewer bytes than its
    header declares.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    image_magic = 0x0800 | images.ndim
    label_magic = 0x0800 | labels.ndim
    if image_magic != IDX_IMAGE_MAGIC:
        raise BadMagic(f"{images_path}: magic 0x{image_magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    if label_magic != IDX_LABEL_MAGIC:
        raise BadMagic(f"{labels_path}: magic 0x{label_magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(
            f"image file holds {images.shape[0]} items, label file {labels.shape[0]}")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    class_count = max(10, int(labels.max()) + 1) if labels.size else 10
    return Dataset(features, labels.astype(np.int64), class_count, SplitTag.TRAIN, name)


def write_mnist_idx(d: Dataset, images_path, labels_path, image_shape=None) -> None:
    """Serialize a dataset with ``[0, 1]`` features back to an IDX pair."""
    if image_shape is None:
        side = math.isqrt(d.n_features)
        if side * side != d.n_features:
            raise ValueError("pass image_shape for non-square images")
        image_shape = (side, side)
    pixels = np.rint(d.features * 255.0)
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise ValueError("features must lie in [0, 1]")
    write_idx(images_path, pixels.astype(np.uint8).reshape((d.n_samples, *image_shape)))
    write_idx(labels_path, d.labels.astype(np.uint8))


def load_csv(path, class_count=None, name=None) -> Dataset:
    """Load a CSV with header ``label,f0,f1,...``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0].strip() != "label":
            raise ValueError(f"{path}: first column must be 'label'")
        rows = [row for row in reader if row]
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    features = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    features = features.reshape(len(rows), len(header) - 1)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels, class_count, SplitTag.TRAIN, name or Path(path).stem)


def save_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{j}" for j in range(d.n_features)])
        for label, row in zip(d.labels, d.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# synthetic data and transforms


def make_gaussian_blobs(n_per_class: int, class_count: int, dim: int,
                        class_sep: float, seed: int) -> Dataset:
    """Isotropic unit-variance Gaussian classes centred at ``class_sep * e_(c mod dim)``.

    Labels come out grouped by class: ``[0]*n_per_class + [1]*n_per_class + ...``.
    """
    if min(n_per_class, class_count, dim) <= 0 or class_sep <= 0:
        raise ValueError("all arguments must be positive")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(class_count), n_per_class)
    centers = np.zeros((class_count, dim))
    centers[np.arange(class_count), np.arange(class_count) % dim] = class_sep
    features = centers[labels] + rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, class_count, SplitTag.TRAIN, "blobs")


def induce_class_imbalance(d: Dataset, affected_fraction: float,
                           removal_fraction: float, seed: int) -> Dataset:
    """Drop ``floor(removal_fraction * n_c)`` samples from ``floor(affected_fraction * C)`` classes.

    Both the affected classes and the dropped samples are seeded uniform draws
    without replacement. Samples of other classes are kept untouched and in
    their original order.
    """
    for frac in (affected_fraction, removal_fraction):
        if not 0.0 <= frac <= 1.0:
            raise ValueError("fractions must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_affected = _floor_frac(affected_fraction, d.class_count)
    affected = np.sort(rng.choice(d.class_count, size=n_affected, replace=False))
    keep = np.ones(d.n_samples, dtype=bool)
    for c in affected:
        members = np.flatnonzero(d.labels == c)
        n_remove = _floor_frac(removal_fraction, members.size)
        if members.size and n_remove == members.size:
            raise EmptyResult(f"removing every sample of class {c} would shrink class_count")
        keep[rng.choice(members, size=n_remove, replace=False)] = False
    return d.subset(np.flatnonzero(keep))


def split_indices(n: int, spec: SplitSpec):
    """Seeded shuffled partition of ``range(n)`` into train / validation / test."""
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = min(n, int(math.floor(spec.train_fraction * n + 0.5)))
    n_val = min(n - n_train, _floor_frac(spec.validation_fraction, n))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(d: Dataset, spec: SplitSpec):
    """Split into (train, validation, test) datasets; empty parts are allowed."""
    tr, va, te = split_indices(d.n_samples, spec)
    return (d.subset(tr, SplitTag.TRAIN), d.subset(va, SplitTag.VALIDATION),
            d.subset(te, SplitTag.TEST))
