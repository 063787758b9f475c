"""Dataset ingestion (delimited text, IDX image containers), standardization,
and the synthetic generators used for tests and benchmark reproduction.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    """Raised for malformed files or invalid generator parameters."""


@dataclass
class Dataset:
    X: np.ndarray                       # N x d, float64, finite
    labels: np.ndarray | None = None    # int labels in [0, #classes)
    name: str = ""
    feature_names: list[str] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if not np.all(np.isfinite(self.X)):
            raise DataError(f"dataset {self.name!r} contains non-finite features")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.X.shape[0],):
                raise DataError(
                    f"labels length {self.labels.shape} != row count {self.X.shape[0]}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            raise DataError(f"dataset {self.name!r} has no ground-truth labels")
        return int(self.labels.max()) + 1


def load_delimited(path, delimiter: str = ",", label_column: int | None = None,
                   header: bool = False, name: str | None = None) -> Dataset:
    """Parse a rectangular numeric table; an optional label column is extracted
    and densely re-indexed onto [0, #classes) by sorted raw value."""
    path = Path(path)
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        feature_names = None
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if header and feature_names is None:
                feature_names = [c.strip() for c in row]
                continue
            rows.append((lineno, [c.strip() for c in row]))
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0][1])
    values = np.empty((len(rows), width))
    raw_labels: list[str] = []
    label_idx = None
    if label_column is not None:
        label_idx = label_column if label_column >= 0 else width + label_column
        if not 0 <= label_idx < width:
            raise DataError(f"{path}: label column {label_column} out of range "
                            f"for width {width}")
    for i, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno}: expected {width} fields, "
                            f"got {len(row)}")
        for j, cell in enumerate(row):
            if j == label_idx:
                raw_labels.append(cell)
                continue
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}: non-numeric value {cell!r} "
                    f"in column {j}") from None
    labels = None
    if label_idx is not None:
        values = np.delete(values, label_idx, axis=1)
        _, labels = np.unique(raw_labels, return_inverse=True)
    if header and feature_names and label_idx is not None:
        feature_names = [nm for j, nm in enumerate(feature_names) if j != label_idx]
    return Dataset(values, labels, name=name or path.stem,
                   feature_names=feature_names if header else None)


def save_delimited(path, dataset: Dataset, delimiter: str = ",") -> None:
    """Write features (17 significant digits, value round-trip safe) with the
    label column appended last when labels exist."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        for i in range(dataset.n):
            row = [format(v, ".17g") for v in dataset.X[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def _open_maybe_gzip(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_be_u32(fh, path, what) -> int:
    data = fh.read(4)
    if len(data) != 4:
        raise DataError(f"{path}: truncated while reading {what}")
    return struct.unpack(">I", data)[0]


def load_idx(images_path, labels_path, name: str = "idx") -> Dataset:
    """Read the big-endian IDX image/label pair; pixels scaled to [0, 1]."""
    with _open_maybe_gzip(images_path) as fh:
        magic = _read_be_u32(fh, images_path, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise DataError(f"{images_path}: bad image magic 0x{magic:08x}, "
                            f"expected 0x{IDX_IMAGE_MAGIC:08x}")
        count = _read_be_u32(fh, images_path, "image count")
        rows = _read_be_u32(fh, images_path, "row count")
        cols = _read_be_u32(fh, images_path, "column count")
        raw = fh.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise DataError(f"{images_path}: truncated pixel data "
                            f"({len(raw)} of {count * rows * cols} bytes)")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with _open_maybe_gzip(labels_path) as fh:
        magic = _read_be_u32(fh, labels_path, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise DataError(f"{labels_path}: bad label magic 0x{magic:08x}, "
                            f"expected 0x{IDX_LABEL_MAGIC:08x}")
        label_count = _read_be_u32(fh, labels_path, "label count")
        if label_count != count:
            raise DataError(f"label count {label_count} != image count {count}")
        raw = fh.read(label_count)
        if len(raw) != label_count:
            raise DataError(f"{labels_path}: truncated label data")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels, name=name)


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise zero mean, unit std; constant columns map to exact zeros
    (their stored std is 1 so the transform stays affine-consistent)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise DataError(f"standardize needs >= 2 rows, got {X.shape[0]}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std < 1e-12
    std = np.where(constant, 1.0, std)
    out = (X - mean) / std
    out[:, constant] = 0.0
    return out, mean, std


def make_blobs(n_per_cluster: int, centers: np.ndarray, spread: float,
               rng: np.random.Generator, name: str = "blobs") -> Dataset:
    """Isotropic Gaussian clusters around the given centers."""
    if spread <= 0:
        raise DataError(f"spread must be positive, got {spread}")
    centers = np.asarray(centers, dtype=np.float64)
    k, d = centers.shape
    X = np.empty((k * n_per_cluster, d))
    labels = np.repeat(np.arange(k), n_per_cluster)
    for j in range(k):
        block = slice(j * n_per_cluster, (j + 1) * n_per_cluster)
        X[block] = centers[j] + spread * rng.standard_normal((n_per_cluster, d))
    return Dataset(X, labels, name=name)


def make_twonorm(n: int, d: int = 20, rng: np.random.Generator | None = None,
                 name: str = "twonorm") -> Dataset:
    """Two unit-covariance Gaussians at +/- (2/sqrt(d), ..., 2/sqrt(d))."""
    if n % 2:
        raise DataError(f"n must be even, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    half = n // 2
    mu = np.full(d, 2.0 / np.sqrt(d))
    X = np.vstack([
        mu + rng.standard_normal((half, d)),
        -mu + rng.standard_normal((half, d)),
    ])
    labels = np.repeat([0, 1], half)
    return Dataset(X, labels, name=name)
