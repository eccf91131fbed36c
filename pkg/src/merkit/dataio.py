"""Synthetic datasets, CSV ingestion, splits, and bundled result fixtures.

Generators are deterministic for a fixed seed and keep class labels
balanced within one sample. The fixture loader ingests the five
transcribed result tables (cifar10, stl10, fashionmnist, cifar100,
celeba) that ship inside the package under ``fixtures/``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FixtureError, ParameterError, ParseError

__all__ = [
    "Dataset",
    "FixtureRow",
    "FIXTURE_DATASETS",
    "FIXTURE_GROUPS",
    "make_blobs",
    "make_moons",
    "make_rings",
    "split",
    "load_csv",
    "write_csv",
    "load_fixtures",
    "bundled_fixtures_dir",
]

FIXTURE_DATASETS = ("cifar10", "stl10", "fashionmnist", "cifar100", "celeba")
FIXTURE_GROUPS = ("ResNet", "WideResNet", "DenseNet", "LeViT")
_ROWS_PER_DATASET = 16


@dataclass
class Dataset:
    """A labeled sample collection: features (N, d), integer labels in [0, K)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(
                f"features must be a non-empty 2-D array, got shape {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} samples"
            )
        if self.num_classes < 2:
            raise DataError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _balanced_labels(n: int, k: int) -> np.ndarray:
    """Class sizes differing by at most one, lowest classes get the extras."""
    counts = [n // k + (1 if i < n % k else 0) for i in range(k)]
    return np.repeat(np.arange(k, dtype=np.int64), counts)


def make_blobs(n: int, d: int, k: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters around K well-separated centers.

    Centers sit on a circle of radius 3 in the first two feature
    dimensions (evenly spaced on a line when d == 1), rotated by a
    seed-dependent phase, so classes stay separable for small spread.
    """
    if n < k:
        raise ParameterError(f"need at least one sample per class: n={n} < k={k}")
    if d < 1:
        raise ParameterError(f"feature dimension must be positive, got {d}")
    if k < 2:
        raise ParameterError(f"need at least 2 classes, got {k}")
    if spread < 0:
        raise ParameterError(f"spread must be non-negative, got {spread}")
    rng = np.random.default_rng(seed)
    centers = np.zeros((k, d))
    if d == 1:
        centers[:, 0] = 3.0 * (np.arange(k) - (k - 1) / 2.0)
    else:
        phase = rng.uniform(0.0, 2.0 * math.pi)
        angles = phase + 2.0 * math.pi * np.arange(k) / k
        centers[:, 0] = 3.0 * np.cos(angles)
        centers[:, 1] = 3.0 * np.sin(angles)
    labels = _balanced_labels(n, k)
    features = centers[labels] + spread * rng.normal(size=(n, d))
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], k, name=f"blobs-{n}x{d}-k{k}-s{seed}")


def make_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half-circles; the classic non-linearly-separable pair."""
    if n < 2:
        raise ParameterError(f"need at least 2 samples, got {n}")
    if noise < 0:
        raise ParameterError(f"noise must be non-negative, got {noise}")
    rng = np.random.default_rng(seed)
    n0 = n - n // 2
    n1 = n // 2
    t0 = np.linspace(0.0, math.pi, n0)
    t1 = np.linspace(0.0, math.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    features = np.vstack([upper, lower]) + noise * rng.normal(size=(n, 2))
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], 2, name=f"moons-{n}-s{seed}")


def make_rings(n: int, k: int, noise: float, seed: int) -> Dataset:
    """K concentric rings in the plane, one class per radius."""
    if n < k:
        raise ParameterError(f"need at least one sample per class: n={n} < k={k}")
    if k < 2:
        raise ParameterError(f"need at least 2 classes, got {k}")
    if noise < 0:
        raise ParameterError(f"noise must be non-negative, got {noise}")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, k)
    features = np.zeros((n, 2))
    start = 0
    for cls in range(k):
        count = int(np.sum(labels == cls))
        angles = 2.0 * math.pi * np.arange(count) / max(count, 1)
        radius = 1.0 + cls
        features[start : start + count, 0] = radius * np.cos(angles)
        features[start : start + count, 1] = radius * np.sin(angles)
        start += count
    features += noise * rng.normal(size=(n, 2))
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], k, name=f"rings-{n}-k{k}-s{seed}")


def split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test partition, deterministic per seed.

    The test side gets round(N * test_fraction) samples, clamped so both
    sides stay non-empty.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(data)
    if n < 2:
        raise ParameterError("cannot split a single-sample dataset")
    n_test = min(max(1, int(round(n * test_fraction))), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    train = Dataset(
        data.features[train_idx], data.labels[train_idx], data.num_classes,
        name=f"{data.name}-train",
    )
    test = Dataset(
        data.features[test_idx], data.labels[test_idx], data.num_classes,
        name=f"{data.name}-test",
    )
    return train, test


def load_csv(path, label_column: str = "label") -> Dataset:
    """Read a dataset from CSV: numeric feature columns plus an integer label column.

    The header names the columns; every column except ``label_column``
    is treated as a feature. Malformed cells fail with the row number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise ParseError(f"{path}: missing label column {label_column!r}")
    label_pos = header.index(label_column)
    feature_pos = [i for i in range(len(header)) if i != label_pos]
    if not feature_pos:
        raise ParseError(f"{path}: no feature columns")
    if len(rows) == 1:
        raise DataError(f"{path}: no data rows")
    features, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        try:
            features.append([float(row[i]) for i in feature_pos])
        except ValueError as exc:
            raise ParseError(f"{path}: row {lineno}: non-numeric feature cell ({exc})") from None
        raw = row[label_pos].strip()
        try:
            label = int(raw)
        except ValueError:
            raise ParseError(f"{path}: row {lineno}: non-integer label {raw!r}") from None
        if label < 0:
            raise ParseError(f"{path}: row {lineno}: negative label {label}")
        labels.append(label)
    k = max(labels) + 1
    return Dataset(np.array(features), np.array(labels), max(k, 2), name=path.stem)


def write_csv(data: Dataset, path, label_column: str = "label") -> None:
    """Write a dataset as CSV with full float precision (exact round-trip)."""
    path = Path(path)
    d = data.dim
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(d)] + [label_column])
        for row, label in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


@dataclass
class FixtureRow:
    """One model's measured results on one dataset, as transcribed."""

    dataset: str
    model: str
    group: str
    n_params: int
    vma: float
    attack_accuracy: float
    fidelity: float
    mrc: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.group not in FIXTURE_GROUPS:
            raise FixtureError(f"unknown architecture group {self.group!r}")
        if self.n_params <= 0:
            raise FixtureError(f"{self.model}: parameter count must be positive")
        if not 0.0 <= self.vma <= 100.0:
            raise FixtureError(f"{self.model}: vma {self.vma} outside [0, 100]")
        if not 0.0 <= self.fidelity <= 1.0:
            raise FixtureError(f"{self.model}: fidelity {self.fidelity} outside [0, 1]")
        if any(v < 0 for v in self.mrc.values()):
            raise FixtureError(f"{self.model}: negative mrc value")
        if not self.mrc:
            raise FixtureError(f"{self.model}: no mrc columns")


def bundled_fixtures_dir() -> Path:
    """Directory of the result tables that ship with the package."""
    return Path(__file__).parent / "fixtures"


def _parse_fixture_file(path: Path, dataset: str) -> list[FixtureRow]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FixtureError(f"{path}: empty fixture file")
        mrc_cols = {}
        for col in reader.fieldnames:
            if col.startswith("mrc_L"):
                try:
                    mrc_cols[col] = int(col[len("mrc_L"):])
                except ValueError:
                    raise FixtureError(f"{path}: bad mrc column name {col!r}") from None
        required = {"model", "group", "n_params", "vma", "attack_accuracy", "fidelity"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise FixtureError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(
                    FixtureRow(
                        dataset=dataset,
                        model=rec["model"].strip(),
                        group=rec["group"].strip(),
                        n_params=int(rec["n_params"]),
                        vma=float(rec["vma"]),
                        attack_accuracy=float(rec["attack_accuracy"]),
                        fidelity=float(rec["fidelity"]),
                        mrc={l_val: float(rec[col]) for col, l_val in mrc_cols.items()},
                    )
                )
            except (ValueError, KeyError) as exc:
                raise FixtureError(f"{path}: row {lineno}: {exc}") from None
    return rows


def load_fixtures(path=None) -> list[FixtureRow]:
    """Load all five transcribed result tables from a directory.

    Enforces the expected shape: five datasets, sixteen rows each,
    eighty rows total.
    """
    directory = Path(path) if path is not None else bundled_fixtures_dir()
    rows: list[FixtureRow] = []
    for dataset in FIXTURE_DATASETS:
        file_path = directory / f"{dataset}.csv"
        if not file_path.exists():
            raise FixtureError(f"missing fixture file {file_path}")
        file_rows = _parse_fixture_file(file_path, dataset)
        if len(file_rows) != _ROWS_PER_DATASET:
            raise FixtureError(
                f"{file_path}: expected {_ROWS_PER_DATASET} rows, got {len(file_rows)}"
            )
        rows.extend(file_rows)
    return rows
