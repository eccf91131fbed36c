"""Pairwise risk comparison: pair datasets, comparator training, and rank statistics.

Given per-model risk measurements (accuracy and recovery complexity)
together with ground-truth attack fidelity, this module builds ordered
model pairs labeled by which member is more extractable, trains a small
classifier on pair features, and scores comparison accuracy. It also
provides the Pearson and Kendall correlation statistics used to judge
metric quality, and the full fixture-table reproduction grid.

Pair features follow the augmented layout
(vma_A, mrc_A, vma_B, mrc_B, vma_A − mrc... vma_A − vma_B, mrc_A − mrc_B):
the raw metric vectors of both models plus their difference block.
Feature subsets (single metric, no augmentation) slice this canonical
layout.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .configio import worker_count
from .dataio import Dataset, FixtureRow
from .errors import DataError, ParameterError, UndefinedCorrelationError

__all__ = [
    "RiskRecord",
    "PairExample",
    "PairSplit",
    "ComparatorConfig",
    "ComparatorModel",
    "Table1Result",
    "records_from_fixtures",
    "build_pairs",
    "feature_matrix",
    "train_comparator",
    "comparator_probs",
    "comparator_predict",
    "cacc",
    "pcc",
    "krc",
    "metric_report",
    "reproduce_table1",
    "TABLE1_ROWS",
    "TABLE1_COLUMNS",
]


@dataclass(frozen=True)
class RiskRecord:
    """One model's measured risk profile on one dataset.

    vma is a fraction in [0, 1] here (fixture tables carry percent and
    are converted on ingestion).
    """

    model_id: str
    dataset_id: str
    group: str
    vma: float
    mrc: float
    fidelity: float


def records_from_fixtures(rows: list[FixtureRow], mrc_l: int | None = None) -> list[RiskRecord]:
    """Convert fixture rows, choosing the operating-point mrc column.

    By default L = 400 is used where present and the largest available
    column otherwise (the 100-class table only carries L ∈ {20, 40}, so
    it contributes L = 40).
    """
    records = []
    for row in rows:
        if mrc_l is not None:
            if mrc_l not in row.mrc:
                raise ParameterError(
                    f"{row.dataset}/{row.model}: no mrc column for L={mrc_l}; "
                    f"available {sorted(row.mrc)}"
                )
            mrc_value = row.mrc[mrc_l]
        else:
            mrc_value = row.mrc.get(400, row.mrc[max(row.mrc)])
        records.append(
            RiskRecord(
                model_id=row.model,
                dataset_id=row.dataset,
                group=row.group,
                vma=row.vma / 100.0,
                mrc=mrc_value,
                fidelity=row.fidelity,
            )
        )
    return records


@dataclass(frozen=True)
class PairExample:
    """Ordered pair (A, B); label 0 iff A's fidelity is strictly larger."""

    record_a: RiskRecord
    record_b: RiskRecord
    label: int
    intra_group: bool
    dataset_id: str

    @property
    def features(self) -> np.ndarray:
        """Canonical augmented layout: metric vectors of A and B plus differences."""
        a, b = self.record_a, self.record_b
        return np.array([
            a.vma, a.mrc, b.vma, b.mrc, a.vma - b.vma, a.mrc - b.mrc,
        ])


@dataclass
class PairSplit:
    """All ordered examples plus a deterministic train/test partition."""

    all_examples: list[PairExample]
    train: list[PairExample]
    test: list[PairExample]
    scope: str
    seed: int


def build_pairs(records: list[RiskRecord], scope: str = "all",
                test_fraction: float = 0.2, seed: int = 0) -> PairSplit:
    """Ordered same-dataset pairs with a seeded train/test split.

    Both orderings of every unordered pair are generated; fidelity ties
    are excluded (neither ordering has a strictly positive difference).
    scope filters to pairs within the same architecture group (intra),
    across groups (inter), or everything (all).
    """
    if scope not in ("all", "intra", "inter"):
        raise ParameterError(f"scope must be all, intra, or inter, got {scope!r}")
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_dataset: dict[str, list[RiskRecord]] = {}
    for rec in records:
        by_dataset.setdefault(rec.dataset_id, []).append(rec)
    examples: list[PairExample] = []
    for dataset_id in sorted(by_dataset):
        group_records = by_dataset[dataset_id]
        if len(group_records) < 2:
            raise DataError(
                f"dataset {dataset_id!r} has fewer than 2 models; cannot build pairs"
            )
        for i, rec_a in enumerate(group_records):
            for j, rec_b in enumerate(group_records):
                if i == j or rec_a.fidelity == rec_b.fidelity:
                    continue
                intra = rec_a.group == rec_b.group
                if scope == "intra" and not intra:
                    continue
                if scope == "inter" and intra:
                    continue
                examples.append(
                    PairExample(
                        record_a=rec_a,
                        record_b=rec_b,
                        label=0 if rec_a.fidelity - rec_b.fidelity > 0 else 1,
                        intra_group=intra,
                        dataset_id=dataset_id,
                    )
                )
    if not examples:
        raise DataError(f"no usable pairs for scope {scope!r}")
    n = len(examples)
    n_test = min(max(1, int(round(n * test_fraction))), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test = [examples[i] for i in perm[:n_test]]
    train = [examples[i] for i in perm[n_test:]]
    return PairSplit(all_examples=examples, train=train, test=test, scope=scope, seed=seed)


_METRIC_COLUMNS = {"vma": 0, "mrc": 1}


def feature_matrix(examples: list[PairExample], metrics=("vma", "mrc"),
                   fa: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows and labels for a metric subset of the canonical layout.

    With augmentation the row is (m_A..., m_B..., m_A − m_B...); without
    it the difference block is dropped.
    """
    metrics = tuple(metrics)
    if not metrics or any(m not in _METRIC_COLUMNS for m in metrics):
        raise ParameterError(f"metrics must be a non-empty subset of ('vma', 'mrc'), got {metrics}")
    if not examples:
        raise DataError("no pair examples given")
    cols = [_METRIC_COLUMNS[m] for m in metrics]
    base = np.stack([ex.features for ex in examples])
    a_block = base[:, cols]
    b_block = base[:, [2 + c for c in cols]]
    parts = [a_block, b_block]
    if fa:
        parts.append(base[:, [4 + c for c in cols]])
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return np.hstack(parts), labels


@dataclass(frozen=True)
class ComparatorConfig:
    """Training recipe for the pairwise comparator.

    The network is a (64, 64, 32) rectified-linear classifier with a
    two-way softmax head (equivalent to a logistic output under binary
    cross-entropy), trained with Adam at 1e-4 for 500 epochs. Features
    are z-scored on the training split before they reach the network;
    the metric scales differ by orders of magnitude and the tiny model
    will not converge on raw inputs.
    """

    metrics: tuple[str, ...] = ("vma", "mrc")
    fa: bool = True
    hidden: tuple[int, ...] = (64, 64, 32)
    epochs: int = 500
    learning_rate: float = 1e-4
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass
class ComparatorModel:
    """Trained comparator plus its feature normalization."""

    net: nn.NeuralModel
    feature_mean: np.ndarray
    feature_std: np.ndarray
    metrics: tuple[str, ...]
    fa: bool


def train_comparator(train_examples: list[PairExample],
                     cfg: ComparatorConfig | None = None) -> ComparatorModel:
    """Fit the pairwise comparator; epochs=0 returns the untrained network
    (chance-level baseline)."""
    cfg = cfg or ComparatorConfig()
    x, y = feature_matrix(train_examples, metrics=cfg.metrics, fa=cfg.fa)
    if len(np.unique(y)) < 2:
        raise DataError("training pairs all carry the same label; cannot fit a comparator")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    spec = nn.ModelSpec(
        input_dim=x.shape[1],
        layer_widths=cfg.hidden,
        num_classes=2,
        activation="relu",
        init_seed=cfg.seed,
        init_scale=1.0,
    )
    net = nn.build_model(spec)
    if cfg.epochs > 0:
        train_cfg = nn.TrainConfig(
            optimizer="adam",
            learning_rate=cfg.learning_rate,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            loss="cross_entropy",
            seed=cfg.seed,
        )
        nn.train_on_targets(net, (x - mean) / std, nn.one_hot(y, 2), train_cfg)
    return ComparatorModel(net=net, feature_mean=mean, feature_std=std,
                           metrics=cfg.metrics, fa=cfg.fa)


def comparator_probs(model: ComparatorModel, examples: list[PairExample]) -> np.ndarray:
    """P(label = 1), i.e. probability that B is the more extractable model."""
    x, _ = feature_matrix(examples, metrics=model.metrics, fa=model.fa)
    x = (x - model.feature_mean) / model.feature_std
    return nn.probabilities(model.net, x)[:, 1]


def comparator_predict(model: ComparatorModel, examples: list[PairExample]) -> np.ndarray:
    """Hard 0/1 predictions at probability threshold 0.5 (ties go to 0)."""
    x, _ = feature_matrix(examples, metrics=model.metrics, fa=model.fa)
    x = (x - model.feature_mean) / model.feature_std
    return nn.predict_labels(model.net, x)


def cacc(model: ComparatorModel, test_examples: list[PairExample]) -> float:
    """Comparison accuracy: fraction of pairs ranked correctly."""
    if not test_examples:
        raise DataError("cannot score an empty test set")
    predictions = comparator_predict(model, test_examples)
    labels = np.array([ex.label for ex in test_examples])
    return float(np.mean(predictions == labels))


def pcc(x, y) -> float:
    """Pearson correlation; constant input is an error, not a NaN."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ParameterError(f"pcc needs two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ParameterError("pcc needs at least 2 observations")
    xm = x - x.mean()
    ym = y - y.mean()
    sx = float(xm @ xm)
    sy = float(ym @ ym)
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    return float((xm @ ym) / np.sqrt(sx * sy))


def krc(x, y) -> float:
    """Kendall rank correlation, tau-a: tied pairs contribute zero.

    The fixture tables contain no tied metric values, so tau-a and the
    tie-adjusted variant coincide there.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ParameterError(f"krc needs two equal-length vectors, got {x.shape} and {y.shape}")
    n = len(x)
    if n < 2:
        raise ParameterError("krc needs at least 2 observations")
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    concordance = float(np.sum(np.triu(dx * dy, k=1)))
    return concordance / (n * (n - 1) / 2.0)


def metric_report(records: list[RiskRecord]) -> list[dict]:
    """Per-group, per-dataset, and pooled correlations of each metric with fidelity.

    Groups with fewer than two rows are skipped with a warning. Returns
    one dict per grouping with pcc/krc for (mrc, fidelity) and
    (vma, fidelity).
    """
    def stats_row(dataset_id: str, group: str, recs: list[RiskRecord]) -> dict | None:
        if len(recs) < 2:
            warnings.warn(f"skipping {dataset_id}/{group}: fewer than 2 rows", stacklevel=2)
            return None
        fid = [r.fidelity for r in recs]
        row = {"dataset": dataset_id, "group": group, "count": len(recs)}
        for metric in ("mrc", "vma"):
            values = [getattr(r, metric) for r in recs]
            try:
                row[f"pcc_{metric}"] = pcc(values, fid)
                row[f"krc_{metric}"] = krc(values, fid)
            except UndefinedCorrelationError:
                warnings.warn(
                    f"{dataset_id}/{group}: constant {metric}, correlation undefined",
                    stacklevel=2,
                )
                row[f"pcc_{metric}"] = None
                row[f"krc_{metric}"] = None
        return row

    rows = []
    by_dataset: dict[str, list[RiskRecord]] = {}
    for rec in records:
        by_dataset.setdefault(rec.dataset_id, []).append(rec)
    for dataset_id in sorted(by_dataset):
        recs = by_dataset[dataset_id]
        groups: dict[str, list[RiskRecord]] = {}
        for rec in recs:
            groups.setdefault(rec.group, []).append(rec)
        for group in sorted(groups):
            row = stats_row(dataset_id, group, groups[group])
            if row:
                rows.append(row)
        row = stats_row(dataset_id, "all", recs)
        if row:
            rows.append(row)
    pooled = stats_row("all", "all", records)
    if pooled:
        rows.append(pooled)
    return rows


TABLE1_ROWS = ("intra", "inter", "all", "all_no_fa")
TABLE1_COLUMNS = ("vma", "mrc", "vma_mrc")

_COLUMN_METRICS = {"vma": ("vma",), "mrc": ("mrc",), "vma_mrc": ("vma", "mrc")}


@dataclass
class Table1Result:
    """Mean and spread of comparison accuracy per scope and feature set."""

    cells: dict[tuple[str, str], dict] = field(default_factory=dict)
    seeds: tuple[int, ...] = ()

    def mean(self, row: str, column: str) -> float:
        return self.cells[(row, column)]["mean"]


def _table1_cell(records, row, column, seed, cfg_base):
    scope = "all" if row == "all_no_fa" else row
    fa = row != "all_no_fa"
    split_result = build_pairs(records, scope=scope, test_fraction=0.2, seed=seed)
    cfg = ComparatorConfig(
        metrics=_COLUMN_METRICS[column],
        fa=fa,
        hidden=cfg_base.hidden,
        epochs=cfg_base.epochs,
        learning_rate=cfg_base.learning_rate,
        batch_size=cfg_base.batch_size,
        seed=seed,
    )
    model = train_comparator(split_result.train, cfg)
    return cacc(model, split_result.test)


def reproduce_table1(records: list[RiskRecord], seeds=(0, 1, 2, 3, 4),
                     cfg_base: ComparatorConfig | None = None) -> Table1Result:
    """Reproduce the comparison-accuracy grid from risk records.

    Rows: intra, inter, all (augmented features) plus all without
    augmentation. Columns: accuracy-only, complexity-only, and combined
    features. Every cell is the mean comparison accuracy over the given
    split/training seeds. MERKIT_THREADS > 1 parallelizes across cells;
    results are identical either way.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ParameterError("need at least one seed")
    cfg_base = cfg_base or ComparatorConfig()
    jobs = [(row, column, seed)
            for row in TABLE1_ROWS for column in TABLE1_COLUMNS for seed in seeds]
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(
                lambda job: _table1_cell(records, job[0], job[1], job[2], cfg_base), jobs
            ))
    else:
        values = [_table1_cell(records, row, column, seed, cfg_base)
                  for row, column, seed in jobs]
    result = Table1Result(seeds=seeds)
    for (row, column, _seed), value in zip(jobs, values):
        cell = result.cells.setdefault((row, column), {"values": []})
        cell["values"].append(value)
    for cell in result.cells.values():
        arr = np.array(cell["values"])
        cell["mean"] = float(arr.mean())
        cell["std"] = float(arr.std())
    return result
