"""merkit: measure how extractable a trained model is.

The toolkit trains small dense networks, computes their empirical
tangent-kernel matrices, simulates extraction attacks, and scores
extraction risk through victim accuracy (vma), recovery complexity
(mrc), a fidelity-gap bound, and a pairwise risk comparator backed by
bundled measurement tables.
"""

from .configio import TOOL_VERSION as __version__
from .dataio import Dataset, load_csv, load_fixtures, make_blobs, make_moons, make_rings, split
from .extraction import AttackConfig, AttackResult, fidelity, kernel_extract, run_attack
from .inspector import (
    ComparatorConfig,
    build_pairs,
    cacc,
    krc,
    metric_report,
    pcc,
    records_from_fixtures,
    reproduce_table1,
    train_comparator,
)
from .nn import ModelSpec, NeuralModel, TrainConfig, build_model, load_model, save_model, train
from .ntk import assemble, kernel_block
from .risk import (
    BoundReport,
    MrcConfig,
    RiskVector,
    bound_grid,
    error_decomposition,
    fidelity_gap_bound,
    generalization_bound,
    mrc,
    vma,
)

__all__ = [
    "__version__",
    "Dataset",
    "load_csv",
    "load_fixtures",
    "make_blobs",
    "make_moons",
    "make_rings",
    "split",
    "AttackConfig",
    "AttackResult",
    "fidelity",
    "kernel_extract",
    "run_attack",
    "ComparatorConfig",
    "build_pairs",
    "cacc",
    "krc",
    "metric_report",
    "pcc",
    "records_from_fixtures",
    "reproduce_table1",
    "train_comparator",
    "ModelSpec",
    "NeuralModel",
    "TrainConfig",
    "build_model",
    "load_model",
    "save_model",
    "train",
    "assemble",
    "kernel_block",
    "BoundReport",
    "MrcConfig",
    "RiskVector",
    "bound_grid",
    "error_decomposition",
    "fidelity_gap_bound",
    "generalization_bound",
    "mrc",
    "vma",
]
