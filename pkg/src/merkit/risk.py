"""Risk metrics and bounds: accuracy, recovery complexity, and the fidelity-gap bound.

The recovery-complexity metric scores how much kernel mass the victim's
training-induced output change occupies: Δfᵀ Θ⁻¹ Δf over a
margin-selected sample set, with the kernel eigenvalues floored at q
before inversion. Low values mean the change lives along
well-represented kernel directions and is easy to imitate; the paper
of record for fidelity is the attack simulator, and this metric is the
attack-agnostic stand-in.

The fidelity-gap bound combines an empirical margin count, a complexity
term scaled by the kernel trace, and a finite-class estimation term.
The reported total must dominate the measured gap; it may exceed one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import extraction, linalg, nn, ntk
from .dataio import Dataset
from .errors import DimensionError, ParameterError

__all__ = [
    "MrcConfig",
    "RiskVector",
    "BoundReport",
    "select_samples",
    "mrc",
    "vma",
    "fidelity_gap_bound",
    "bound_grid",
    "generalization_bound",
    "error_decomposition",
]


@dataclass(frozen=True)
class MrcConfig:
    """Operating point for the recovery-complexity metric.

    Defaults match the reference operating point: L = 400 (clamped to
    the pool), difficulty ratio 0.5, eigenvalue floor 0.5, probability
    outputs, kernel at the trained parameters.
    """

    L: int = 400
    eta: float = 0.5
    q: float = 0.5
    output_space: str = "probabilities"
    eval_point: str = "trained"

    def __post_init__(self):
        if self.L < 1:
            raise ParameterError(f"L must be at least 1, got {self.L}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.q > 0:
            raise ParameterError(f"q must be positive, got {self.q}")
        if self.output_space not in ("probabilities", "logits"):
            raise ParameterError(f"output_space must be probabilities or logits, got {self.output_space!r}")
        if self.eval_point not in ("trained", "init"):
            raise ParameterError(f"eval_point must be trained or init, got {self.eval_point!r}")

    def difficult_count(self, l_effective: int) -> int:
        """L_d = round(eta * L), half rounded up."""
        return int(math.floor(self.eta * l_effective + 0.5))


@dataclass
class RiskVector:
    """The metric pair fed to pairwise comparison."""

    vma: float
    mrc: float
    model_id: str = ""
    dataset_id: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.vma) and 0.0 <= self.vma <= 1.0):
            raise ParameterError(f"vma must be a fraction in [0, 1], got {self.vma}")
        if not (np.isfinite(self.mrc) and self.mrc >= 0.0):
            raise ParameterError(f"mrc must be a non-negative real, got {self.mrc}")


@dataclass
class BoundReport:
    """One evaluation of the fidelity-gap bound at a fixed margin level γ."""

    gamma: float
    delta: float
    empirical_margin_term: float
    complexity_term: float
    sample_term: float
    total: float
    m0: int
    kappa: float
    trace_theta: float
    empirical_gap: float


def select_samples(victim: nn.NeuralModel, pool: Dataset, l_count: int,
                   eta: float) -> np.ndarray:
    """Margin-based selection: L_d largest-margin plus L − L_d smallest-margin samples.

    Margins are the victim's top-1 minus top-2 probabilities. The pool is
    ordered by (margin, index) ascending; the small-margin block comes
    from the front and the large-margin block from the back, which keeps
    the two blocks disjoint and the whole selection deterministic.
    Returns the small-margin block followed by the large-margin block.
    """
    n = len(pool)
    if l_count > n:
        raise ParameterError(f"cannot select {l_count} samples from a pool of {n}")
    if l_count < 1:
        raise ParameterError(f"selection count must be at least 1, got {l_count}")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    margins = nn.margins_batch(victim, pool.features, space="probabilities")
    order = np.lexsort((np.arange(n), margins))
    l_difficult = int(math.floor(eta * l_count + 0.5))
    smallest = order[: l_count - l_difficult]
    largest = order[n - l_difficult :] if l_difficult else order[:0]
    return np.concatenate([smallest, largest])


def mrc(victim: nn.NeuralModel, pool: Dataset, cfg: MrcConfig | None = None) -> float:
    """Recovery complexity Δfᵀ Θ_clipped⁻¹ Δf over a margin-selected sample set.

    Pipeline: select samples by victim margin, assemble the kernel at
    cfg.eval_point, floor its eigenvalues at cfg.q, take the victim's
    output change between trained and init parameters in
    cfg.output_space, and evaluate the quadratic form. An untrained
    victim has Δf = 0 and scores exactly 0. cfg.L is clamped to the pool
    size, so the default config works on any pool.
    """
    cfg = cfg or MrcConfig()
    l_effective = min(cfg.L, len(pool))
    idx = select_samples(victim, pool, l_effective, cfg.eta)
    selected = pool.features[idx]
    ntkm = ntk.assemble(victim, selected, at=cfg.eval_point, clip_q=cfg.q)
    delta_f = extraction.output_change(victim, selected, space=cfg.output_space)
    solved = linalg.solve_spd(ntkm.theta, delta_f)
    return float(delta_f @ solved)


def vma(victim: nn.NeuralModel, test_set: Dataset) -> float:
    """Victim accuracy on the held-out set; the coarse risk signal."""
    return nn.accuracy(victim, test_set)


def _surrogate_logits(surrogate, x) -> np.ndarray:
    if isinstance(surrogate, nn.NeuralModel):
        return nn.forward_batch(surrogate, x)
    return np.asarray(surrogate(x), dtype=np.float64)


def fidelity_gap_bound(victim: nn.NeuralModel, surrogate, samples, gamma: float,
                       delta: float, ntkm: ntk.NtkMatrix) -> BoundReport:
    """Evaluate the three-term fidelity-gap bound at margin level γ.

    surrogate may be a NeuralModel or any callable mapping a feature
    batch to logits (the kernel surrogate is passed as a closure). The
    kernel matrix must be assembled at the initialization over exactly
    these samples; its unclipped trace and curvature constant feed the
    complexity and estimation terms while the (possibly clipped) stored
    matrix backs the inverse.

    The margin of a sample is the surrogate's logit at the victim's
    predicted class minus its best other logit; the empirical gap is the
    fraction of non-positive margins.
    """
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"samples must be a 2-D batch, got shape {x.shape}")
    n = x.shape[0]
    k = victim.spec.num_classes
    if ntkm.n != n or ntkm.num_classes != k:
        raise DimensionError(
            f"kernel matrix covers {ntkm.n} samples x {ntkm.num_classes} classes, "
            f"but got {n} samples x {k} classes"
        )

    victim_labels = nn.predict_labels(victim, x)
    fs = _surrogate_logits(surrogate, x)
    if fs.shape != (n, k):
        raise DimensionError(f"surrogate logits have shape {fs.shape}, expected {(n, k)}")
    own = fs[np.arange(n), victim_labels]
    masked = fs.copy()
    masked[np.arange(n), victim_labels] = -np.inf
    margins = own - masked.max(axis=1)

    margin_term = float(np.mean(margins <= gamma))
    empirical_gap = float(np.mean(margins <= 0.0))

    delta_f = extraction.output_change(victim, x, space="logits")
    quad = float(delta_f @ linalg.solve_spd(ntkm.theta, delta_f))
    complexity_term = 4.0 * k * quad / (gamma * n) * math.sqrt(max(ntkm.trace_raw, 0.0))

    kappa_val = max(ntkm.kappa_raw, 1e-300)
    m0 = max(1, math.ceil(gamma * math.sqrt(n) / (4.0 * k * math.sqrt(kappa_val))))
    sample_term = 3.0 * math.sqrt(math.log(2.0 * m0 / delta) / (2.0 * n))

    return BoundReport(
        gamma=gamma,
        delta=delta,
        empirical_margin_term=margin_term,
        complexity_term=complexity_term,
        sample_term=sample_term,
        total=margin_term + complexity_term + sample_term,
        m0=m0,
        kappa=float(ntkm.kappa_raw),
        trace_theta=float(ntkm.trace_raw),
        empirical_gap=empirical_gap,
    )


def bound_grid(victim: nn.NeuralModel, surrogate, samples, gammas, delta: float,
               ntkm: ntk.NtkMatrix) -> tuple[list[BoundReport], int]:
    """Evaluate the bound on a γ grid; returns the reports and the argmin index.

    There is no principled rule for choosing γ, so the grid plus its
    minimizer is the deliverable.
    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ParameterError("gamma grid must be non-empty")
    reports = [fidelity_gap_bound(victim, surrogate, samples, g, delta, ntkm)
               for g in gammas]
    best = int(np.argmin([r.total for r in reports]))
    return reports, best


def generalization_bound(gap: float, victim_err: float) -> float:
    """Surrogate error bound: gap + victim error, clamped to 1."""
    if not 0.0 <= gap <= 1.0:
        raise ParameterError(f"gap must lie in [0, 1], got {gap}")
    if not 0.0 <= victim_err <= 1.0:
        raise ParameterError(f"victim_err must lie in [0, 1], got {victim_err}")
    return min(1.0, gap + victim_err)


def error_decomposition(victim: nn.NeuralModel, surrogate: nn.NeuralModel,
                        eval_set: Dataset) -> tuple[float, float, float]:
    """(surrogate error, disagreement gap, victim error) as empirical fractions.

    The pointwise union bound guarantees err_s ≤ gap + err_v on every
    evaluation set; callers assert it wherever attacks run.
    """
    err_s = 1.0 - nn.accuracy(surrogate, eval_set)
    err_v = 1.0 - nn.accuracy(victim, eval_set)
    gap = 1.0 - extraction.fidelity(victim, surrogate, eval_set)
    return err_s, gap, err_v
