"""Extraction machinery: the linearized kernel solve and a black-box attack simulator.

Two routes to a surrogate:

* kernel route: fit the victim's output change Δf_v on a query set with
  kernel ridge regression in the tangent kernel at the shared
  initialization. The representer weights α immediately give the
  surrogate's weight change Gᵀα, so prediction at a new point costs one
  Jacobian evaluation.

* simulator route: query strategies (full pool, random subset,
  uncertainty, greedy k-center, or gradient-crafted queries), a victim
  oracle returning probabilities or hard labels, and surrogate
  training with best-checkpoint tracking on a held-out evaluation set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import linalg, nn, ntk
from .dataio import Dataset
from .errors import (
    CapacityError,
    DataError,
    DimensionError,
    ParameterError,
    SingularMatrixError,
)

__all__ = [
    "KernelSolution",
    "AttackConfig",
    "AttackResult",
    "kernel_extract",
    "kernel_predict",
    "kernel_predict_batch",
    "projection_matrix",
    "project_weight_change",
    "fidelity",
    "run_attack",
    "output_change",
]

_PROJECTION_PARAM_CAP = 3000

_POOL_STRATEGIES = ("random", "uncertainty", "kcenter")
_STRATEGIES = ("full", "jbda") + _POOL_STRATEGIES


def output_change(model: nn.NeuralModel, x, space: str = "logits") -> np.ndarray:
    """Stacked Δf = out_θ(x) − out_θ₀(x), flattened sample-major, length N·K."""
    if space == "logits":
        now = nn.forward_batch(model, x, at="current")
        base = nn.forward_batch(model, x, at="init")
    elif space == "probabilities":
        now = nn.probabilities(model, x, at="current")
        base = nn.probabilities(model, x, at="init")
    else:
        raise ParameterError(f"output space must be logits or probabilities, got {space!r}")
    return (now - base).ravel()


@dataclass
class KernelSolution:
    """Representer solution of the ridge system (Θ + NλI)α = Δf_v.

    weight_delta = Gᵀα is the induced parameter change of the linearized
    surrogate; rkhs_norm_sq = αᵀΘα.
    """

    alpha: np.ndarray
    ridge_lambda: float
    rkhs_norm_sq: float
    queried_ids: list
    weight_delta: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.rkhs_norm_sq < -1e-10:
            raise DataError(f"rkhs_norm_sq must be non-negative, got {self.rkhs_norm_sq}")


def kernel_extract(victim: nn.NeuralModel, queries, ridge_lambda: float,
                   clip_q: float | None = None) -> KernelSolution:
    """Fit the victim's output change on the queries in the init-point kernel.

    With λ → 0 and distinct queries the solution interpolates Δf_v. A
    rank-deficient kernel at λ = 0 raises a singularity error suggesting
    either a positive λ or eigenvalue clipping.
    """
    if ridge_lambda < 0:
        raise ParameterError(f"ridge_lambda must be non-negative, got {ridge_lambda}")
    ntkm = ntk.assemble(victim, queries, at="init", clip_q=clip_q)
    delta_v = output_change(victim, queries, space="logits")
    n = ntkm.n
    system = ntkm.theta + (n * ridge_lambda) * np.eye(ntkm.order)
    try:
        alpha = linalg.solve_spd(system, delta_v)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"{exc}; the query kernel is rank-deficient at this ridge level — "
            "pass clip_q or a positive ridge_lambda"
        ) from None
    rkhs = float(alpha @ (ntkm.theta @ alpha))
    weight_delta = ntkm.jacobian_stack.T @ alpha
    return KernelSolution(
        alpha=alpha, ridge_lambda=ridge_lambda, rkhs_norm_sq=max(rkhs, 0.0),
        queried_ids=list(ntkm.sample_ids), weight_delta=weight_delta,
        num_classes=ntkm.num_classes,
    )


def kernel_predict_batch(sol: KernelSolution, model: nn.NeuralModel, x) -> np.ndarray:
    """Surrogate logits f_θ₀(x) + k(x, queries)·α for a batch, shape (B, K)."""
    base = nn.forward_batch(model, x, at="init")
    jac = nn.jacobian_batch(model, np.atleast_2d(np.asarray(x, dtype=np.float64)), at="init")
    return base + jac @ sol.weight_delta


def kernel_predict(sol: KernelSolution, model: nn.NeuralModel, x) -> np.ndarray:
    out = kernel_predict_batch(sol, model, np.asarray(x, dtype=np.float64)[None, :])
    return out[0]


def projection_matrix(model: nn.NeuralModel, queries, at: str = "init") -> np.ndarray:
    """P = Gᵀ Θ⁻¹ G: orthogonal projector onto the span of the query Jacobians.

    Materializes a p×p matrix, so p is capped; beyond the cap use the
    kernel route, which never forms P.
    """
    p = model.num_params
    if p > _PROJECTION_PARAM_CAP:
        raise CapacityError(
            f"projection matrix would be {p}x{p} (cap {_PROJECTION_PARAM_CAP}); "
            "use kernel_extract instead"
        )
    ntkm = ntk.assemble(model, queries, at=at)
    g = ntkm.jacobian_stack
    try:
        solved = linalg.solve_spd(ntkm.theta, g)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"{exc}; query Jacobians are linearly dependent — drop duplicate queries"
        ) from None
    proj = g.T @ solved
    return (proj + proj.T) / 2.0


def project_weight_change(victim: nn.NeuralModel, projection: np.ndarray) -> np.ndarray:
    """Δθ_s = P · Δθ_v: the victim weight change visible to the query span."""
    proj = linalg.as_matrix(projection, "projection")
    if proj.shape != (victim.num_params, victim.num_params):
        raise DimensionError(
            f"projection shape {proj.shape} does not match {victim.num_params} parameters"
        )
    return proj @ victim.delta_params()


def fidelity(a: nn.NeuralModel, b: nn.NeuralModel, eval_set: Dataset) -> float:
    """Fraction of evaluation samples where both argmax predictions agree."""
    if (a.spec.input_dim, a.spec.num_classes) != (b.spec.input_dim, b.spec.num_classes):
        raise DimensionError(
            "models disagree on input dimension or class count: "
            f"({a.spec.input_dim}, {a.spec.num_classes}) vs "
            f"({b.spec.input_dim}, {b.spec.num_classes})"
        )
    pa = nn.predict_labels(a, eval_set.features)
    pb = nn.predict_labels(b, eval_set.features)
    return float(np.mean(pa == pb))


@dataclass(frozen=True)
class AttackConfig:
    strategy: str
    budget: int
    surrogate_train: nn.TrainConfig
    rounds: int = 1
    oracle_mode: str = "probabilities"
    jbda_step: float = 0.1
    shared_init: bool = True

    def __post_init__(self):
        if self.strategy not in _STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}; choose from {_STRATEGIES}")
        if self.budget < 1:
            raise ParameterError(f"budget must be at least 1, got {self.budget}")
        if self.rounds < 1:
            raise ParameterError(f"rounds must be at least 1, got {self.rounds}")
        if self.oracle_mode not in ("probabilities", "labels_only"):
            raise ParameterError(
                f"oracle_mode must be probabilities or labels_only, got {self.oracle_mode!r}"
            )
        if self.strategy == "jbda" and not self.jbda_step > 0:
            raise ParameterError(f"jbda_step must be positive, got {self.jbda_step}")


@dataclass
class AttackResult:
    surrogate: nn.NeuralModel
    fidelity: float
    attack_accuracy: float
    queries_used: int
    per_round: list[tuple[int, float]]

    def __post_init__(self):
        if not 0.0 <= self.fidelity <= 1.0:
            raise DataError(f"fidelity {self.fidelity} outside [0, 1]")
        if not 0.0 <= self.attack_accuracy <= 1.0:
            raise DataError(f"attack_accuracy {self.attack_accuracy} outside [0, 1]")


def _make_surrogate(victim: nn.NeuralModel, cfg: AttackConfig) -> nn.NeuralModel:
    if cfg.shared_init:
        # The threat model grants the attacker the victim's initialization.
        return nn.NeuralModel(
            spec=victim.spec,
            params=victim.init_params.copy(),
            init_params=victim.init_params.copy(),
        )
    fresh_spec = replace(victim.spec, init_seed=cfg.surrogate_train.seed)
    return nn.build_model(fresh_spec)


class _Oracle:
    """Victim query interface honoring the configured disclosure mode."""

    def __init__(self, victim: nn.NeuralModel, mode: str):
        self.victim = victim
        self.mode = mode

    def query(self, x: np.ndarray) -> np.ndarray:
        """Target rows for surrogate training: soft probabilities or one-hot labels."""
        probs = nn.probabilities(self.victim, x)
        if self.mode == "probabilities":
            return probs
        labels = np.argmax(probs, axis=1)
        return nn.one_hot(labels, self.victim.spec.num_classes)


class _BestTracker:
    """Per-epoch fidelity evaluation with a best-parameters snapshot."""

    def __init__(self, victim: nn.NeuralModel, surrogate: nn.NeuralModel,
                 eval_set: Dataset):
        self.victim = victim
        self.surrogate = surrogate
        self.eval_set = eval_set
        self.best_fidelity = -1.0
        self.best_params = surrogate.params.copy()
        self.evaluate()

    def evaluate(self) -> None:
        current = fidelity(self.victim, self.surrogate, self.eval_set)
        if current > self.best_fidelity:
            self.best_fidelity = current
            self.best_params = self.surrogate.params.copy()

    def hook(self, _epoch: int, _model: nn.NeuralModel) -> None:
        self.evaluate()


def _chunk_sizes(budget: int, rounds: int) -> list[int]:
    base, extra = divmod(budget, rounds)
    sizes = [base + 1 if i < extra else base for i in range(rounds)]
    return [s for s in sizes if s > 0]


def _select_uncertainty(surrogate, pool, unqueried, count):
    margins = nn.margins_batch(surrogate, pool.features[unqueried], space="probabilities")
    order = np.lexsort((unqueried, margins))
    return unqueried[order[:count]]


def _select_kcenter(surrogate, pool, queried, unqueried, count):
    probs = nn.probabilities(surrogate, pool.features)
    chosen = []
    if len(queried):
        min_dist = np.min(
            np.linalg.norm(probs[unqueried][:, None, :] - probs[queried][None, :, :], axis=2),
            axis=1,
        )
    else:
        # No centers yet: deterministic bootstrap with the lowest index.
        chosen.append(int(unqueried[0]))
        min_dist = np.linalg.norm(probs[unqueried] - probs[chosen[0]], axis=1)
        min_dist[0] = -np.inf
    while len(chosen) < count:
        pick = int(np.argmax(min_dist))
        chosen.append(int(unqueried[pick]))
        dist_new = np.linalg.norm(probs[unqueried] - probs[unqueried[pick]], axis=1)
        min_dist = np.minimum(min_dist, dist_new)
        min_dist[pick] = -np.inf
    return np.array(chosen[:count], dtype=np.int64)


def run_attack(victim: nn.NeuralModel, pool: Dataset, cfg: AttackConfig,
               eval_set: Dataset) -> AttackResult:
    """Simulate one extraction attack; see the class docstrings for strategy semantics.

    full queries the entire pool in one round. random draws a uniform
    budget-size subset. uncertainty and kcenter spend the budget over
    cfg.rounds selection rounds. jbda seeds with a random subset and
    then crafts queries x − λ·∇ₓL(y, f_s(x)) from the accumulated set,
    doubling per round until the budget is exhausted. Reported fidelity
    is the best checkpoint over all training epochs, evaluated on
    eval_set, including the pre-training state.
    """
    if pool.dim != victim.spec.input_dim or eval_set.dim != victim.spec.input_dim:
        raise DimensionError("pool/eval dimensions do not match the victim input")
    if cfg.strategy in _POOL_STRATEGIES and cfg.budget > len(pool):
        raise ParameterError(
            f"budget {cfg.budget} exceeds pool size {len(pool)} for strategy {cfg.strategy}"
        )
    surrogate = _make_surrogate(victim, cfg)
    oracle = _Oracle(victim, cfg.oracle_mode)
    tracker = _BestTracker(victim, surrogate, eval_set)
    rng = np.random.default_rng(cfg.surrogate_train.seed)
    per_round: list[tuple[int, float]] = []

    queried_x: np.ndarray | None = None
    queried_t: np.ndarray | None = None

    def ingest(x_new: np.ndarray) -> None:
        nonlocal queried_x, queried_t
        t_new = oracle.query(x_new)
        if queried_x is None:
            queried_x, queried_t = x_new.copy(), t_new
        else:
            queried_x = np.vstack([queried_x, x_new])
            queried_t = np.vstack([queried_t, t_new])

    def train_round() -> None:
        nn.train_on_targets(surrogate, queried_x, queried_t, cfg.surrogate_train,
                            epoch_hook=tracker.hook)
        per_round.append((len(queried_x), tracker.best_fidelity))

    if cfg.strategy == "full":
        ingest(pool.features)
        train_round()
    elif cfg.strategy == "random":
        idx = np.sort(rng.choice(len(pool), size=cfg.budget, replace=False))
        ingest(pool.features[idx])
        train_round()
    elif cfg.strategy in ("uncertainty", "kcenter"):
        queried_idx = np.array([], dtype=np.int64)
        for size in _chunk_sizes(cfg.budget, cfg.rounds):
            mask = np.ones(len(pool), dtype=bool)
            mask[queried_idx] = False
            unqueried = np.flatnonzero(mask)
            if cfg.strategy == "uncertainty":
                picks = _select_uncertainty(surrogate, pool, unqueried, size)
            else:
                picks = _select_kcenter(surrogate, pool, queried_idx, unqueried, size)
            queried_idx = np.concatenate([queried_idx, picks])
            ingest(pool.features[picks])
            train_round()
    else:  # jbda
        seed_size = max(1, min(cfg.budget, cfg.budget // (2 ** cfg.rounds)))
        seed_idx = np.sort(rng.choice(len(pool), size=min(seed_size, len(pool)),
                                      replace=False))
        ingest(pool.features[seed_idx])
        train_round()
        for _ in range(cfg.rounds):
            remaining = cfg.budget - len(queried_x)
            if remaining <= 0:
                break
            parents = queried_x[: min(len(queried_x), remaining)]
            parent_labels = np.argmax(queried_t[: len(parents)], axis=1)
            grads = nn.input_gradients(surrogate, parents, parent_labels,
                                       loss="cross_entropy")
            ingest(parents - cfg.jbda_step * grads)
            train_round()

    surrogate.params[:] = tracker.best_params
    return AttackResult(
        surrogate=surrogate,
        fidelity=tracker.best_fidelity,
        attack_accuracy=nn.accuracy(surrogate, eval_set),
        queries_used=len(queried_x),
        per_round=per_round,
    )
