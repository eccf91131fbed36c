"""Feedforward classifier with exact per-sample Jacobians and linearized evaluation.

The engine is deliberately small: dense layers, relu or tanh hidden
activations, raw logits out. What it adds over any off-the-shelf
trainer is exact parameter-space Jacobians per sample and class (the
object every kernel computation here is built from), a first-order
Taylor evaluation around the initialization snapshot, and optional
projected-gradient adversarial training.

Parameter layout (the flat vector θ): layers in forward order, each as
row-major weight matrix followed by its bias vector. A model with no
hidden layers is the pure linear map f(x) = Wx with no bias, so its
parameter count is exactly K·d; this keeps the linear-model kernel
identity k(x, x') = (x·x')·I_K exact.

Argmax ties break toward the lowest class index everywhere, so victim
and surrogate agreement is measured under one fixed policy.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset
from .errors import DataError, DimensionError, ParameterError

__all__ = [
    "ModelSpec",
    "NeuralModel",
    "PgdConfig",
    "TrainConfig",
    "TrainReport",
    "build_model",
    "param_count",
    "forward",
    "forward_batch",
    "probabilities",
    "softmax",
    "param_jacobian",
    "jacobian_batch",
    "linearized_forward",
    "predict_margin",
    "margins_batch",
    "predict_labels",
    "accuracy",
    "train",
    "train_on_targets",
    "input_gradients",
    "pgd_perturb",
    "one_hot",
    "model_to_json",
    "model_from_json",
    "save_model",
    "load_model",
    "model_digest",
    "train_config_digest",
]

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description. layer_widths may be empty: f(x) = Wx, no bias."""

    input_dim: int
    layer_widths: tuple[int, ...]
    num_classes: int
    activation: str = "relu"
    init_seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.input_dim < 1:
            raise ParameterError(f"input_dim must be positive, got {self.input_dim}")
        if any(w < 1 for w in self.layer_widths):
            raise ParameterError(f"layer widths must be positive, got {self.layer_widths}")
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.activation not in ("relu", "tanh"):
            raise ParameterError(f"activation must be relu or tanh, got {self.activation!r}")
        if not self.init_scale > 0:
            raise ParameterError(f"init_scale must be positive, got {self.init_scale}")

    @property
    def has_bias(self) -> bool:
        return bool(self.layer_widths)

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) per layer in forward order."""
        dims = [self.input_dim, *self.layer_widths, self.num_classes]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def param_count(spec: ModelSpec) -> int:
    bias = 1 if spec.has_bias else 0
    return sum(out * (fan_in + bias) for out, fan_in in spec.layer_dims())


@dataclass
class NeuralModel:
    """A spec plus the current parameters θ and the frozen init snapshot θ₀."""

    spec: ModelSpec
    params: np.ndarray
    init_params: np.ndarray
    train_seeds: list[int] = field(default_factory=list)
    last_train_digest: str | None = None

    def __post_init__(self):
        p = param_count(self.spec)
        self.params = np.array(self.params, dtype=np.float64)
        self.init_params = np.array(self.init_params, dtype=np.float64)
        if self.params.shape != (p,) or self.init_params.shape != (p,):
            raise DimensionError(
                f"parameter vectors must have length {p}, got "
                f"{self.params.shape} and {self.init_params.shape}"
            )
        self.init_params.flags.writeable = False

    def __call__(self, x):
        return forward(self, x)

    @property
    def num_params(self) -> int:
        return self.params.shape[0]

    def delta_params(self) -> np.ndarray:
        """Δθ = θ − θ₀."""
        return self.params - self.init_params


def _init_params(spec: ModelSpec) -> np.ndarray:
    """Per-layer Gaussian weights with std init_scale/√fan_in, zero biases."""
    rng = np.random.default_rng(spec.init_seed)
    chunks = []
    for out, fan_in in spec.layer_dims():
        std = spec.init_scale / np.sqrt(fan_in)
        chunks.append(rng.normal(0.0, std, size=out * fan_in))
        if spec.has_bias:
            chunks.append(np.zeros(out))
    return np.concatenate(chunks)


def build_model(spec: ModelSpec) -> NeuralModel:
    theta0 = _init_params(spec)
    return NeuralModel(spec=spec, params=theta0.copy(), init_params=theta0)


def _unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Views into the flat vector as (W, b) per layer; b is None without biases."""
    layers = []
    offset = 0
    for out, fan_in in spec.layer_dims():
        w = params[offset : offset + out * fan_in].reshape(out, fan_in)
        offset += out * fan_in
        b = None
        if spec.has_bias:
            b = params[offset : offset + out]
            offset += out
        layers.append((w, b))
    return layers


def _activation(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_deriv(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _forward_pass(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Returns (per-layer inputs, per-hidden-layer preactivations, logits)."""
    layers = _unpack(spec, params)
    inputs = [x]
    preacts = []
    h = x
    for idx, (w, b) in enumerate(layers):
        z = h @ w.T
        if b is not None:
            z = z + b
        if idx < len(layers) - 1:
            preacts.append(z)
            h = _activation(spec, z)
            inputs.append(h)
        else:
            return inputs, preacts, z
    raise AssertionError("unreachable: spec always has at least one layer")


def _check_features(spec: ModelSpec, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != spec.input_dim:
        raise DimensionError(
            f"expected feature vectors of length {spec.input_dim}, got shape {np.shape(x)}"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError("feature input contains non-finite values")
    return arr


def _params_at(model: NeuralModel, at: str) -> np.ndarray:
    if at == "current":
        return model.params
    if at == "init":
        return model.init_params
    raise ParameterError(f"evaluation point must be 'current' or 'init', got {at!r}")


def forward_batch(model: NeuralModel, x, at: str = "current") -> np.ndarray:
    arr = _check_features(model.spec, x)
    _, _, logits = _forward_pass(model.spec, _params_at(model, at), arr)
    return logits


def forward(model: NeuralModel, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return forward_batch(model, arr[None, :])[0]
    return forward_batch(model, arr)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def probabilities(model: NeuralModel, x, at: str = "current") -> np.ndarray:
    return softmax(forward_batch(model, x, at=at))


def jacobian_batch(model: NeuralModel, x, at: str = "current") -> np.ndarray:
    """Exact per-sample Jacobians ∂logits/∂θ, shape (B, K, p).

    Computed by backpropagating an identity seed over classes through
    the whole batch at once; flattening matches the parameter layout.
    """
    spec = model.spec
    arr = _check_features(spec, x)
    params = _params_at(model, at)
    layers = _unpack(spec, params)
    inputs, preacts, _ = _forward_pass(spec, params, arr)
    b_size = arr.shape[0]
    k = spec.num_classes
    delta = np.broadcast_to(np.eye(k), (b_size, k, k)).copy()
    pieces: list[np.ndarray] = []
    for idx in reversed(range(len(layers))):
        w, bias = layers[idx]
        layer_in = inputs[idx]
        g_w = np.einsum("bko,bi->bkoi", delta, layer_in).reshape(b_size, k, -1)
        if bias is not None:
            pieces.append(np.concatenate([g_w, delta], axis=2))
        else:
            pieces.append(g_w)
        if idx > 0:
            back = np.einsum("bko,oi->bki", delta, w)
            delta = back * _activation_deriv(spec, preacts[idx - 1])[:, None, :]
    return np.concatenate(pieces[::-1], axis=2)


def param_jacobian(model: NeuralModel, x, at: str = "current") -> np.ndarray:
    """Jacobian for a single sample, shape (K, p)."""
    arr = _check_features(model.spec, x)
    if arr.shape[0] != 1:
        raise DimensionError("param_jacobian expects a single feature vector")
    return jacobian_batch(model, arr, at=at)[0]


def linearized_forward(model: NeuralModel, x) -> np.ndarray:
    """First-order Taylor evaluation around θ₀: f(x) ≈ f_θ₀(x) + J₀(x)·Δθ."""
    arr = _check_features(model.spec, x)
    base = forward_batch(model, arr, at="init")
    jac = jacobian_batch(model, arr, at="init")
    out = base + jac @ model.delta_params()
    return out[0] if np.ndim(x) == 1 else out


def predict_labels(model: NeuralModel, x, at: str = "current") -> np.ndarray:
    """Argmax predictions; ties go to the lowest class index."""
    return np.argmax(forward_batch(model, x, at=at), axis=1)


def margins_batch(model: NeuralModel, x, space: str = "probabilities",
                  at: str = "current") -> np.ndarray:
    """Top-1 minus top-2 output per sample, in logit or probability space."""
    if space not in ("logits", "probabilities"):
        raise ParameterError(f"margin space must be logits or probabilities, got {space!r}")
    out = forward_batch(model, x, at=at)
    if space == "probabilities":
        out = softmax(out)
    part = np.sort(out, axis=1)
    return part[:, -1] - part[:, -2]


def predict_margin(model: NeuralModel, x, space: str = "probabilities") -> float:
    arr = _check_features(model.spec, x)
    if arr.shape[0] != 1:
        raise DimensionError("predict_margin expects a single feature vector")
    return float(margins_batch(model, arr, space=space)[0])


def accuracy(model: NeuralModel, data: Dataset) -> float:
    if len(data) == 0:
        raise DataError("cannot compute accuracy on an empty dataset")
    return float(np.mean(predict_labels(model, data.features) == data.labels))


@dataclass(frozen=True)
class PgdConfig:
    """Projected-gradient attack used during adversarial training."""

    epsilon: float
    step_size: float
    steps: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"pgd epsilon must be positive, got {self.epsilon}")
        if not self.step_size > 0:
            raise ParameterError(f"pgd step size must be positive, got {self.step_size}")
        if self.steps < 1:
            raise ParameterError(f"pgd steps must be at least 1, got {self.steps}")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 32
    momentum: float = 0.0
    weight_decay: float = 0.0
    loss: str = "cross_entropy"
    seed: int = 0
    adversarial: PgdConfig | None = None

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        # A zero learning rate is allowed as an explicit no-op (useful for
        # diagnostics); negative rates are rejected.
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.loss not in ("cross_entropy", "mse"):
            raise ParameterError(f"loss must be cross_entropy or mse, got {self.loss!r}")


@dataclass
class TrainReport:
    loss_curve: list[float]
    final_accuracy: float


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _loss_and_seed(loss: str, logits: np.ndarray, targets: np.ndarray):
    """Mean batch loss and dL/dlogits.

    cross_entropy: softmax CE against (possibly soft) target rows.
    mse: 0.5·‖logits − targets‖² averaged over the batch.
    """
    b = logits.shape[0]
    if loss == "cross_entropy":
        probs = softmax(logits)
        # Clip only inside the log; the gradient uses the exact probs.
        value = float(-np.sum(targets * np.log(np.clip(probs, 1e-300, None))) / b)
        return value, (probs - targets) / b
    diff = logits - targets
    return float(0.5 * np.sum(diff * diff) / b), diff / b


def _param_gradient(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
                    seed: np.ndarray) -> np.ndarray:
    """Flat gradient of Σᵢ seedᵢ·logitsᵢ with respect to θ."""
    layers = _unpack(spec, params)
    inputs, preacts, _ = _forward_pass(spec, params, x)
    delta = seed
    pieces: list[np.ndarray] = []
    for idx in reversed(range(len(layers))):
        w, bias = layers[idx]
        g_w = delta.T @ inputs[idx]
        if bias is not None:
            pieces.append(np.concatenate([g_w.ravel(), delta.sum(axis=0)]))
        else:
            pieces.append(g_w.ravel())
        if idx > 0:
            delta = (delta @ w) * _activation_deriv(spec, preacts[idx - 1])
    return np.concatenate(pieces[::-1])


def _input_gradient(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
                    seed: np.ndarray) -> np.ndarray:
    """Gradient of Σᵢ seedᵢ·logitsᵢ with respect to the inputs, shape (B, d)."""
    layers = _unpack(spec, params)
    _, preacts, _ = _forward_pass(spec, params, x)
    delta = seed
    for idx in reversed(range(len(layers))):
        w, _ = layers[idx]
        delta = delta @ w
        if idx > 0:
            delta = delta * _activation_deriv(spec, preacts[idx - 1])
    return delta


def input_gradients(model: NeuralModel, x, labels, loss: str = "cross_entropy") -> np.ndarray:
    """Per-sample ∇ₓ L(y, f(x)) without batch averaging, shape (B, d)."""
    spec = model.spec
    arr = _check_features(spec, x)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (arr.shape[0],):
        raise DimensionError("labels must match the number of feature rows")
    targets = one_hot(labels, spec.num_classes)
    _, _, logits = _forward_pass(spec, model.params, arr)
    if loss == "cross_entropy":
        seed = softmax(logits) - targets
    elif loss == "mse":
        seed = logits - targets
    else:
        raise ParameterError(f"loss must be cross_entropy or mse, got {loss!r}")
    return _input_gradient(spec, model.params, arr, seed)


def pgd_perturb(model: NeuralModel, x, targets: np.ndarray, cfg: PgdConfig,
                loss: str = "cross_entropy") -> np.ndarray:
    """Sign-step projected gradient ascent on the loss, ‖δ‖∞ ≤ ε exactly."""
    spec = model.spec
    arr = _check_features(spec, x)
    delta = np.zeros_like(arr)
    for _ in range(cfg.steps):
        _, _, logits = _forward_pass(spec, model.params, arr + delta)
        if loss == "cross_entropy":
            seed = softmax(logits) - targets
        else:
            seed = logits - targets
        grad = _input_gradient(spec, model.params, arr + delta, seed)
        delta = np.clip(delta + cfg.step_size * np.sign(grad), -cfg.epsilon, cfg.epsilon)
    return arr + delta


class _Optimizer:
    """SGD with momentum or Adam over the flat parameter vector."""

    def __init__(self, cfg: TrainConfig, p: int):
        self.cfg = cfg
        self.velocity = np.zeros(p)
        self.m = np.zeros(p)
        self.v = np.zeros(p)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        cfg = self.cfg
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * params
        if cfg.optimizer == "sgd":
            if cfg.momentum:
                self.velocity = cfg.momentum * self.velocity + grad
                update = self.velocity
            else:
                update = grad
            params -= cfg.learning_rate * update
        else:
            self.t += 1
            self.m = _ADAM_BETA1 * self.m + (1 - _ADAM_BETA1) * grad
            self.v = _ADAM_BETA2 * self.v + (1 - _ADAM_BETA2) * grad * grad
            m_hat = self.m / (1 - _ADAM_BETA1 ** self.t)
            v_hat = self.v / (1 - _ADAM_BETA2 ** self.t)
            params -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)


def train_on_targets(model: NeuralModel, x, targets, cfg: TrainConfig,
                     epoch_hook=None) -> list[float]:
    """Shared training loop against arbitrary (soft or hard) target rows.

    Mutates model.params in place and returns the per-epoch mean batch
    loss curve. epoch_hook(epoch_index, model), when given, runs after
    every epoch; it is how callers track best-checkpoint fidelity.
    """
    spec = model.spec
    arr = _check_features(spec, x)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (arr.shape[0], spec.num_classes):
        raise DimensionError(
            f"targets must have shape ({arr.shape[0]}, {spec.num_classes}), got {targets.shape}"
        )
    n = arr.shape[0]
    rng = np.random.default_rng(cfg.seed)
    opt = _Optimizer(cfg, model.num_params)
    curve = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb = arr[idx]
            tb = targets[idx]
            if cfg.adversarial is not None:
                xb = pgd_perturb(model, xb, tb, cfg.adversarial, loss=cfg.loss)
            _, _, logits = _forward_pass(spec, model.params, xb)
            value, seed = _loss_and_seed(cfg.loss, logits, tb)
            grad = _param_gradient(spec, model.params, xb, seed)
            opt.step(model.params, grad)
            batch_losses.append(value)
        curve.append(float(np.mean(batch_losses)))
        if epoch_hook is not None:
            epoch_hook(epoch, model)
    model.train_seeds.append(cfg.seed)
    model.last_train_digest = train_config_digest(cfg)
    return curve


def train(model: NeuralModel, data: Dataset, cfg: TrainConfig,
          epoch_hook=None) -> TrainReport:
    """Train on hard labels; returns the loss curve and final train accuracy."""
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    if data.labels.max() >= model.spec.num_classes:
        raise DataError(
            f"dataset has label {data.labels.max()} but the model only has "
            f"{model.spec.num_classes} classes"
        )
    if data.dim != model.spec.input_dim:
        raise DimensionError(
            f"dataset dimension {data.dim} does not match model input {model.spec.input_dim}"
        )
    targets = one_hot(data.labels, model.spec.num_classes)
    curve = train_on_targets(model, data.features, targets, cfg, epoch_hook=epoch_hook)
    return TrainReport(loss_curve=curve, final_accuracy=accuracy(model, data))


def _spec_to_dict(spec: ModelSpec) -> dict:
    d = asdict(spec)
    d["layer_widths"] = list(spec.layer_widths)
    return d


def _spec_from_dict(d: dict) -> ModelSpec:
    return ModelSpec(
        input_dim=int(d["input_dim"]),
        layer_widths=tuple(d["layer_widths"]),
        num_classes=int(d["num_classes"]),
        activation=d["activation"],
        init_seed=int(d["init_seed"]),
        init_scale=float(d["init_scale"]),
    )


def model_to_json(model: NeuralModel) -> dict:
    """JSON-ready document; float lists round-trip bit-exactly."""
    return {
        "spec": _spec_to_dict(model.spec),
        "theta0": [float(v) for v in model.init_params],
        "theta": [float(v) for v in model.params],
        "seeds": {"init": model.spec.init_seed, "train": list(model.train_seeds)},
        "train_config_digest": model.last_train_digest,
    }


def model_from_json(doc: dict) -> NeuralModel:
    spec = _spec_from_dict(doc["spec"])
    model = NeuralModel(
        spec=spec,
        params=np.array(doc["theta"], dtype=np.float64),
        init_params=np.array(doc["theta0"], dtype=np.float64),
        train_seeds=[int(s) for s in doc.get("seeds", {}).get("train", [])],
        last_train_digest=doc.get("train_config_digest"),
    )
    return model


def save_model(model: NeuralModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)), encoding="utf-8")


def load_model(path) -> NeuralModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def model_digest(model: NeuralModel) -> str:
    return hashlib.sha256(_canonical(model_to_json(model)).encode()).hexdigest()


def train_config_digest(cfg: TrainConfig) -> str:
    return hashlib.sha256(_canonical(asdict(cfg)).encode()).hexdigest()
