"""Empirical tangent-kernel assembly, clipping, trace and curvature constants.

The kernel of a network at parameters θ is
k(x, x') = J(x) · J(x')ᵀ with J the (K × p) parameter Jacobian, and the
full matrix over N samples stacks those K×K blocks into an NK×NK Gram
matrix Θ = G·Gᵀ. Assembly computes the stacked Jacobian G once and
keeps it on the result, since downstream solvers reuse it.

Eigenvalue clipping (floor every eigenvalue at q) is applied on request
for inversion paths; the raw trace and the raw per-sample curvature
constant κ are always recorded before clipping, because the bound
evaluation needs the unclipped quantities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg, nn
from .errors import DataError, DimensionError, ParameterError, ParseError

__all__ = [
    "NtkMatrix",
    "kernel_block",
    "assemble",
    "trace",
    "kappa",
    "save_theta",
    "load_theta",
]

_MAGIC = b"MERKNTK1"


@dataclass
class NtkMatrix:
    """Assembled kernel matrix with its provenance.

    theta is clipped when clip_q is set; trace_raw and kappa_raw always
    describe the pre-clip matrix. jacobian_stack is the (NK, p) matrix
    G with Θ_raw = G·Gᵀ.
    """

    theta: np.ndarray
    n: int
    num_classes: int
    eval_point: str
    clip_q: float | None
    sample_ids: list
    trace_raw: float
    kappa_raw: float
    jacobian_stack: np.ndarray | None = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return self.n * self.num_classes


def _samples_array(model: nn.NeuralModel, samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0:
        raise DataError("sample list is empty")
    if arr.ndim != 2 or arr.shape[1] != model.spec.input_dim:
        raise DimensionError(
            f"samples must be vectors of length {model.spec.input_dim}, got shape {arr.shape}"
        )
    return arr


def kernel_block(model: nn.NeuralModel, x, x2, at: str = "trained") -> np.ndarray:
    """K×K kernel block ⟨∂f(x)/∂θ, ∂f(x')/∂θ⟩."""
    point = _eval_point_to_params(at)
    ja = nn.jacobian_batch(model, _samples_array(model, x), at=point)[0]
    jb = nn.jacobian_batch(model, _samples_array(model, x2), at=point)[0]
    return ja @ jb.T


def _eval_point_to_params(at: str) -> str:
    if at == "trained":
        return "current"
    if at == "init":
        return "init"
    raise ParameterError(f"evaluation point must be 'trained' or 'init', got {at!r}")


def assemble(model: nn.NeuralModel, samples, at: str = "trained",
             clip_q: float | None = None, sample_ids=None) -> NtkMatrix:
    """Build the NK×NK kernel matrix over the given samples.

    The raw Gram matrix is symmetrized exactly; when clip_q is given its
    eigenvalues are floored at clip_q for safe inversion.
    """
    arr = _samples_array(model, samples)
    n = arr.shape[0]
    k = model.spec.num_classes
    g = nn.jacobian_batch(model, arr, at=_eval_point_to_params(at)).reshape(n * k, -1)
    theta_raw = g @ g.T
    theta_raw = (theta_raw + theta_raw.T) / 2.0
    trace_raw = float(np.trace(theta_raw))
    kappa_raw = 0.0
    for i in range(n):
        block = theta_raw[i * k : (i + 1) * k, i * k : (i + 1) * k]
        kappa_raw = max(kappa_raw, float(linalg.sym_eigen(block).eigenvalues[0]))
    if clip_q is not None:
        theta = linalg.clip_eigenvalues(theta_raw, clip_q)
    else:
        theta = theta_raw
    ids = list(sample_ids) if sample_ids is not None else list(range(n))
    if len(ids) != n:
        raise DimensionError(f"sample_ids length {len(ids)} does not match {n} samples")
    return NtkMatrix(
        theta=theta, n=n, num_classes=k, eval_point=at, clip_q=clip_q,
        sample_ids=ids, trace_raw=trace_raw, kappa_raw=kappa_raw, jacobian_stack=g,
    )


def trace(ntkm: NtkMatrix) -> float:
    """Trace of the stored (possibly clipped) matrix."""
    return linalg.trace(ntkm.theta)


def kappa(model: nn.NeuralModel, samples, at: str = "trained") -> float:
    """κ = max over samples of the largest eigenvalue of k(x, x).

    The diagonal kernel block is a K×K matrix rather than the scalar the
    bound statement suggests; its operator norm is the tightest valid
    scalarization.
    """
    arr = _samples_array(model, samples)
    jac = nn.jacobian_batch(model, arr, at=_eval_point_to_params(at))
    worst = 0.0
    for j in jac:
        block = j @ j.T
        worst = max(worst, float(linalg.sym_eigen(block).eigenvalues[0]))
    return worst


def save_theta(ntkm: NtkMatrix, path) -> None:
    """Binary cache: 16-byte header (magic, n, K) then row-major float64 LE."""
    header = _MAGIC + struct.pack("<II", ntkm.n, ntkm.num_classes)
    body = np.ascontiguousarray(ntkm.theta, dtype="<f8").tobytes()
    Path(path).write_bytes(header + body)


def load_theta(path) -> tuple[int, int, np.ndarray]:
    """Read a cached kernel matrix; returns (n, K, theta)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != _MAGIC:
        raise ParseError(f"{path}: not a kernel cache file")
    n, k = struct.unpack("<II", raw[8:16])
    order = n * k
    expected = 16 + order * order * 8
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, got {len(raw)}")
    theta = np.frombuffer(raw[16:], dtype="<f8").reshape(order, order).astype(np.float64)
    return int(n), int(k), theta
