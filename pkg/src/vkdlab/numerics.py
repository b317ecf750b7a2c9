"""Dense float64 building blocks: matmul, MLP layers with explicit backward
passes, a SplitMix64 random stream and a central-difference gradient oracle.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Layers accept a
single vector ``(in,)`` or a batch ``(n, in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

IDENTITY = "identity"
RELU = "relu"
_ACTIVATIONS = (IDENTITY, RELU)

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class ShapeError(ValueError):
    """Operand dimensions are inconsistent."""


class NumericError(ArithmeticError):
    """A computation produced or consumed a non-finite value."""


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1 and rows is not None and cols is not None:
        if a.size != rows * cols:
            raise ShapeError(f"{a.size} values cannot fill a {rows}x{cols} matrix")
        a = a.reshape(rows, cols)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite entries")
    return out


@dataclass
class MlpLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = RELU

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: "Rng", activation: str = RELU) -> "MlpLayer":
        """He-scaled Gaussian weights, zero bias."""
        scale = np.sqrt(2.0 / n_in) if activation == RELU else np.sqrt(1.0 / n_in)
        w = rng.normal((n_out, n_in)) * scale
        return cls(w, np.zeros(n_out), activation)

    def copy(self) -> "MlpLayer":
        return MlpLayer(self.weight.copy(), self.bias.copy(), self.activation)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_slope(z: np.ndarray, kind: str) -> np.ndarray:
    # slope 0 at z == 0 keeps a pruned (all-zero) unit out of every update
    if kind == RELU:
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def _check_input(layer: MlpLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != layer.n_in:
        raise ShapeError(f"input shape {x.shape} does not match layer input {layer.n_in}")
    return x


def mlp_forward(layer: MlpLayer, x) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(y, z)`` where ``z = W x + b`` and ``y = act(z)``."""
    x = _check_input(layer, x)
    z = x @ layer.weight.T + layer.bias
    return _activate(z, layer.activation), z


def mlp_backward(layer: MlpLayer, x, upstream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * y)`` w.r.t. weight, bias and input.

    For a batch the parameter gradients are summed over rows.
    """
    x = _check_input(layer, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = x.shape[:-1] + (layer.n_out,)
    if upstream.shape != expected:
        raise ShapeError(f"upstream shape {upstream.shape}, expected {expected}")
    z = x @ layer.weight.T + layer.bias
    gz = upstream * _activation_slope(z, layer.activation)
    if x.ndim == 1:
        grad_w = np.outer(gz, x)
        grad_b = gz.copy()
    else:
        grad_w = gz.T @ x
        grad_b = gz.sum(axis=0)
    grad_x = gz @ layer.weight
    return grad_w, grad_b, grad_x


def fd_gradient(f: Callable[[np.ndarray], float], theta, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``theta``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    theta = np.array(theta, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(theta))
        flat[i] = orig - h
        down = float(f(theta))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite objective while perturbing coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(theta.shape)


def relative_error(a, b) -> float:
    """Norm-wise relative difference; 0 when both vectors vanish."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def _splitmix(counter: np.ndarray) -> np.ndarray:
    z = counter.copy()
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass
class Rng:
    """SplitMix64 stream. Draws are vectorised: the ``i``-th output is the
    mix of ``seed + i * gamma`` so a bulk draw equals repeated scalar draws."""

    seed: int
    state: int = field(init=False)

    def __post_init__(self):
        self.state = int(self.seed) & _MASK64

    def next_u64(self, n: int = 1) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            counters = np.uint64(self.state) + steps * _GAMMA
            out = _splitmix(counters)
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        return out

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws on [0, 1) with 53 random bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[:pairs]  # (0, 1]
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return out[:n].reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, high: int, size) -> np.ndarray:
        """Integers in ``[0, high)``."""
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream; does not advance this stream."""
        with np.errstate(over="ignore"):
            mixed = _splitmix(np.array([(self.state ^ (key * 0xD1B54A32D192ED03)) & _MASK64],
                                       dtype=np.uint64))
        return Rng(int(mixed[0]))


def ceil_count(fraction: float, n: int) -> int:
    """``ceil(fraction * n)`` without float round-up (0.02 * 100 -> 2, not 3)."""
    return int(np.ceil(fraction * n - 1e-9))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy and its gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    if n == 0:
        raise ValueError("cross-entropy of an empty batch")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n
