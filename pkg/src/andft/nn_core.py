"""Small dense networks with hand-written backprop, plus the losses used by the trainers.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``y = x @ W + b``. Hidden layers use ReLU, the output layer is linear.
Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
from typing import Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes do not line up with a network or each other."""


class InvalidSpecError(ValueError):
    pass


class NumericError(FloatingPointError):
    """Raised when a NaN/Inf shows up in a loss, gradient, or parameter."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        dims = self.layer_dims
        if any(int(d) <= 0 for d in dims):
            raise InvalidSpecError(f"all layer dims must be positive, got {dims}")
        if self.activation != "relu":
            raise InvalidSpecError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def num_params(self) -> int:
        dims = self.layer_dims
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass
class ParameterSet:
    """Ordered, named float64 arrays.

    Two sets built from the same spec are index-aligned, so they can be
    combined element-wise (``a + b``, ``0.5 * a``) and compared.
    """

    names: list[str]
    arrays: list[np.ndarray]

    def __post_init__(self):
        if len(self.names) != len(self.arrays):
            raise ShapeError("names and arrays must have equal length")
        self.arrays = [np.asarray(a, dtype=np.float64) for a in self.arrays]

    def __len__(self) -> int:
        return len(self.arrays)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.arrays)

    def items(self):
        return zip(self.names, self.arrays)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def _check_aligned(self, other: "ParameterSet") -> None:
        if self.shapes != other.shapes:
            raise ShapeError(f"parameter sets not aligned: {self.shapes} vs {other.shapes}")

    def copy(self) -> "ParameterSet":
        return ParameterSet(list(self.names), [a.copy() for a in self.arrays])

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(list(self.names), [np.zeros_like(a) for a in self.arrays])

    def __add__(self, other: "ParameterSet") -> "ParameterSet":
        self._check_aligned(other)
        return ParameterSet(list(self.names), [a + b for a, b in zip(self.arrays, other.arrays)])

    def __sub__(self, other: "ParameterSet") -> "ParameterSet":
        self._check_aligned(other)
        return ParameterSet(list(self.names), [a - b for a, b in zip(self.arrays, other.arrays)])

    def __mul__(self, scalar: float) -> "ParameterSet":
        return ParameterSet(list(self.names), [scalar * a for a in self.arrays])

    __rmul__ = __mul__

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays]) if self.arrays else np.zeros(0)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays)

    def equals(self, other: "ParameterSet") -> bool:
        """Bitwise equality of every array."""
        if self.shapes != other.shapes:
            return False
        return all(a.tobytes() == b.tobytes() for a, b in zip(self.arrays, other.arrays))

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays:
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass
class Network:
    spec: NetworkSpec
    params: ParameterSet

    @property
    def num_layers(self) -> int:
        return len(self.spec.layer_dims) - 1

    def weights(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        return self.params.arrays[2 * layer], self.params.arrays[2 * layer + 1]

    def copy(self) -> "Network":
        return Network(self.spec, self.params.copy())


@dataclass
class GradientBundle:
    param_grads: ParameterSet
    input_grads: np.ndarray


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations saved by :func:`forward`."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)


def init_network(spec: NetworkSpec, seed: int) -> Network:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    names, arrays = [], []
    dims = spec.layer_dims
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        names += [f"W{i}", f"b{i}"]
        arrays += [rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)]
    return Network(spec, ParameterSet(names, arrays))


def _as_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ShapeError(f"expected batch of shape (n, {net.spec.input_dim}), got {x.shape}")
    return x


def forward(net: Network, batch, return_cache: bool = False):
    x = _as_batch(net, batch)
    cache = ForwardCache()
    h = x
    last = net.num_layers - 1
    for layer in range(net.num_layers):
        W, b = net.weights(layer)
        z = h @ W + b
        cache.inputs.append(h)
        cache.preacts.append(z)
        h = np.maximum(z, 0.0) if layer < last else z
    if return_cache:
        return h, cache
    return h


def backward(net: Network, batch, output_grad, cache: ForwardCache | None = None) -> GradientBundle:
    """Gradients of ``sum(forward(net, batch) * output_grad)``.

    Pass the cache from a prior ``forward(..., return_cache=True)`` to avoid
    recomputing activations.
    """
    x = _as_batch(net, batch)
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != (x.shape[0], net.spec.output_dim):
        raise ShapeError(f"output_grad shape {g.shape} does not match ({x.shape[0]}, {net.spec.output_dim})")
    if cache is None:
        _, cache = forward(net, x, return_cache=True)

    grads: list[np.ndarray] = [None] * len(net.params)  # type: ignore[list-item]
    last = net.num_layers - 1
    for layer in range(last, -1, -1):
        if layer < last:
            g = g * (cache.preacts[layer] > 0)
        W, _ = net.weights(layer)
        grads[2 * layer] = cache.inputs[layer].T @ g
        grads[2 * layer + 1] = g.sum(axis=0)
        g = g @ W.T
    return GradientBundle(ParameterSet(list(net.params.names), grads), g)


def sgd_step(params: ParameterSet, grads: ParameterSet, lr: float) -> ParameterSet:
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    params._check_aligned(grads)
    if not grads.all_finite():
        raise NumericError("non-finite gradient passed to sgd_step")
    return ParameterSet(list(params.names), [p - lr * g for p, g in zip(params.arrays, grads.arrays)])


def _check_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ShapeError(f"logits must be a nonempty (n, C) array, got shape {z.shape}")
    return z


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean multi-class cross-entropy and its gradient w.r.t. the logits."""
    z = _check_logits(logits)
    y = np.asarray(labels)
    n, C = z.shape
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match batch size {n}")
    if np.any(y < 0) or np.any(y >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    y = y.astype(np.intp)
    logp = log_softmax(z)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return float(loss), grad / n


def negative_entropy(logits) -> tuple[float, np.ndarray]:
    """Mean of sum_c p_c log p_c over rows; lies in [-log C, 0]."""
    z = _check_logits(logits)
    n, C = z.shape
    if C < 2:
        raise ValueError("negative entropy needs at least 2 classes")
    logp = log_softmax(z)
    p = np.exp(logp)
    plogp = p * logp  # p underflows to exactly 0 before logp goes infinite
    row = plogp.sum(axis=1, keepdims=True)
    loss = float(row.mean())
    grad = (plogp - p * row) / n
    return loss, grad


def detection_loss(class_logits, box_preds, class_ids, boxes, loc_weight: float = 1.0):
    """Classification cross-entropy plus ``loc_weight`` times box MSE.

    Returns ``(loss, class_logit_grads, box_grads)``.
    """
    z = _check_logits(class_logits)
    b = np.asarray(box_preds, dtype=np.float64)
    t = np.asarray(boxes, dtype=np.float64)
    n = z.shape[0]
    if b.shape != (n, 4) or t.shape != (n, 4):
        raise ShapeError(f"box arrays must be ({n}, 4), got {b.shape} and {t.shape}")
    if loc_weight < 0:
        raise ValueError("loc_weight must be nonnegative")
    cls_loss, cls_grad = cross_entropy(z, class_ids)
    diff = b - t
    loc_loss = float(np.mean(diff**2))
    box_grad = loc_weight * 2.0 * diff / diff.size
    return cls_loss + loc_weight * loc_loss, cls_grad, box_grad


def batch_accuracy(logits, labels) -> float:
    z = np.asarray(logits)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("batch_accuracy needs a nonempty (n, C) batch")
    if y.shape != (z.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match batch size {z.shape[0]}")
    # np.argmax already returns the first maximal index
    return float(np.mean(np.argmax(z, axis=1) == y))


def stack_params(sets: Sequence[ParameterSet]) -> ParameterSet:
    """Concatenate several parameter sets into one (e.g. all nuisance heads)."""
    names, arrays = [], []
    for i, ps in enumerate(sets):
        names += [f"{i}.{name}" for name in ps.names]
        arrays += ps.arrays
    return ParameterSet(names, arrays)


def split_params(stacked: ParameterSet, like: Sequence[ParameterSet]) -> list[ParameterSet]:
    out, pos = [], 0
    for ps in like:
        k = len(ps)
        out.append(ParameterSet(list(ps.names), stacked.arrays[pos : pos + k]))
        pos += k
    return out
