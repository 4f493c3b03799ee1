"""Baseline, NDFT and A-NDFT training loops.

All three share the same players: a backbone ``f_T``, a detection head ``f_O``
reading backbone features, and ``k`` nuisance heads ``f_N,i`` that try to
recover the nuisance labels from the same features. ``theta_U`` means the
backbone plus detection head; ``theta_N`` means all nuisance heads.

* baseline: detection loss only.
* NDFT: adversarial joint step on ``theta_U``, then a monitored inner loop
  that keeps training ``theta_N`` on fresh minibatches (one extra backbone
  forward each) until every head beats accuracy ``alpha``, plus a periodic
  re-initialisation of ``theta_N`` every ``psi`` iterations.
* A-NDFT: one backbone forward per iteration. Its features are pushed into
  a replay queue, reused for the joint step, reused again for a damped
  (EMA) nuisance step, and every ``phi`` iterations the whole queue is
  replayed through ``theta_N`` with plain SGD.

Iterations are numbered from 1, so the periodic ``psi``/``phi`` events fire
after every ``psi``/``phi`` completed iterations and never fire when the
period exceeds ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import time
from typing import Callable, Sequence

import numpy as np

from .data_synth import Dataset, Split
from .nn_core import (
    Network,
    NetworkSpec,
    NumericError,
    ParameterSet,
    backward,
    batch_accuracy,
    cross_entropy,
    detection_loss,
    forward,
    init_network,
    negative_entropy,
    sgd_step,
)
from .replay import ReplayQueue

log = logging.getLogger(__name__)

ADVERSARIAL_MODES = ("negative_entropy", "gradient_reversal")

# stream ids for np.random.SeedSequence([seed, stream])
_INIT, _DATA, _INNER, _REINIT, _QUEUE = range(5)


@dataclass
class TrainConfig:
    """Hyperparameters shared by every trainer. The baseline uses this directly."""

    gammas: tuple[float, ...] = (0.01, 0.01, 0.01)
    T: int = 2000
    eta_u: float = 0.05
    eta_n: float = 0.05
    n: int = 32
    adversarial_mode: str = "negative_entropy"
    loc_weight: float = 1.0
    backbone_hidden: tuple[int, ...] = (128,)
    feature_dim: int = 64
    nuisance_hidden: tuple[int, ...] = ()
    seed: int = 0

    def validate(self, k: int | None = None) -> None:
        if k is not None and len(self.gammas) != k:
            raise ValueError(f"gammas: need one weight per nuisance ({k}), got {len(self.gammas)}")
        if any(g < 0 for g in self.gammas):
            raise ValueError("gammas: weights must be nonnegative")
        if self.T < 0:
            raise ValueError(f"T: must be nonnegative, got {self.T}")
        if self.eta_u < 0 or self.eta_n < 0:
            raise ValueError("eta_u/eta_n: learning rates must be nonnegative")
        if self.n <= 0:
            raise ValueError(f"n: batch size must be positive, got {self.n}")
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ValueError(f"adversarial_mode: expected one of {ADVERSARIAL_MODES}, got {self.adversarial_mode!r}")
        if self.loc_weight < 0:
            raise ValueError("loc_weight: must be nonnegative")


@dataclass
class NdftConfig(TrainConfig):
    alpha: float = 0.6
    psi: int = 500
    max_inner_iters: int = 50

    def validate(self, k: int | None = None) -> None:
        super().validate(k)
        if not self.alpha < 1:
            raise ValueError(f"alpha: must be < 1, got {self.alpha}")
        if self.psi <= 0:
            raise ValueError(f"psi: must be positive, got {self.psi}")
        if self.max_inner_iters <= 0:
            raise ValueError(f"max_inner_iters: must be positive, got {self.max_inner_iters}")


@dataclass
class AndftConfig(TrainConfig):
    s: int = 256
    beta: float = 0.99
    phi: int = 325

    def validate(self, k: int | None = None) -> None:
        super().validate(k)
        if self.s < self.n:
            raise ValueError(f"s: queue capacity {self.s} smaller than batch size {self.n}")
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta: must lie in [0, 1], got {self.beta}")
        if self.phi <= 0:
            raise ValueError(f"phi: must be positive, got {self.phi}")


@dataclass
class Counters:
    backbone_forwards: int = 0
    nuisance_sgd_steps: int = 0
    reinit_count: int = 0
    full_pass_count: int = 0


@dataclass
class IterationMetrics:
    t: int
    loss_o: float
    adv_loss: float
    acc_n: tuple[float, ...]
    backbone_forwards_this_iter: int = 0
    backbone_forwards_total: int = 0
    elapsed_seconds: float = 0.0
    inner_iters: int = 0


@dataclass
class Batch:
    X: np.ndarray  # (n, H*W) float64
    class_ids: np.ndarray
    boxes: np.ndarray
    nuisances: np.ndarray  # (n, k)

    @classmethod
    def from_split(cls, split: Split, idx) -> "Batch":
        return cls(
            split.flat_images(idx),
            split.class_ids[idx],
            split.boxes[idx].astype(np.float64),
            split.nuisances[idx],
        )


class BatchSampler:
    """Epoch-wise shuffled minibatches of indices into a split."""

    def __init__(self, M: int, n: int, rng: np.random.Generator):
        if n > M:
            raise ValueError(f"batch size {n} exceeds dataset size {M}")
        self.M, self.n, self.rng = M, n, rng
        self._perm = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.n > len(self._perm):
            self._perm = self.rng.permutation(self.M)
            self._pos = 0
        idx = self._perm[self._pos : self._pos + self.n]
        self._pos += self.n
        return idx


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


@dataclass
class TrainState:
    backbone: Network
    det_head: Network
    nuisance_heads: list[Network]
    num_classes: int
    t: int = 0
    counters: Counters = field(default_factory=Counters)
    rngs: dict[str, np.random.Generator] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.nuisance_heads)

    def theta_u(self) -> list[ParameterSet]:
        return [self.backbone.params, self.det_head.params]

    def theta_n(self) -> list[ParameterSet]:
        return [h.params for h in self.nuisance_heads]

    def features(self, X) -> np.ndarray:
        """Backbone forward for inference; not counted as training compute."""
        return forward(self.backbone, X)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        out = forward(self.det_head, self.features(X))
        return np.argmax(out[:, : self.num_classes], axis=1), out[:, self.num_classes :]


def nuisance_head_spec(feature_dim: int, cardinality: int, hidden: Sequence[int]) -> NetworkSpec:
    return NetworkSpec(feature_dim, tuple(hidden), cardinality)


def init_state(input_dim: int, num_classes: int, cardinalities: Sequence[int], config: TrainConfig) -> TrainState:
    """Build all networks from ``config.seed``; identical across trainer kinds."""
    init_rng = _stream(config.seed, _INIT)
    backbone = init_network(NetworkSpec(input_dim, config.backbone_hidden, config.feature_dim), _draw_seed(init_rng))
    det_head = init_network(NetworkSpec(config.feature_dim, (), num_classes + 4), _draw_seed(init_rng))
    heads = [
        init_network(nuisance_head_spec(config.feature_dim, c, config.nuisance_hidden), _draw_seed(init_rng))
        for c in cardinalities
    ]
    rngs = {
        "data": _stream(config.seed, _DATA),
        "inner": _stream(config.seed, _INNER),
        "reinit": _stream(config.seed, _REINIT),
        "queue": _stream(config.seed, _QUEUE),
    }
    return TrainState(backbone, det_head, heads, num_classes, rngs=rngs)


def extract_features(state: TrainState, X):
    """Counted backbone forward; returns features and the cache for backprop."""
    F, cache = forward(state.backbone, X, return_cache=True)
    state.counters.backbone_forwards += 1
    return F, cache


def _finite(value: float, term: str, t: int) -> float:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {term} at iteration {t}")
    return value


@dataclass
class JointGradients:
    loss: float  # L_O + sum_i gamma_i * A_i
    backbone: ParameterSet
    det_head: ParameterSet
    metrics: IterationMetrics
    features: np.ndarray


def joint_gradients(state: TrainState, batch: Batch, config: TrainConfig, features=None) -> JointGradients:
    """Gradients of the ``theta_U`` objective without applying them.

    The adversarial term per head is the negative entropy of its softmax, or
    minus its cross-entropy in ``gradient_reversal`` mode. Nuisance heads act
    as frozen functions: only their input gradients are used. ``features``
    may be a ``(F, cache)`` pair from :func:`extract_features` to reuse an
    already-counted forward.
    """
    if features is None:
        F, cache = extract_features(state, batch.X)
    else:
        F, cache = features
    C = state.num_classes

    out, det_cache = forward(state.det_head, F, return_cache=True)
    loss_o, g_cls, g_box = detection_loss(out[:, :C], out[:, C:], batch.class_ids, batch.boxes, config.loc_weight)
    _finite(loss_o, "detection loss", state.t)
    det_grads = backward(state.det_head, F, np.concatenate([g_cls, g_box], axis=1), det_cache)
    dF = det_grads.input_grads

    total = loss_o
    adv_total = 0.0
    accs = []
    for i, head in enumerate(state.nuisance_heads):
        logits, head_cache = forward(head, F, return_cache=True)
        accs.append(batch_accuracy(logits, batch.nuisances[:, i]))
        if config.adversarial_mode == "negative_entropy":
            a, g = negative_entropy(logits)
        else:
            ce, g = cross_entropy(logits, batch.nuisances[:, i])
            a, g = -ce, -g
        adv_total += _finite(a, f"adversarial loss of nuisance {i}", state.t)
        gamma = config.gammas[i]
        # skipping zero weights keeps gamma=0 runs bitwise equal to the baseline
        if gamma != 0:
            total += gamma * a
            dF = dF + backward(head, F, gamma * g, head_cache).input_grads

    bb_grads = backward(state.backbone, batch.X, dF, cache)
    metrics = IterationMetrics(state.t, loss_o, adv_total, tuple(accs))
    return JointGradients(total, bb_grads.param_grads, det_grads.param_grads, metrics, F)


def joint_update(state: TrainState, batch: Batch, config: TrainConfig, features=None):
    """One SGD step on ``theta_U`` (backbone + detection head). Returns ``(metrics, F)``."""
    jg = joint_gradients(state, batch, config, features)
    state.backbone.params = sgd_step(state.backbone.params, jg.backbone, config.eta_u)
    state.det_head.params = sgd_step(state.det_head.params, jg.det_head, config.eta_u)
    return jg.metrics, jg.features


def nuisance_gradients(state: TrainState, F, labels) -> tuple[float, list[ParameterSet]]:
    """Gradient of ``sum_i L_N,i`` w.r.t. each head's own parameters."""
    labels = np.asarray(labels).reshape(len(F), -1)
    total = 0.0
    grads = []
    for i, head in enumerate(state.nuisance_heads):
        logits, cache = forward(head, F, return_cache=True)
        loss, g = cross_entropy(logits, labels[:, i])
        total += _finite(loss, f"nuisance loss {i}", state.t)
        grads.append(backward(head, F, g, cache).param_grads)
    return total, grads


def nuisance_sgd_step(state: TrainState, F, labels, lr: float) -> float:
    loss, grads = nuisance_gradients(state, F, labels)
    for head, g in zip(state.nuisance_heads, grads):
        head.params = sgd_step(head.params, g, lr)
    state.counters.nuisance_sgd_steps += 1
    return loss


def ema_step(params: ParameterSet, grads: ParameterSet, beta: float, lr: float) -> ParameterSet:
    """``beta * theta + (1 - beta) * (theta - lr * g)``, evaluated as written."""
    if not grads.all_finite():
        raise NumericError("non-finite gradient in EMA update")
    stepped = sgd_step(params, grads, lr)
    return beta * params + (1.0 - beta) * stepped


def ema_nuisance_update(state: TrainState, F, labels, config: AndftConfig) -> float:
    """Slow-learner step on ``theta_N`` using already-computed features."""
    loss, grads = nuisance_gradients(state, F, labels)
    for head, g in zip(state.nuisance_heads, grads):
        head.params = ema_step(head.params, g, config.beta, config.eta_n)
    state.counters.nuisance_sgd_steps += 1
    return loss


def monitor_and_update_nuisance(state: TrainState, split: Split, sampler: BatchSampler, config: NdftConfig) -> int:
    """Train ``theta_N`` until every head's batch accuracy exceeds ``alpha``.

    Each check draws a fresh minibatch and runs the backbone on it. Returns
    the number of inner iterations, which equals the backbone forwards spent.
    """
    if config.alpha < 0:
        return 0  # accuracy >= 0 > alpha: the condition can never hold
    for it in range(config.max_inner_iters):
        batch = Batch.from_split(split, sampler.next())
        F, _ = extract_features(state, batch.X)
        worst = min(
            batch_accuracy(forward(h, F), batch.nuisances[:, i]) for i, h in enumerate(state.nuisance_heads)
        )
        if worst > config.alpha:
            return it + 1
        nuisance_sgd_step(state, F, batch.nuisances, config.eta_n)
    log.warning(
        "iteration %d: nuisance monitor hit max_inner_iters=%d before all heads exceeded alpha=%g",
        state.t,
        config.max_inner_iters,
        config.alpha,
    )
    return config.max_inner_iters


def reinit_nuisance_if_due(state: TrainState, psi: int) -> bool:
    if state.t % psi != 0:
        return False
    rng = state.rngs["reinit"]
    state.nuisance_heads = [init_network(h.spec, _draw_seed(rng)) for h in state.nuisance_heads]
    state.counters.reinit_count += 1
    return True


def full_queue_retrain_if_due(state: TrainState, queue: ReplayQueue, phi: int, eta_n: float, n: int) -> bool:
    """Every ``phi`` iterations, one plain-SGD pass of ``theta_N`` over the whole queue."""
    if state.t % phi != 0:
        return False
    if len(queue) < n:
        log.warning("iteration %d: replay queue holds %d < %d items, skipping full pass", state.t, len(queue), n)
        return False
    for F, Y in queue.full_pass_minibatches(n, state.rngs["queue"]):
        nuisance_sgd_step(state, F, Y, eta_n)
    state.counters.full_pass_count += 1
    return True


@dataclass
class TrainResult:
    state: TrainState
    metrics: list[IterationMetrics]


Callback = Callable[[TrainState, IterationMetrics], None]


def _train_split(data) -> Split:
    # trainers only ever see the training split
    return data.train if isinstance(data, Dataset) else data


def _run(state: TrainState, config: TrainConfig, step: Callable[[], IterationMetrics], callback: Callback | None):
    history: list[IterationMetrics] = []
    elapsed = 0.0
    try:
        for _ in range(config.T):
            t0 = time.perf_counter()
            state.t += 1
            before = state.counters.backbone_forwards
            m = step()
            m.t = state.t
            m.backbone_forwards_this_iter = state.counters.backbone_forwards - before
            m.backbone_forwards_total = state.counters.backbone_forwards
            elapsed += time.perf_counter() - t0
            m.elapsed_seconds = elapsed
            history.append(m)
            if callback is not None:
                callback(state, m)
    except NumericError as e:
        e.metrics = history
        e.state = state
        raise
    return TrainResult(state, history)


def _setup(data, config: TrainConfig):
    split = _train_split(data)
    k = split.nuisances.shape[1]
    config.validate(k)
    if isinstance(data, Dataset):
        cards, num_classes = data.spec.cardinalities, data.spec.C
    else:
        # bare split: infer label ranges from what is present
        cards = [int(split.nuisances[:, i].max()) + 1 for i in range(k)]
        num_classes = int(split.class_ids.max()) + 1
    state = init_state(split.images[0].size, num_classes, cards, config)
    sampler = BatchSampler(len(split), config.n, state.rngs["data"])
    return split, state, sampler


def train_baseline(data, config: TrainConfig, callback: Callback | None = None) -> TrainResult:
    """Pure detection training; any nonzero ``gammas`` are zeroed."""
    config = replace(config, gammas=tuple(0.0 for _ in config.gammas))
    split, state, sampler = _setup(data, config)

    def step():
        m, _ = joint_update(state, Batch.from_split(split, sampler.next()), config)
        return m

    return _run(state, config, step, callback)


def train_ndft(data, config: NdftConfig, callback: Callback | None = None) -> TrainResult:
    split, state, sampler = _setup(data, config)
    inner = BatchSampler(len(split), config.n, state.rngs["inner"])

    def step():
        m, _ = joint_update(state, Batch.from_split(split, sampler.next()), config)
        m.inner_iters = monitor_and_update_nuisance(state, split, inner, config)
        reinit_nuisance_if_due(state, config.psi)
        return m

    return _run(state, config, step, callback)


def train_andft(data, config: AndftConfig, callback: Callback | None = None) -> TrainResult:
    split, state, sampler = _setup(data, config)
    queue = ReplayQueue(config.s, config.feature_dim)

    def step():
        batch = Batch.from_split(split, sampler.next())
        F, cache = extract_features(state, batch.X)
        queue.enqueue_batch(F, batch.nuisances)
        m, _ = joint_update(state, batch, config, features=(F, cache))
        ema_nuisance_update(state, *queue.latest_batch(config.n), config)
        full_queue_retrain_if_due(state, queue, config.phi, config.eta_n, config.n)
        return m

    result = _run(state, config, step, callback)
    assert state.counters.backbone_forwards == config.T
    return result


TRAINERS = {"baseline": train_baseline, "ndft": train_ndft, "andft": train_andft}
