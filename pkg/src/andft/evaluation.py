"""Detection accuracy, per-nuisance breakdowns and nuisance probes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import io
from typing import Callable, Sequence

import numpy as np

from .data_synth import Dataset, DatasetSpec, Split
from .nn_core import Network, backward, cross_entropy, forward, init_network, sgd_step
from .trainers import BatchSampler, nuisance_head_spec


def iou(box_a, box_b) -> float:
    """Intersection over union of two ``(cx, cy, w, h)`` boxes."""
    return float(iou_batch(np.asarray(box_a, dtype=np.float64)[None], np.asarray(box_b, dtype=np.float64)[None])[0])


def iou_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a[:, 2:] <= 0) or np.any(b[:, 2:] <= 0):
        raise ValueError("box width and height must be positive")
    a_lo, a_hi = a[:, :2] - a[:, 2:] / 2, a[:, :2] + a[:, 2:] / 2
    b_lo, b_hi = b[:, :2] - b[:, 2:] / 2, b[:, :2] + b[:, 2:] / 2
    wh = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    inter = wh[:, 0] * wh[:, 1]
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return inter / union


@dataclass
class Cell:
    nuisance: str
    value: int
    count: int
    accuracy: float | None  # None for an empty cell


@dataclass
class EvalReport:
    overall_accuracy: float
    count: int
    cells: list[Cell] = field(default_factory=list)

    def cell(self, nuisance: str, value: int) -> Cell:
        for c in self.cells:
            if c.nuisance == nuisance and c.value == value:
                return c
        raise KeyError((nuisance, value))

    def rows(self) -> list[tuple]:
        out = [(c.nuisance, c.value, c.count, c.accuracy) for c in self.cells]
        out.append(("overall", "", self.count, self.overall_accuracy))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_report_csv(buf, [((), self)])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report_csv(fh, reports: Sequence[tuple[tuple, EvalReport]], header_prefix: Sequence[str] = ()) -> None:
    """Write ``(nuisance, value, count, accuracy)`` rows plus an ``overall`` row per report."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([*header_prefix, "nuisance", "value", "count", "accuracy"])
    for prefix, rep in reports:
        for row in rep.rows():
            w.writerow([*prefix, *(_fmt(v) for v in row)])


def correct_mask(model, split: Split, iou_thresh: float = 0.5) -> np.ndarray:
    cls, boxes = model.predict(split.flat_images())
    boxes = np.asarray(boxes, dtype=np.float64)
    # a nonpositive predicted size cannot overlap anything
    ok = (boxes[:, 2] > 0) & (boxes[:, 3] > 0)
    ious = np.zeros(len(split))
    if ok.any():
        ious[ok] = iou_batch(boxes[ok], split.boxes[ok])
    return (np.asarray(cls) == split.class_ids) & (ious >= iou_thresh)


def evaluate(model, split: Split, spec: DatasetSpec, iou_thresh: float = 0.5) -> EvalReport:
    """Accuracy overall and for every (nuisance, value) cell of the split.

    ``model`` needs a ``predict(X) -> (class_ids, boxes)`` method taking flat
    float64 images. A prediction is correct when the class matches and the
    box IoU reaches ``iou_thresh``.
    """
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    correct = correct_mask(model, split, iou_thresh)
    cells = []
    for i, nu in enumerate(spec.nuisances):
        for v in range(nu.cardinality):
            sel = split.nuisances[:, i] == v
            cnt = int(sel.sum())
            cells.append(Cell(nu.name, v, cnt, float(correct[sel].mean()) if cnt else None))
    return EvalReport(float(correct.mean()), len(split), cells)


@dataclass
class ProbeConfig:
    epochs: int = 3
    lr: float = 0.05
    n: int = 32
    hidden: tuple[int, ...] = ()
    standardize: bool = True
    balanced: bool = True
    seed: int = 0


def _feature_fn(backbone) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(backbone, Network):
        return lambda X: forward(backbone, X)
    if hasattr(backbone, "features"):
        return backbone.features
    return backbone


def _class_weights(y: np.ndarray, card: int) -> np.ndarray:
    """Inverse-frequency weights; absent classes get weight 0."""
    counts = np.bincount(y, minlength=card).astype(np.float64)
    return np.where(counts > 0, len(y) / (card * np.maximum(counts, 1)), 0.0)


def probe_invariance(backbone, train: Split, test: Split, cardinalities: Sequence[int], config: ProbeConfig | None = None) -> list[float]:
    """Test accuracy of fresh nuisance classifiers trained on frozen features.

    ``backbone`` is a :class:`Network`, anything with ``features(X)``, or a
    plain callable. Accuracy near chance means the features carry little
    information about that nuisance.
    """
    config = config or ProbeConfig()
    feats = _feature_fn(backbone)
    F_train = np.asarray(feats(train.flat_images()), dtype=np.float64)
    F_test = np.asarray(feats(test.flat_images()), dtype=np.float64)
    if config.standardize:
        # train-split statistics only; constant columns stay constant
        mu, sd = F_train.mean(axis=0), F_train.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        F_train, F_test = (F_train - mu) / sd, (F_test - mu) / sd
    out = []
    for i, card in enumerate(cardinalities):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
        head = init_network(nuisance_head_spec(F_train.shape[1], card, config.hidden), int(rng.integers(2**63 - 1)))
        sampler = BatchSampler(len(train), min(config.n, len(train)), rng)
        steps = config.epochs * (len(train) // sampler.n)
        y = train.nuisances[:, i]
        weights = _class_weights(y, card) if config.balanced else np.ones(card)
        for _ in range(steps):
            idx = sampler.next()
            logits, cache = forward(head, F_train[idx], return_cache=True)
            _, g = cross_entropy(logits, y[idx])
            w = weights[y[idx]]
            g = g * (w / w.mean())[:, None]
            head.params = sgd_step(head.params, backward(head, F_train[idx], g, cache).param_grads, config.lr)
        pred = np.argmax(forward(head, F_test), axis=1)
        out.append(float(np.mean(pred == test.nuisances[:, i])))
    return out
