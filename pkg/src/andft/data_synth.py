"""Synthetic single-object detection data with labelled nuisance factors.

Each sample is one grayscale image containing one shape (square, disc or
cross) inside a box, plus ``k`` categorical nuisance labels that change how
the image looks but are drawn independently of the class and the box.
Training-split nuisances follow a configurable (typically skewed) marginal;
the test split is uniform over every nuisance value, which creates the
domain shift the adversarial trainers are meant to handle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import os
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

FORMAT_VERSION = 1

BACKGROUND = 0.15
FOREGROUND = 0.85
BRIGHTNESS_OFFSETS = (0.0, -0.35)
BLUR_RADII = (0, 1, 2)
GRADIENT_AMPLITUDE = 0.2
NOISE_AMPLITUDE = 0.02
SHAPES = ("square", "disc", "cross")

EFFECT_LEVELS = {"brightness": len(BRIGHTNESS_OFFSETS), "blur": len(BLUR_RADII), "gradient": 3}

_BOX_TOL = 1e-6


class DatasetError(OSError):
    """Missing, truncated or inconsistent dataset directory."""


@dataclass
class NuisanceSpec:
    name: str
    cardinality: int
    train_marginal: list[float]
    effect: str

    def validate(self, where: str = "nuisance") -> None:
        if self.effect not in EFFECT_LEVELS:
            raise ValueError(f"{where}.effect: unknown effect {self.effect!r}")
        if self.cardinality < 2:
            raise ValueError(f"{where}.cardinality: must be >= 2, got {self.cardinality}")
        if self.cardinality > EFFECT_LEVELS[self.effect]:
            raise ValueError(
                f"{where}.cardinality: effect {self.effect!r} supports at most "
                f"{EFFECT_LEVELS[self.effect]} levels, got {self.cardinality}"
            )
        p = np.asarray(self.train_marginal, dtype=np.float64)
        if p.shape != (self.cardinality,):
            raise ValueError(f"{where}.train_marginal: needs {self.cardinality} entries, got {len(p)}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"{where}.train_marginal: must be nonnegative and sum to 1, sums to {p.sum():.6g}")


def default_nuisances() -> list[NuisanceSpec]:
    # brightness ~ weather (day/night), blur ~ altitude, gradient ~ camera view
    return [
        NuisanceSpec("brightness", 2, [0.9, 0.1], "brightness"),
        NuisanceSpec("blur", 3, [0.5, 0.3, 0.2], "blur"),
        NuisanceSpec("gradient", 3, [1 / 3, 1 / 3, 1 / 3], "gradient"),
    ]


@dataclass
class DatasetSpec:
    H: int = 16
    W: int = 16
    C: int = 3
    nuisances: list[NuisanceSpec] = field(default_factory=default_nuisances)
    M_train: int = 4000
    M_test: int = 2000
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.nuisances)

    @property
    def cardinalities(self) -> list[int]:
        return [nu.cardinality for nu in self.nuisances]

    def validate(self) -> None:
        if self.H <= 0 or self.W <= 0:
            raise ValueError(f"H, W: image dims must be positive, got {self.H}x{self.W}")
        if not 1 <= self.C <= len(SHAPES):
            raise ValueError(f"C: class count must be in [1, {len(SHAPES)}], got {self.C}")
        if self.M_train <= 0:
            raise ValueError(f"M_train: must be positive, got {self.M_train}")
        if self.M_test <= 0:
            raise ValueError(f"M_test: must be positive, got {self.M_test}")
        for i, nu in enumerate(self.nuisances):
            nu.validate(f"nuisances[{i}]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        d["nuisances"] = [NuisanceSpec(**nu) for nu in d.get("nuisances", [])]
        return cls(**d)


@dataclass(frozen=True)
class DetectionLabel:
    class_id: int
    box: tuple[float, float, float, float]  # cx, cy, w, h in [0, 1]


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    y_o: DetectionLabel
    y_n: tuple[int, ...]


@dataclass
class Split:
    """Column-oriented storage for one split; indexing yields :class:`Sample`."""

    images: np.ndarray  # (M, H, W) float32
    class_ids: np.ndarray  # (M,) int64
    boxes: np.ndarray  # (M, 4) float32
    nuisances: np.ndarray  # (M, k) int64

    def __len__(self) -> int:
        return len(self.class_ids)

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            self.images[i],
            DetectionLabel(int(self.class_ids[i]), tuple(float(v) for v in self.boxes[i])),
            tuple(int(v) for v in self.nuisances[i]),
        )

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    def flat_images(self, idx=None) -> np.ndarray:
        """Images as float64 rows of length H*W, optionally for a subset."""
        imgs = self.images if idx is None else self.images[idx]
        return imgs.reshape(len(imgs), -1).astype(np.float64)

    def subset(self, idx) -> "Split":
        return Split(self.images[idx], self.class_ids[idx], self.boxes[idx], self.nuisances[idx])

    def equals(self, other: "Split") -> bool:
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in [
                (self.images, other.images),
                (self.class_ids, other.class_ids),
                (self.boxes, other.boxes),
                (self.nuisances, other.nuisances),
            ]
        )


@dataclass
class Dataset:
    spec: DatasetSpec
    train: Split
    test: Split


def _check_box(box) -> None:
    cx, cy, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ValueError(f"box width/height must be positive, got {box}")
    if cx - w / 2 < -_BOX_TOL or cx + w / 2 > 1 + _BOX_TOL or cy - h / 2 < -_BOX_TOL or cy + h / 2 > 1 + _BOX_TOL:
        raise ValueError(f"box {box} is not inside the unit square")


def shape_mask(class_id: int, box, H: int, W: int) -> np.ndarray:
    cx, cy, w, h = (float(v) for v in box)
    ys = (np.arange(H) + 0.5) / H
    xs = (np.arange(W) + 0.5) / W
    dx = (xs[None, :] - cx) / (w / 2)
    dy = (ys[:, None] - cy) / (h / 2)
    inside = (np.abs(dx) <= 1) & (np.abs(dy) <= 1)
    if class_id == 0:
        return inside
    if class_id == 1:
        return dx**2 + dy**2 <= 1
    if class_id == 2:
        return inside & ((np.abs(dx) <= 1 / 3) | (np.abs(dy) <= 1 / 3))
    raise ValueError(f"unknown class_id {class_id}")


def _gradient_ramp(orientation: int, H: int, W: int) -> np.ndarray:
    ys = ((np.arange(H) + 0.5) / H)[:, None]
    xs = ((np.arange(W) + 0.5) / W)[None, :]
    if orientation == 0:
        ramp = np.broadcast_to(xs, (H, W))
    elif orientation == 1:
        ramp = np.broadcast_to(ys, (H, W))
    else:
        ramp = (xs + ys) / 2
    return GRADIENT_AMPLITUDE * ramp


def render_sample(class_id: int, box, nuisance: Sequence[int], spec: DatasetSpec, noise_seed: int | None) -> np.ndarray:
    """Draw one image as float32 in [0, 1].

    Effects run in a fixed order: brightness offset, box blur, gradient
    overlay, then additive uniform noise. ``noise_seed=None`` skips the noise.
    """
    _check_box(box)
    if not 0 <= class_id < spec.C:
        raise ValueError(f"class_id {class_id} outside [0, {spec.C})")
    if len(nuisance) != spec.k:
        raise ValueError(f"expected {spec.k} nuisance values, got {len(nuisance)}")
    for nu, v in zip(spec.nuisances, nuisance):
        if not 0 <= v < nu.cardinality:
            raise ValueError(f"nuisance {nu.name!r} value {v} outside [0, {nu.cardinality})")

    img = np.where(shape_mask(class_id, box, spec.H, spec.W), FOREGROUND, BACKGROUND)
    levels = {nu.effect: int(v) for nu, v in zip(spec.nuisances, nuisance)}
    if "brightness" in levels:
        img = np.clip(img + BRIGHTNESS_OFFSETS[levels["brightness"]], 0.0, 1.0)
    if "blur" in levels and BLUR_RADII[levels["blur"]] > 0:
        img = uniform_filter(img, size=2 * BLUR_RADII[levels["blur"]] + 1, mode="nearest")
    if "gradient" in levels:
        img = np.clip(img + _gradient_ramp(levels["gradient"], spec.H, spec.W), 0.0, 1.0)
    if noise_seed is not None:
        noise = np.random.default_rng(noise_seed).uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=img.shape)
        img = np.clip(img + noise, 0.0, 1.0)
    return img.astype(np.float32)


def _sample_seed(seed: int, split: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, split, i]).generate_state(1, dtype=np.uint64)[0])


def _generate_split(spec: DatasetSpec, M: int, split: int) -> Split:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, split]))
    class_ids = rng.integers(0, spec.C, size=M)
    w = rng.uniform(0.35, 0.7, size=M)
    h = rng.uniform(0.35, 0.7, size=M)
    # keep a margin so the box stays inside after the float32 cast
    cx = rng.uniform(w / 2 + 0.005, 1 - w / 2 - 0.005)
    cy = rng.uniform(h / 2 + 0.005, 1 - h / 2 - 0.005)
    boxes = np.stack([cx, cy, w, h], axis=1).astype(np.float32)

    nuis = np.zeros((M, spec.k), dtype=np.int64)
    for j, nu in enumerate(spec.nuisances):
        p = nu.train_marginal if split == 0 else np.full(nu.cardinality, 1.0 / nu.cardinality)
        nuis[:, j] = rng.choice(nu.cardinality, size=M, p=p)

    images = np.empty((M, spec.H, spec.W), dtype=np.float32)
    for i in range(M):
        images[i] = render_sample(int(class_ids[i]), boxes[i], nuis[i], spec, _sample_seed(spec.seed, split, i))
    return Split(images, class_ids.astype(np.int64), boxes, nuis)


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Train split uses each nuisance's ``train_marginal``; test split is uniform."""
    spec.validate()
    return Dataset(spec, _generate_split(spec, spec.M_train, 0), _generate_split(spec, spec.M_test, 1))


def record_dtype(H: int, W: int, k: int) -> np.dtype:
    return np.dtype(
        [("image", "<f4", (H * W,)), ("class_id", "<u2"), ("box", "<f4", (4,)), ("nuisance", "<u2", (k,))]
    )


def save_dataset(path, dataset: Dataset) -> None:
    """Write ``meta.json`` and ``samples.bin`` (train records, then test)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    spec = dataset.spec
    dt = record_dtype(spec.H, spec.W, spec.k)
    recs = np.zeros(len(dataset.train) + len(dataset.test), dtype=dt)
    pos = 0
    for split in (dataset.train, dataset.test):
        m = len(split)
        recs["image"][pos : pos + m] = split.images.reshape(m, -1)
        recs["class_id"][pos : pos + m] = split.class_ids
        recs["box"][pos : pos + m] = split.boxes
        recs["nuisance"][pos : pos + m] = split.nuisances
        pos += m
    meta = {
        "version": FORMAT_VERSION,
        "H": spec.H,
        "W": spec.W,
        "C": spec.C,
        "k": spec.k,
        "nuisances": [asdict(nu) for nu in spec.nuisances],
        "M_train": len(dataset.train),
        "M_test": len(dataset.test),
        "seed": spec.seed,
    }
    tmp = path / "samples.bin.tmp"
    tmp.write_bytes(recs.tobytes())
    os.replace(tmp, path / "samples.bin")
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as e:
        raise DatasetError(f"missing meta.json in {path}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"corrupt meta.json in {path}: {e}") from e
    try:
        if meta["version"] != FORMAT_VERSION:
            raise DatasetError(f"unsupported dataset version {meta['version']}")
        spec = DatasetSpec(
            H=int(meta["H"]),
            W=int(meta["W"]),
            C=int(meta["C"]),
            nuisances=[NuisanceSpec(**nu) for nu in meta["nuisances"]],
            M_train=int(meta["M_train"]),
            M_test=int(meta["M_test"]),
            seed=int(meta["seed"]),
        )
        if int(meta["k"]) != spec.k:
            raise DatasetError(f"meta.json k={meta['k']} but {spec.k} nuisances listed")
        spec.validate()
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, DatasetError):
            raise
        raise DatasetError(f"invalid meta.json in {path}: {e}") from e

    try:
        raw = (path / "samples.bin").read_bytes()
    except FileNotFoundError as e:
        raise DatasetError(f"missing samples.bin in {path}") from e
    dt = record_dtype(spec.H, spec.W, spec.k)
    total = spec.M_train + spec.M_test
    complete = len(raw) // dt.itemsize
    if len(raw) != total * dt.itemsize:
        if complete < total:
            raise DatasetError(
                f"samples.bin truncated: record {complete} is incomplete or missing "
                f"({len(raw)} bytes, expected {total * dt.itemsize} for {total} records of {dt.itemsize} bytes)"
            )
        raise DatasetError(
            f"samples.bin size {len(raw)} inconsistent with header: expected {total} records of {dt.itemsize} bytes"
        )
    recs = np.frombuffer(raw, dtype=dt)

    bad = np.nonzero(recs["class_id"] >= spec.C)[0]
    if len(bad):
        raise DatasetError(f"record {bad[0]}: class_id {recs['class_id'][bad[0]]} outside [0, {spec.C})")
    for j, nu in enumerate(spec.nuisances):
        bad = np.nonzero(recs["nuisance"][:, j] >= nu.cardinality)[0]
        if len(bad):
            raise DatasetError(f"record {bad[0]}: nuisance {nu.name!r} value out of range")
    bad = np.nonzero(~np.isfinite(recs["image"]).all(axis=1))[0]
    if len(bad):
        raise DatasetError(f"record {bad[0]}: non-finite pixel values")

    def split(lo: int, hi: int) -> Split:
        r = recs[lo:hi]
        return Split(
            r["image"].reshape(hi - lo, spec.H, spec.W).copy(),
            r["class_id"].astype(np.int64),
            r["box"].copy(),
            r["nuisance"].astype(np.int64).reshape(hi - lo, spec.k),
        )

    return Dataset(spec, split(0, spec.M_train), split(spec.M_train, total))
