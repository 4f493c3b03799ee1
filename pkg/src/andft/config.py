"""Flat JSON run configuration shared by every CLI command."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import json
from pathlib import Path

from .data_synth import DatasetSpec, NuisanceSpec, default_nuisances
from .trainers import AndftConfig, NdftConfig, TrainConfig

TRAINER_KINDS = ("baseline", "ndft", "andft")


class ConfigError(ValueError):
    """Bad config content. The message starts with the offending key."""


@dataclass
class RunConfig:
    trainer: str = "andft"
    seed: int = 0
    output_dir: str = "runs"
    dataset_dir: str = "runs/data"

    # dataset
    H: int = 16
    W: int = 16
    C: int = 3
    nuisances: list = field(default_factory=lambda: [asdict(nu) for nu in default_nuisances()])
    M_train: int = 4000
    M_test: int = 2000
    data_seed: int = 0

    # shared training
    gammas: list = field(default_factory=lambda: [0.01, 0.01, 0.01])
    T: int | None = None
    epochs: int = 16
    n: int = 32
    eta_u: float = 0.05
    eta_n: float = 0.05
    adversarial_mode: str = "negative_entropy"
    loc_weight: float = 1.0
    backbone_hidden: list = field(default_factory=lambda: [128])
    feature_dim: int = 64
    nuisance_hidden: list = field(default_factory=list)

    # NDFT
    alpha: float = 0.6
    psi: int = 500
    max_inner_iters: int = 50

    # A-NDFT
    s: int = 256
    beta: float = 0.99
    phi: int = 325

    # evaluation
    eval_every: int = 100
    iou_thresh: float = 0.5

    @property
    def num_iterations(self) -> int:
        if self.T is not None:
            return self.T
        return self.epochs * self.M_train // self.n

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            H=self.H,
            W=self.W,
            C=self.C,
            nuisances=[NuisanceSpec(**nu) for nu in self.nuisances],
            M_train=self.M_train,
            M_test=self.M_test,
            seed=self.data_seed,
        )

    def train_config(self, trainer: str | None = None) -> TrainConfig:
        trainer = trainer or self.trainer
        common = dict(
            gammas=tuple(float(g) for g in self.gammas),
            T=self.num_iterations,
            eta_u=self.eta_u,
            eta_n=self.eta_n,
            n=self.n,
            adversarial_mode=self.adversarial_mode,
            loc_weight=self.loc_weight,
            backbone_hidden=tuple(self.backbone_hidden),
            feature_dim=self.feature_dim,
            nuisance_hidden=tuple(self.nuisance_hidden),
            seed=self.seed,
        )
        if trainer == "ndft":
            return NdftConfig(**common, alpha=self.alpha, psi=self.psi, max_inner_iters=self.max_inner_iters)
        if trainer == "andft":
            return AndftConfig(**common, s=self.s, beta=self.beta, phi=self.phi)
        return TrainConfig(**common)

    def validate(self) -> None:
        if self.trainer not in TRAINER_KINDS:
            raise ConfigError(f"trainer: expected one of {TRAINER_KINDS}, got {self.trainer!r}")
        if self.eval_every <= 0:
            raise ConfigError("eval_every: must be positive")
        if not 0 < self.iou_thresh <= 1:
            raise ConfigError("iou_thresh: must lie in (0, 1]")
        if self.epochs <= 0 and self.T is None:
            raise ConfigError("epochs: must be positive")
        try:
            spec = self.dataset_spec()
        except TypeError as e:
            raise ConfigError(f"nuisances: {e}") from e
        try:
            spec.validate()
            for kind in TRAINER_KINDS:
                self.train_config(kind).validate(spec.k)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"{key}: unknown config key")
        for key, value in d.items():
            _check_type(key, value, known[key].default)
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a JSON config. Relative paths inside it resolve against its directory."""
        path = Path(path)
        text = path.read_text()  # OSError propagates as an I/O failure
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"<file>: invalid JSON: {e}") from e
        cfg = cls.from_dict(d)
        base = path.parent
        for key in ("output_dir", "dataset_dir"):
            p = Path(getattr(cfg, key))
            if not p.is_absolute():
                setattr(cfg, key, str(base / p))
        return cfg


def _check_type(key, value, default) -> None:
    if key == "T":
        ok = value is None or (isinstance(value, int) and not isinstance(value, bool))
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, list)
    if not ok:
        raise ConfigError(f"{key}: wrong type {type(value).__name__}")
