"""Adversarial nuisance disentanglement trainers: baseline, NDFT and A-NDFT."""

from .data_synth import Dataset, DatasetSpec, NuisanceSpec, generate_dataset, load_dataset, save_dataset
from .evaluation import EvalReport, ProbeConfig, evaluate, iou, probe_invariance
from .replay import ReplayQueue
from .trainers import (
    AndftConfig,
    NdftConfig,
    TrainConfig,
    TrainResult,
    TrainState,
    train_andft,
    train_baseline,
    train_ndft,
)

__version__ = "0.1.0"
