"""Checkpoint directory: ``header.json`` plus little-endian float64 ``params.bin``."""

from __future__ import annotations

from dataclasses import asdict
import json
from pathlib import Path

import numpy as np

from .nn_core import Network, NetworkSpec, ParameterSet
from .trainers import Counters, TrainState

CHECKPOINT_VERSION = 1


class CheckpointError(OSError):
    pass


def _networks(state: TrainState) -> list[tuple[str, Network]]:
    nets = [("backbone", state.backbone), ("det_head", state.det_head)]
    nets += [(f"nuisance_head_{i}", h) for i, h in enumerate(state.nuisance_heads)]
    return nets


def save_checkpoint(path, state: TrainState) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {
        "version": CHECKPOINT_VERSION,
        "num_classes": state.num_classes,
        "t": state.t,
        "counters": asdict(state.counters),
        "networks": [],
    }
    chunks, offset = [], 0
    for role, net in _networks(state):
        arrays = []
        for name, a in net.params.items():
            arrays.append({"name": name, "shape": list(a.shape), "offset": offset})
            chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
            offset += a.size * 8
        header["networks"].append(
            {
                "role": role,
                "input_dim": net.spec.input_dim,
                "hidden_dims": list(net.spec.hidden_dims),
                "output_dim": net.spec.output_dim,
                "arrays": arrays,
            }
        )
    (path / "params.bin").write_bytes(b"".join(chunks))
    (path / "header.json").write_text(json.dumps(header, indent=2) + "\n")


def load_checkpoint(path) -> TrainState:
    """Restore networks and counters. RNG streams are not saved."""
    path = Path(path)
    try:
        header = json.loads((path / "header.json").read_text())
        raw = (path / "params.bin").read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"incomplete checkpoint at {path}: {e.filename} missing") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt header.json in {path}: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")

    nets = {}
    for entry in header["networks"]:
        spec = NetworkSpec(entry["input_dim"], tuple(entry["hidden_dims"]), entry["output_dim"])
        names, arrays = [], []
        for a in entry["arrays"]:
            count = int(np.prod(a["shape"]))
            end = a["offset"] + 8 * count
            if end > len(raw):
                raise CheckpointError(f"params.bin too short for {entry['role']}.{a['name']}")
            names.append(a["name"])
            arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=a["offset"]).reshape(a["shape"]).copy())
        nets[entry["role"]] = Network(spec, ParameterSet(names, arrays))

    heads = [nets[r] for r in sorted((r for r in nets if r.startswith("nuisance_head_")), key=lambda r: int(r.rsplit("_", 1)[1]))]
    return TrainState(
        nets["backbone"],
        nets["det_head"],
        heads,
        int(header["num_classes"]),
        t=int(header["t"]),
        counters=Counters(**header["counters"]),
    )
