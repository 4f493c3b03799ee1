"""Baseline, monitored adversarial training and the replay variant on one dataset.

The number to watch is backbone forwards: the monitored loop pays extra
feature passes, the replay trainer pays exactly one per iteration.
"""

import logging
import time

from andft.data_synth import DatasetSpec, generate_dataset
from andft.evaluation import evaluate
from andft.trainers import AndftConfig, NdftConfig, TrainConfig, train_andft, train_baseline, train_ndft

ds = generate_dataset(DatasetSpec(M_train=2000, M_test=1000, seed=0))
T = 600
logging.getLogger("andft").setLevel(logging.ERROR)  # the monitor cap warns a lot this early

runs = [
    ("baseline", train_baseline, TrainConfig(T=T)),
    ("ndft", train_ndft, NdftConfig(T=T)),
    ("andft", train_andft, AndftConfig(T=T)),
]

# %%
for name, fn, cfg in runs:
    t0 = time.perf_counter()
    res = fn(ds, cfg)
    rep = evaluate(res.state, ds.test, ds.spec)
    minority = rep.cell("brightness", 1).accuracy
    print(
        f"{name:8s} forwards {res.state.counters.backbone_forwards:6d}  "
        f"test acc {rep.overall_accuracy:.3f}  dark-image acc {minority:.3f}  {time.perf_counter() - t0:5.1f}s"
    )
