"""Feature replay queue and the damped (EMA) nuisance update."""

import numpy as np

from andft.nn_core import ParameterSet, sgd_step
from andft.replay import ReplayQueue
from andft.trainers import ema_step

rng = np.random.default_rng(0)

# %% a queue of 8 rows fed in batches of 3: the oldest rows fall out
q = ReplayQueue(8, feature_dim=2)
for b in range(4):
    feats = np.full((3, 2), b, dtype=float)
    q.enqueue_batch(feats, np.full((3, 1), b))
    print("after batch", b, "len", len(q), "batch ids", [int(f[0]) for f, _ in q])

# full pass: disjoint minibatches, leftovers dropped
parts = q.full_pass_minibatches(3, rng)
print("full pass:", [p[1].ravel().tolist() for p in parts])

# %% blending old and updated weights is SGD with a smaller step
theta = ParameterSet(["w"], [rng.normal(size=5)])
g = ParameterSet(["w"], [rng.normal(size=5)])
beta, eta = 0.99, 0.05
a = ema_step(theta, g, beta, eta).arrays[0]
b = sgd_step(theta, g, (1 - beta) * eta).arrays[0]
print("EMA step    ", np.round(a, 6))
print("SGD (1-b)eta", np.round(b, 6))
print("max diff", np.max(np.abs(a - b)))
