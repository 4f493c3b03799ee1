"""Backprop by hand, checked against central differences."""

import numpy as np

from andft.nn_core import NetworkSpec, backward, cross_entropy, forward, init_network, negative_entropy

rng = np.random.default_rng(0)

# %% a tiny classifier: 10 inputs -> 8 hidden -> 3 classes
net = init_network(NetworkSpec(10, (8,), 3), seed=0)
X = rng.normal(size=(5, 10))
y = rng.integers(0, 3, 5)
print("parameters:", net.spec.num_params)

logits, cache = forward(net, X, return_cache=True)
loss, g = cross_entropy(logits, y)
grads = backward(net, X, g, cache).param_grads
print("cross-entropy:", loss)

# %% perturb one weight at a time
W = net.params.arrays[0]
h = 1e-6
for i, j in [(0, 0), (3, 5), (9, 7)]:
    old = W[i, j]
    W[i, j] = old + h
    up = cross_entropy(forward(net, X), y)[0]
    W[i, j] = old - h
    down = cross_entropy(forward(net, X), y)[0]
    W[i, j] = old
    print(f"W[{i},{j}]  analytic {grads.arrays[0][i, j]: .8f}  numeric {(up - down) / (2 * h): .8f}")

# %% negative entropy sits between -log C and 0
for scale in [0.0, 1.0, 10.0]:
    v, _ = negative_entropy(scale * rng.normal(size=(4, 3)))
    print(f"logit scale {scale:5.1f}: L_ne = {v: .4f}   (-log 3 = {-np.log(3):.4f})")
