"""What the synthetic detection set looks like, and how its nuisances are skewed."""

import numpy as np

from andft.data_synth import DatasetSpec, generate_dataset

ds = generate_dataset(DatasetSpec(M_train=2000, M_test=600, seed=0))
tr, te = ds.train, ds.test
print(len(tr), "train /", len(te), "test images of", ds.spec.H, "x", ds.spec.W)

# %% nuisance marginals: skewed in train, uniform in test
for i, nu in enumerate(ds.spec.nuisances):
    a = np.bincount(tr.nuisances[:, i], minlength=nu.cardinality) / len(tr)
    b = np.bincount(te.nuisances[:, i], minlength=nu.cardinality) / len(te)
    print(f"{nu.name:10s} train {np.round(a, 3)}  test {np.round(b, 3)}")

# %% class labels do not depend on the nuisances
for i, nu in enumerate(ds.spec.nuisances):
    rows = [np.bincount(tr.class_ids[tr.nuisances[:, i] == v], minlength=3) for v in range(nu.cardinality)]
    props = [np.round(r / r.sum(), 2) for r in rows]
    print(nu.name, "class mix per value:", props)

# %% one image as ascii, darker pixels lighter glyphs
s = tr[0]
print("class", s.y_o.class_id, "box", np.round(s.y_o.box, 3), "nuisances", s.y_n)
ramp = " .:-=+*#%@"
for row in s.image.reshape(ds.spec.H, ds.spec.W):
    print("".join(ramp[min(int(v * len(ramp)), len(ramp) - 1)] for v in row))
