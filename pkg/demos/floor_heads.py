"""Compare floor-head variants on the synthetic long-tailed dataset.

    python3 demos/floor_heads.py [SEED] [EPOCHS]

Prints validation accuracy and MAE per variant. The hybrid variants also get
a second readout that rounds the expected class F instead of flooring it.
"""
import sys

import numpy as np

from floorcount.evaluation import evaluate
from floorcount.model import ModelConfig, split_dataset, synthetic_long_tail, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 30

ds = synthetic_long_tail(feature_dim=64, seed=seed)
tr, va, te = split_dataset(ds, seed)
counts = np.bincount(ds.y, minlength=18)
print(f"{len(ds)} samples, per-floor counts {counts.tolist()}")
print(f"split {len(tr)}/{len(va)}/{len(te)}, {epochs} epochs\n")

print(f"{'variant':<10} {'acc':>7} {'acc+-1':>7} {'MAE':>7}   rounded-F acc / MAE")
for variant in ("plain", "htc", "httc", "hyb", "hyb+httc"):
    res = train(ModelConfig(variant=variant, seed=seed, epochs=epochs), tr, va)
    pred, F = res.model.predict(va.X)
    r = evaluate(pred, va.y)
    line = f"{variant:<10} {r.accuracy:7.4f} {r.accuracy_pm1:7.4f} {r.mae:7.4f}"
    if variant.startswith("hyb"):
        near = evaluate(np.clip(np.floor(F + 0.5), 0, 17).astype(int), va.y)
        line += f"   {near.accuracy:.4f} / {near.mae:.4f}"
    print(line)
