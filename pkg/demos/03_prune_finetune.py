"""Drop input-side blocks from a trained denoiser, then finetune what is left.

Zero-shot pruning hurts; a short finetune recovers most of the loss when few
blocks are removed, and less of it when only one block remains.
"""

import numpy as np

from fewstep import NoiseLevelParams
from fewstep.experiments import prune_study, train_default

noise = NoiseLevelParams()
task, spec, params = train_default(seed=0, noise=noise)
rows = prune_study(params, spec, task, noise, ks=[1, 2, 3], finetune_seeds=range(3))

print(f"baseline 2-step LDDT: {rows[0]['baseline']:.4f}")
print(f"{'k':>2} {'blocks left':>11} {'zero-shot':>10} {'finetuned':>10}")
for k in (1, 2, 3):
    sel = [r for r in rows if r["k"] == k]
    zs = np.median([r["zero_shot"] for r in sel])
    ft = np.median([r["finetuned"] for r in sel])
    print(f"{k:>2} {spec.n_blocks - k:>11} {zs:>10.4f} {ft:>10.4f}")
