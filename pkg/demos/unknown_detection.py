"""Rejecting a target-only class from how far its samples move during correction.

The target holds a fifth tone the source never shows. After alignment those
samples sit next to some known prototype. Retraining the encoder on target
reconstruction moves them more than the samples that really belong there, so
the drift of the absorbing class splits into two groups. A dip test flags the
split and 2-means cuts it.
"""
import sys

import numpy as np

from tsda.detection import UNKNOWN
from tsda.pipeline import adapt
from tsda.presets import load_pair, train_config

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
src, tgt = load_pair("universal", seed=seed)
private = sorted(tgt.class_inventory() - src.class_inventory())
print(f"known classes {sorted(src.class_inventory())}, target-only {private}")

res = adapt(src, tgt, train_config("universal", seed=str(seed)))
drift = np.array([r.drift for r in res.records])
is_private = np.isin(tgt.labels, private)

print("\nclass  n   dip     p      split")
for c, d in sorted(res.decisions.items()):
    split = "" if not d.bimodal else f"{d.mu1:.3f} | {d.mu2:.3f}"
    print(f"{c:>5} {d.n:>3}  {d.dip:.4f}  {d.p_value:.3f}  {split}")

print(f"\nmean drift: shared {drift[~is_private].mean():.4f}, target-only {drift[is_private].mean():.4f}")
verdicts = np.array([r.verdict for r in res.records])
print(f"target-only samples rejected: {np.mean(verdicts[is_private] == UNKNOWN):.2f}")
print(f"shared samples rejected: {np.mean(verdicts[~is_private] == UNKNOWN):.2f}")
print()
print(res.metrics.summary_text(), end="")
