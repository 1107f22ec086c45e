"""How hard each divergence pulls two point clouds together as they drift apart.

A Gaussian-kernel MMD only sees pairs within a few bandwidths, so once the
clouds separate its cross term goes flat. The transport cost grows with the
distance and keeps pushing.
"""
from tsda.alignment import probe_table

shifts = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
recs = probe_table(shifts=shifts)
by = {}
for r in recs:
    by.setdefault(r.divergence, {})[r.shift] = r.grad_norm

print("shift  " + "  ".join(f"{d:>16}" for d in by))
for s in shifts:
    print(f"{s:5.0f}  " + "  ".join(f"{by[d][s]:16.3e}" for d in by))
