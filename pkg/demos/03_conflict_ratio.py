"""Sample-level conflict scores and the shared-ratio decision (Method B).

Builds a fixture whose task directions have pairwise cosine exactly 0.925,
so the conflict score lands at delta = 1 - 0.925 = 0.075: the middle branch
of the piecewise rule, a 50% shared width. Then sweeps the planted angle to
show how the decision moves through all three branches.

    python demos/03_conflict_ratio.py
"""

import numpy as np

from gdps.conflict import conflict_report, map_shared_ratio, ratio_branch
from gdps.synth import planted_bundle

theta_0925 = float(np.degrees(np.arccos(0.925)))
bundle = planted_bundle(
    4, [[0], [1], [2], [3]], theta_0925, d=32, m=6, seed=5, spread_deg=0.0, layer="L"
)

report = conflict_report(bundle)
lc = report.layers[0]
print(f"s_self  = {lc.s_self:.6f}")
print(f"s_cross = {lc.s_cross:.6f}")
print(f"delta   = {report.delta:.6f}")
print(f"purity  = {lc.purity:.3f}  (fraction of non-negative cross-task pairs)")
print(f"branch  : {ratio_branch(report.delta, report.thresholds)}")
print(f"ratio   = {report.shared_ratio}")

print("\nangle sweep:")
for theta in (5.0, 18.0, 40.0, 70.0):
    b = planted_bundle(4, [[0], [1], [2], [3]], theta, d=32, m=6, seed=5,
                       spread_deg=0.0, layer="L")
    rep = conflict_report(b)
    print(f"  theta={theta:5.1f}  delta={rep.delta:+.4f}  -> shared_ratio={rep.shared_ratio}")

print("\nboundary semantics of the rule itself:")
for delta in (0.04, 0.05, 0.075, 0.149, 0.15, 0.20):
    print(f"  delta={delta:.3f} -> {map_shared_ratio(delta)}")
