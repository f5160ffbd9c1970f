"""Joint SVD spectrum, per-task energies, and ridge CCA (Method C).

Stacks all tasks' gradients at one layer, decomposes once, and reports how
much of the joint energy each task's gradients occupy in the top-k
directions: the proportions that later weight private initialization.

    python demos/04_subspace.py
"""

import numpy as np

from gdps import GroupingPlan
from gdps.subspace import group_energy, ridge_cca, subspace_report
from gdps.synth import planted_bundle

bundle = planted_bundle(
    4, [[0], [1, 2, 3]], theta_deg=65.0, d=48, m=20, seed=3, spread_deg=5.0, layer="L"
)

rep = subspace_report(bundle, "L", k=6, lam=1e-3)
print(f"joint spectrum (top 6 of {rep.sigma.size}): "
      + np.array_str(rep.sigma[:6], precision=3))
print(f"top-1 energy share = {rep.top1_share:.3f}")
print(f"spectrum gini      = {rep.gini:.3f}")

print("\nper-task energy proportions over the top-6 joint directions:")
for t, p in zip(rep.tasks, rep.proportions):
    print(f"  p[{t}] = {p:.4f}")

grouping = GroupingPlan((("t0",), ("t1", "t2", "t3")), "consensus", 2)
p_g = group_energy(rep.proportions, grouping, rep.tasks)
print(f"\ngroup energies p_g = {np.round(p_g, 4)} (these scale the private branches)")

print("\npairwise leading canonical correlations (ridge lambda = 1e-3):")
print(np.array_str(rep.cca, precision=3))

print("\nridge path for one pair (rho never increases with lambda):")
ga = bundle.matrix("t0", "L").data.astype(float)
gb = bundle.matrix("t1", "L").data.astype(float)
for lam in (1e-4, 1e-2, 1.0, 100.0):
    print(f"  lambda={lam:>7}: rho = {ridge_cca(ga, gb, lam).rho:.4f}")
