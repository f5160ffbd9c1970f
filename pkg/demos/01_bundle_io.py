"""Gradient bundle round trip: build, write, read, validate.

A bundle is the toolkit's sole input: one m x d matrix of per-sample
gradients for every (task, layer) pair, stored as float32 .gdm files plus a
JSON manifest. Run from the repo root:

    python demos/01_bundle_io.py
"""

import tempfile
from pathlib import Path

import numpy as np

from gdps import (
    GradientBundle,
    GradientMatrix,
    bundle_fingerprint,
    mean_gradient,
    read_bundle,
    write_bundle,
)

rng = np.random.default_rng(0)

matrices = []
for task in ("aeb", "bem", "est", "gle"):
    for layer in ("enc11.ffn2", "enc10.ffn2"):
        d = 64 if layer == "enc11.ffn2" else 48
        matrices.append(GradientMatrix(task, layer, rng.standard_normal((16, d))))

bundle = GradientBundle.from_matrices(matrices)
print(f"tasks:  {bundle.tasks}")
print(f"layers: {bundle.layers}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "snapshot"
    write_bundle(bundle, path)
    print(f"\nwrote {sorted(p.name for p in path.iterdir())[:3]} ... "
          f"({len(list(path.iterdir()))} files)")
    print(f"fingerprint: {bundle_fingerprint(path)[:16]}...")

    back = read_bundle(path)
    identical = all(
        back.entries[k].data.tobytes() == m.data.tobytes()
        for k, m in bundle.entries.items()
    )
    print(f"round trip bit-identical: {identical}")

    g = mean_gradient(back, "bem", "enc11.ffn2")
    print(f"mean gradient for (bem, enc11.ffn2): shape {g.shape}, norm {np.linalg.norm(g):.4f}")
