import json
import struct

import numpy as np
import pytest

from gdps.bundle import (
    GradientBundle,
    GradientMatrix,
    bundle_fingerprint,
    mean_gradient,
    read_bundle,
    read_matrix_file,
    sample_gradients,
    write_bundle,
)
from gdps.errors import BundleFormatError, ValidationError


def make_bundle(rng, tasks=("a", "b"), layers=("L0",), rows=3, cols=4):
    mats = []
    for t in tasks:
        for lay in layers:
            mats.append(GradientMatrix(t, lay, rng.standard_normal((rows, cols))))
    return GradientBundle.from_matrices(mats)


def test_write_creates_manifest_and_matrix_files(tmp_path, rng):
    bundle = make_bundle(rng)
    write_bundle(bundle, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert files == ["a__L0.gdm", "b__L0.gdm", "manifest.json"]


def test_round_trip_bit_identical(tmp_path, rng):
    bundle = make_bundle(rng, tasks=("x", "y"), layers=("L0", "L1"), rows=5, cols=7)
    write_bundle(bundle, tmp_path / "b")
    back = read_bundle(tmp_path / "b")
    assert back.tasks == bundle.tasks
    assert back.layers == bundle.layers
    for key, m in bundle.entries.items():
        assert back.entries[key].data.tobytes() == m.data.tobytes()


def test_missing_entry_rejected_naming_pair(rng):
    mats = [
        GradientMatrix("a", "L0", rng.standard_normal((2, 3))),
        GradientMatrix("a", "L1", rng.standard_normal((2, 3))),
        GradientMatrix("b", "L0", rng.standard_normal((2, 3))),
    ]
    tasks, layers = ("a", "b"), ("L0", "L1")
    entries = {(m.task, m.layer): m for m in mats}
    bundle = GradientBundle(tasks, layers, entries)
    with pytest.raises(ValidationError, match=r"\('b', 'L1'\)"):
        bundle.validate()
    with pytest.raises(ValidationError, match=r"\('b', 'L1'\)"):
        write_bundle(bundle, "/tmp/never-created")


def test_layer_column_mismatch_rejected(rng):
    mats = [
        GradientMatrix("a", "L0", rng.standard_normal((2, 3))),
        GradientMatrix("b", "L0", rng.standard_normal((2, 4))),
    ]
    entries = {(m.task, m.layer): m for m in mats}
    bundle = GradientBundle(("a", "b"), ("L0",), entries)
    with pytest.raises(ValidationError, match="column count"):
        bundle.validate()


def test_truncated_payload_rejected(tmp_path, rng):
    bundle = make_bundle(rng)
    write_bundle(bundle, tmp_path / "b")
    target = tmp_path / "b" / "a__L0.gdm"
    blob = target.read_bytes()
    target.write_bytes(blob[:-4])
    with pytest.raises(BundleFormatError, match="payload length"):
        read_bundle(tmp_path / "b")


def test_trailing_garbage_rejected(tmp_path, rng):
    bundle = make_bundle(rng)
    write_bundle(bundle, tmp_path / "b")
    target = tmp_path / "b" / "a__L0.gdm"
    target.write_bytes(target.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(BundleFormatError, match="payload length"):
        read_bundle(tmp_path / "b")


def test_zero_rows_header_rejected(tmp_path):
    path = tmp_path / "z.gdm"
    path.write_bytes(struct.pack("<4sII", b"GDM1", 0, 3))
    with pytest.raises(BundleFormatError, match="empty shape"):
        read_matrix_file(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "z.gdm"
    path.write_bytes(struct.pack("<4sII", b"NOPE", 1, 1) + b"\x00" * 4)
    with pytest.raises(BundleFormatError, match="magic"):
        read_matrix_file(path)


def test_non_finite_payload_rejected(tmp_path, rng):
    bundle = make_bundle(rng)
    write_bundle(bundle, tmp_path / "b")
    raw = (tmp_path / "b" / "a__L0.gdm").read_bytes()
    payload = np.frombuffer(raw[12:], dtype="<f4").copy()
    payload[1] = np.nan
    (tmp_path / "b" / "a__L0.gdm").write_bytes(raw[:12] + payload.tobytes())
    with pytest.raises(BundleFormatError, match="non-finite entry at row 0, col 1"):
        read_bundle(tmp_path / "b")


def test_manifest_shape_disagreement_rejected(tmp_path, rng):
    bundle = make_bundle(rng)
    write_bundle(bundle, tmp_path / "b")
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    manifest["records"][0]["rows"] = 99
    (tmp_path / "b" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(BundleFormatError, match="disagrees with manifest"):
        read_bundle(tmp_path / "b")


def test_missing_manifest(tmp_path):
    with pytest.raises(BundleFormatError, match="manifest.json"):
        read_bundle(tmp_path)


def test_non_finite_in_memory_rejected():
    with pytest.raises(ValidationError, match="non-finite"):
        GradientMatrix("a", "L0", np.array([[1.0, np.inf]]))


def test_empty_matrix_rejected():
    with pytest.raises(ValidationError):
        GradientMatrix("a", "L0", np.zeros((0, 3)))


def test_mean_gradient_symmetry():
    b = GradientBundle.from_matrices(
        [GradientMatrix("a", "L0", np.array([[1.0, 3.0], [3.0, 1.0]]))]
    )
    assert np.allclose(mean_gradient(b, "a", "L0"), [2.0, 2.0])


def test_mean_gradient_single_row_identity():
    b = GradientBundle.from_matrices(
        [GradientMatrix("a", "L0", np.array([[5.0, 0.0, -1.0]]))]
    )
    assert np.allclose(mean_gradient(b, "a", "L0"), [5.0, 0.0, -1.0])


def test_mean_gradient_statistical(rng):
    # 100 draws around (1, -1) with unit variance: mean within 3 sigma/sqrt(100).
    rows = np.array([1.0, -1.0]) + rng.standard_normal((100, 2))
    b = GradientBundle.from_matrices([GradientMatrix("a", "L0", rows)])
    got = mean_gradient(b, "a", "L0")
    assert np.all(np.abs(got - np.array([1.0, -1.0])) < 3.0 / 10.0 + 0.05)


def test_sample_gradients_identity_and_consistency(rng):
    rows = rng.standard_normal((3, 4))
    b = GradientBundle.from_matrices([GradientMatrix("a", "L0", rows)])
    view = sample_gradients(b, "a", "L0")
    assert view.shape == (3, 4)
    assert np.array_equal(view, rows.astype(np.float32))
    assert not view.flags.writeable
    # cross-operation consistency: mean of rows equals mean_gradient
    manual = view.astype(np.float64).sum(axis=0) / view.shape[0]
    assert np.max(np.abs(manual - mean_gradient(b, "a", "L0"))) < 1e-12


def test_unknown_task_layer_errors(rng):
    b = make_bundle(rng)
    with pytest.raises(ValidationError, match="unknown task"):
        mean_gradient(b, "zz", "L0")
    with pytest.raises(ValidationError, match="unknown layer"):
        sample_gradients(b, "a", "L9")


def test_fingerprint_stable_and_sensitive(tmp_path, rng):
    bundle = make_bundle(rng)
    write_bundle(bundle, tmp_path / "b1")
    write_bundle(bundle, tmp_path / "b2")
    assert bundle_fingerprint(tmp_path / "b1") == bundle_fingerprint(tmp_path / "b2")
    other = make_bundle(np.random.default_rng(999))
    write_bundle(other, tmp_path / "b3")
    assert bundle_fingerprint(tmp_path / "b1") != bundle_fingerprint(tmp_path / "b3")


def test_round_trip_many_random_bundles(tmp_path):
    rng = np.random.default_rng(7)
    for i in range(20):
        tasks = tuple(f"t{j}" for j in range(int(rng.integers(1, 5))))
        layers = tuple(f"L{j}" for j in range(int(rng.integers(1, 4))))
        layer_cols = {lay: int(rng.integers(1, 9)) for lay in layers}
        mats = []
        for t in tasks:
            for lay in layers:
                rows = int(rng.integers(1, 6))
                mats.append(
                    GradientMatrix(t, lay, rng.standard_normal((rows, layer_cols[lay])))
                )
        bundle = GradientBundle.from_matrices(mats)
        path = tmp_path / f"rb{i}"
        write_bundle(bundle, path)
        back = read_bundle(path)
        assert back.tasks == bundle.tasks and back.layers == bundle.layers
        for key, m in bundle.entries.items():
            assert back.entries[key].data.tobytes() == m.data.tobytes()
