"""Gradient snapshot bundles: the on-disk and in-memory input of the toolkit.

A bundle holds one matrix of flattened per-sample gradients for every
(task, layer) pair.  On disk it is a directory with a ``manifest.json`` plus
one ``<task>__<layer>.gdm`` file per entry; the ``.gdm`` payload is the magic
``GDM1``, a little-endian u32 row count, u32 column count, then rows*cols
float32 values in row-major order.  Storage is float32 for bit-exact
portability; all downstream arithmetic converts to float64 on use.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleFormatError, ValidationError

MAGIC = b"GDM1"
HEADER = struct.Struct("<4sII")
MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = "1"
ELEMENT_TYPE = "f32le"


def _as_float32(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float32 and arr.flags.c_contiguous and not arr.flags.writeable:
        return arr
    arr = np.array(arr, dtype=np.float32, order="C")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GradientMatrix:
    """m x d matrix of per-sample gradients for one (task, layer) pair."""

    task: str
    layer: str
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_float32(self.data))
        if self.data.ndim != 2:
            raise ValidationError(
                f"gradient matrix ({self.task}, {self.layer}): expected 2-D data, "
                f"got ndim={self.data.ndim}"
            )
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(
                f"gradient matrix ({self.task}, {self.layer}): empty shape {self.data.shape}"
            )
        if not np.isfinite(self.data).all():
            bad = np.argwhere(~np.isfinite(self.data))[0]
            raise ValidationError(
                f"gradient matrix ({self.task}, {self.layer}): non-finite entry "
                f"at row {bad[0]}, col {bad[1]}"
            )

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GradientBundle:
    """All gradient matrices of one snapshot, keyed by (task, layer)."""

    tasks: tuple[str, ...]
    layers: tuple[str, ...]
    entries: dict = field(repr=False)

    @classmethod
    def from_matrices(cls, matrices) -> "GradientBundle":
        """Build a bundle from GradientMatrix objects, inferring task/layer order."""
        tasks: list[str] = []
        layers: list[str] = []
        entries = {}
        for m in matrices:
            if m.task not in tasks:
                tasks.append(m.task)
            if m.layer not in layers:
                layers.append(m.layer)
            key = (m.task, m.layer)
            if key in entries:
                raise ValidationError(f"duplicate entry for (task, layer) = {key}")
            entries[key] = m
        bundle = cls(tuple(tasks), tuple(layers), entries)
        bundle.validate()
        return bundle

    def validate(self) -> None:
        if not self.tasks or not self.layers:
            raise ValidationError("bundle has no tasks or no layers")
        seen = set()
        for task in self.tasks:
            for layer in self.layers:
                key = (task, layer)
                if key not in self.entries:
                    raise ValidationError(f"bundle is missing entry for (task, layer) = {key}")
                m = self.entries[key]
                if (m.task, m.layer) != key:
                    raise ValidationError(f"entry stored under {key} labels itself {(m.task, m.layer)}")
                seen.add(key)
        extra = set(self.entries) - seen
        if extra:
            raise ValidationError(f"bundle has entries outside its task/layer grid: {sorted(extra)}")
        for layer in self.layers:
            cols = {self.entries[(t, layer)].cols for t in self.tasks}
            if len(cols) != 1:
                raise ValidationError(
                    f"layer {layer!r}: tasks disagree on column count ({sorted(cols)})"
                )

    def layer_dim(self, layer: str) -> int:
        self._check_layer(layer)
        return self.entries[(self.tasks[0], layer)].cols

    def matrix(self, task: str, layer: str) -> GradientMatrix:
        self._check_task(task)
        self._check_layer(layer)
        return self.entries[(task, layer)]

    def _check_task(self, task: str) -> None:
        if task not in self.tasks:
            raise ValidationError(f"unknown task {task!r}; bundle has {list(self.tasks)}")

    def _check_layer(self, layer: str) -> None:
        if layer not in self.layers:
            raise ValidationError(f"unknown layer {layer!r}; bundle has {list(self.layers)}")


def sample_gradients(bundle: GradientBundle, task: str, layer: str) -> np.ndarray:
    """Read-only view of the stored m x d float32 matrix."""
    return bundle.matrix(task, layer).data


def mean_gradient(bundle: GradientBundle, task: str, layer: str) -> np.ndarray:
    """Arithmetic mean over sample rows, computed in float64."""
    return bundle.matrix(task, layer).data.astype(np.float64).mean(axis=0)


def _entry_filename(task: str, layer: str) -> str:
    return f"{task}__{layer}.gdm"


def _check_identifier(kind: str, value: str) -> None:
    if not value or any(c in value for c in "/\\\0"):
        raise ValidationError(f"{kind} identifier {value!r} is empty or not filesystem-safe")


def write_matrix_file(path: Path, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_matrix_file(path: Path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise BundleFormatError(f"cannot read matrix file {path}: {exc}") from exc
    if len(blob) < HEADER.size:
        raise BundleFormatError(f"{path}: file shorter than the 12-byte header")
    magic, rows, cols = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BundleFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if rows < 1 or cols < 1:
        raise BundleFormatError(f"{path}: header declares empty shape {rows}x{cols}")
    expected = HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise BundleFormatError(
            f"{path}: payload length {len(blob)} does not match header "
            f"{rows}x{cols} (expected {expected} bytes)"
        )
    arr = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(rows, cols)
    return arr


def write_bundle(bundle: GradientBundle, path) -> None:
    """Write manifest + one .gdm file per entry; re-reading is bit-identical."""
    bundle.validate()
    for task in bundle.tasks:
        _check_identifier("task", task)
    for layer in bundle.layers:
        _check_identifier("layer", layer)
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create bundle directory {root}: {exc}") from exc

    records = []
    for task in bundle.tasks:
        for layer in bundle.layers:
            m = bundle.entries[(task, layer)]
            fname = _entry_filename(task, layer)
            try:
                write_matrix_file(root / fname, m.data)
            except OSError as exc:
                raise ValidationError(f"cannot write {root / fname}: {exc}") from exc
            records.append(
                {"task": task, "layer": layer, "rows": m.rows, "cols": m.cols, "path": fname}
            )
    manifest = {
        "version": FORMAT_VERSION,
        "element_type": ELEMENT_TYPE,
        "tasks": list(bundle.tasks),
        "layers": [{"id": lay, "cols": bundle.layer_dim(lay)} for lay in bundle.layers],
        "records": records,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_bundle(path) -> GradientBundle:
    """Load and fully validate a bundle directory written by write_bundle."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise BundleFormatError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"{manifest_path}: unreadable manifest: {exc}") from exc

    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise BundleFormatError(f"{manifest_path}: unrecognized format version {version!r}")
    if manifest.get("element_type") != ELEMENT_TYPE:
        raise BundleFormatError(
            f"{manifest_path}: unsupported element type {manifest.get('element_type')!r}"
        )

    tasks = list(manifest.get("tasks", []))
    layer_specs = manifest.get("layers", [])
    layers = [spec["id"] for spec in layer_specs]
    declared_cols = {spec["id"]: int(spec["cols"]) for spec in layer_specs}

    matrices = []
    for rec in manifest.get("records", []):
        task, layer = rec["task"], rec["layer"]
        fpath = root / rec["path"]
        arr = read_matrix_file(fpath)
        if arr.shape != (int(rec["rows"]), int(rec["cols"])):
            raise BundleFormatError(
                f"{fpath}: file shape {arr.shape} disagrees with manifest record "
                f"({rec['rows']}, {rec['cols']}) for (task, layer) = ({task}, {layer})"
            )
        if layer in declared_cols and arr.shape[1] != declared_cols[layer]:
            raise BundleFormatError(
                f"{fpath}: layer {layer!r} declares cols={declared_cols[layer]} "
                f"but file has cols={arr.shape[1]}"
            )
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise BundleFormatError(
                f"{fpath}: non-finite entry at row {bad[0]}, col {bad[1]} "
                f"for (task, layer) = ({task}, {layer})"
            )
        matrices.append(GradientMatrix(task, layer, arr))

    bundle = GradientBundle.from_matrices(matrices)
    if list(bundle.tasks) != tasks or list(bundle.layers) != layers:
        # Preserve the manifest's declared ordering, then re-validate the grid.
        entries = {(m.task, m.layer): m for m in matrices}
        bundle = GradientBundle(tuple(tasks), tuple(layers), entries)
        try:
            bundle.validate()
        except ValidationError as exc:
            raise BundleFormatError(f"{manifest_path}: {exc}") from exc
    return bundle


def bundle_fingerprint(path) -> str:
    """Content hash of a bundle directory (manifest plus files, sorted)."""
    root = Path(path)
    h = hashlib.sha256()
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise BundleFormatError(f"no {MANIFEST_NAME} in {root}")
    manifest = json.loads(manifest_path.read_text())
    h.update(json.dumps(manifest, sort_keys=True).encode())
    for rec in sorted(manifest.get("records", []), key=lambda r: (r["task"], r["layer"])):
        h.update((root / rec["path"]).read_bytes())
    return h.hexdigest()
