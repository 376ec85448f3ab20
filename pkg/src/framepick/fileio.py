"""Bit-exact file formats: FSEB embedding matrices, dataset manifests, and
model parameter snapshots.

FSEB layout: magic ``FSEB``, then format version, row count M, and dimension
d as 32-bit little-endian unsigned integers, then M*d IEEE-754 float32
values, little-endian, row-major. Values are widened to float64 on load.
Writes go to a temporary path and are renamed atomically.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError, FormatError, ShapeError
from .pipeline import GeneratorParams, Model, VideoQAInstance, _GENERATOR_SHAPES
from .scoring import (
    _SCORER_SHAPES,
    FrameSet,
    MECHANISMS,
    ModelDims,
    QuestionEmbedding,
    ScorerParams,
)
from .autodiff import ParameterStore

FSEB_MAGIC = b"FSEB"
FSEB_VERSION = 1
_HEADER = struct.Struct("<4sIII")

MANIFEST_NAME = "manifest.json"
SNAPSHOT_INDEX = "index.json"


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_embeddings(matrix, path) -> None:
    """Serialize a finite 2-d matrix as an FSEB file (float32 on disk)."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"write-embeddings: expected a matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DomainError("write-embeddings: matrix has non-finite entries")
    header = _HEADER.pack(FSEB_MAGIC, FSEB_VERSION, arr.shape[0], arr.shape[1])
    _atomic_write_bytes(Path(path), header + arr.astype("<f4").tobytes())


def read_embeddings(path) -> np.ndarray:
    """Parse an FSEB file into a float64 matrix, validating the layout."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(
            f"{path}: truncated header, expected at least {_HEADER.size} bytes, found {len(raw)}"
        )
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != FSEB_MAGIC:
        raise FormatError(f"{path}: not an FSEB file")
    if version != FSEB_VERSION:
        raise FormatError(f"{path}: unsupported FSEB version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise FormatError(
            f"{path}: size mismatch, expected {expected} bytes for {rows}x{cols}, found {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    values = values.reshape(rows, cols)
    finite_rows = np.isfinite(values).all(axis=1)
    if not finite_rows.all():
        bad = int(np.nonzero(~finite_rows)[0][0])
        raise DomainError(f"{path}: non-finite value at row {bad}")
    return values


# ---------------------------------------------------------------------------
# dataset manifest

@dataclass(frozen=True)
class ManifestEntry:
    video: str
    question: str
    options: list[str]
    answer_index: int
    planted_keyframes: list[int] | None = None


@dataclass(frozen=True)
class Manifest:
    d_v: int
    d_t: int
    entries: list[ManifestEntry]


def save_manifest(manifest: Manifest, path) -> None:
    doc = {
        "format": "framepick-manifest",
        "version": 1,
        "d_v": manifest.d_v,
        "d_t": manifest.d_t,
        "instances": [asdict(e) for e in manifest.entries],
    }
    _atomic_write_bytes(Path(path), (json.dumps(doc, indent=2) + "\n").encode())


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid manifest JSON: {exc}") from exc
    if doc.get("format") != "framepick-manifest":
        raise FormatError(f"{path}: not a framepick manifest")
    entries = [
        ManifestEntry(
            video=item["video"],
            question=item["question"],
            options=list(item["options"]),
            answer_index=int(item["answer_index"]),
            planted_keyframes=(
                [int(i) for i in item["planted_keyframes"]]
                if item.get("planted_keyframes") is not None
                else None
            ),
        )
        for item in doc["instances"]
    ]
    return Manifest(d_v=int(doc["d_v"]), d_t=int(doc["d_t"]), entries=entries)


def _read_vector(path: Path, expected_dim: int, role: str) -> np.ndarray:
    matrix = read_embeddings(path)
    if matrix.shape != (1, expected_dim):
        raise FormatError(
            f"{path}: {role} must be a 1x{expected_dim} matrix, found {matrix.shape[0]}x{matrix.shape[1]}"
        )
    return matrix[0]


def load_instances(manifest_path) -> tuple[Manifest, list[VideoQAInstance]]:
    """Read every referenced embedding file, checking existence and dims."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    instances = []
    for i, entry in enumerate(manifest.entries):
        for ref in [entry.video, entry.question, *entry.options]:
            if not (base / ref).exists():
                raise FormatError(f"{manifest_path}: instance {i} references missing file {ref!r}")
        video = read_embeddings(base / entry.video)
        if video.shape[1] != manifest.d_v:
            raise FormatError(
                f"{base / entry.video}: frame dimension {video.shape[1]} does not match d_v={manifest.d_v}"
            )
        question = _read_vector(base / entry.question, manifest.d_t, "question embedding")
        options = np.stack(
            [_read_vector(base / ref, manifest.d_t, "option embedding") for ref in entry.options]
        )
        instances.append(
            VideoQAInstance(
                frames=FrameSet(video, video_id=entry.video),
                question=QuestionEmbedding(question, question_id=entry.question),
                options=options,
                answer_index=entry.answer_index,
                planted_keyframes=(
                    tuple(entry.planted_keyframes) if entry.planted_keyframes else None
                ),
            )
        )
    return manifest, instances


def write_dataset(instances: list[VideoQAInstance], dims: ModelDims, out_dir) -> Path:
    """Write one FSEB file per embedding plus a manifest; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, inst in enumerate(instances):
        video_name = f"video_{i:04d}.fseb"
        question_name = f"question_{i:04d}.fseb"
        option_names = [f"option_{i:04d}_{n}.fseb" for n in range(inst.num_options)]
        write_embeddings(inst.frames.embeddings, out / video_name)
        write_embeddings(inst.question.vector[None, :], out / question_name)
        for name, option in zip(option_names, inst.options):
            write_embeddings(option[None, :], out / name)
        entries.append(
            ManifestEntry(
                video=video_name,
                question=question_name,
                options=option_names,
                answer_index=inst.answer_index,
                planted_keyframes=(
                    list(inst.planted_keyframes) if inst.planted_keyframes else None
                ),
            )
        )
    manifest = Manifest(d_v=dims.d_v, d_t=dims.d_t, entries=entries)
    save_manifest(manifest, out / MANIFEST_NAME)
    return out / MANIFEST_NAME


# ---------------------------------------------------------------------------
# model snapshots: one FSEB file per tensor plus an index document

def _to_matrix(value: np.ndarray) -> np.ndarray:
    if value.ndim == 0:
        return value.reshape(1, 1)
    if value.ndim == 1:
        return value.reshape(1, -1)
    return value


def save_model(model: Model, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for store in model.stores():
        for name in store.names():
            value = store.value(name)
            file_name = f"{name}.fseb"
            write_embeddings(_to_matrix(value), out / file_name)
            tensors[name] = {"file": file_name, "shape": list(value.shape)}
    index = {
        "format": "framepick-snapshot",
        "version": 1,
        "dims": asdict(model.dims),
        "disabled": sorted(model.disabled),
        "tensors": tensors,
    }
    _atomic_write_bytes(out / SNAPSHOT_INDEX, (json.dumps(index, indent=2) + "\n").encode())
    return out / SNAPSHOT_INDEX


def load_model(directory) -> Model:
    path = Path(directory) / SNAPSHOT_INDEX
    if not path.exists():
        raise FormatError(f"{path}: snapshot index not found")
    doc = json.loads(path.read_text())
    if doc.get("format") != "framepick-snapshot":
        raise FormatError(f"{path}: not a framepick snapshot")
    dims = ModelDims(**doc["dims"])
    disabled = frozenset(doc.get("disabled", []))
    if not disabled <= set(MECHANISMS):
        raise FormatError(f"{path}: unknown mechanisms in snapshot mask: {sorted(disabled)}")

    expected = {"scorer." + n: fn(dims) for n, fn in _SCORER_SHAPES.items()}
    expected.update({"gen." + n: fn(dims) for n, fn in _GENERATOR_SHAPES.items()})
    recorded = doc["tensors"]
    if set(recorded) != set(expected):
        raise FormatError(f"{path}: snapshot tensor set does not match the model layout")

    scorer_store, gen_store = ParameterStore(), ParameterStore()
    for name, meta in recorded.items():
        matrix = read_embeddings(Path(directory) / meta["file"])
        value = matrix.reshape(tuple(meta["shape"]))
        if value.shape != expected[name]:
            raise FormatError(
                f"{path}: tensor {name!r} has shape {value.shape}, expected {expected[name]}"
            )
        (scorer_store if name.startswith("scorer.") else gen_store).add(name, value)
    return Model(
        dims=dims,
        scorer=ScorerParams(dims=dims, store=scorer_store),
        generator=GeneratorParams(dims=dims, store=gen_store),
        disabled=disabled,
    )
