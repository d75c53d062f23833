"""Embedding sets: on-disk binary format, manifests, ingestion, normalization.

File layout (little-endian throughout)::

    magic "EMBS" | version u32 | dim u32 | count u64 | dtype u8 | 7 reserved bytes
    payload: count * dim float32 values, row-major

The manifest is a sibling JSON-lines file ``<name>.manifest.jsonl`` with one
record per row, binding row indices to image paths.
"""

from __future__ import annotations

import contextlib
import json
import os
import struct
import subprocess
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingInputError, StorageError, ValidationError

MAGIC = b"EMBS"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sIIQB7s")

# Tolerance for the stored "normalized" flag (storage rounding), vs. the much
# tighter degeneracy test used to reject zero vectors.
NORM_TOL = 1e-4
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class ManifestRecord:
    """Binds one embedding row to the image it was extracted from."""

    row_index: int
    image_path: str
    subject_label: str | None = None
    notes: str | None = None

    def to_json(self) -> str:
        obj: dict = {"row_index": self.row_index, "image_path": self.image_path}
        if self.subject_label is not None:
            obj["subject_label"] = self.subject_label
        if self.notes is not None:
            obj["notes"] = self.notes
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        try:
            obj = json.loads(line)
            return cls(
                row_index=int(obj["row_index"]),
                image_path=str(obj["image_path"]),
                subject_label=obj.get("subject_label"),
                notes=obj.get("notes"),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError("parse-failure", f"bad manifest line: {exc}") from exc


@dataclass
class EmbeddingSet:
    """A dense matrix of float32 embedding rows plus the manifest binding them to images."""

    dataset_id: str
    vectors: np.ndarray
    manifest: list[ManifestRecord]
    normalized: bool = False

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ValidationError("invariant-violation", "vectors must be a 2-D matrix")
        if self.vectors.dtype != np.float32:
            self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        else:
            self.vectors = np.ascontiguousarray(self.vectors)

    @classmethod
    def from_vectors(
        cls,
        dataset_id: str,
        vectors: np.ndarray,
        manifest: list[ManifestRecord] | None = None,
        normalized: bool = False,
    ) -> "EmbeddingSet":
        """Build a set from a matrix, synthesizing a manifest when none is given."""
        if manifest is None:
            manifest = [
                ManifestRecord(row_index=i, image_path=f"{dataset_id}/{i}")
                for i in range(vectors.shape[0])
            ]
        return cls(dataset_id=dataset_id, vectors=vectors, manifest=manifest, normalized=normalized)

    def validate(self) -> None:
        """Check the documented invariants, raising ValidationError on violation."""
        if len(self.manifest) != self.count:
            raise ValidationError(
                "invariant-violation",
                f"manifest has {len(self.manifest)} records for {self.count} rows",
            )
        seen = {rec.row_index for rec in self.manifest}
        if seen != set(range(self.count)):
            raise ValidationError(
                "invariant-violation", "manifest row_index values are not exactly 0..count-1"
            )
        if self.normalized and self.count:
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > NORM_TOL
            if bad.any():
                row = int(np.argmax(bad))
                raise ValidationError(
                    "invariant-violation",
                    f"normalized flag set but row {row} has norm {norms[row]:.6g}",
                )


def manifest_path_for(path: Path) -> Path:
    """Sibling manifest path for an embedding file (``x.embs`` -> ``x.manifest.jsonl``)."""
    return Path(path).with_suffix(".manifest.jsonl")


def write_manifest(records: list[ManifestRecord], path: Path) -> None:
    text = "".join(rec.to_json() + "\n" for rec in records)
    atomic_write_bytes(Path(path), text.encode("utf-8"))


def read_manifest(path: Path) -> list[ManifestRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ManifestRecord.from_json(line))
    return records


def write_embedding_set(es: EmbeddingSet, path: Path) -> None:
    """Write the binary embedding file and its sibling manifest atomically."""
    es.validate()
    path = Path(path)
    if not path.parent.is_dir():
        raise StorageError("io-failure", f"parent directory does not exist: {path.parent}")
    header = _HEADER.pack(MAGIC, VERSION, es.dim, es.count, DTYPE_F32, b"\x00" * 7)
    payload = np.ascontiguousarray(es.vectors, dtype="<f4").tobytes()
    try:
        atomic_write_bytes(path, header + payload)
        write_manifest(es.manifest, manifest_path_for(path))
    except OSError as exc:
        raise StorageError("io-failure", f"writing {path}: {exc}") from exc


def read_embedding_set(path: Path) -> EmbeddingSet:
    """Read an embedding file written by :func:`write_embedding_set`.

    The dataset id is derived from the file stem and the normalized flag is
    recomputed from the stored rows (the binary layout carries neither). A
    missing manifest yields placeholder records with empty image paths.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such embedding file: {path}")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError("io-failure", f"reading {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatError("truncated-payload", f"{path} is shorter than the header")
    magic, version, dim, count, dtype, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("bad-magic", f"{path} does not start with {MAGIC!r}")
    if version != VERSION:
        raise FormatError("unsupported-version", f"{path} has version {version}")
    if dtype != DTYPE_F32:
        raise FormatError("unsupported-version", f"{path} has unknown dtype code {dtype}")
    if dim == 0:
        raise FormatError("dimension-zero", f"{path} declares dim=0")
    need = count * dim * 4
    body = raw[_HEADER.size :]
    if len(body) < need:
        raise FormatError(
            "truncated-payload", f"{path} payload is {len(body)} bytes, expected {need}"
        )
    vectors = np.frombuffer(body[:need], dtype="<f4").reshape(count, dim).copy()

    mpath = manifest_path_for(path)
    if mpath.is_file():
        manifest = read_manifest(mpath)
        if len(manifest) != count:
            raise FormatError(
                "manifest-mismatch",
                f"{mpath} has {len(manifest)} records for {count} rows",
            )
    else:
        manifest = [ManifestRecord(row_index=i, image_path="") for i in range(count)]

    if count:
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        normalized = bool(np.all(np.abs(norms - 1.0) <= NORM_TOL))
    else:
        normalized = True
    es = EmbeddingSet(
        dataset_id=path.stem, vectors=vectors, manifest=manifest, normalized=normalized
    )
    es.validate()
    return es


def normalize(es: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit Euclidean norm.

    Rejects zero rows outright: silently dropping them would desynchronize
    manifest indices, so the caller must drop or fail.
    """
    if es.count == 0:
        return replace(es, normalized=True)
    rows64 = es.vectors.astype(np.float64)
    norms = np.linalg.norm(rows64, axis=1)
    bad = norms < ZERO_TOL
    if bad.any():
        row = int(np.argmax(bad))
        raise ValidationError("zero-vector", f"row {row} has norm < {ZERO_TOL}")
    # Divide in float64 and round once: keeps renormalization idempotent to
    # well under 1e-7 per component.
    vectors = (rows64 / norms[:, None]).astype(np.float32)
    return replace(es, vectors=vectors, normalized=True)


def import_csv(path: Path, manifest_path: Path) -> EmbeddingSet:
    """Load a CSV of raw float rows plus a JSON-lines manifest (not yet normalized)."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such CSV file: {path}")
    if not Path(manifest_path).is_file():
        raise MissingInputError("missing-input", f"no such manifest file: {manifest_path}")
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise FormatError("parse-failure", f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise FormatError("parse-failure", f"{path} contains no data rows")
    dim = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != dim:
            raise FormatError(
                "ragged-rows", f"{path}: row {i} has {len(row)} values, expected {dim}"
            )
    manifest = read_manifest(Path(manifest_path))
    if len(manifest) != len(rows):
        raise FormatError(
            "manifest-mismatch",
            f"{manifest_path} has {len(manifest)} records for {len(rows)} CSV rows",
        )
    vectors = np.asarray(rows, dtype=np.float32)
    es = EmbeddingSet(
        dataset_id=path.stem, vectors=vectors, manifest=manifest, normalized=False
    )
    es.validate()
    return es


def toy_extract(image_bytes: bytes, dim: int, seed: int) -> np.ndarray:
    """Deterministic stand-in for a face recognition extractor.

    Projects the byte-value histogram of the input through a fixed-seed
    random matrix and normalizes. Identical (bytes, dim, seed) always give
    identical vectors, and near-duplicate inputs land close in cosine space,
    which is all the pipeline needs for end-to-end tests.
    """
    if dim < 1:
        raise ValidationError("invalid-range", f"dim must be >= 1, got {dim}")
    if len(image_bytes) == 0:
        raise ValidationError("empty-input", "cannot extract from an empty byte sequence")
    hist = np.bincount(np.frombuffer(image_bytes, dtype=np.uint8), minlength=256)
    hist = hist.astype(np.float64) / len(image_bytes)
    projection = np.random.default_rng(seed).standard_normal((dim, 256))
    vec = projection @ hist
    norm = np.linalg.norm(vec)
    if norm < ZERO_TOL:
        raise ValidationError("zero-vector", "projection collapsed to the zero vector")
    return (vec / norm).astype(np.float32)


def run_extractor_command(
    command: list[str], image_list_path: Path, out_path: Path
) -> EmbeddingSet:
    """Invoke an external extractor per the adapter contract.

    The command is called as ``<command...> <image_list_file> <output_path>``
    and must write a conforming embedding file to the output path. Alignment
    and cropping are the extractor's business, not ours.
    """
    argv = list(command) + [str(image_list_path), str(out_path)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise StorageError("io-failure", f"cannot run extractor {argv[0]}: {exc}") from exc
    if proc.returncode != 0:
        raise StorageError(
            "io-failure",
            f"extractor exited with {proc.returncode}: {proc.stderr.strip()[:500]}",
        )
    if not Path(out_path).is_file():
        raise StorageError("io-failure", f"extractor did not write {out_path}")
    return read_embedding_set(Path(out_path))


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename (no torn outputs)."""
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise
