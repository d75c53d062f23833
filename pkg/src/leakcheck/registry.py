"""Dataset registry: which datasets exist, what generated what, where files live.

The registry is a single JSON document. Each entry names a dataset, its kind
(real / synthetic / benchmark), and optionally the generator and the real
dataset the generator was trained on. Entries may also carry file locations:
``embeddings`` (binary embedding file), ``scores`` (benchmark genuine/impostor
CSV), and ``root`` (image directory served by the review UI). Relative paths
resolve against LEAKCHECK_DATA_ROOT when set, else against the registry file's
directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, MissingInputError, ValidationError

KINDS = ("real", "synthetic", "benchmark")

DATA_ROOT_ENV = "LEAKCHECK_DATA_ROOT"


@dataclass
class DatasetRegistryEntry:
    dataset_id: str
    kind: str
    generator_name: str | None = None
    training_dataset_id: str | None = None
    embeddings: str | None = None
    scores: str | None = None
    root: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(
                "invariant-violation", f"dataset kind must be one of {KINDS}, got {self.kind!r}"
            )


@dataclass
class DatasetRegistry:
    entries: dict[str, DatasetRegistryEntry] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def add(self, entry: DatasetRegistryEntry) -> None:
        self.entries[entry.dataset_id] = entry
        self.validate()

    def validate(self) -> None:
        for entry in self.entries.values():
            if entry.kind == "synthetic" and entry.training_dataset_id is not None:
                parent = self.entries.get(entry.training_dataset_id)
                if parent is None or parent.kind != "real":
                    raise ValidationError(
                        "invariant-violation",
                        f"synthetic dataset {entry.dataset_id!r} names training dataset "
                        f"{entry.training_dataset_id!r}, which is not a registered real dataset",
                    )

    def get(self, dataset_id: str) -> DatasetRegistryEntry:
        entry = self.entries.get(dataset_id)
        if entry is None:
            raise MissingInputError("missing-dataset", f"dataset {dataset_id!r} is not registered")
        return entry

    def resolve(self, path: str) -> Path:
        """Resolve a registry-relative path against the data root."""
        p = Path(path)
        if p.is_absolute():
            return p
        env_root = os.environ.get(DATA_ROOT_ENV)
        base = Path(env_root) if env_root else self.base_dir
        return base / p

    def embeddings_path(self, dataset_id: str) -> Path:
        entry = self.get(dataset_id)
        if not entry.embeddings:
            raise MissingInputError(
                "missing-dataset", f"dataset {dataset_id!r} has no embeddings file registered"
            )
        return self.resolve(entry.embeddings)

    def scores_path(self, dataset_id: str) -> Path:
        entry = self.get(dataset_id)
        if not entry.scores:
            raise MissingInputError(
                "missing-benchmark", f"benchmark {dataset_id!r} has no scores file registered"
            )
        return self.resolve(entry.scores)

    def image_root(self, dataset_id: str) -> Path:
        entry = self.get(dataset_id)
        if not entry.root:
            raise MissingInputError(
                "missing-dataset", f"dataset {dataset_id!r} has no image root registered"
            )
        return self.resolve(entry.root)


def load_registry(path: Path) -> DatasetRegistry:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such registry file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError("parse-failure", f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("datasets"), list):
        raise FormatError("parse-failure", f"{path}: expected {{\"datasets\": [...]}}")
    registry = DatasetRegistry(base_dir=path.parent)
    for raw in doc["datasets"]:
        try:
            entry = DatasetRegistryEntry(
                dataset_id=str(raw["dataset_id"]),
                kind=str(raw["kind"]),
                generator_name=raw.get("generator_name"),
                training_dataset_id=raw.get("training_dataset_id"),
                embeddings=raw.get("embeddings"),
                scores=raw.get("scores"),
                root=raw.get("root"),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError("parse-failure", f"{path}: bad registry entry: {exc}") from exc
        registry.entries[entry.dataset_id] = entry
    registry.validate()
    return registry


def save_registry(registry: DatasetRegistry, path: Path) -> None:
    doc = {
        "datasets": [
            {
                k: v
                for k, v in {
                    "dataset_id": e.dataset_id,
                    "kind": e.kind,
                    "generator_name": e.generator_name,
                    "training_dataset_id": e.training_dataset_id,
                    "embeddings": e.embeddings,
                    "scores": e.scores,
                    "root": e.root,
                }.items()
                if v is not None
            }
            for e in registry.entries.values()
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
