import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from leakcheck.calibration import BenchmarkScores, write_benchmark_scores
from leakcheck.registry import DatasetRegistry, DatasetRegistryEntry, save_registry
from leakcheck.store import EmbeddingSet, ManifestRecord, normalize, write_embedding_set


def unit_set(dataset_id: str, count: int, dim: int, seed: int) -> EmbeddingSet:
    """Seeded random unit-norm embedding set."""
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((count, dim)).astype(np.float32)
    return normalize(EmbeddingSet.from_vectors(dataset_id, vectors))


def set_from_rows(dataset_id: str, rows, normalized: bool = True) -> EmbeddingSet:
    """Embedding set from explicit float rows (assumed already unit-norm)."""
    vectors = np.asarray(rows, dtype=np.float32)
    return EmbeddingSet.from_vectors(dataset_id, vectors, normalized=normalized)


@dataclass
class AuditFixture:
    root: Path
    registry_path: Path
    synthetic_id: str
    real_id: str
    benchmark_id: str
    planted: list  # (synth_index, real_index) pairs hidden in the synthetic set
    threshold_floor: float  # every planted score clears this by construction


def build_audit_fixture(
    root: Path,
    n_real: int = 40,
    n_background: int = 30,
    n_planted: int = 5,
    dim: int = 32,
    noise: float = 0.05,
    n_impostor: int = 2000,
    seed: int = 2024,
    with_images: bool = True,
) -> AuditFixture:
    """A miniature audit world: registry, embedding files, benchmark scores.

    The synthetic set is random rows plus near-duplicates of known real rows
    (gallery row + Gaussian noise, renormalized), appended after the
    background rows so the planted pair indices are known exactly.
    """
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    real_vectors = rng.standard_normal((n_real, dim)).astype(np.float32)
    background = rng.standard_normal((n_background, dim)).astype(np.float32)
    planted_real = rng.choice(n_real, size=n_planted, replace=False)
    planted_rows = real_vectors[planted_real] + noise * rng.standard_normal(
        (n_planted, dim)
    ).astype(np.float32)
    synth_vectors = np.vstack([background, planted_rows])
    planted = [(n_background + t, int(j)) for t, j in enumerate(planted_real)]

    def image_files(subdir: str, count: int) -> list[str]:
        paths = []
        for i in range(count):
            rel = f"row{i:04d}.png"
            if with_images:
                target = root / subdir / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(b"PNGDATA" + bytes([i % 256]) * 16)
            paths.append(rel)
        return paths

    real_paths = image_files("real_images", n_real)
    synth_paths = image_files("synth_images", n_background + n_planted)

    real = normalize(
        EmbeddingSet(
            dataset_id="realdata",
            vectors=real_vectors,
            manifest=[
                ManifestRecord(row_index=i, image_path=p) for i, p in enumerate(real_paths)
            ],
        )
    )
    synth = normalize(
        EmbeddingSet(
            dataset_id="synthia",
            vectors=synth_vectors,
            manifest=[
                ManifestRecord(row_index=i, image_path=p) for i, p in enumerate(synth_paths)
            ],
        )
    )
    write_embedding_set(real, root / "realdata.embs")
    write_embedding_set(synth, root / "synthia.embs")

    impostor = np.empty(n_impostor)
    for lo in range(0, n_impostor, 10_000):
        hi = min(lo + 10_000, n_impostor)
        a = rng.standard_normal((hi - lo, dim))
        b = rng.standard_normal((hi - lo, dim))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b /= np.linalg.norm(b, axis=1, keepdims=True)
        impostor[lo:hi] = (a * b).sum(axis=1)
    genuine = np.clip(rng.normal(0.85, 0.05, 200), -1, 1)
    write_benchmark_scores(
        BenchmarkScores(genuine=genuine.tolist(), impostor=impostor.tolist(), source_id="bench"),
        root / "bench.csv",
    )

    registry = DatasetRegistry(base_dir=root)
    registry.entries["realdata"] = DatasetRegistryEntry(
        dataset_id="realdata", kind="real", embeddings="realdata.embs", root="real_images"
    )
    registry.entries["synthia"] = DatasetRegistryEntry(
        dataset_id="synthia",
        kind="synthetic",
        generator_name="toy-gan",
        training_dataset_id="realdata",
        embeddings="synthia.embs",
        root="synth_images",
    )
    registry.entries["bench"] = DatasetRegistryEntry(
        dataset_id="bench", kind="benchmark", scores="bench.csv"
    )
    registry_path = root / "registry.json"
    save_registry(registry, registry_path)

    return AuditFixture(
        root=root,
        registry_path=registry_path,
        synthetic_id="synthia",
        real_id="realdata",
        benchmark_id="bench",
        planted=planted,
        threshold_floor=float(np.sort(impostor)[-1]),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
