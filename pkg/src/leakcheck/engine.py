"""Exact cross-dataset cosine similarity: global top-k pairs and per-row nearest matches.

The engine is blocked for speed but exact by construction. Each tile of the
score matrix is computed with float32 BLAS; a pair survives screening whenever
its float32 score lands within a proven error margin of the running cutoff, so
the candidate pool is always a superset of the true winners. Survivors are then
rescored with a canonical 64-bit accumulation whose result depends only on the
two rows involved, and the final selection orders pairs by

    (score descending, synth_index ascending, real_index ascending).

Because emitted scores never come from the tile pass, results are bit-identical
across tile sizes and worker counts.

The float32 screening margin: a dot product of unit rows accumulated in float32
is off by at most ~dim * 2^-24 regardless of summation order. We use twice that
per side (4x total), which is still vanishingly small next to typical score
gaps, so pools stay near the minimum size.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingInputError, StorageError, ValidationError
from .store import EmbeddingSet, atomic_write_bytes

DEFAULT_TILE_QUERIES = 256
DEFAULT_TILE_GALLERY = 4096

# Per-element float32 roundoff allowance; margin below is 2x this per side.
_EPS_PER_DIM = 1.2e-7

CACHE_MAGIC = b"TOPK"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIIQB7s")
_CACHE_RECORD = np.dtype([("synth_index", "<u4"), ("real_index", "<u4"), ("score", "<f8")])


@dataclass(frozen=True)
class ScoredPair:
    """One (synthetic row, real row, cosine score) candidate leakage pair."""

    synth_index: int
    real_index: int
    score: float


@dataclass
class TopKResult:
    """The k globally best pairs under the engine's total order."""

    k: int
    pairs: list[ScoredPair]


@dataclass
class NearestMatches:
    """For every synthetic row, the best real row (smallest index on ties)."""

    real_indices: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)

    def to_pairs(self) -> list[ScoredPair]:
        return [
            ScoredPair(i, int(self.real_indices[i]), float(self.scores[i]))
            for i in range(len(self.scores))
        ]


@dataclass
class EngineStats:
    """Work counter: every pass examines each cross-dataset pair exactly once."""

    examined: int = 0


def tile_pass(query_block: np.ndarray, gallery_block: np.ndarray) -> np.ndarray:
    """Float32 kernel: all dot products between two row blocks.

    Exactness contract: each entry is within 1e-5 of the 64-bit accumulated
    dot product. There is no pruning here; callers own candidate selection.
    """
    if query_block.ndim != 2 or gallery_block.ndim != 2:
        raise ValidationError("dim-mismatch", "tile blocks must be 2-D")
    if query_block.shape[1] != gallery_block.shape[1]:
        raise ValidationError(
            "dim-mismatch",
            f"tile dims differ: {query_block.shape[1]} vs {gallery_block.shape[1]}",
        )
    q = np.ascontiguousarray(query_block, dtype=np.float32)
    g = np.ascontiguousarray(gallery_block, dtype=np.float32)
    return q @ g.T


def exact_scores(synth_rows: np.ndarray, real_rows: np.ndarray) -> np.ndarray:
    """Canonical 64-bit pair scores for row-aligned blocks.

    Elementwise product then a per-row pairwise sum: the result for a pair
    depends only on that pair's rows, never on batch size, which is what makes
    the engine's output independent of tiling and parallelism.
    """
    a = synth_rows.astype(np.float64, copy=False)
    b = real_rows.astype(np.float64, copy=False)
    return (a * b).sum(axis=1)


def _margin(dim: int) -> float:
    return 2.0 * dim * _EPS_PER_DIM


def _check_sets(synth: EmbeddingSet, real: EmbeddingSet) -> None:
    if synth.dim != real.dim:
        raise ValidationError(
            "dim-mismatch", f"synthetic dim {synth.dim} != real dim {real.dim}"
        )
    if not synth.normalized or not real.normalized:
        raise ValidationError(
            "unnormalized-input", "both sets must be normalized before comparison"
        )


def _strips(n: int, workers: int) -> list[tuple[int, int]]:
    """Split [0, n) into at most `workers` contiguous strips."""
    workers = max(1, min(workers, n))
    step = -(-n // workers)
    return [(s, min(s + step, n)) for s in range(0, n, step)]


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        import os

        return os.cpu_count() or 1
    if workers < 1:
        raise ValidationError("invalid-range", f"workers must be >= 1, got {workers}")
    return workers


class _CandidatePool:
    """Accumulates (score_f32, synth, real) triples that may still win."""

    def __init__(self) -> None:
        self.scores: list[np.ndarray] = []
        self.synth: list[np.ndarray] = []
        self.real: list[np.ndarray] = []
        self.size = 0

    def add(self, scores: np.ndarray, synth: np.ndarray, real: np.ndarray) -> None:
        self.scores.append(scores)
        self.synth.append(synth)
        self.real.append(real)
        self.size += scores.size

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.scores:
            empty = np.empty(0)
            return empty.astype(np.float32), empty.astype(np.int64), empty.astype(np.int64)
        return (
            np.concatenate(self.scores),
            np.concatenate(self.synth),
            np.concatenate(self.real),
        )

    def replace(self, scores: np.ndarray, synth: np.ndarray, real: np.ndarray) -> None:
        self.scores = [scores]
        self.synth = [synth]
        self.real = [real]
        self.size = scores.size


def _scan_topk_strip(
    sv: np.ndarray,
    rv: np.ndarray,
    g0: int,
    g1: int,
    k: int,
    tile_q: int,
    tile_g: int,
    margin: float,
) -> tuple[_CandidatePool, int]:
    """Screen one gallery strip, keeping every pair that could reach the top k."""
    pool = _CandidatePool()
    cutoff: float | None = None  # f32 threshold = kth-largest-so-far minus margin
    compact_at = max(4 * k, 1 << 16)
    ns = sv.shape[0]
    examined = 0

    def compact() -> None:
        nonlocal cutoff
        scores, synth, real = pool.arrays()
        if scores.size > k:
            kth = np.partition(scores, scores.size - k)[scores.size - k]
            cutoff = float(kth) - margin
            keep = scores >= cutoff
            scores, synth, real = scores[keep], synth[keep], real[keep]
        pool.replace(scores, synth, real)

    for j0 in range(g0, g1, tile_g):
        j1 = min(j0 + tile_g, g1)
        gal = rv[j0:j1]
        for i0 in range(0, ns, tile_q):
            i1 = min(i0 + tile_q, ns)
            block = tile_pass(sv[i0:i1], gal)
            examined += block.size
            if cutoff is not None and float(block.max()) < cutoff:
                continue
            if cutoff is None:
                vals = block.ravel()
                ii = np.repeat(np.arange(i0, i1, dtype=np.int64), block.shape[1])
                jj = np.tile(np.arange(j0, j1, dtype=np.int64), block.shape[0])
            else:
                mi, mj = np.nonzero(block >= cutoff)
                vals = block[mi, mj]
                ii = mi.astype(np.int64) + i0
                jj = mj.astype(np.int64) + j0
            pool.add(vals, ii, jj)
            if pool.size >= max(compact_at, k):
                compact()
    compact()
    return pool, examined


def top_k_pairs(
    synth: EmbeddingSet,
    real: EmbeddingSet,
    k: int,
    *,
    tile_queries: int = DEFAULT_TILE_QUERIES,
    tile_gallery: int = DEFAULT_TILE_GALLERY,
    workers: int | None = None,
    stats: EngineStats | None = None,
) -> TopKResult:
    """The k globally most similar cross-dataset pairs, exactly.

    Returns all pairs when k exceeds the pair count. Deterministic regardless
    of tile sizes or worker count.
    """
    _check_sets(synth, real)
    if k < 1:
        raise ValidationError("invalid-range", f"k must be >= 1, got {k}")
    if synth.count == 0 or real.count == 0:
        raise ValidationError("empty-set", "both sets must be non-empty")
    kk = min(k, synth.count * real.count)
    margin = _margin(synth.dim)
    nworkers = _resolve_workers(workers)
    strips = _strips(real.count, nworkers)

    with ThreadPoolExecutor(max_workers=len(strips)) as pool:
        futures = [
            pool.submit(
                _scan_topk_strip,
                synth.vectors,
                real.vectors,
                g0,
                g1,
                kk,
                tile_queries,
                tile_gallery,
                margin,
            )
            for g0, g1 in strips
        ]
        results = [f.result() for f in futures]

    if stats is not None:
        stats.examined += sum(ex for _, ex in results)

    merged = [p.arrays() for p, _ in results]
    synth_idx = np.concatenate([m[1] for m in merged])
    real_idx = np.concatenate([m[2] for m in merged])
    exact = exact_scores(synth.vectors[synth_idx], real.vectors[real_idx])
    order = np.lexsort((real_idx, synth_idx, -exact))[:kk]
    pairs = [
        ScoredPair(int(synth_idx[t]), int(real_idx[t]), float(exact[t])) for t in order
    ]
    return TopKResult(k=k, pairs=pairs)


def _scan_rowmax_strip(
    sv: np.ndarray,
    rv: np.ndarray,
    g0: int,
    g1: int,
    tile_q: int,
    tile_g: int,
    margin: float,
) -> tuple[_CandidatePool, np.ndarray, int]:
    """Screen one gallery strip for per-synth-row maxima candidates."""
    ns = sv.shape[0]
    pool = _CandidatePool()
    row_max = np.full(ns, -np.inf, dtype=np.float32)
    compact_at = max(4 * ns, 1 << 16)
    examined = 0

    def compact() -> None:
        scores, synth, real = pool.arrays()
        keep = scores >= row_max[synth] - margin
        pool.replace(scores[keep], synth[keep], real[keep])

    for j0 in range(g0, g1, tile_g):
        j1 = min(j0 + tile_g, g1)
        gal = rv[j0:j1]
        for i0 in range(0, ns, tile_q):
            i1 = min(i0 + tile_q, ns)
            block = tile_pass(sv[i0:i1], gal)
            examined += block.size
            np.maximum(row_max[i0:i1], block.max(axis=1), out=row_max[i0:i1])
            mi, mj = np.nonzero(block >= (row_max[i0:i1, None] - margin))
            pool.add(block[mi, mj], mi.astype(np.int64) + i0, mj.astype(np.int64) + j0)
            if pool.size >= compact_at:
                compact()
    compact()
    return pool, row_max, examined


def nearest_matches(
    synth: EmbeddingSet,
    real: EmbeddingSet,
    *,
    tile_queries: int = DEFAULT_TILE_QUERIES,
    tile_gallery: int = DEFAULT_TILE_GALLERY,
    workers: int | None = None,
    stats: EngineStats | None = None,
) -> NearestMatches:
    """For each synthetic row, the single closest real row (smallest index on ties)."""
    _check_sets(synth, real)
    if real.count == 0:
        raise ValidationError("empty-set", "real set must be non-empty")
    if synth.count == 0:
        return NearestMatches(
            real_indices=np.empty(0, dtype=np.int64), scores=np.empty(0, dtype=np.float64)
        )
    margin = _margin(synth.dim)
    nworkers = _resolve_workers(workers)
    strips = _strips(real.count, nworkers)

    with ThreadPoolExecutor(max_workers=len(strips)) as pool:
        futures = [
            pool.submit(
                _scan_rowmax_strip,
                synth.vectors,
                real.vectors,
                g0,
                g1,
                tile_queries,
                tile_gallery,
                margin,
            )
            for g0, g1 in strips
        ]
        results = [f.result() for f in futures]

    if stats is not None:
        stats.examined += sum(ex for _, _, ex in results)

    global_max = np.max(np.stack([rm for _, rm, _ in results]), axis=0)
    merged = [p.arrays() for p, _, _ in results]
    scores = np.concatenate([m[0] for m in merged])
    synth_idx = np.concatenate([m[1] for m in merged])
    real_idx = np.concatenate([m[2] for m in merged])
    keep = scores >= global_max[synth_idx] - margin
    synth_idx, real_idx = synth_idx[keep], real_idx[keep]

    exact = exact_scores(synth.vectors[synth_idx], real.vectors[real_idx])
    order = np.lexsort((real_idx, -exact, synth_idx))
    rows, first = np.unique(synth_idx[order], return_index=True)
    assert rows.size == synth.count  # every row retains its maximum candidate
    best = order[first]
    return NearestMatches(real_indices=real_idx[best].copy(), scores=exact[best].copy())


def _scan_colmax_strip(
    sv: np.ndarray,
    rv: np.ndarray,
    g0: int,
    g1: int,
    tile_q: int,
    tile_g: int,
    margin: float,
) -> tuple[_CandidatePool, int]:
    """Screen one gallery strip for per-real-row maxima candidates.

    Gallery rows are partitioned across workers, so each real row's running
    maximum lives entirely in one strip scan.
    """
    ns = sv.shape[0]
    pool = _CandidatePool()
    col_max = np.full(g1 - g0, -np.inf, dtype=np.float32)
    compact_at = max(4 * (g1 - g0), 1 << 16)
    examined = 0

    def compact() -> None:
        scores, synth, real = pool.arrays()
        keep = scores >= col_max[real - g0] - margin
        pool.replace(scores[keep], synth[keep], real[keep])

    for j0 in range(g0, g1, tile_g):
        j1 = min(j0 + tile_g, g1)
        gal = rv[j0:j1]
        c0 = j0 - g0
        for i0 in range(0, ns, tile_q):
            i1 = min(i0 + tile_q, ns)
            block = tile_pass(sv[i0:i1], gal)
            examined += block.size
            np.maximum(
                col_max[c0 : c0 + block.shape[1]],
                block.max(axis=0),
                out=col_max[c0 : c0 + block.shape[1]],
            )
            mi, mj = np.nonzero(block >= (col_max[None, c0 : c0 + block.shape[1]] - margin))
            pool.add(block[mi, mj], mi.astype(np.int64) + i0, mj.astype(np.int64) + j0)
            if pool.size >= compact_at:
                compact()
    compact()
    return pool, examined


def unique_real_top_k(
    synth: EmbeddingSet,
    real: EmbeddingSet,
    k: int,
    *,
    tile_queries: int = DEFAULT_TILE_QUERIES,
    tile_gallery: int = DEFAULT_TILE_GALLERY,
    workers: int | None = None,
    stats: EngineStats | None = None,
) -> TopKResult:
    """Top pairs with at most one pair per real image.

    Equivalent to walking the full pair list in the engine's total order and
    skipping any pair whose real index was already taken: for each real row
    only its first-encountered pair (max score, then smallest synth index) can
    ever be selected, so this reduces to a per-real-row best followed by a
    global top-k over those winners.
    """
    _check_sets(synth, real)
    if k < 1:
        raise ValidationError("invalid-range", f"k must be >= 1, got {k}")
    if synth.count == 0 or real.count == 0:
        raise ValidationError("empty-set", "both sets must be non-empty")
    margin = _margin(synth.dim)
    nworkers = _resolve_workers(workers)
    strips = _strips(real.count, nworkers)

    with ThreadPoolExecutor(max_workers=len(strips)) as pool:
        futures = [
            pool.submit(
                _scan_colmax_strip,
                synth.vectors,
                real.vectors,
                g0,
                g1,
                tile_queries,
                tile_gallery,
                margin,
            )
            for g0, g1 in strips
        ]
        results = [f.result() for f in futures]

    if stats is not None:
        stats.examined += sum(ex for _, ex in results)

    merged = [p.arrays() for p, _ in results]
    synth_idx = np.concatenate([m[1] for m in merged])
    real_idx = np.concatenate([m[2] for m in merged])

    exact = exact_scores(synth.vectors[synth_idx], real.vectors[real_idx])
    order = np.lexsort((synth_idx, -exact, real_idx))
    cols, first = np.unique(real_idx[order], return_index=True)
    assert cols.size == real.count
    winners = order[first]
    w_synth, w_real, w_exact = synth_idx[winners], real_idx[winners], exact[winners]

    kk = min(k, real.count)
    final = np.lexsort((w_real, w_synth, -w_exact))[:kk]
    pairs = [
        ScoredPair(int(w_synth[t]), int(w_real[t]), float(w_exact[t])) for t in final
    ]
    return TopKResult(k=k, pairs=pairs)


# --- serialization -----------------------------------------------------------


def write_pairs_jsonl(pairs: list[ScoredPair], path: Path) -> None:
    lines = "".join(
        json.dumps(
            {"synth_index": p.synth_index, "real_index": p.real_index, "score": p.score}
        )
        + "\n"
        for p in pairs
    )
    atomic_write_bytes(Path(path), lines.encode("utf-8"))


def read_pairs_jsonl(path: Path) -> list[ScoredPair]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such pairs file: {path}")
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    ScoredPair(
                        int(obj["synth_index"]), int(obj["real_index"]), float(obj["score"])
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError("parse-failure", f"{path}:{lineno}: {exc}") from exc
    return pairs


def write_pairs_cache(pairs: list[ScoredPair], path: Path, k: int = 0) -> None:
    """Compact binary cache; same header discipline as the embedding format."""
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, k, len(pairs), 2, b"\x00" * 7)
    records = np.empty(len(pairs), dtype=_CACHE_RECORD)
    for t, p in enumerate(pairs):
        records[t] = (p.synth_index, p.real_index, p.score)
    try:
        atomic_write_bytes(Path(path), header + records.tobytes())
    except OSError as exc:
        raise StorageError("io-failure", f"writing {path}: {exc}") from exc


def read_pairs_cache(path: Path) -> TopKResult:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such cache file: {path}")
    raw = path.read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise FormatError("truncated-payload", f"{path} is shorter than the header")
    magic, version, k, count, dtype, _ = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise FormatError("bad-magic", f"{path} does not start with {CACHE_MAGIC!r}")
    if version != CACHE_VERSION or dtype != 2:
        raise FormatError("unsupported-version", f"{path} has version {version}/dtype {dtype}")
    need = count * _CACHE_RECORD.itemsize
    body = raw[_CACHE_HEADER.size :]
    if len(body) < need:
        raise FormatError("truncated-payload", f"{path} payload too short")
    records = np.frombuffer(body[:need], dtype=_CACHE_RECORD)
    pairs = [
        ScoredPair(int(r["synth_index"]), int(r["real_index"]), float(r["score"]))
        for r in records
    ]
    return TopKResult(k=k, pairs=pairs)
