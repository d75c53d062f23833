"""Unblocked 64-bit reference engines.

The straightforward implementations the blocked engine is benchmarked against
and checked for equality with: an outer loop over synthetic rows, a full
float64 scan of the gallery per row, no tiling, no screening. Tie handling
matches the engine's total order (score desc, synth asc, real asc).
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .engine import NearestMatches, ScoredPair, TopKResult
from .store import EmbeddingSet

# Full-matrix materialization guard for the greedy reference.
_MAX_DENSE_PAIRS = 1 << 26


def _check(synth: EmbeddingSet, real: EmbeddingSet) -> None:
    if synth.dim != real.dim:
        raise ValidationError("dim-mismatch", f"dims differ: {synth.dim} vs {real.dim}")
    if not synth.normalized or not real.normalized:
        raise ValidationError("unnormalized-input", "both sets must be normalized")
    if synth.count == 0 or real.count == 0:
        raise ValidationError("empty-set", "both sets must be non-empty")


def naive_top_k_pairs(synth: EmbeddingSet, real: EmbeddingSet, k: int) -> TopKResult:
    """Reference global top-k: per-row float64 scores, tie-safe pooling, full sort."""
    _check(synth, real)
    if k < 1:
        raise ValidationError("invalid-range", f"k must be >= 1, got {k}")
    ns, nr = synth.count, real.count
    kk = min(k, ns * nr)
    m = min(kk, nr)
    gallery = real.vectors.astype(np.float64)

    pool_s: list[np.ndarray] = []
    pool_i: list[np.ndarray] = []
    pool_j: list[np.ndarray] = []
    size = 0
    compact_at = max(4 * kk, 1 << 20)

    def compact() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nonlocal size
        s = np.concatenate(pool_s)
        i = np.concatenate(pool_i)
        j = np.concatenate(pool_j)
        if s.size > kk:
            kth = np.partition(s, s.size - kk)[s.size - kk]
            keep = s >= kth  # ties at the boundary stay in
            s, i, j = s[keep], i[keep], j[keep]
        pool_s[:], pool_i[:], pool_j[:] = [s], [i], [j]
        size = s.size
        return s, i, j

    for i in range(ns):
        row = gallery @ synth.vectors[i].astype(np.float64)
        if nr > m:
            vth = np.partition(row, nr - m)[nr - m]
            js = np.nonzero(row >= vth)[0]
        else:
            js = np.arange(nr)
        pool_s.append(row[js])
        pool_i.append(np.full(js.size, i, dtype=np.int64))
        pool_j.append(js.astype(np.int64))
        size += js.size
        if size >= compact_at:
            compact()

    s, si, sj = compact()
    order = np.lexsort((sj, si, -s))[:kk]
    return TopKResult(
        k=k, pairs=[ScoredPair(int(si[t]), int(sj[t]), float(s[t])) for t in order]
    )


def naive_nearest_matches(synth: EmbeddingSet, real: EmbeddingSet) -> NearestMatches:
    """Reference per-row nearest match (argmax returns the smallest index on ties)."""
    _check(synth, real)
    gallery = real.vectors.astype(np.float64)
    idx = np.empty(synth.count, dtype=np.int64)
    sc = np.empty(synth.count, dtype=np.float64)
    for i in range(synth.count):
        row = gallery @ synth.vectors[i].astype(np.float64)
        j = int(np.argmax(row))
        idx[i] = j
        sc[i] = row[j]
    return NearestMatches(real_indices=idx, scores=sc)


def naive_unique_real_top_k(synth: EmbeddingSet, real: EmbeddingSet, k: int) -> TopKResult:
    """Reference greedy filter: walk the fully sorted pair list, skip used real rows."""
    _check(synth, real)
    if k < 1:
        raise ValidationError("invalid-range", f"k must be >= 1, got {k}")
    ns, nr = synth.count, real.count
    if ns * nr > _MAX_DENSE_PAIRS:
        raise ValidationError(
            "size-overflow", f"{ns}x{nr} pairs exceed the dense reference limit"
        )
    gallery = real.vectors.astype(np.float64)
    scores = np.empty((ns, nr), dtype=np.float64)
    for i in range(ns):
        scores[i] = gallery @ synth.vectors[i].astype(np.float64)
    flat = scores.ravel()
    ii = np.repeat(np.arange(ns, dtype=np.int64), nr)
    jj = np.tile(np.arange(nr, dtype=np.int64), ns)
    order = np.lexsort((jj, ii, -flat))

    taken: set[int] = set()
    pairs: list[ScoredPair] = []
    for t in order:
        j = int(jj[t])
        if j in taken:
            continue
        taken.add(j)
        pairs.append(ScoredPair(int(ii[t]), j, float(flat[t])))
        if len(pairs) == min(k, nr):
            break
    return TopKResult(k=k, pairs=pairs)
