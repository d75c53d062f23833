"""Decision thresholds at a target false accept rate, plus histogram summaries.

The matching convention everywhere in this tool is strict: a pair matches iff
score > threshold. The threshold for a target FAR is picked so that the number
of impostor scores strictly above it never exceeds floor(target_far * N),
which gives an exact, testable guarantee on finite samples instead of an
interpolated quantile.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingInputError, ValidationError


@dataclass
class BenchmarkScores:
    """Genuine (same identity) and impostor (different identity) pair scores."""

    genuine: list[float]
    impostor: list[float]
    source_id: str = ""


@dataclass(frozen=True)
class FarThreshold:
    target_far: float
    threshold: float
    achieved_far: float
    impostor_count: int


@dataclass
class Histogram:
    lo: float
    hi: float
    bins: int
    counts: list[int]
    underflow: int
    overflow: int

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.bins

    def edges(self) -> list[float]:
        w = self.bin_width
        e = [self.lo + i * w for i in range(self.bins + 1)]
        e[-1] = self.hi
        return e


def far_threshold(scores: BenchmarkScores, target_far: float) -> FarThreshold:
    """Threshold whose strict-accept rate on the impostor set is <= target_far.

    With impostor scores sorted descending d_1 >= ... >= d_N and
    m = floor(target_far * N), the threshold is d_(m+1): at most m scores can
    lie strictly above it, and ties at the threshold are excluded by the
    strict comparison, so achieved_far <= target_far always holds.
    """
    if not (0.0 < target_far < 1.0):
        raise ValidationError(
            "far-out-of-range", f"target_far must be in (0, 1), got {target_far}"
        )
    n = len(scores.impostor)
    if n == 0:
        raise ValidationError("empty-impostor-set", "cannot derive a threshold without impostor scores")
    ordered = np.sort(np.asarray(scores.impostor, dtype=np.float64))[::-1]
    m = int(math.floor(target_far * n))
    threshold = float(ordered[min(m, n - 1)])
    achieved = int(np.sum(ordered > threshold)) / n
    return FarThreshold(
        target_far=target_far,
        threshold=threshold,
        achieved_far=achieved,
        impostor_count=n,
    )


def above_threshold_fraction(scores: np.ndarray, threshold: float) -> float:
    """Fraction of scores strictly greater than the threshold."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("empty-matches", "no scores to compare against the threshold")
    return float(np.count_nonzero(arr > threshold)) / arr.size


def build_histogram(scores, lo: float, hi: float, bins: int) -> Histogram:
    """Uniform histogram over [lo, hi]; half-open bins, last bin right-closed.

    Scores outside the range land in the underflow/overflow counters, so
    counts + underflow + overflow always equals the input length.
    """
    if not (lo < hi):
        raise ValidationError("invalid-range", f"need lo < hi, got [{lo}, {hi}]")
    if bins < 1:
        raise ValidationError("invalid-range", f"bins must be >= 1, got {bins}")
    arr = np.asarray(scores, dtype=np.float64)
    under = int(np.count_nonzero(arr < lo))
    over = int(np.count_nonzero(arr > hi))
    inside = arr[(arr >= lo) & (arr <= hi)]
    w = (hi - lo) / bins
    edges = lo + w * np.arange(bins + 1)
    edges[-1] = hi
    counts, _ = np.histogram(inside, bins=edges)
    return Histogram(
        lo=lo,
        hi=hi,
        bins=bins,
        counts=[int(c) for c in counts],
        underflow=under,
        overflow=over,
    )


def load_benchmark_scores(path: Path) -> BenchmarkScores:
    """Read a two-column CSV (label in {genuine, impostor}, score)."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-benchmark", f"no such scores file: {path}")
    genuine: list[float] = []
    impostor: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and [c.strip().lower() for c in row] == ["label", "score"]):
                continue
            if len(row) != 2:
                raise FormatError(
                    "parse-failure", f"{path}:{lineno}: expected 2 columns, got {len(row)}"
                )
            label = row[0].strip().lower()
            try:
                score = float(row[1])
            except ValueError as exc:
                raise FormatError("parse-failure", f"{path}:{lineno}: {exc}") from exc
            if label == "genuine":
                genuine.append(score)
            elif label == "impostor":
                impostor.append(score)
            else:
                raise FormatError("unknown-label", f"{path}:{lineno}: {label!r}")
    return BenchmarkScores(genuine=genuine, impostor=impostor, source_id=path.stem)


def write_benchmark_scores(scores: BenchmarkScores, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "score"])
        for s in scores.genuine:
            writer.writerow(["genuine", repr(s)])
        for s in scores.impostor:
            writer.writerow(["impostor", repr(s)])


def write_histogram_csv(hist: Histogram, path: Path) -> None:
    """Plot-ready CSV: one row per bin with its edges and count."""
    edges = hist.edges()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(hist.counts):
            writer.writerow([repr(edges[i]), repr(edges[i + 1]), c])


def write_histogram_sidecar(
    hist: Histogram,
    path: Path,
    far: FarThreshold | None = None,
    extra: dict | None = None,
) -> None:
    """JSON sidecar with range/overflow data and threshold lines for plotting."""
    doc: dict = {
        "lo": hist.lo,
        "hi": hist.hi,
        "bins": hist.bins,
        "underflow": hist.underflow,
        "overflow": hist.overflow,
        "total": sum(hist.counts) + hist.underflow + hist.overflow,
    }
    if far is not None:
        doc["far_threshold"] = {
            "target_far": far.target_far,
            "threshold": far.threshold,
            "achieved_far": far.achieved_far,
            "impostor_count": far.impostor_count,
        }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_histogram_csv(path: Path) -> Histogram:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such histogram file: {path}")
    lefts: list[float] = []
    rights: list[float] = []
    counts: list[int] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["bin_left", "bin_right", "count"]:
            raise FormatError("parse-failure", f"{path}: bad histogram header")
        for row in reader:
            if not row:
                continue
            try:
                lefts.append(float(row[0]))
                rights.append(float(row[1]))
                counts.append(int(row[2]))
            except (IndexError, ValueError) as exc:
                raise FormatError("parse-failure", f"{path}: {exc}") from exc
    if not counts:
        raise FormatError("parse-failure", f"{path}: no bins")
    return Histogram(
        lo=lefts[0], hi=rights[-1], bins=len(counts), counts=counts, underflow=0, overflow=0
    )
