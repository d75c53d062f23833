"""End-to-end audit: load sets, search, calibrate, emit the review queue and report.

An audit run is deterministic for fixed inputs: the report carries a digest of
the effective config plus the input files, so a finding can always be traced
back to the exact run that produced it. Human review happens afterwards;
finalize_report folds the label log into the report without touching the
engine results.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import calibration, engine, store
from .calibration import FarThreshold
from .errors import FormatError, MissingInputError, ReviewError, ValidationError
from .registry import DatasetRegistry

DEDUP_MODES = ("all_pairs", "unique_real")

# Review taxonomy: a pair is only ever counted as leaked on unanimous "leaked"
# labels; the other categories mark pairs that high scores alone cannot prove.
REVIEW_LABELS = ("leaked", "child", "no_face", "not_same_identity", "uncertain")

QUEUE_FILENAME = "queue.jsonl"
HISTOGRAM_CSV_FILENAME = "histogram.csv"
HISTOGRAM_JSON_FILENAME = "histogram.json"
REPORT_FILENAME = "report.json"


@dataclass(frozen=True)
class ReviewRecord:
    """One reviewer's label for one queue pair. Append-only; corrections supersede."""

    pair_id: str
    reviewer_id: str
    label: str
    timestamp: str
    supersedes: str | None = None
    record_id: str | None = None

    def to_json(self) -> str:
        obj = {
            "record_id": self.record_id,
            "pair_id": self.pair_id,
            "reviewer_id": self.reviewer_id,
            "label": self.label,
            "timestamp": self.timestamp,
            "supersedes": self.supersedes,
        }
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ReviewRecord":
        try:
            obj = json.loads(line)
            return cls(
                pair_id=str(obj["pair_id"]),
                reviewer_id=str(obj["reviewer_id"]),
                label=str(obj["label"]),
                timestamp=str(obj["timestamp"]),
                supersedes=obj.get("supersedes"),
                record_id=obj.get("record_id"),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError("parse-failure", f"bad label record: {exc}") from exc


@dataclass(frozen=True)
class QueueEntry:
    """One candidate pair queued for human review."""

    pair_id: str
    rank: int
    synth_index: int
    real_index: int
    score: float
    synth_path: str
    real_path: str
    above_threshold: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "QueueEntry":
        try:
            obj = json.loads(line)
            return cls(
                pair_id=str(obj["pair_id"]),
                rank=int(obj["rank"]),
                synth_index=int(obj["synth_index"]),
                real_index=int(obj["real_index"]),
                score=float(obj["score"]),
                synth_path=str(obj["synth_path"]),
                real_path=str(obj["real_path"]),
                above_threshold=bool(obj["above_threshold"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError("parse-failure", f"bad queue entry: {exc}") from exc


@dataclass
class AuditConfig:
    synthetic_id: str
    real_id: str
    benchmark_id: str
    k: int = 1500
    target_far: float = 1e-4
    dedup_mode: str = "all_pairs"
    hist_lo: float = -1.0
    hist_hi: float = 1.0
    hist_bins: int = 100
    required_reviewers: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError("invalid-range", f"k must be >= 1, got {self.k}")
        if not (0.0 < self.target_far < 1.0):
            raise ValidationError(
                "far-out-of-range", f"target_far must be in (0, 1), got {self.target_far}"
            )
        if self.dedup_mode not in DEDUP_MODES:
            raise ValidationError(
                "invalid-range", f"dedup_mode must be one of {DEDUP_MODES}, got {self.dedup_mode!r}"
            )
        if self.required_reviewers < 1:
            raise ValidationError(
                "invalid-range", f"required_reviewers must be >= 1, got {self.required_reviewers}"
            )


@dataclass
class AuditReport:
    config: dict
    synthetic_count: int
    real_count: int
    far: FarThreshold
    above_threshold_fraction: float
    topk_cutoff_score: float
    top_scores: list[float]
    queue_file: str
    histogram_csv: str
    histogram_json: str
    input_digests: dict
    digest: str
    generated_at: str
    review: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        doc = asdict(self)
        doc["far"] = asdict(self.far)
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AuditReport":
        far = FarThreshold(**doc["far"])
        kwargs = dict(doc)
        kwargs["far"] = far
        return cls(**kwargs)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _pair_id(synth_index: int, real_index: int) -> str:
    return f"s{synth_index}-r{real_index}"


def run_audit(
    config: AuditConfig,
    registry: DatasetRegistry,
    out_dir: Path,
    *,
    tile_queries: int = engine.DEFAULT_TILE_QUERIES,
    tile_gallery: int = engine.DEFAULT_TILE_GALLERY,
    workers: int | None = None,
) -> AuditReport:
    """Run the full attack pipeline and emit the review queue (review fields pending).

    Sets are normalized on load if needed. The queue holds exactly
    min(k, available pairs) entries in rank order; rank 1 is the global best.
    """
    out_dir = Path(out_dir)

    synth_path = registry.embeddings_path(config.synthetic_id)
    real_path = registry.embeddings_path(config.real_id)
    scores_path = registry.scores_path(config.benchmark_id)
    if not scores_path.is_file():
        raise MissingInputError("missing-benchmark", f"no such scores file: {scores_path}")

    synth = store.read_embedding_set(synth_path)
    real = store.read_embedding_set(real_path)
    if not synth.normalized:
        synth = store.normalize(synth)
    if not real.normalized:
        real = store.normalize(real)

    bench = calibration.load_benchmark_scores(scores_path)
    far = calibration.far_threshold(bench, config.target_far)

    search = engine.unique_real_top_k if config.dedup_mode == "unique_real" else engine.top_k_pairs
    topk = search(
        synth,
        real,
        config.k,
        tile_queries=tile_queries,
        tile_gallery=tile_gallery,
        workers=workers,
    )
    nn = engine.nearest_matches(
        synth, real, tile_queries=tile_queries, tile_gallery=tile_gallery, workers=workers
    )
    fraction = calibration.above_threshold_fraction(nn.scores, far.threshold)
    hist = calibration.build_histogram(
        nn.scores, config.hist_lo, config.hist_hi, config.hist_bins
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [
        QueueEntry(
            pair_id=_pair_id(p.synth_index, p.real_index),
            rank=rank,
            synth_index=p.synth_index,
            real_index=p.real_index,
            score=p.score,
            synth_path=synth.manifest[p.synth_index].image_path,
            real_path=real.manifest[p.real_index].image_path,
            above_threshold=bool(p.score > far.threshold),
        )
        for rank, p in enumerate(topk.pairs, start=1)
    ]
    write_queue(entries, out_dir / QUEUE_FILENAME)

    cutoff = topk.pairs[-1].score if topk.pairs else float("nan")
    calibration.write_histogram_csv(hist, out_dir / HISTOGRAM_CSV_FILENAME)
    calibration.write_histogram_sidecar(
        hist,
        out_dir / HISTOGRAM_JSON_FILENAME,
        far=far,
        extra={"topk_cutoff_score": cutoff, "k": config.k, "dedup_mode": config.dedup_mode},
    )

    config_doc = asdict(config)
    input_digests = {
        "synthetic_embeddings": _sha256_file(synth_path),
        "real_embeddings": _sha256_file(real_path),
        "benchmark_scores": _sha256_file(scores_path),
    }
    digest_src = json.dumps(
        {"config": config_doc, "inputs": input_digests}, sort_keys=True
    ).encode("utf-8")

    return AuditReport(
        config=config_doc,
        synthetic_count=synth.count,
        real_count=real.count,
        far=far,
        above_threshold_fraction=fraction,
        topk_cutoff_score=cutoff,
        top_scores=[p.score for p in topk.pairs[:5]],
        queue_file=QUEUE_FILENAME,
        histogram_csv=HISTOGRAM_CSV_FILENAME,
        histogram_json=HISTOGRAM_JSON_FILENAME,
        input_digests=input_digests,
        digest=hashlib.sha256(digest_src).hexdigest(),
        generated_at=datetime.now(timezone.utc).isoformat(),
        review=_empty_review(config.required_reviewers),
    )


def _empty_review(required_reviewers: int) -> dict:
    return {
        "finalized": False,
        "required_reviewers": required_reviewers,
        "tallies": {label: 0 for label in REVIEW_LABELS},
        "reviewed_pairs": 0,
        "consensus_leaked_count": 0,
        "leaked_pairs": [],
    }


def effective_labels(labels: list[ReviewRecord]) -> dict[tuple[str, str], ReviewRecord]:
    """Resolve supersessions: the latest record per (reviewer, pair) wins."""
    resolved: dict[tuple[str, str], ReviewRecord] = {}
    for rec in labels:
        if rec.label not in REVIEW_LABELS:
            raise ReviewError("invalid-label", f"unknown label {rec.label!r}")
        resolved[(rec.reviewer_id, rec.pair_id)] = rec
    return resolved


def finalize_report(
    report: AuditReport, labels: list[ReviewRecord], queue: list[QueueEntry]
) -> AuditReport:
    """Fold the label log into the report.

    A pair is consensus-leaked iff at least required_reviewers distinct
    reviewers labeled it and every one of its effective labels is "leaked".
    Pairs labeled child/no_face/not_same_identity are tallied but never
    counted as leaks. Pure: replaying the same log reproduces the same report.
    """
    by_id = {e.pair_id: e for e in queue}
    for rec in labels:
        if rec.pair_id not in by_id:
            raise ReviewError("unknown-pair", f"label references unknown pair {rec.pair_id!r}")

    required = int(report.review.get("required_reviewers", 1)) if report.review else 1
    resolved = effective_labels(labels)

    tallies = {label: 0 for label in REVIEW_LABELS}
    per_pair: dict[str, list[ReviewRecord]] = {}
    for (_, pair_id), rec in resolved.items():
        tallies[rec.label] += 1
        per_pair.setdefault(pair_id, []).append(rec)

    leaked_entries = []
    for pair_id, recs in per_pair.items():
        reviewers = {r.reviewer_id for r in recs}
        if len(reviewers) >= required and all(r.label == "leaked" for r in recs):
            leaked_entries.append(by_id[pair_id])
    leaked_entries.sort(key=lambda e: e.rank)

    review = {
        "finalized": True,
        "required_reviewers": required,
        "tallies": tallies,
        "reviewed_pairs": len(per_pair),
        "consensus_leaked_count": len(leaked_entries),
        "leaked_pairs": [asdict(e) for e in leaked_entries],
    }
    assert review["consensus_leaked_count"] <= review["reviewed_pairs"] <= len(queue)
    return replace(report, review=review)


def write_queue(entries: list[QueueEntry], path: Path) -> None:
    text = "".join(e.to_json() + "\n" for e in entries)
    store.atomic_write_bytes(Path(path), text.encode("utf-8"))


def read_queue(path: Path) -> list[QueueEntry]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such queue file: {path}")
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(QueueEntry.from_json(line))
    return entries


def write_report(report: AuditReport, path: Path) -> None:
    data = json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    store.atomic_write_bytes(Path(path), data.encode("utf-8"))


def read_report(path: Path) -> AuditReport:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such report file: {path}")
    try:
        return AuditReport.from_json_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError("parse-failure", f"{path}: {exc}") from exc
