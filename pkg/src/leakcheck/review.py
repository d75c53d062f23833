"""Review workflow state: durable label log and per-reviewer queue serving.

The label log is the product here: an append-only JSON-lines file where
corrections supersede rather than overwrite, so every human decision stays
auditable. A label is on disk (flushed and fsynced) before the caller gets an
acknowledgment.
"""

from __future__ import annotations

import os
from datetime import datetime, timezone
from pathlib import Path

from .errors import ReviewError, StorageError
from .pipeline import (
    AuditReport,
    QueueEntry,
    REVIEW_LABELS,
    ReviewRecord,
    finalize_report,
)


class LabelLog:
    """Append-only JSON-lines log of ReviewRecords."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.records: list[ReviewRecord] = []
        if self.path.is_file():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self.records.append(ReviewRecord.from_json(line))

    def append(self, record: ReviewRecord) -> ReviewRecord:
        """Assign a record id and persist before returning."""
        stamped = ReviewRecord(
            pair_id=record.pair_id,
            reviewer_id=record.reviewer_id,
            label=record.label,
            timestamp=record.timestamp,
            supersedes=record.supersedes,
            record_id=f"r{len(self.records) + 1:06d}",
        )
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(stamped.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StorageError("storage-failure", f"appending to {self.path}: {exc}") from exc
        self.records.append(stamped)
        return stamped


class ReviewSession:
    """Serves queue pairs in rank order and records labels.

    A reviewer is never served a pair they already labeled; corrections go
    through submit_label on an explicit pair id and supersede the old record.
    """

    def __init__(self, queue: list[QueueEntry], log: LabelLog, pending_report: AuditReport):
        if not queue:
            raise ReviewError("queue-not-loaded", "review queue is empty or missing")
        self.queue = sorted(queue, key=lambda e: e.rank)
        self.by_id = {e.pair_id: e for e in queue}
        self.log = log
        self.pending_report = pending_report
        # (reviewer, pair) -> latest record, rebuilt by replaying the log
        self.effective: dict[tuple[str, str], ReviewRecord] = {}
        for rec in log.records:
            self.effective[(rec.reviewer_id, rec.pair_id)] = rec

    def labeled_count(self, reviewer_id: str) -> int:
        return sum(1 for (r, _) in self.effective if r == reviewer_id)

    def next_pair(self, reviewer_id: str) -> QueueEntry | None:
        """Lowest-rank pair this reviewer has not labeled, or None when done."""
        for entry in self.queue:
            if (reviewer_id, entry.pair_id) not in self.effective:
                return entry
        return None

    def get_pair(self, pair_id: str) -> QueueEntry:
        entry = self.by_id.get(pair_id)
        if entry is None:
            raise ReviewError("unknown-pair", f"no such pair: {pair_id!r}")
        return entry

    def submit_label(
        self,
        pair_id: str,
        reviewer_id: str,
        label: str,
        timestamp: str | None = None,
    ) -> tuple[ReviewRecord, bool]:
        """Record a label. Returns (record, appended).

        Re-submitting the label a reviewer already has on a pair is a no-op
        acknowledgment (retry-safe); a different label supersedes the old one.
        """
        if pair_id not in self.by_id:
            raise ReviewError("unknown-pair", f"no such pair: {pair_id!r}")
        if label not in REVIEW_LABELS:
            raise ReviewError(
                "invalid-label", f"label must be one of {REVIEW_LABELS}, got {label!r}"
            )
        if not reviewer_id:
            raise ReviewError("invalid-label", "reviewer_id must be non-empty")
        existing = self.effective.get((reviewer_id, pair_id))
        if existing is not None and existing.label == label:
            return existing, False
        record = ReviewRecord(
            pair_id=pair_id,
            reviewer_id=reviewer_id,
            label=label,
            timestamp=timestamp or datetime.now(timezone.utc).isoformat(),
            supersedes=existing.record_id if existing is not None else None,
        )
        record = self.log.append(record)
        self.effective[(reviewer_id, pair_id)] = record
        return record, True

    def report(self) -> AuditReport:
        """Finalized report reflecting all durable labels at call time."""
        return finalize_report(self.pending_report, self.log.records, self.queue)
