"""Error taxonomy shared by all leakcheck modules.

Every error carries a stable slug (``code``) naming the failure class and an
exit code used by the CLI. Slugs are part of the tool's contract: scripts may
match on them, so they never change meaning between releases.
"""

from __future__ import annotations


class LeakcheckError(Exception):
    """Base class for all errors raised by leakcheck."""

    exit_code = 1

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class MissingInputError(LeakcheckError):
    """A required file, dataset, or benchmark does not exist."""

    exit_code = 3


class FormatError(LeakcheckError):
    """An input file exists but cannot be decoded.

    Slugs: bad-magic, unsupported-version, truncated-payload, dimension-zero,
    ragged-rows, parse-failure, manifest-mismatch, unknown-label.
    """

    exit_code = 4


class ValidationError(LeakcheckError):
    """Inputs decode but violate a documented precondition or invariant.

    Slugs: invariant-violation, zero-vector, empty-input, dim-mismatch,
    unnormalized-input, empty-set, empty-matches, empty-impostor-set,
    far-out-of-range, invalid-range, size-overflow.
    """

    exit_code = 5


class ReviewError(LeakcheckError):
    """Review workflow misuse: unknown-pair, invalid-label, queue-not-loaded."""

    exit_code = 6


class StorageError(LeakcheckError):
    """I/O failure while reading or writing artifacts (io-failure, storage-failure)."""

    exit_code = 7
