"""Identity-leakage audit for synthetic face datasets.

Detects training images of a generator that resurface in its generated
dataset: exact cross-dataset top-k cosine search over embeddings, a decision
threshold calibrated to a target false accept rate, histogram reporting, and a
human review workflow that adjudicates candidate pairs.
"""

from .calibration import (
    BenchmarkScores,
    FarThreshold,
    Histogram,
    above_threshold_fraction,
    build_histogram,
    far_threshold,
    load_benchmark_scores,
)
from .engine import (
    EngineStats,
    NearestMatches,
    ScoredPair,
    TopKResult,
    nearest_matches,
    tile_pass,
    top_k_pairs,
    unique_real_top_k,
)
from .errors import (
    FormatError,
    LeakcheckError,
    MissingInputError,
    ReviewError,
    StorageError,
    ValidationError,
)
from .pipeline import AuditConfig, AuditReport, ReviewRecord, finalize_report, run_audit
from .registry import DatasetRegistry, DatasetRegistryEntry, load_registry, save_registry
from .store import (
    EmbeddingSet,
    ManifestRecord,
    import_csv,
    normalize,
    read_embedding_set,
    toy_extract,
    write_embedding_set,
)

__version__ = "0.1.0"

__all__ = [
    "AuditConfig",
    "AuditReport",
    "BenchmarkScores",
    "DatasetRegistry",
    "DatasetRegistryEntry",
    "EmbeddingSet",
    "EngineStats",
    "FarThreshold",
    "FormatError",
    "Histogram",
    "LeakcheckError",
    "ManifestRecord",
    "MissingInputError",
    "NearestMatches",
    "ReviewError",
    "ReviewRecord",
    "ScoredPair",
    "StorageError",
    "TopKResult",
    "ValidationError",
    "above_threshold_fraction",
    "build_histogram",
    "far_threshold",
    "finalize_report",
    "import_csv",
    "load_benchmark_scores",
    "load_registry",
    "nearest_matches",
    "normalize",
    "read_embedding_set",
    "run_audit",
    "save_registry",
    "tile_pass",
    "top_k_pairs",
    "toy_extract",
    "unique_real_top_k",
    "write_embedding_set",
    "__version__",
]
