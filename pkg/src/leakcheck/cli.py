"""Single entry point wiring all modules into the audit workflow.

Exit codes are stable per error class: 0 success, 2 usage, 3 missing input,
4 format, 5 validation, 6 review, 7 storage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import calibration, engine, figures, naive, pipeline, service, store
from .errors import LeakcheckError, MissingInputError, ValidationError
from .registry import load_registry

_AUDIT_DEFAULTS = {
    "k": 1500,
    "target_far": 1e-4,
    "dedup_mode": "all_pairs",
    "hist_lo": -1.0,
    "hist_hi": 1.0,
    "hist_bins": 100,
    "required_reviewers": 1,
}

# Upper bound on bench working-set bytes; refuses runs that cannot fit.
_BENCH_MEMORY_CAP = 4 << 30


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LeakcheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leakcheck",
        description="Audit a synthetic face dataset for identity leakage from "
        "its generator's training data.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="convert a CSV of embeddings to the binary format")
    p.add_argument("--csv", required=True, type=Path, help="CSV with one embedding per row")
    p.add_argument("--manifest", required=True, type=Path, help="JSON-lines manifest")
    p.add_argument("--out", required=True, type=Path, help="output embedding file")
    p.add_argument("--normalize", action="store_true", help="unit-normalize rows before writing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract", help="extract embeddings from images")
    p.add_argument("--images", required=True, type=Path, help="image directory or list file")
    p.add_argument("--out", required=True, type=Path, help="output embedding file")
    p.add_argument("--cmd", help="external extractor command (gets <list> <out> appended)")
    p.add_argument("--toy", action="store_true", help="use the built-in toy extractor")
    p.add_argument("--dim", type=int, default=512, help="toy extractor dimensionality")
    p.add_argument("--seed", type=int, default=0, help="toy extractor projection seed")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("search", help="exact top-k similarity search between two sets")
    p.add_argument("--synthetic", required=True, type=Path)
    p.add_argument("--real", required=True, type=Path)
    p.add_argument("--k", type=int, default=1500)
    p.add_argument("--dedup-mode", choices=pipeline.DEDUP_MODES, default="all_pairs")
    p.add_argument("--normalize", action="store_true", help="normalize sets on load")
    p.add_argument("--out", type=Path, help="pairs JSON-lines output")
    p.add_argument("--cache", type=Path, help="binary pairs cache output")
    p.add_argument("--nearest", type=Path, help="per-synthetic nearest matches JSON-lines output")
    _add_engine_args(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("calibrate", help="derive a decision threshold at a target FAR")
    p.add_argument("--scores", required=True, type=Path, help="benchmark scores CSV")
    p.add_argument("--target-far", type=float, default=1e-4)
    p.add_argument("--out", type=Path, help="threshold JSON output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("hist", help="histogram scores from a pairs file")
    p.add_argument("--pairs", required=True, type=Path, help="pairs JSON-lines input")
    p.add_argument("--lo", type=float, default=-1.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--out-csv", required=True, type=Path)
    p.add_argument("--out-json", type=Path)
    p.add_argument("--png", type=Path, help="also render the figure")
    p.add_argument("--threshold-json", type=Path, help="threshold JSON from `calibrate`")
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("audit", help="run the full audit pipeline")
    p.add_argument("--registry", required=True, type=Path)
    p.add_argument("--synthetic", help="synthetic dataset id")
    p.add_argument("--real", help="real (generator training) dataset id")
    p.add_argument("--benchmark", help="benchmark dataset id for calibration")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--k", type=int)
    p.add_argument("--target-far", type=float)
    p.add_argument("--dedup-mode", choices=pipeline.DEDUP_MODES)
    p.add_argument("--hist-lo", type=float)
    p.add_argument("--hist-hi", type=float)
    p.add_argument("--hist-bins", type=int)
    p.add_argument("--required-reviewers", type=int)
    p.add_argument("--no-figure", action="store_true", help="skip PNG rendering")
    _add_engine_args(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("serve", help="serve the review queue and UI over HTTP")
    p.add_argument("--queue", required=True, type=Path)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path, help="pending report JSON")
    p.add_argument("--registry", type=Path, help="registry (needed for image serving)")
    p.add_argument("--ui-dir", type=Path, help="built frontend assets directory")
    p.add_argument("--listen", default="127.0.0.1:8731", help="host:port (port 0 picks one)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="finalize a report from the label log")
    p.add_argument("--report", required=True, type=Path, help="pending report JSON")
    p.add_argument("--queue", required=True, type=Path)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="blocked vs naive engine benchmark")
    p.add_argument("--synth-count", type=int, default=10000)
    p.add_argument("--real-count", type=int, default=10000)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--k", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)
    _add_engine_args(p)
    p.set_defaults(func=cmd_bench)

    return parser


def _add_engine_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    p.add_argument("--tile-queries", type=int, default=engine.DEFAULT_TILE_QUERIES)
    p.add_argument("--tile-gallery", type=int, default=engine.DEFAULT_TILE_GALLERY)


# -- subcommands ---------------------------------------------------------


def cmd_ingest(args) -> int:
    es = store.import_csv(args.csv, args.manifest)
    if args.normalize:
        es = store.normalize(es)
    store.write_embedding_set(es, args.out)
    print(f"wrote {es.count} x {es.dim} embeddings to {args.out}")
    return 0


def cmd_extract(args) -> int:
    if bool(args.cmd) == bool(args.toy):
        raise ValidationError("invalid-range", "pass exactly one of --cmd or --toy")
    images = _collect_images(args.images)
    if not images:
        raise ValidationError("empty-input", f"no images found under {args.images}")
    # manifest paths are relative to the image directory, which doubles as the
    # dataset root the review service serves images from
    def rel(p: Path) -> str:
        return str(p.relative_to(args.images)) if args.images.is_dir() else str(p)

    manifest = [
        store.ManifestRecord(row_index=i, image_path=rel(p)) for i, p in enumerate(images)
    ]
    if args.toy:
        vectors = np.stack(
            [store.toy_extract(p.read_bytes(), args.dim, args.seed) for p in images]
        )
        es = store.EmbeddingSet(
            dataset_id=args.out.stem, vectors=vectors, manifest=manifest, normalized=True
        )
        store.write_embedding_set(es, args.out)
    else:
        list_path = args.out.parent / (args.out.name + ".images.txt")
        list_path.write_text("".join(str(p) + "\n" for p in images), encoding="utf-8")
        es = store.run_extractor_command(shlex.split(args.cmd), list_path, args.out)
        if es.count != len(images):
            raise ValidationError(
                "invariant-violation",
                f"extractor wrote {es.count} rows for {len(images)} images",
            )
        store.write_manifest(manifest, store.manifest_path_for(args.out))
    print(f"extracted {len(images)} embeddings to {args.out}")
    return 0


def cmd_search(args) -> int:
    synth = store.read_embedding_set(args.synthetic)
    real = store.read_embedding_set(args.real)
    if args.normalize:
        synth, real = store.normalize(synth), store.normalize(real)
    search = (
        engine.unique_real_top_k if args.dedup_mode == "unique_real" else engine.top_k_pairs
    )
    t0 = time.perf_counter()
    topk = search(
        synth,
        real,
        args.k,
        tile_queries=args.tile_queries,
        tile_gallery=args.tile_gallery,
        workers=args.threads,
    )
    dt = time.perf_counter() - t0
    if args.out:
        engine.write_pairs_jsonl(topk.pairs, args.out)
    if args.cache:
        engine.write_pairs_cache(topk.pairs, args.cache, k=args.k)
    if args.nearest:
        nn = engine.nearest_matches(
            synth,
            real,
            tile_queries=args.tile_queries,
            tile_gallery=args.tile_gallery,
            workers=args.threads,
        )
        engine.write_pairs_jsonl(nn.to_pairs(), args.nearest)
    rate = synth.count * real.count / dt if dt > 0 else float("inf")
    print(f"searched {synth.count} x {real.count} pairs in {dt:.2f}s ({rate:,.0f} pairs/s)")
    for p in topk.pairs[:5]:
        print(f"  synth {p.synth_index} ~ real {p.real_index}  score {p.score:.6f}")
    return 0


def cmd_calibrate(args) -> int:
    scores = calibration.load_benchmark_scores(args.scores)
    far = calibration.far_threshold(scores, args.target_far)
    doc = {
        "target_far": far.target_far,
        "threshold": far.threshold,
        "achieved_far": far.achieved_far,
        "impostor_count": far.impostor_count,
    }
    if args.out:
        store.atomic_write_bytes(
            args.out, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
        )
    print(
        f"threshold {far.threshold:.6f} at target FAR {far.target_far:g} "
        f"(achieved {far.achieved_far:g} on {far.impostor_count} impostor scores)"
    )
    return 0


def cmd_hist(args) -> int:
    pairs = engine.read_pairs_jsonl(args.pairs)
    scores = [p.score for p in pairs]
    hist = calibration.build_histogram(scores, args.lo, args.hi, args.bins)
    far = None
    if args.threshold_json:
        if not args.threshold_json.is_file():
            raise MissingInputError("missing-input", f"no such file: {args.threshold_json}")
        doc = json.loads(args.threshold_json.read_text(encoding="utf-8"))
        far = calibration.FarThreshold(
            target_far=doc["target_far"],
            threshold=doc["threshold"],
            achieved_far=doc["achieved_far"],
            impostor_count=doc["impostor_count"],
        )
    calibration.write_histogram_csv(hist, args.out_csv)
    if args.out_json:
        calibration.write_histogram_sidecar(hist, args.out_json, far=far)
    if args.png:
        figures.render_score_histogram(hist, args.png, far=far)
    total = sum(hist.counts) + hist.underflow + hist.overflow
    print(
        f"histogram of {total} scores -> {args.out_csv} "
        f"(underflow {hist.underflow}, overflow {hist.overflow})"
    )
    return 0


def cmd_audit(args) -> int:
    registry = load_registry(args.registry)
    file_cfg = _load_config_file(args.config) if args.config else {}

    def pick(name: str, flag_value):
        if flag_value is not None:
            return flag_value
        if name in file_cfg:
            return file_cfg[name]
        return _AUDIT_DEFAULTS.get(name)

    synthetic_id = pick("synthetic_id", args.synthetic)
    real_id = pick("real_id", args.real)
    benchmark_id = pick("benchmark_id", args.benchmark)
    for name, value in (("synthetic", synthetic_id), ("real", real_id), ("benchmark", benchmark_id)):
        if not value:
            raise ValidationError("invalid-range", f"--{name} is required (flag or config file)")

    config = pipeline.AuditConfig(
        synthetic_id=str(synthetic_id),
        real_id=str(real_id),
        benchmark_id=str(benchmark_id),
        k=int(pick("k", args.k)),
        target_far=float(pick("target_far", args.target_far)),
        dedup_mode=str(pick("dedup_mode", args.dedup_mode)),
        hist_lo=float(pick("hist_lo", args.hist_lo)),
        hist_hi=float(pick("hist_hi", args.hist_hi)),
        hist_bins=int(pick("hist_bins", args.hist_bins)),
        required_reviewers=int(pick("required_reviewers", args.required_reviewers)),
    )
    report = pipeline.run_audit(
        config,
        registry,
        args.out,
        tile_queries=args.tile_queries,
        tile_gallery=args.tile_gallery,
        workers=args.threads,
    )
    report_path = args.out / pipeline.REPORT_FILENAME
    pipeline.write_report(report, report_path)

    if not args.no_figure:
        hist = calibration.read_histogram_csv(args.out / report.histogram_csv)
        bench = calibration.load_benchmark_scores(registry.scores_path(config.benchmark_id))
        figures.render_score_histogram(
            hist,
            args.out / "histogram.png",
            far=report.far,
            topk_cutoff=report.topk_cutoff_score,
            genuine=bench.genuine,
            impostor=bench.impostor,
            title=f"{config.synthetic_id} vs {config.real_id}",
        )
        queue = pipeline.read_queue(args.out / report.queue_file)
        figures.render_rank_curve(
            [e.score for e in queue],
            args.out / "queue_scores.png",
            threshold=report.far.threshold,
        )

    print(f"effective config: {json.dumps(report.config, sort_keys=True)}")
    print(f"synthetic rows: {report.synthetic_count}  real rows: {report.real_count}")
    print(
        f"threshold {report.far.threshold:.6f} at target FAR {report.far.target_far:g} "
        f"(achieved {report.far.achieved_far:g})"
    )
    print(f"nearest-match scores above threshold: {report.above_threshold_fraction:.4f}")
    print("top-5 scores: " + " ".join(f"{s:.6f}" for s in report.top_scores))
    print(f"report: {report_path}")
    return 0


def cmd_serve(args) -> int:
    host, _, port_text = args.listen.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValidationError("invalid-range", f"--listen must be host:port, got {args.listen!r}")
    registry = load_registry(args.registry) if args.registry else None
    session = service.load_session(args.queue, args.labels, args.report)
    server = service.make_server(
        host, int(port_text), session, registry=registry, ui_dir=args.ui_dir
    )
    actual_host, actual_port = server.server_address[:2]
    print(f"listening on http://{actual_host}:{actual_port}", flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
    return 0


def cmd_report(args) -> int:
    pending = pipeline.read_report(args.report)
    queue = pipeline.read_queue(args.queue)
    labels = []
    if Path(args.labels).is_file():
        with open(args.labels, "r", encoding="utf-8") as fh:
            labels = [pipeline.ReviewRecord.from_json(line) for line in fh if line.strip()]
    final = pipeline.finalize_report(pending, labels, queue)
    pipeline.write_report(final, args.out)
    review = final.review
    print(f"reviewed pairs: {review['reviewed_pairs']} / {len(queue)}")
    print("tallies: " + " ".join(f"{k}={v}" for k, v in sorted(review["tallies"].items())))
    print(f"consensus leaked pairs: {review['consensus_leaked_count']}")
    return 0


def cmd_bench(args) -> int:
    ns, nr, dim = args.synth_count, args.real_count, args.dim
    if ns < 1 or nr < 1:
        raise ValidationError("empty-set", "bench needs non-empty sets")
    if dim < 1:
        raise ValidationError("invalid-range", f"dim must be >= 1, got {dim}")
    # f32 for both sets plus the f64 gallery copy the naive reference makes
    need = (ns + nr) * dim * 4 + nr * dim * 8
    if need > _BENCH_MEMORY_CAP:
        raise ValidationError(
            "size-overflow", f"bench working set {need / 1e9:.1f} GB exceeds the cap"
        )
    synth = _random_unit_set("bench-synth", ns, dim, args.seed)
    real = _random_unit_set("bench-real", nr, dim, args.seed + 1)
    total = ns * nr

    t0 = time.perf_counter()
    blocked = engine.top_k_pairs(
        synth,
        real,
        args.k,
        tile_queries=args.tile_queries,
        tile_gallery=args.tile_gallery,
        workers=args.threads,
    )
    blocked_dt = time.perf_counter() - t0

    t0 = time.perf_counter()
    reference = naive.naive_top_k_pairs(synth, real, args.k)
    naive_dt = time.perf_counter() - t0

    if [(p.synth_index, p.real_index) for p in blocked.pairs] != [
        (p.synth_index, p.real_index) for p in reference.pairs
    ]:
        raise ValidationError("invariant-violation", "blocked and naive results disagree")
    if not np.allclose(
        [p.score for p in blocked.pairs], [p.score for p in reference.pairs], atol=1e-9
    ):
        raise ValidationError("invariant-violation", "blocked and naive scores disagree")

    digest = hashlib.sha256(
        json.dumps(
            [(p.synth_index, p.real_index, p.score) for p in blocked.pairs]
        ).encode("utf-8")
    ).hexdigest()
    print(f"instance: {ns} x {nr}, dim {dim}, k {args.k}, seed {args.seed}")
    print(f"result digest: {digest}")
    print(f"blocked: {blocked_dt:8.2f}s  {total / blocked_dt:,.0f} pairs/s")
    print(f"naive:   {naive_dt:8.2f}s  {total / naive_dt:,.0f} pairs/s")
    print(f"speedup: {naive_dt / blocked_dt:.1f}x")
    return 0


# -- helpers --------------------------------------------------------------


def _collect_images(src: Path) -> list[Path]:
    if src.is_dir():
        return sorted(p for p in src.rglob("*") if p.is_file())
    if src.is_file():
        lines = src.read_text(encoding="utf-8").splitlines()
        return [Path(line.strip()) for line in lines if line.strip()]
    raise MissingInputError("missing-input", f"no such file or directory: {src}")


def _random_unit_set(dataset_id: str, count: int, dim: int, seed: int) -> store.EmbeddingSet:
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((count, dim), dtype=np.float32)
    es = store.EmbeddingSet.from_vectors(dataset_id, vectors)
    return store.normalize(es)


def _load_config_file(path: Path) -> dict:
    """Parse a flat `key = value` document (quoted strings, ints, floats, bools)."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError("missing-input", f"no such config file: {path}")
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError("invalid-range", f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = _parse_config_value(value.strip())
    return values


def _parse_config_value(text: str):
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


if __name__ == "__main__":
    sys.exit(main())
