"""Command-line surface: gen, extract, train, scan, detect, eval, report.

All randomness flows from the manifest's ``params.seed``. Stage seeds
are derived with :func:`vocscan.core.derive_seed` under fixed stream
ids, so every stage is reproducible in isolation:

* (seed, 10)      -- synthetic template set
* (seed, 11, i)   -- synthetic sample i's peaks and noise
* (seed, 12, i)   -- synthetic sample i's compound presence draws
* (seed, 20)      -- dataset assembly (augmentation + negative sampling)
* (seed, 30)      -- network initialization and batch shuffling

Rerunning any command with identical inputs rewrites its outputs
identically (timings aside). Errors exit nonzero with a one-line JSON
diagnostic on stderr. The ``VOCSCAN_OUT`` environment variable overrides
omitted output-directory flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import ingest
from .classifier import (
    ConvBlock,
    ConvNetConfig,
    load_model,
    save_model,
    train_centroid,
    train_convnet,
)
from .core import VocScanError, derive_rng, derive_seed
from .dataset import build_dataset, load_dataset, save_dataset
from .detector import run_rules
from .evaluation import (
    SampleDetections,
    build_rt_ranges,
    evaluate,
    render_report,
    report_from_dict,
    report_to_dict,
)
from .scanner import DEFAULT_BATCH, scan
from .synthgen import SynthConfig, default_template_set, synth_sample

logger = logging.getLogger(__name__)

_STAGE_TEMPLATES = 10
_STAGE_SAMPLE = 11
_STAGE_PRESENCE = 12
_STAGE_DATASET = 20
_STAGE_TRAINING = 30


def _out_dir(value: str | None, flag: str) -> Path:
    if value is None:
        value = os.environ.get("VOCSCAN_OUT")
    if value is None:
        raise VocScanError(f"{flag} is required (or set VOCSCAN_OUT)")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# gen

def cmd_gen(args: argparse.Namespace) -> int:
    out = _out_dir(args.out, "--out")
    cfg = SynthConfig(
        R=args.rows,
        C=args.channels,
        rt_step=args.rt_step,
        baseline_level=args.baseline,
        noise_sigma=args.noise_sigma,
        rng_seed=derive_seed(args.seed, _STAGE_TEMPLATES),
        delta=args.delta,
    )
    templates = default_template_set(args.templates, cfg)
    entries = []
    counts = {"train": args.train, "test": args.test}
    index = 0
    for split in ("train", "test"):
        for j in range(counts[split]):
            sample_id = f"{split}_{j:03d}"
            presence_rng = derive_rng(args.seed, _STAGE_PRESENCE, index)
            presence = list(presence_rng.random(len(templates)) < args.presence_prob)
            sample_cfg = SynthConfig(
                R=cfg.R,
                C=cfg.C,
                rt_step=cfg.rt_step,
                baseline_level=cfg.baseline_level,
                noise_sigma=cfg.noise_sigma,
                rng_seed=derive_seed(args.seed, _STAGE_SAMPLE, index),
                delta=cfg.delta,
            )
            matrix, annotations = synth_sample(templates, presence, sample_cfg, sample_id=sample_id)
            matrix_path = f"{sample_id}.csv"
            ann_path = f"{sample_id}.ann.csv"
            ingest.emit_matrix(matrix, out / matrix_path)
            ingest.emit_annotations(annotations, out / ann_path)
            participant = f"p{index // args.samples_per_participant:03d}"
            entries.append(
                ingest.SampleEntry(
                    sample_id=sample_id,
                    matrix_path=matrix_path,
                    annotation_path=ann_path,
                    participant_id=participant,
                    split=split,
                )
            )
            logger.info("generated %s with %d compounds", sample_id, len(annotations))
            index += 1
    manifest = ingest.Manifest(
        samples=tuple(entries),
        voc_table=tuple(
            ingest.VocTableEntry(label=t.label, name=f"synthetic-{t.label:02d}") for t in templates
        ),
        params=ingest.PipelineParams(
            delta=args.delta,
            gamma=args.gamma,
            shifts=args.shifts,
            intensity_variants=args.intensity_variants,
            r_max=args.r_max,
            seed=args.seed,
        ),
    )
    manifest_path = out / "manifest.json"
    ingest.emit_manifest(manifest, manifest_path)
    print(f"wrote {len(entries)} samples and {manifest_path}")
    return 0


# ---------------------------------------------------------------------------
# extract

def _load_split(manifest: ingest.Manifest, manifest_path: str, split: str):
    loaded = []
    for entry in manifest.split_samples(split):
        matrix = ingest.parse_matrix(
            ingest.resolve_path(manifest_path, entry.matrix_path),
            sample_id=entry.sample_id,
            column_epoch=entry.column_epoch,
        )
        annotations = (
            ingest.parse_annotations(ingest.resolve_path(manifest_path, entry.annotation_path))
            if entry.annotation_path
            else []
        )
        loaded.append((entry, matrix, annotations))
    return loaded


def cmd_extract(args: argparse.Namespace) -> int:
    manifest = ingest.parse_manifest(args.manifest)
    params = manifest.params
    loaded = _load_split(manifest, args.manifest, args.split)
    if not loaded:
        raise VocScanError(f"manifest has no samples in split {args.split!r}")
    dataset = build_dataset(
        [(matrix, annotations) for _, matrix, annotations in loaded],
        seed=derive_seed(params.seed, _STAGE_DATASET),
        delta=params.delta,
        shifts=params.shifts,
        variants_per_shift=params.intensity_variants,
        r_max=params.r_max,
        negative_ratio=args.negative_ratio,
    )
    save_dataset(dataset, args.out)
    counts = ", ".join(f"{k}: {v}" for k, v in sorted(dataset.class_counts.items()))
    print(f"wrote {len(dataset)} points to {args.out} ({counts})")
    return 0


# ---------------------------------------------------------------------------
# train

def _parse_blocks(text: str) -> tuple[ConvBlock, ...]:
    blocks = []
    for part in text.split(";"):
        nums = [int(x) for x in part.split(",")]
        if len(nums) != 3:
            raise VocScanError(f"--blocks items must be filters,kernel,pool; got {part!r}")
        blocks.append(ConvBlock(*nums))
    return tuple(blocks)


def cmd_train(args: argparse.Namespace) -> int:
    manifest = ingest.parse_manifest(args.manifest)
    dataset = load_dataset(args.dataset)
    n_classes = manifest.n_targets + 1
    if args.kind == "centroid":
        model = train_centroid(dataset, n_classes=n_classes)
        print(f"trained centroid model on {len(dataset)} points")
    else:
        cfg = ConvNetConfig(
            blocks=_parse_blocks(args.blocks),
            dense=tuple(int(x) for x in args.dense.split(",")) if args.dense else (),
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            epochs=args.epochs,
            seed=derive_seed(manifest.params.seed, _STAGE_TRAINING),
            momentum=args.momentum,
        )
        model = train_convnet(dataset, cfg, n_classes=n_classes)
        print(
            f"trained convnet on {len(dataset)} points, "
            f"final loss {model.loss_history[-1]:.4f}, train accuracy {model.train_accuracy:.4f}"
        )
    save_model(model, args.out)
    print(f"wrote model to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# scan / detect

def _select_samples(manifest: ingest.Manifest, args) -> list[ingest.SampleEntry]:
    if args.sample:
        by_id = {s.sample_id: s for s in manifest.samples}
        missing = [sid for sid in args.sample if sid not in by_id]
        if missing:
            raise VocScanError(f"sample ids not in manifest: {', '.join(missing)}")
        return [by_id[sid] for sid in args.sample]
    return manifest.split_samples(args.split)


def cmd_scan(args: argparse.Namespace) -> int:
    manifest = ingest.parse_manifest(args.manifest)
    model = load_model(args.model)
    out = _out_dir(args.out_dir, "--out-dir")
    for entry in _select_samples(manifest, args):
        matrix = ingest.parse_matrix(
            ingest.resolve_path(args.manifest, entry.matrix_path),
            sample_id=entry.sample_id,
            column_epoch=entry.column_epoch,
        )
        started = time.perf_counter()
        result = scan(matrix, model, batch_size=args.batch_size, workers=args.workers)
        elapsed = time.perf_counter() - started
        path = out / f"{entry.sample_id}.scan.csv"
        ingest.emit_scan(result, path)
        print(f"{entry.sample_id}: {len(result)} windows in {elapsed:.2f}s -> {path}")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    manifest = ingest.parse_manifest(args.manifest)
    model = load_model(args.model)
    gamma = manifest.params.gamma
    out = _out_dir(args.out_dir, "--out-dir")
    ext = args.format
    timings: dict[str, dict] = {}
    for entry in _select_samples(manifest, args):
        matrix = ingest.parse_matrix(
            ingest.resolve_path(args.manifest, entry.matrix_path),
            sample_id=entry.sample_id,
            column_epoch=entry.column_epoch,
        )
        started = time.perf_counter()
        result = scan(matrix, model, batch_size=args.batch_size, workers=args.workers)
        scan_seconds = time.perf_counter() - started
        stages = run_rules(result, gamma)
        ingest.emit_detections(list(stages.final), out / f"{entry.sample_id}.detections.{ext}")
        ingest.emit_detections(list(stages.candidates), out / f"{entry.sample_id}.prefilter.{ext}")
        timings[entry.sample_id] = {
            "scan_seconds": scan_seconds,
            "windows": len(result),
            "rt_span_minutes": matrix.axis.span,
        }
        print(
            f"{entry.sample_id}: {len(stages.candidates)} candidates -> "
            f"{len(stages.final)} detections (scan {scan_seconds:.2f}s)"
        )
    with open(out / "timings.json", "w", encoding="utf-8") as f:
        json.dump(timings, f, indent=2)
        f.write("\n")
    return 0


# ---------------------------------------------------------------------------
# eval / report

def _matrix_rt_span(path: str) -> float:
    """RT extent of a matrix CSV, reading only the first and last rows."""
    first = last = None
    with open(path, encoding="utf-8") as f:
        f.readline()
        for line in f:
            if not line.strip():
                continue
            if first is None:
                first = line
            last = line
    if first is None or last is None:
        raise ingest.ParseError(path, 2, "matrix has a header but no data rows")
    return float(last.split(",", 1)[0]) - float(first.split(",", 1)[0])


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = ingest.parse_manifest(args.manifest)
    epoch_by_sample = {s.sample_id: s.column_epoch for s in manifest.samples}
    train_annotations = []
    for entry in manifest.split_samples(args.ranges_split):
        if entry.annotation_path:
            train_annotations.extend(
                ingest.parse_annotations(ingest.resolve_path(args.manifest, entry.annotation_path))
            )
    ranges = build_rt_ranges(train_annotations, epoch_by_sample=epoch_by_sample)
    samples = []
    rt_span = 0.0
    for entry in manifest.split_samples(args.split):
        base = Path(args.detections_dir) / entry.sample_id
        final_path = f"{base}.detections.{args.format}"
        prefilter_path = f"{base}.prefilter.{args.format}"
        if not os.path.exists(final_path):
            raise VocScanError(f"missing detection file {final_path}; run `vocscan detect` first")
        final = ingest.parse_detections(final_path)
        prefilter = (
            ingest.parse_detections(prefilter_path) if os.path.exists(prefilter_path) else final
        )
        annotations = (
            ingest.parse_annotations(ingest.resolve_path(args.manifest, entry.annotation_path))
            if entry.annotation_path
            else []
        )
        samples.append(
            SampleDetections(
                sample_id=entry.sample_id,
                final=tuple(final),
                prefilter=tuple(prefilter),
                annotations=tuple(annotations),
                column_epoch=entry.column_epoch,
            )
        )
        rt_span = max(
            rt_span, _matrix_rt_span(ingest.resolve_path(args.manifest, entry.matrix_path))
        )
    if not samples:
        raise VocScanError(f"manifest has no samples in split {args.split!r}")
    report = evaluate(
        samples, ranges, manifest.n_targets, rt_span_minutes=rt_span if rt_span > 0 else None
    )
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, indent=2)
        f.write("\n")
    names = {v.label: v.name for v in manifest.voc_table}
    print(render_report(report, names))
    print(f"wrote {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    with open(args.report, encoding="utf-8") as f:
        report = report_from_dict(json.load(f))
    names = None
    if args.manifest:
        manifest = ingest.parse_manifest(args.manifest)
        names = {v.label: v.name for v in manifest.voc_table}
    print(render_report(report, names))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vocscan",
        description="Detect target compounds in raw GC-MS abundance matrices.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic samples plus a manifest")
    p.add_argument("--out", help="output directory (or VOCSCAN_OUT)")
    p.add_argument("--train", type=int, default=30, help="training samples (default 30)")
    p.add_argument("--test", type=int, default=10, help="test samples (default 10)")
    p.add_argument("--templates", type=int, default=10, help="target compounds (default 10)")
    p.add_argument("--rows", type=int, default=6000, help="RT rows per sample (default 6000)")
    p.add_argument("--channels", type=int, default=64, help="m/z channels (default 64)")
    p.add_argument("--rt-step", type=float, default=1.0 / 375.0, help="minutes per row")
    p.add_argument("--baseline", type=float, default=2.0, help="baseline intensity level")
    p.add_argument("--noise-sigma", type=float, default=1.0, help="Gaussian noise level")
    p.add_argument("--presence-prob", type=float, default=0.85, help="per-sample compound presence probability")
    p.add_argument("--samples-per-participant", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="master seed stored in the manifest")
    p.add_argument("--delta", type=int, default=80, help="analysis window rows")
    p.add_argument("--gamma", type=int, default=20, help="minimum detection run length")
    p.add_argument("--shifts", type=int, default=20, help="translation variants per annotation")
    p.add_argument("--intensity-variants", type=int, default=4)
    p.add_argument("--r-max", type=float, default=0.1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="build the labeled dataset cache from a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="dataset .npz path")
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--negative-ratio", type=float, default=1.0, help="negatives per positive point")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a classifier on a dataset cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="model .npz path")
    p.add_argument("--kind", default="convnet", choices=["convnet", "centroid"])
    p.add_argument("--blocks", default="32,5,2;64,5,2;64,5,2", help="conv blocks as filters,kernel,pool;...")
    p.add_argument("--dense", default="128", help="dense widths, comma-separated (empty for none)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("scan", help="dump per-window labels/confidences for samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", help="output directory (or VOCSCAN_OUT)")
    p.add_argument("--sample", action="append", help="sample id (repeatable; default: whole split)")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("detect", help="scan samples and write detection reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", help="output directory (or VOCSCAN_OUT)")
    p.add_argument("--sample", action="append", help="sample id (repeatable; default: whole split)")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="evaluate detection files against annotations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections-dir", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--split", default="test", choices=["train", "test"], help="split to evaluate")
    p.add_argument("--ranges-split", default="train", choices=["train", "test"],
                   help="split whose annotations define the RT ranges")
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print the summary table of a report JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--manifest", help="optional manifest for compound names")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (VocScanError, FileNotFoundError, OSError) as e:
        diagnostic = {"error": type(e).__name__, "detail": str(e)}
        print(json.dumps(diagnostic), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
