"""``ccan`` command line: features | train | evaluate | synth.

Exit codes: 0 success, 1 partial data failure, 2 configuration error,
3 numerical failure (non-finite values, degenerate cluster).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import audio
from .autoencoder import (
    CCAN,
    Standardizer,
    canonicalize,
    load_checkpoint,
    prepare_batch,
    save_checkpoint,
)
from .clustering import evaluate_labels, hard_labels, soft_assign_np, train
from .config import PipelineConfig
from .errors import CcanError, ConfigError, DataError
from .synth import SynthSpec, synth_dataset

log = logging.getLogger("ccan")

CACHE_NAME = "features.mfc"
CHECKPOINT_NAME = "checkpoint.ccan"


def worker_threads() -> int:
    value = os.environ.get("CCAN_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ConfigError(f"CCAN_THREADS must be an integer, got {value!r}")
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# features


def _extract_one(entry: audio.ManifestEntry, root: Path, cfg: audio.FeatureConfig):
    clip = audio.load_wav(root / entry.path)
    clip, note = audio.conform_duration(clip, cfg.clip_seconds, cfg.hop_length(clip.sample_rate))
    return audio.extract_mfcc(clip, cfg, clip_id=entry.path), note, clip.sample_rate


def cmd_features(args) -> int:
    cfg = PipelineConfig.load(args.config)
    entries = audio.read_manifest(args.manifest)
    root = Path(args.root) if args.root else Path(args.manifest).resolve().parent
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_path = out_dir / CACHE_NAME

    cached = {}
    if cache_path.exists() and not args.force:
        cached = {m.clip_id: m for m in audio.read_cache(cache_path, cfg.feature.n_mfcc)}
    todo = [e for e in entries if e.path not in cached]

    report = {"extracted": [], "skipped": sorted(set(cached) & {e.path for e in entries}),
              "failed": {}, "notes": {}, "feature_config": cfg.feature.to_dict()}
    results = {}
    with ThreadPoolExecutor(max_workers=worker_threads()) as pool:
        futures = {e.path: pool.submit(_extract_one, e, root, cfg.feature) for e in todo}
        for e in todo:
            try:
                matrix, note, rate = futures[e.path].result()
            except (OSError, CcanError) as exc:
                report["failed"][e.path] = str(exc)
                print(f"FAIL  {e.path}: {exc}")
                continue
            results[e.path] = matrix
            report["extracted"].append(e.path)
            if note:
                report["notes"][e.path] = note
            if rate != cfg.feature.sample_rate:
                report["notes"].setdefault(e.path, f"sample rate {rate} Hz")
            print(f"ok    {e.path}  {matrix.n_frames}x{matrix.dim}")
    for path in report["skipped"]:
        print(f"skip  {path}")

    merged = dict(cached)
    merged.update(results)
    ordered = [merged[e.path] for e in entries if e.path in merged]
    ordered += [m for cid, m in cached.items() if cid not in {e.path for e in entries}]
    if ordered:
        audio.write_cache(cache_path, ordered)
    (out_dir / "features_report.json").write_text(json.dumps(report, indent=2))
    print(f"{len(report['extracted'])} extracted, {len(report['skipped'])} skipped, "
          f"{len(report['failed'])} failed -> {cache_path}")
    return 1 if report["failed"] else 0


# ---------------------------------------------------------------------------
# train / evaluate


def _labels_for(clip_ids, manifest_path, require_all: bool):
    """Integer labels (sorted vocabulary) for ``clip_ids`` from a manifest."""
    entries = {e.path: e.label for e in audio.read_manifest(manifest_path)}
    missing = [cid for cid in clip_ids if entries.get(cid) is None]
    if missing:
        if not require_all:
            return None, None
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise ConfigError(f"{len(missing)} clips have no label in {manifest_path}: {shown}")
    vocab = sorted({entries[cid] for cid in clip_ids})
    index = {name: i for i, name in enumerate(vocab)}
    return np.array([index[entries[cid]] for cid in clip_ids]), vocab


def _write_exports(out_dir: Path, clip_ids, z: np.ndarray, q: np.ndarray):
    labels = hard_labels(q)
    with open(out_dir / "assignments.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "cluster", "qmax"])
        for cid, lab, row in zip(clip_ids, labels, q):
            w.writerow([cid, int(lab), repr(float(row.max()))])
    with open(out_dir / "embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id"] + [f"z{i + 1}" for i in range(z.shape[1])])
        for cid, row in zip(clip_ids, z):
            w.writerow([cid] + [repr(float(v)) for v in row])


def _load_inputs(cache_path, cfg: PipelineConfig, standardizer=None):
    matrices = audio.read_cache(cache_path)
    bad = sorted({m.dim for m in matrices} - {cfg.feature.n_mfcc})
    if bad:
        raise ConfigError(
            f"{cache_path}: feature dimension {bad[0]} does not match the configured "
            f"mfcc_dim {cfg.feature.n_mfcc}"
        )
    if standardizer is None:
        rows = cfg.network.input_shape[0]
        standardizer = Standardizer.fit([canonicalize(m.frames, rows) for m in matrices])
    inputs = prepare_batch([m.frames for m in matrices], cfg.network, standardizer)
    return [m.clip_id for m in matrices], inputs, standardizer


def cmd_train(args) -> int:
    overrides = {
        "seed": args.seed, "alpha": args.alpha, "epsilon": args.epsilon,
        "max_iterations": args.max_iterations, "pretrain_iterations": args.pretrain_iterations,
        "batch_size": args.batch_size, "learning_rate": args.learning_rate,
        "optimizer": args.optimizer, "precision": args.precision,
    }
    cfg = PipelineConfig.load(args.config, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    clip_ids, inputs, standardizer = _load_inputs(args.cache, cfg)
    truth = None
    if args.manifest:
        truth, _ = _labels_for(clip_ids, args.manifest, require_all=False)

    t0 = time.perf_counter()
    result = train(inputs, cfg.network, cfg.train, labels=truth, progress=log.info)
    report = result.report
    report.config = {"flat": cfg.to_flat(), **report.config, "feature": cfg.feature.to_dict()}
    report.timings["total_s"] = time.perf_counter() - t0
    report.environment["threads"] = worker_threads()
    report.notes.append("inputs standardized per coefficient with training-set mean/std")
    report.notes.append(f"nmi normalization: {cfg.nmi_normalization}")

    blobs = dict(result.model.state_dict())
    blobs["cluster.centers"] = result.centers.data
    blobs["norm.mean"] = standardizer.mean
    blobs["norm.std"] = standardizer.std
    save_checkpoint(out_dir / CHECKPOINT_NAME, cfg.to_flat(), blobs)
    (out_dir / "report.json").write_text(report.to_json())
    z = result.model.embed(inputs, cfg.train.inference_batch_size)
    _write_exports(out_dir, clip_ids, z, result.state.q)
    summary = f"joint iterations {report.joint_iterations}, converged={report.converged}"
    if report.metrics:
        summary += f", CA={report.metrics['ca']:.4f}, NMI={report.metrics['nmi_' + cfg.nmi_normalization]:.4f}"
    print(summary)
    return 0


def cmd_evaluate(args) -> int:
    flat, blobs = load_checkpoint(args.checkpoint)
    if args.nmi_normalization:
        flat["nmi_normalization"] = args.nmi_normalization
    cfg = PipelineConfig.from_flat(flat)
    model = CCAN(cfg.network)
    model.load_state_dict(blobs)
    standardizer = Standardizer(blobs["norm.mean"], blobs["norm.std"])
    clip_ids, inputs, _ = _load_inputs(args.cache, cfg, standardizer)
    truth, vocab = _labels_for(clip_ids, args.manifest, require_all=True)

    z = model.embed(inputs, cfg.train.inference_batch_size)
    q = soft_assign_np(z, blobs["cluster.centers"].astype(cfg.network.dtype))
    scores = evaluate_labels(hard_labels(q), truth)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        **scores,
        "nmi": scores["nmi_" + cfg.nmi_normalization],
        "nmi_normalization": cfg.nmi_normalization,
        "n_clips": len(clip_ids),
        "classes": vocab,
    }
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _write_exports(out_dir, clip_ids, z, q)
    print(f"CA={scores['ca']:.4f}  NMI={payload['nmi']:.4f} ({cfg.nmi_normalization})")
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    spec = SynthSpec(n_classes=args.classes, per_class=args.per_class, latent_dim=args.latent_dim,
                     shape=(args.rows, args.cols), separation=args.separation, seed=args.seed)
    matrices, entries = synth_dataset(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    audio.write_cache(out_dir / CACHE_NAME, matrices)
    audio.write_manifest(out_dir / "manifest.csv", entries)
    print(f"{len(matrices)} synthetic clips ({spec.n_classes} classes) -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract MFCCs for a manifest into a feature cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", help="directory manifest paths are relative to (default: manifest's)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--force", action="store_true", help="re-extract clips already cached")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="pretrain, initialize clusters and train jointly")
    p.add_argument("--cache", required=True)
    p.add_argument("--manifest", help="optional labels for reporting CA/NMI")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--pretrain-iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--optimizer", choices=["plain-sgd", "adam"])
    p.add_argument("--precision", choices=["float32", "float64"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint against labelled clips")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--nmi-normalization", choices=["arithmetic", "sqrt"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic labelled blob dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classes", type=int, default=9)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--latent-dim", type=int, default=20)
    p.add_argument("--rows", type=int, default=96)
    p.add_argument("--cols", type=int, default=28)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CcanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
