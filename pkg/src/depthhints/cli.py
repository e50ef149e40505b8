"""Command-line entry point.

Subcommands cover the full pipeline: build-dataset, pretrain, loo-run,
eval, render-hints, gen-synthetic. Every run writes a machine-readable
report (effective parameters, derived seeds, fallback counts) next to
its main output, with stable key order and no timestamps, so identical
invocations produce byte-identical files.

Exit codes: 0 success, 2 input/config error, 3 numerical failure.
The master seed comes from --seed, falling back to the DEPTHHINTS_SEED
environment variable, then 0; per-purpose seeds (store, init, shuffle)
are derived from it and echoed in the report.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import depth_data, embedding_store, harness, hint_planes, l2d, losses
from .errors import DepthHintsError, NumericalError
from .rng import derive_seed

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

# fixed stream indices for seeds derived from the master seed
_STORE_STREAM = 1
_INIT_STREAM = 2
_SHUFFLE_STREAM = 3

_MODE_FLAGS = {"logmean": l2d.MODE_LOGMEAN, "class": l2d.MODE_CLASSIFICATION}


def _master_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DEPTHHINTS_SEED")
    return int(env) if env else 0


def _write_report(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _report_path(args, out_path: str) -> str:
    return args.report if args.report else out_path + ".report.json"


def _binning_from(args) -> depth_data.BinningSpec:
    return depth_data.BinningSpec(
        min_depth=args.min_depth, max_depth=args.max_depth, bin_count=args.bins
    )


def _add_binning_flags(p) -> None:
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--min-depth", type=float, default=0.0)
    p.add_argument("--max-depth", type=float, default=10.0)


def _add_train_flags(p, default_batch=None) -> None:
    p.add_argument("--epochs", type=int, default=harness.DEFAULT_EPOCHS)
    p.add_argument("--batch-size", type=int, default=default_batch)
    p.add_argument("--lr", type=float, default=1e-3)


def _load_store_arg(args, labels_for_random: list[str], seed: int):
    """Returns (store, description dict for the report)."""
    if args.embeddings:
        store = embedding_store.load_store(args.embeddings)
        return store, {"source": "file", "path": str(args.embeddings), "dim": store.dim}
    store_seed = derive_seed(seed, _STORE_STREAM)
    store = embedding_store.random_store(labels_for_random, args.random_dim, store_seed)
    return store, {
        "source": "random-control",
        "dim": args.random_dim,
        "store_seed": store_seed,
    }


def _read_manifest(path) -> list[str]:
    base = Path(path).parent
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DepthHintsError(f"cannot read manifest {path}: {exc}") from exc
    frames = [str((base / ln.strip())) for ln in lines if ln.strip()]
    if not frames:
        raise DepthHintsError(f"manifest {path} lists no frames")
    return frames


def _read_lines(path, what: str) -> list[str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DepthHintsError(f"cannot read {what} {path}: {exc}") from exc
    return [ln.strip() for ln in lines if ln.strip()]


def _cmd_build_dataset(args) -> int:
    binning = _binning_from(args)
    frames = _read_manifest(args.manifest)
    records, report = depth_data.build_inst_dataset(frames, binning)
    kind = "inst"
    if args.loo:
        if not args.vocab:
            raise DepthHintsError("--loo requires --vocab")
        vocab = _read_lines(args.vocab, "vocabulary")
        records = depth_data.aggregate_loo(records, vocab, binning, args.weighting, report)
        kind = "loo"
    depth_data.save_records(records, args.out)
    _write_report(
        _report_path(args, args.out),
        {
            "command": "build-dataset",
            "kind": kind,
            "binning": {
                "bins": binning.bin_count,
                "min_depth": binning.min_depth,
                "max_depth": binning.max_depth,
            },
            "weighting": args.weighting if args.loo else None,
            "frames": report.frames,
            "records": len(records),
            "dropped_empty_instances": report.dropped_empty,
            "missing_vocab_labels": report.missing_vocab_labels,
            "out_of_vocab_instances": report.out_of_vocab_instances,
        },
    )
    print(f"wrote {len(records)} {kind} records to {args.out}")
    return EXIT_OK


def _records_and_store(args, seed, record_cls):
    records = depth_data.load_records(args.dataset, record_cls)
    if not records:
        raise DepthHintsError(f"dataset {args.dataset} is empty")
    labels = list(dict.fromkeys(r.label for r in records))
    store, store_info = _load_store_arg(args, labels, seed)
    return records, store, store_info


def _cmd_pretrain(args) -> int:
    seed = _master_seed(args)
    records, store, store_info = _records_and_store(args, seed, depth_data.InstanceRecord)
    config = l2d.L2DConfig(mode=_MODE_FLAGS[args.mode], input_dim=store.dim)
    spec = harness.TrainSpec(
        epochs=args.epochs,
        batch_size=args.batch_size,
        init_seed=derive_seed(seed, _INIT_STREAM),
        shuffle_seed=derive_seed(seed, _SHUFFLE_STREAM),
        lr=args.lr,
    )
    result = harness.pretrain(config, store, records, spec)
    l2d.save_model(result.params, args.out)
    _write_report(
        _report_path(args, args.out),
        {
            "command": "pretrain",
            "mode": config.mode,
            "embeddings": store_info,
            "seed": seed,
            "train": {
                "epochs": spec.epochs,
                "batch_size": spec.batch_size or harness.DEFAULT_INST_BATCH,
                "lr": spec.lr,
                "init_seed": spec.init_seed,
                "shuffle_seed": spec.shuffle_seed,
            },
            "records": len(records),
            "fallback_count": result.fallback_count,
            "epoch_losses": result.epoch_losses,
        },
    )
    print(f"final epoch loss {result.epoch_losses[-1]:.6f}; model saved to {args.out}")
    return EXIT_OK


def _cmd_loo_run(args) -> int:
    seed = _master_seed(args)
    records, store, store_info = _records_and_store(args, seed, depth_data.ClassRecord)
    config = l2d.L2DConfig(mode=_MODE_FLAGS[args.mode], input_dim=store.dim)
    spec = harness.TrainSpec(
        epochs=args.epochs,
        batch_size=args.batch_size,
        init_seed=derive_seed(seed, _INIT_STREAM),
        shuffle_seed=derive_seed(seed, _SHUFFLE_STREAM),
        lr=args.lr,
    )
    report = harness.run_loo(
        config, store, records, spec, workers=args.workers, keep_params=bool(args.save_models)
    )
    payload = {
        "command": "loo-run",
        "mode": config.mode,
        "embeddings": store_info,
        "seed": seed,
        "train": {
            "epochs": spec.epochs,
            "batch_size": spec.batch_size or min(len(records) - 1, harness.LOO_BATCH_CAP),
            "lr": spec.lr,
            "init_seed": spec.init_seed,
            "shuffle_seed": spec.shuffle_seed,
        },
        "classes": len(records),
        "fallback_count": report.fallback_count,
        "rows": [
            {
                "label": r.label,
                "predicted": r.predicted,
                "actual": r.actual,
                "final_loss": r.final_loss,
            }
            for r in report.rows
        ],
        "metrics": report.metrics.as_dict(),
    }
    _write_report(args.out, payload)
    if args.report:
        _write_report(args.report, payload)
    if args.lookup:
        harness.save_lookup(harness.lookup_from_loo(report), args.lookup)
    if args.save_models:
        os.makedirs(args.save_models, exist_ok=True)
        for c, params in enumerate(report.params_per_class):
            safe = "".join(ch if ch.isalnum() else "_" for ch in records[c].label)
            l2d.save_model(params, os.path.join(args.save_models, f"{c:03d}_{safe}.dhl2"))
    print(losses.metrics_table(report.metrics))
    print(losses.metrics_json(report.metrics, len(report.rows)))
    return EXIT_OK


def _cmd_eval(args) -> int:
    pred = [float(v) for v in _read_lines(args.pred_file, "prediction file")]
    gt = [float(v) for v in _read_lines(args.gt_file, "ground-truth file")]
    if len(pred) != len(gt):
        raise DepthHintsError(f"length mismatch: {len(pred)} predictions vs {len(gt)} truths")
    metrics = losses.eigen_metrics(pred, gt)
    print(losses.metrics_table(metrics))
    print(losses.metrics_json(metrics, len(pred)))
    if args.out:
        payload = metrics.as_dict()
        payload["n"] = len(pred)
        _write_report(args.out, {"command": "eval", **payload})
    return EXIT_OK


def _cmd_render_hints(args) -> int:
    frame = depth_data.load_frame(args.frame)
    if args.lookup:
        table = harness.load_lookup(args.lookup)
        plane, fallbacks = hint_planes.render_scalar(frame, table)
        source_info = {"source": "lookup", "path": str(args.lookup)}
    else:
        if not args.embeddings:
            raise DepthHintsError("--model requires --embeddings")
        params = l2d.load_model(args.model)
        store = embedding_store.load_store(args.embeddings)
        if args.features:
            plane, fallbacks = hint_planes.render_features(frame, params, store)
        else:
            plane, fallbacks = hint_planes.render_scalar(frame, params, store)
        source_info = {
            "source": "model",
            "path": str(args.model),
            "embeddings": str(args.embeddings),
        }
    hint_planes.save_plane(plane, args.out)
    _write_report(
        _report_path(args, args.out),
        {
            "command": "render-hints",
            "hints": source_info,
            "channels": plane.channels,
            "height": plane.height,
            "width": plane.width,
            "fallback_count": fallbacks,
        },
    )
    print(f"wrote {plane.height}x{plane.width}x{plane.channels} plane to {args.out}")
    return EXIT_OK


def _cmd_gen_synthetic(args) -> int:
    seed = _master_seed(args)
    store, records = harness.gen_synthetic(
        args.classes, args.dim, args.signal, args.noise, seed
    )
    emb_path = args.out_prefix + ".dhemb"
    rec_path = args.out_prefix + "_classes.jsonl"
    embedding_store.save_store(store, emb_path)
    depth_data.save_records(records, rec_path)
    _write_report(
        _report_path(args, args.out_prefix),
        {
            "command": "gen-synthetic",
            "classes": args.classes,
            "dim": args.dim,
            "signal_dims": args.signal,
            "noise_sigma": args.noise,
            "seed": seed,
            "embeddings": emb_path,
            "dataset": rec_path,
        },
    )
    print(f"wrote {emb_path} and {rec_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthhints",
        description="Extract and deploy object-name depth bias from word embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="build inst/loo records from DHF1 frames")
    p.add_argument("--manifest", required=True, help="text file of frame paths, one per line")
    p.add_argument("--out", required=True)
    p.add_argument("--loo", action="store_true", help="aggregate per class")
    p.add_argument("--vocab", help="vocabulary file for --loo, one label per line")
    p.add_argument("--weighting", choices=("pixels", "instances"), default="pixels")
    _add_binning_flags(p)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("pretrain", help="train one L2D model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--random-dim", type=int, help="use a random control store of this dim")
    p.add_argument("--mode", choices=tuple(_MODE_FLAGS), default="logmean")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("loo-run", help="leave-one-out protocol over a class dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--random-dim", type=int)
    p.add_argument("--mode", choices=tuple(_MODE_FLAGS), default="logmean")
    p.add_argument("--out", required=True, help="loo report JSON path")
    p.add_argument("--lookup", help="also export the frozen predictions as a lookup table")
    p.add_argument("--save-models", help="directory for per-class checkpoints")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_loo_run)

    p = sub.add_parser("eval", help="Eigen metrics between two depth lists")
    p.add_argument("--pred-file", required=True)
    p.add_argument("--gt-file", required=True)
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render-hints", help="render a DHP1 hint plane for a frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--model", help="DHL2 checkpoint (needs --embeddings)")
    p.add_argument("--lookup", help="lookup table JSON-lines")
    p.add_argument("--embeddings")
    p.add_argument("--features", action="store_true", help="render 50-d feature hints")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_render_hints)

    p = sub.add_parser("gen-synthetic", help="synthetic embedding store + class dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--signal", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_gen_synthetic)

    return parser


def _validate_source_flags(args) -> None:
    if hasattr(args, "embeddings") and hasattr(args, "random_dim"):
        if bool(args.embeddings) == bool(args.random_dim):
            raise DepthHintsError("exactly one of --embeddings or --random-dim is required")
    if hasattr(args, "model") and hasattr(args, "lookup"):
        if bool(args.model) == bool(args.lookup):
            raise DepthHintsError("exactly one of --model or --lookup is required")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("pretrain", "loo-run", "render-hints"):
            _validate_source_flags(args)
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DepthHintsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
