"""Command-line surface.

Subcommands: ``explain`` (saliency + overlay + JSON for one image),
``eval recognition|curves|pointing`` (metrics over a manifest), ``sanity``
(cascading weight randomization), ``model-info`` (layer table).

Exit codes partition disjointly: 0 success, 2 usage, 3 I/O or file-format
error, 4 model/shape/class error, 5 empty result set.  JSON reports share
one versioned envelope: ``schema``, ``command``, ``model``, ``config``,
``results``, ``timing_ms``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__, engine, evaluate, formats, sanity
from .errors import (
    ClassOutOfRange,
    DegenerateMap,
    EmptyDataset,
    FormatError,
    IndexOutOfRange,
    LayerOutOfRange,
    NoEligibleImages,
    NonpositiveScore,
    NotAConvLayer,
    ShapeError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MODEL = 4
EXIT_EMPTY = 5

SCHEMA_VERSION = 1

_EMPTY_ERRORS = (EmptyDataset, NoEligibleImages, DegenerateMap)
_MODEL_ERRORS = (
    ShapeError,
    LayerOutOfRange,
    NotAConvLayer,
    ClassOutOfRange,
    IndexOutOfRange,
    NonpositiveScore,
)
_IO_ERRORS = (OSError, FormatError)


def _class_spec(value: str):
    if value == "predicted":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--class must be an integer or 'predicted', got {value!r}")


def _add_cam_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layer", type=int, default=None,
                   help="conv layer index to explain (default: last conv layer)")
    p.add_argument("--score-mode", choices=engine.SCORE_MODES, default="post_softmax",
                   help="channel score: class probability or pre-softmax value")
    p.add_argument("--upsample", choices=engine.UPSAMPLE_MODES, default="bilinear",
                   help="activation upsampling mode")
    p.add_argument("--batch", type=int, default=32, metavar="N",
                   help="masked inputs per scoring chunk (never changes results)")
    p.add_argument("--workers", type=int, default=None, metavar="N",
                   help="scoring threads; default: SCORECAM_WORKERS env var, "
                        "else available CPUs (never changes results)")


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--size", type=int, nargs=2, default=None, metavar=("H", "W"),
                   help="resize target (default: the model's input size)")
    p.add_argument("--mean", type=float, nargs=3, default=(0.485, 0.456, 0.406),
                   metavar=("R", "G", "B"), help="per-channel mean subtracted after resize")
    p.add_argument("--std", type=float, nargs=3, default=(0.229, 0.224, 0.225),
                   metavar=("R", "G", "B"), help="per-channel divisor applied after mean")
    p.add_argument("--value-scale", type=float, default=1.0,
                   help="divide raw pixel values by this before resizing")


def _add_out_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, default=Path("."), metavar="DIR",
                   help="output directory (created if missing)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scorecam",
        description="Gradient-free saliency maps for small CNNs, plus their evaluation suite.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="write saliency map, overlay, and JSON for one image")
    p.add_argument("model", type=Path)
    p.add_argument("image", type=Path)
    p.add_argument("--class", dest="class_spec", type=_class_spec, default="predicted",
                   help="class index to explain, or 'predicted'")
    p.add_argument("--baseline", type=Path, default=None,
                   help="SCTN tensor used as the reference input (default: zeros)")
    _add_cam_flags(p)
    _add_preprocess_flags(p)
    _add_out_flag(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("eval", help="run a metric over a manifest")
    p.add_argument("mode", choices=("recognition", "curves", "pointing"))
    p.add_argument("model", type=Path)
    p.add_argument("manifest", type=Path)
    p.add_argument("--keep-fraction", type=float, default=0.5,
                   help="fraction of most-salient pixels kept in recognition eval")
    _add_cam_flags(p)
    _add_preprocess_flags(p)
    _add_out_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sanity", help="cascading weight-randomization report")
    p.add_argument("model", type=Path)
    p.add_argument("image", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class", dest="class_spec", type=_class_spec, default="predicted")
    _add_cam_flags(p)
    _add_preprocess_flags(p)
    _add_out_flag(p)
    p.set_defaults(func=cmd_sanity)

    p = sub.add_parser("model-info", help="print the layer table of a model file")
    p.add_argument("model", type=Path)
    p.set_defaults(func=cmd_model_info)

    return parser


def _resolve_workers(args) -> int | None:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("SCORECAM_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError:
            print(f"scorecam: SCORECAM_WORKERS={env!r} is not an integer", file=sys.stderr)
            raise SystemExit(EXIT_USAGE)
    return None


def _preprocess_cfg(args, model) -> formats.PreprocessConfig:
    h, w = args.size if args.size else model.input_shape[1:]
    return formats.PreprocessConfig(
        target_h=h,
        target_w=w,
        mean=tuple(args.mean),
        std=tuple(args.std),
        value_scale=args.value_scale,
    )


def _cfg_dict(cfg: formats.PreprocessConfig) -> dict:
    return {
        "size": [cfg.target_h, cfg.target_w],
        "mean": list(cfg.mean),
        "std": list(cfg.std),
        "value_scale": cfg.value_scale,
    }


def _cam_kwargs(args, workers) -> dict:
    return {
        "target_layer": args.layer,
        "score_mode": args.score_mode,
        "batch_size": args.batch,
        "upsample_mode": args.upsample,
        "n_workers": workers,
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _report(command: str, model_path, config: dict, results: dict, started: float) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "command": command,
        "model": str(model_path),
        "config": config,
        "results": results,
        "timing_ms": (time.perf_counter() - started) * 1000.0,
    }


def cmd_explain(args) -> int:
    started = time.perf_counter()
    workers = _resolve_workers(args)
    model = formats.load_model(args.model)
    record = formats.load_image(args.image)
    cfg = _preprocess_cfg(args, model)
    x = formats.preprocess(record, cfg)
    baseline = formats.load_tensor(args.baseline) if args.baseline else None
    saliency = engine.scorecam(
        model,
        x,
        target_class=args.class_spec,
        baseline=baseline,
        model_id=str(args.model),
        **_cam_kwargs(args, workers),
    )
    args.out.mkdir(parents=True, exist_ok=True)
    saliency_path = args.out / "saliency.pgm"
    overlay_path = args.out / "overlay.ppm"
    formats.write_heatmap(saliency, saliency_path, image=record, overlay_path=overlay_path)
    meta = saliency.meta
    results = {
        "class_index": int(meta["class_index"]),
        "layer": int(meta["layer"]),
        "score_mode": meta["score_mode"],
        "alpha": [float(v) for v in meta["weights"]],
        "alpha_sum": float(sum(float(v) for v in meta["weights"])),
        "raw_scores": [float(v) for v in meta["raw_scores"]],
        "saliency": saliency_path.name,
        "overlay": overlay_path.name,
    }
    config = {
        "image": str(args.image),
        "class": args.class_spec,
        "layer": args.layer,
        "score_mode": args.score_mode,
        "upsample": args.upsample,
        "batch_size": args.batch,
        "baseline": str(args.baseline) if args.baseline else None,
        "preprocess": _cfg_dict(cfg),
    }
    _write_json(args.out / "explain.json", _report("explain", args.model, config, results, started))
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.perf_counter()
    workers = _resolve_workers(args)
    model = formats.load_model(args.model)
    records = formats.load_manifest(args.manifest)
    cfg = _preprocess_cfg(args, model)
    cam = _cam_kwargs(args, workers)
    args.out.mkdir(parents=True, exist_ok=True)
    config = {
        "manifest": str(args.manifest),
        "mode": args.mode,
        "layer": args.layer,
        "score_mode": args.score_mode,
        "upsample": args.upsample,
        "batch_size": args.batch,
        "preprocess": _cfg_dict(cfg),
    }
    if args.mode == "recognition":
        config["keep_fraction"] = args.keep_fraction
        report = evaluate.run_recognition_eval(
            model, records, cfg, keep_fraction=args.keep_fraction, **cam
        )
        _write_json(args.out / "recognition.json",
                    _report("eval recognition", args.model, config, report.to_dict(), started))
        return EXIT_OK
    if args.mode == "pointing":
        report = evaluate.run_pointing_eval(model, records, cfg, **cam)
        _write_json(args.out / "pointing.json",
                    _report("eval pointing", args.model, config, report.to_dict(), started))
        return EXIT_OK
    if not records:
        raise EmptyDataset("curve evaluation needs at least one image")
    per_image = []
    deletion_aucs = []
    insertion_aucs = []
    for record in records:
        if record.label is None:
            raise ValueError(f"record {record.id!r}: label required for curve eval")
        x = formats.preprocess(record, cfg)
        saliency = engine.scorecam(model, x, target_class=record.label, **cam)
        curves = {
            "deletion": evaluate.deletion_curve(model, x, saliency, record.label),
            "insertion": evaluate.insertion_curve(model, x, saliency, record.label),
        }
        entry = {"id": record.id}
        for mode, curve in curves.items():
            csv_path = args.out / f"curve_{record.id}_{mode}.csv"
            lines = ["fraction,probability"]
            lines += [f"{f:.2f},{p!r}" for f, p in zip(curve.fractions, curve.probabilities)]
            csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            entry[f"{mode}_auc"] = curve.auc
            entry[f"{mode}_csv"] = csv_path.name
        deletion_aucs.append(entry["deletion_auc"])
        insertion_aucs.append(entry["insertion_auc"])
        per_image.append(entry)
    results = {
        "mean_deletion_auc": sum(deletion_aucs) / len(deletion_aucs),
        "mean_insertion_auc": sum(insertion_aucs) / len(insertion_aucs),
        "per_image": per_image,
    }
    _write_json(args.out / "curves.json",
                _report("eval curves", args.model, config, results, started))
    return EXIT_OK


def cmd_sanity(args) -> int:
    started = time.perf_counter()
    workers = _resolve_workers(args)
    model = formats.load_model(args.model)
    record = formats.load_image(args.image)
    cfg = _preprocess_cfg(args, model)
    x = formats.preprocess(record, cfg)
    report = sanity.cascading_test(
        model, x, seed=args.seed, target_class=args.class_spec, **_cam_kwargs(args, workers)
    )
    args.out.mkdir(parents=True, exist_ok=True)
    config = {
        "image": str(args.image),
        "seed": args.seed,
        "class": args.class_spec,
        "layer": args.layer,
        "score_mode": args.score_mode,
        "upsample": args.upsample,
        "batch_size": args.batch,
        "preprocess": _cfg_dict(cfg),
    }
    _write_json(args.out / "sanity.json",
                _report("sanity", args.model, config, report.to_dict(), started))
    return EXIT_OK


def cmd_model_info(args) -> int:
    from .model import layer_kind, layer_param_count

    model = formats.load_model(args.model)
    c, h, w = model.input_shape
    print(f"input: {c}x{h}x{w}  classes: {model.class_count}")
    print(f"{'layer':>5}  {'kind':<14}{'output shape':<16}{'params':>10}")
    for i, layer in enumerate(model.layers):
        shape = "x".join(str(d) for d in model.output_shapes[i])
        print(f"{i:>5}  {layer_kind(layer):<14}{shape:<16}{layer_param_count(layer):>10}")
    print(f"total parameters: {model.param_count}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _EMPTY_ERRORS as exc:
        print(f"scorecam: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except _MODEL_ERRORS as exc:
        print(f"scorecam: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except _IO_ERRORS as exc:
        print(f"scorecam: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"scorecam: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
