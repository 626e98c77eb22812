"""``tileforge`` command line: slice, infer, eval, sweep, synth.

Exit codes: 0 success, 2 usage/config error, 3 unreadable or malformed input,
4 runtime failure. ``TILEFORGE_LOG_LEVEL`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import yaml

from . import config as C
from .detect import DetectorError
from .evaluation import evaluate
from .geometry import intersect
from .io import FormatError, dump_json, load_dataset, load_json, parse_detections, write_coco, write_detections
from .io import write_slice_manifest
from .pipelines import run_pipeline
from .slicing import slice_dataset
from .sweep import run_sweep
from .synth import generate_dataset, size_histogram
from .timing import StageTimer

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("tileforge")


class InputError(Exception):
    pass


def _set(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


# flag dest -> config key
_FLAG_KEYS = {
    "seed": "seed",
    "slice_size": "slice.width,slice.height",
    "overlap": "slice.overlap",
    "min_visible": "slice.min_visible_fraction",
    "max_area": "slice.scale_filter_max_area",
    "pipeline": "pipeline.kind",
    "on_error": "pipeline.on_error",
    "slice_max_area": "pipeline.slice_max_area",
    "full_min_area": "pipeline.full_min_area",
    "detector": "detector.kind",
    "input_size": "detector.input",
    "score_threshold": "detector.score_threshold",
    "latency_ms": "detector.stub.latency_ms",
    "external_cmd": "detector.external.command",
    "merge": "merge.method",
    "metric": "merge.metric",
    "threshold": "merge.threshold",
    "iou": "eval.iou_thresholds",
    "interpolation": "eval.interpolation",
    "output_dir": "sweep.output_dir",
    "dataset_path": "sweep.dataset",
    "workers": "sweep.workers",
}


def _overrides(args) -> dict:
    out: dict = {}
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is None:
            continue
        if dest == "slice_size":
            _set(out, "slice.width", v[0])
            _set(out, "slice.height", v[1])
        else:
            _set(out, key, v)
    for kv in getattr(args, "synth_set", None) or []:
        k, _, raw = kv.partition("=")
        if not k or not _:
            raise C.ConfigError(f"--set expects key=value, got {kv!r}")
        _set(out, f"synth.{k}", yaml.safe_load(raw))
    return out


def _config(args) -> dict:
    return C.load_config(args.config, _overrides(args))


def _load(path, strict=True):
    try:
        return load_dataset(path, strict)
    except (OSError, FormatError) as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc


def cmd_slice(args) -> int:
    cfg = _config(args)
    params = C.slice_params(cfg)
    s = cfg["slice"]
    scenes = _load(args.dataset, strict=not args.lenient)
    slices, kept, dropped = [], 0, 0
    for scene in scenes:
        for sl in slice_dataset(scene, params, float(s["min_visible_fraction"]), s["scale_filter_max_area"]):
            touching = sum(intersect(a.box, sl.window.box) is not None for a in scene.annotations)
            kept += len(sl.annotations)
            dropped += touching - len(sl.annotations)
            slices.append(sl)
    path = write_slice_manifest(slices, args.out_dir)
    print(f"slices: {len(slices)}  annotations kept: {kept}  dropped: {dropped}  manifest: {path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _config(args)
    spec = C.pipeline_spec(cfg)
    detector = C.build_detector(cfg)
    scenes = _load(args.dataset)
    timer = StageTimer()
    errors: list = []
    preds = run_pipeline(scenes, detector, spec, timer=timer, errors=errors)
    dump_json(write_detections(preds), args.out)
    timing = dict(timer.table(), pipeline=spec.kind, skipped_regions=errors)
    if args.timing:
        dump_json(timing, args.timing)
    n = sum(len(v) for v in preds.values())
    fps = timing["fps"]
    print(f"{spec.kind}: {len(scenes)} images, {n} detections, {timer.detector_calls} detector calls, "
          f"FPS {fps:.2f}" if fps else f"{spec.kind}: {len(scenes)} images, {n} detections")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    params = C.eval_params(cfg)
    scenes = _load(args.dataset)
    try:
        preds = parse_detections(load_json(args.detections))
    except (OSError, FormatError) as exc:
        raise InputError(f"cannot read detections {args.detections}: {exc}") from exc
    gt_ids = {s.scene_id for s in scenes}
    unknown = sorted(set(preds) - gt_ids)
    missing = sorted(gt_ids - set(preds))
    if unknown or missing:
        raise InputError(f"scene id mismatch: missing from detections {missing}, unknown to ground truth {unknown}")
    timing = None
    if args.timing:
        try:
            timing = load_json(args.timing)
        except (OSError, FormatError) as exc:
            raise InputError(f"cannot read timing {args.timing}: {exc}") from exc
    report = evaluate(preds, scenes, params, timing)
    dump_json(report.to_dict(), args.out)
    ts = params.iou_thresholds
    label = args.label or Path(args.detections).stem
    row = [label] + [C.fmt_float(report.mean_ap[(t, "all")]) for t in ts] + [C.fmt_float(report.ap_small)]
    row.append(C.fmt_float(timing.get("fps")) if timing else "")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config"] + [f"AP@{t:g}" for t in ts] + ["AP_small", "FPS"])
            w.writerow(row)
    print("  ".join(row))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if cfg["sweep"]["dataset"] is None:
        raise C.ConfigError("sweep.dataset is not set")
    try:
        run_sweep(cfg, workers=args.workers)
    except (OSError, FormatError) as exc:
        raise InputError(str(exc)) from exc
    print(f"summary: {Path(cfg['sweep']['output_dir']) / 'results.csv'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    params = C.synth_params(cfg)
    if args.n_scenes < 0:
        raise C.ConfigError("--n-scenes must be >= 0")
    scenes = generate_dataset(params, args.n_scenes)
    dump_json(write_coco(scenes), args.out)
    hist = size_histogram(scenes)
    total = sum(hist.values())
    print(f"scenes: {len(scenes)}  objects: {total}")
    for name, count in hist.items():
        share = count / total if total else 0.0
        print(f"  {name:<7}{count:>8}  {share:6.1%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file; flags override it")
    common.add_argument("--seed", type=int)

    slicing = argparse.ArgumentParser(add_help=False)
    slicing.add_argument("--slice-size", type=int, nargs=2, metavar=("W", "H"))
    slicing.add_argument("--overlap", type=float)

    merging = argparse.ArgumentParser(add_help=False)
    merging.add_argument("--merge", choices=["nms", "lsnms", "nmm", "greedy-nmm"])
    merging.add_argument("--metric", choices=["iou", "ios"])
    merging.add_argument("--threshold", type=float)

    p = argparse.ArgumentParser(prog="tileforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("slice", parents=[common, slicing], help="slice a dataset for training")
    s.add_argument("dataset")
    s.add_argument("out_dir")
    s.add_argument("--min-visible", type=float)
    s.add_argument("--max-area", type=float, help="scale filter: drop boxes larger than this from slices")
    s.add_argument("--lenient", action="store_true", help="skip malformed annotation lines instead of failing")
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("infer", parents=[common, slicing, merging], help="run a detection pipeline")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--timing")
    s.add_argument("--pipeline", choices=["full", "sliced", "sliced+full", "cascade"])
    s.add_argument("--detector", choices=["oracle", "stub", "external"])
    s.add_argument("--input-size", type=int, nargs=2, metavar=("W", "H"))
    s.add_argument("--score-threshold", type=float)
    s.add_argument("--latency-ms", type=float)
    s.add_argument("--external-cmd", nargs="+")
    s.add_argument("--on-error", choices=["skip", "abort"])
    s.add_argument("--slice-max-area", type=float)
    s.add_argument("--full-min-area", type=float)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="evaluate a detections file")
    s.add_argument("detections")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.add_argument("--timing")
    s.add_argument("--label")
    s.add_argument("--iou", type=float, nargs="+")
    s.add_argument("--interpolation", choices=["101", "all-points"])
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="grid sweep (config file holds the grid)")
    s.add_argument("--dataset", dest="dataset_path")
    s.add_argument("--output-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic COCO dataset")
    s.add_argument("out")
    s.add_argument("--n-scenes", type=int, required=True)
    s.add_argument("--set", dest="synth_set", action="append", metavar="KEY=VALUE",
                   help="override a synth parameter, e.g. --set small_fraction=0.31")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TILEFORGE_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except C.ConfigError as exc:
        print(f"tileforge: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"tileforge: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DetectorError, OSError, RuntimeError) as exc:
        print(f"tileforge: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
