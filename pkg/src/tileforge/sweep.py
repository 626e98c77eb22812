"""Resumable grid sweep over slicing and merge settings.

Every combination writes ``results/<key>.json`` once finished; a rerun skips
combinations whose result file already parses. The summary CSV is rebuilt
from all result files and sorted by mAP at the first IoU threshold.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import config as C
from .evaluation import evaluate
from .io import dump_json, load_dataset
from .pipelines import run_pipeline
from .timing import StageTimer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Combination:
    pipeline: str
    slice_w: int = 0
    slice_h: int = 0
    overlap: float = 0.0
    method: str = "nms"
    metric: str = "iou"
    threshold: float = 0.5

    @property
    def key(self) -> str:
        if self.pipeline == "full":
            return f"full_{self.method}_{self.metric}_t{self.threshold:g}"
        return (f"{self.pipeline.replace('+', '-')}_s{self.slice_w}x{self.slice_h}_o{self.overlap:g}"
                f"_{self.method}_{self.metric}_t{self.threshold:g}")

    def as_dict(self) -> dict:
        return {"pipeline": self.pipeline, "slice_w": self.slice_w, "slice_h": self.slice_h,
                "overlap": self.overlap, "method": self.method, "metric": self.metric,
                "threshold": self.threshold}


def combinations(cfg: dict) -> list[Combination]:
    s = cfg["sweep"]
    grids = [s["slice_sizes"], s["overlaps"], s["merge_methods"], s["match_metrics"], s["match_thresholds"],
             s["include_full_image"]]
    if any(not g for g in grids):
        raise C.ConfigError("every sweep grid must be non-empty")
    out = [
        Combination("sliced+full" if full else "sliced", int(size[0]), int(size[1]), float(ov), m, met, float(t))
        for size, ov, m, met, t, full in itertools.product(*grids)
    ]
    if s["baseline"]:
        out.append(Combination("full", method=s["merge_methods"][0], metric=s["match_metrics"][0],
                               threshold=float(s["match_thresholds"][0])))
    keys = [c.key for c in out]
    if len(set(keys)) != len(keys):
        raise C.ConfigError("sweep grid contains duplicate combinations")
    return out


def _combo_config(cfg: dict, combo: Combination) -> dict:
    c = copy.deepcopy(cfg)
    c["pipeline"]["kind"] = combo.pipeline
    if combo.pipeline != "full":
        c["slice"].update(width=combo.slice_w, height=combo.slice_h, overlap=combo.overlap)
    c["merge"].update(method=combo.method, metric=combo.metric, threshold=combo.threshold)
    return c


def run_combination(cfg: dict, combo: Combination, scenes=None) -> dict:
    """Infer + evaluate one combination; failures are captured in the row."""
    row = {"key": combo.key, "combination": combo.as_dict(), "error": None}
    try:
        c = _combo_config(cfg, combo)
        if scenes is None:
            scenes = load_dataset(cfg["sweep"]["dataset"])
        spec = C.pipeline_spec(c)
        detector = C.build_detector(c)
        timer = StageTimer()
        preds = run_pipeline(scenes, detector, spec, timer=timer)
        report = evaluate(preds, scenes, C.eval_params(c))
        row.update(
            ap={f"{t:g}": report.mean_ap[(t, "all")] for t in report.params.iou_thresholds},
            ap_small=report.ap_small,
            fps=timer.fps,
            detector_calls=timer.detector_calls,
        )
    except Exception as exc:  # one bad combination must not stop the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.debug("combination %s failed:\n%s", combo.key, traceback.format_exc())
    return row


def _worker(args):
    cfg, combo, scenes = args
    return run_combination(cfg, combo, scenes)


def _load_row(path: Path):
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError):
        return None


def run_sweep(cfg: dict, workers=None, scenes=None, echo=print) -> dict:
    """Run all missing combinations; returns ``{"rows": [...], "computed": [keys]}``."""
    combos = combinations(cfg)
    out_dir = Path(cfg["sweep"]["output_dir"])
    res_dir = out_dir / "results"
    res_dir.mkdir(parents=True, exist_ok=True)
    echo(f"sweep: {len(combos)} combinations")
    todo = [c for c in combos if _load_row(res_dir / f"{c.key}.json") is None]
    echo(f"sweep: {len(combos) - len(todo)} already done, {len(todo)} to run")
    workers = workers or cfg["sweep"]["workers"] or os.cpu_count() or 1
    if todo and scenes is None:
        scenes = load_dataset(cfg["sweep"]["dataset"])
    if workers <= 1 or len(todo) <= 1:
        rows = (run_combination(cfg, c, scenes) for c in todo)
        for row in rows:
            dump_json(row, res_dir / f"{row['key']}.json")
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # results are written here, in the parent, one at a time
            for row in pool.map(_worker, [(cfg, c, scenes) for c in todo]):
                dump_json(row, res_dir / f"{row['key']}.json")
    rows = [_load_row(res_dir / f"{c.key}.json") for c in combos]
    write_summary(rows, cfg, out_dir / "results.csv")
    return {"rows": rows, "computed": [c.key for c in todo]}


def _sort_key(row, first):
    v = (row.get("ap") or {}).get(first)
    return (v is None, -(v if v is not None else 0.0), row["key"])


def write_summary(rows, cfg, path) -> None:
    ts = [f"{float(t):g}" for t in cfg["eval"]["iou_thresholds"]]
    rows = sorted(rows, key=lambda r: _sort_key(r, ts[0]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "pipeline", "slice", "overlap", "method", "metric", "threshold"]
                   + [f"AP@{t}" for t in ts] + ["AP_small", "FPS", "detector_calls", "error"])
        for r in rows:
            c = r["combination"]
            ap = r.get("ap") or {}
            w.writerow([
                r["key"], c["pipeline"],
                "" if c["pipeline"] == "full" else f"{c['slice_w']}x{c['slice_h']}",
                "" if c["pipeline"] == "full" else c["overlap"],
                c["method"], c["metric"], c["threshold"],
                *[C.fmt_float(ap.get(t)) for t in ts],
                C.fmt_float(r.get("ap_small")), C.fmt_float(r.get("fps")),
                r.get("detector_calls", ""), r.get("error") or "",
            ])


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = ["Combination", "combinations", "run_combination", "run_sweep", "write_summary", "read_summary"]
