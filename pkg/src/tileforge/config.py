"""Declarative configuration: one YAML/JSON document, overridden by CLI flags.

See ``docs/config.example.yaml`` for every key.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Any, Optional

import yaml

from .detect import DetectorConfig, ExternalDetector, FixedLatencyDetector, OracleDetector, OracleParams, derive_seed
from .evaluation import DEFAULT_BUCKETS, EvalParams
from .fusion import MergeParams
from .pipelines import CascadeParams, PipelineSpec
from .slicing import SliceParams
from .synth import SynthParams


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "slice": {"width": 640, "height": 640, "overlap": 0.2, "min_visible_fraction": 0.5,
              "scale_filter_max_area": None},
    "detector": {
        "kind": "oracle",
        "input": [640, 640],
        "score_threshold": 0.0,
        "oracle": {},
        "stub": {"latency_ms": 5.0},
        "external": {"command": [], "timeout_s": 60.0},
    },
    "pipeline": {"kind": "sliced+full", "slice_max_area": None, "full_min_area": None, "on_error": "skip"},
    "merge": {"method": "nms", "metric": "ios", "threshold": 0.5, "class_aware": True,
              "lsnms_sigma": 0.5, "final_score_threshold": 0.0},
    "cascade": {"cut_class_id": 12, "min_cut_area": 0.0, "crop_pad_frac": 0.1, "second_pass_input": [640, 640]},
    "eval": {"iou_thresholds": [0.5], "max_dets_per_image": 500, "interpolation": "101", "class_ids": None},
    "synth": {},
    "sweep": {
        "dataset": None,
        "output_dir": "sweep-out",
        "slice_sizes": [[640, 640]],
        "overlaps": [0.2],
        "merge_methods": ["nms"],
        "match_metrics": ["ios"],
        "match_thresholds": [0.5],
        "include_full_image": [True],
        "baseline": False,
        "workers": None,
    },
}

# sections whose values are free-form dicts validated by the dataclass they feed
_OPEN_SECTIONS = {("detector", "oracle"), ("synth",)}


def _merge(base: dict, over: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if path + (k,) in _OPEN_SECTIONS or path in _OPEN_SECTIONS:
            out[k] = copy.deepcopy(v)
            continue
        if k not in base:
            raise ConfigError(f"unknown config key {'.'.join(path + (k,))!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {'.'.join(path + (k,))!r} must be a mapping")
            out[k] = _merge(base[k], v, path + (k,))
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults <- config file <- overrides (flags win)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _build(cls, kwargs, what):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def slice_params(cfg: dict) -> SliceParams:
    s = cfg["slice"]
    return _build(SliceParams, dict(slice_w=int(s["width"]), slice_h=int(s["height"]),
                                    overlap_ratio=float(s["overlap"])), "slice")


def detector_config(cfg: dict) -> DetectorConfig:
    d = cfg["detector"]
    w, h = d["input"]
    return _build(DetectorConfig, dict(input_w=int(w), input_h=int(h), score_threshold=float(d["score_threshold"])),
                  "detector")


def merge_params(cfg: dict) -> MergeParams:
    m = cfg["merge"]
    return _build(MergeParams, dict(method=m["method"], match_metric=m["metric"],
                                    match_threshold=float(m["threshold"]), class_aware=bool(m["class_aware"]),
                                    lsnms_sigma=float(m["lsnms_sigma"]),
                                    final_score_threshold=float(m["final_score_threshold"])), "merge")


def oracle_params(cfg: dict) -> OracleParams:
    o = dict(cfg["detector"]["oracle"])
    o.setdefault("rng_seed", derive_seed(cfg["seed"], "oracle"))
    for key in ("fp_classes", "echo_classes"):
        if o.get(key) is not None:
            o[key] = tuple(o[key])
    return _build(OracleParams, o, "detector.oracle")


def build_detector(cfg: dict):
    kind = cfg["detector"]["kind"]
    if kind == "oracle":
        return OracleDetector(oracle_params(cfg))
    if kind == "stub":
        return FixedLatencyDetector(float(cfg["detector"]["stub"]["latency_ms"]) / 1000.0)
    if kind == "external":
        ext = cfg["detector"]["external"]
        if not ext["command"]:
            raise ConfigError("detector.external.command is empty")
        return ExternalDetector(list(ext["command"]), float(ext["timeout_s"]))
    raise ConfigError(f"unknown detector kind {kind!r}")


def pipeline_spec(cfg: dict) -> PipelineSpec:
    p = cfg["pipeline"]
    c = cfg["cascade"]
    det = detector_config(cfg)
    sw, sh = c["second_pass_input"]
    cascade = _build(CascadeParams, dict(
        cut_class_id=int(c["cut_class_id"]), min_cut_area=float(c["min_cut_area"]),
        crop_pad_frac=float(c["crop_pad_frac"]), detector_cfg=det,
        second_pass_detector_cfg=_build(DetectorConfig, dict(input_w=int(sw), input_h=int(sh),
                                                             score_threshold=det.score_threshold), "cascade"),
        merge=merge_params(cfg)), "cascade")
    return _build(PipelineSpec, dict(
        kind=p["kind"], slice_params=slice_params(cfg), detector_cfg=det, merge=merge_params(cfg),
        cascade=cascade, slice_max_area=p["slice_max_area"], full_min_area=p["full_min_area"],
        on_error=p["on_error"]), "pipeline")


def eval_params(cfg: dict) -> EvalParams:
    e = cfg["eval"]
    ids = e.get("class_ids")
    return _build(EvalParams, dict(
        iou_thresholds=tuple(float(t) for t in e["iou_thresholds"]), size_buckets=DEFAULT_BUCKETS,
        max_dets_per_image=int(e["max_dets_per_image"]), interpolation=str(e["interpolation"]),
        class_ids=None if ids is None else tuple(int(i) for i in ids)), "eval")


def synth_params(cfg: dict) -> SynthParams:
    s = dict(cfg["synth"])
    s.setdefault("rng_seed", derive_seed(cfg["seed"], "synth"))
    if "class_weights" in s:
        s["class_weights"] = tuple(s["class_weights"])
    return _build(SynthParams, s, "synth")


def fmt_float(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6f}"
