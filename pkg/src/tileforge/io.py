"""Readers and writers: VisDrone text, COCO JSON, detections JSON, slice manifests.

Framework-native documents are JSON written with sorted keys so result files
diff cleanly.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .detect import Detection
from .geometry import Box
from .scene import VISDRONE_CLASSES, Annotation, ClassTable, SceneRecord
from .slicing import SlicedAnnotation, SlicedScene, SliceWindow, remap_to_global

log = logging.getLogger(__name__)


class FormatError(ValueError):
    """Malformed input; ``location`` names the file/line/key at fault."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


def _json_default(o):
    if isinstance(o, np.generic):  # numpy scalars leak in from array-built boxes
        return o.item()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def dump_json(doc, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc


# ---------------------------------------------------------------------------
# VisDrone
# ---------------------------------------------------------------------------


@dataclass
class VisDroneParse:
    scene: SceneRecord
    skipped: list[FormatError] = field(default_factory=list)
    clipped: int = 0


def _parse_visdrone_line(line: str, lineno: int, width: int, height: int):
    parts = [p.strip() for p in line.split(",")]
    if parts and parts[-1] == "":
        parts = parts[:-1]  # tolerate a trailing comma
    loc = f"line {lineno}"
    if len(parts) != 8:
        raise FormatError(f"expected 8 comma-separated fields, got {len(parts)}", loc)
    try:
        left, top, w, h = (float(v) for v in parts[:4])
        score, category, trunc, occl = (int(v) for v in parts[4:])
    except ValueError:
        raise FormatError(f"non-numeric field in {line.strip()!r}", loc) from None
    if not all(math.isfinite(v) for v in (left, top, w, h)):
        raise FormatError("non-finite coordinate", loc)
    if w < 0 or h < 0:
        raise FormatError(f"negative extent {w}x{h}", loc)
    raw = Box(left, top, left + w, top + h)
    box = raw.clip(width, height)
    return Annotation(box, category, trunc, occl, ignore=(score == 0)), box != raw


def parse_visdrone_report(
    annotation_text: str, image_w: int, image_h: int, scene_id: str = "", strict: bool = True,
    image_path: Optional[str] = None,
) -> VisDroneParse:
    """Parse one VisDrone-DET annotation file.

    Lines are ``left,top,width,height,score,category,truncation,occlusion``.
    Category 0 is kept as an ignored region (class 0 in the VisDrone table); a
    score of 0 marks the box as ignore-only. Out-of-image boxes are clipped and
    counted. In lenient mode malformed lines are skipped and reported.
    """
    anns, skipped, clipped = [], [], 0
    for lineno, line in enumerate(annotation_text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            ann, was_clipped = _parse_visdrone_line(line, lineno, image_w, image_h)
        except FormatError as exc:
            if strict:
                raise
            log.warning("%s: skipping malformed line: %s", scene_id or "<visdrone>", exc)
            skipped.append(exc)
            continue
        anns.append(ann)
        clipped += was_clipped
    if clipped:
        log.info("%s: clipped %d out-of-image boxes", scene_id or "<visdrone>", clipped)
    return VisDroneParse(SceneRecord(scene_id, image_w, image_h, tuple(anns), image_path), skipped, clipped)


def parse_visdrone(annotation_text: str, image_w: int, image_h: int, scene_id: str = "", strict: bool = True) -> SceneRecord:
    return parse_visdrone_report(annotation_text, image_w, image_h, scene_id, strict).scene


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_visdrone(scene: SceneRecord) -> str:
    lines = []
    for a in scene.annotations:
        x, y, w, h = a.box.to_xywh()
        lines.append(",".join([
            _num(x), _num(y), _num(w), _num(h),
            "0" if a.ignore else "1", str(a.class_id),
            str(a.truncation or 0), str(a.occlusion or 0),
        ]))
    return "\n".join(lines) + ("\n" if lines else "")


def _image_size(path: Path) -> tuple[int, int]:
    from PIL import Image

    with Image.open(path) as im:
        return im.size


def load_visdrone_dir(root, strict: bool = True) -> list[SceneRecord]:
    """Load ``root/annotations/*.txt``.

    Image sizes come from ``root/sizes.json`` (``{scene_id: [w, h]}``) when
    present, else from the headers of ``root/images/<scene_id>.*``.
    """
    root = Path(root)
    ann_dir = root / "annotations"
    if not ann_dir.is_dir():
        raise FormatError("missing annotations/ directory", str(root))
    sizes = load_json(root / "sizes.json") if (root / "sizes.json").exists() else {}
    scenes = []
    for txt in sorted(ann_dir.glob("*.txt")):
        sid = txt.stem
        image = next(iter(sorted((root / "images").glob(sid + ".*"))), None) if (root / "images").is_dir() else None
        if sid in sizes:
            w, h = sizes[sid]
        elif image is not None:
            w, h = _image_size(image)
        else:
            raise FormatError(f"no size for scene {sid!r} (add sizes.json or images/)", str(txt))
        scenes.append(
            parse_visdrone_report(txt.read_text(), int(w), int(h), sid, strict, str(image) if image else None).scene
        )
    return scenes


# ---------------------------------------------------------------------------
# COCO
# ---------------------------------------------------------------------------


def _structured(fn):
    """Turn stray type errors from malformed documents into :class:`FormatError`."""

    @functools.wraps(fn)
    def wrapper(doc, *args, **kwargs):
        try:
            return fn(doc, *args, **kwargs)
        except FormatError:
            raise
        except (TypeError, ValueError, KeyError, AttributeError) as exc:
            raise FormatError(f"malformed document: {exc}", "$") from None

    return wrapper


def _require(obj, keys, where):
    if not isinstance(obj, dict):
        raise FormatError("expected an object", where)
    missing = [k for k in keys if k not in obj]
    if missing:
        raise FormatError(f"missing required keys {missing}", where)


@_structured
def parse_coco(doc) -> tuple[list[SceneRecord], list[tuple[int, str]]]:
    """COCO detection JSON -> scenes (in ``images`` order) and ``(id, name)`` categories.

    The scene id is the image's ``scene_id`` field when present, else
    ``str(id)``. ``iscrowd`` annotations become ignore regions. Annotations
    are ordered by annotation id within each image.
    """
    _require(doc, ("images", "annotations", "categories"), "$")
    images, by_id = [], {}
    for i, im in enumerate(doc["images"]):
        _require(im, ("id", "width", "height", "file_name"), f"$.images[{i}]")
        if im["id"] in by_id:
            raise FormatError(f"duplicate image id {im['id']!r}", f"$.images[{i}]")
        by_id[im["id"]] = []
        images.append(im)
    cats = []
    for i, c in enumerate(doc["categories"]):
        _require(c, ("id", "name"), f"$.categories[{i}]")
        cats.append((int(c["id"]), str(c["name"])))
    for i, a in enumerate(doc["annotations"]):
        where = f"$.annotations[{i}]"
        _require(a, ("id", "image_id", "category_id", "bbox"), where)
        if a["image_id"] not in by_id:
            raise FormatError(f"unknown image_id {a['image_id']!r}", where)
        bbox = a["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise FormatError("bbox must be [x, y, w, h]", where)
        try:
            box = Box.from_xywh(*(float(v) for v in bbox))
            ann = Annotation(box, int(a["category_id"]), a.get("truncation"), a.get("occlusion"),
                             bool(a.get("iscrowd", 0)))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad annotation: {exc}", where) from None
        by_id[a["image_id"]].append((a["id"], ann))
    scenes = []
    for i, im in enumerate(images):
        anns = [ann for _, ann in sorted(by_id[im["id"]], key=lambda t: t[0])]
        try:
            scenes.append(SceneRecord(str(im.get("scene_id", im["id"])), int(im["width"]), int(im["height"]),
                                      tuple(anns), im["file_name"] or None))
        except (TypeError, ValueError) as exc:
            raise FormatError(str(exc), f"$.images[{i}]") from None
    return scenes, cats


def _image_ids(scenes):
    # numeric scene ids are reused as COCO image ids so standard documents round-trip
    ids = [s.scene_id for s in scenes]
    if all(i.isdigit() and not (len(i) > 1 and i[0] == "0") and int(i) > 0 for i in ids) and len(set(ids)) == len(ids):
        return [int(i) for i in ids], False
    return list(range(1, len(ids) + 1)), True


def write_coco(scenes: Sequence[SceneRecord], categories=VISDRONE_CLASSES) -> dict:
    """Scenes -> COCO document; ``categories`` is a :class:`ClassTable` or ``(id, name)`` pairs."""
    entries = categories.entries if isinstance(categories, ClassTable) else categories
    image_ids, named = _image_ids(scenes)
    images, anns = [], []
    next_ann = 1
    for image_id, s in zip(image_ids, scenes):
        im = {"id": image_id, "width": s.width, "height": s.height, "file_name": s.image_path or ""}
        if named:
            im["scene_id"] = s.scene_id
        images.append(im)
        for a in s.annotations:
            entry = {
                "id": next_ann, "image_id": image_id, "category_id": a.class_id,
                "bbox": list(a.box.to_xywh()), "area": a.box.area, "iscrowd": int(a.ignore),
            }
            if a.truncation is not None:
                entry["truncation"] = a.truncation
            if a.occlusion is not None:
                entry["occlusion"] = a.occlusion
            anns.append(entry)
            next_ann += 1
    cats = [{"id": c, "name": n} for c, n in entries]
    return {"images": images, "annotations": anns, "categories": cats}


def load_dataset(path, strict: bool = True) -> list[SceneRecord]:
    """A COCO ``.json`` file or a VisDrone directory."""
    path = Path(path)
    if path.is_dir():
        return load_visdrone_dir(path, strict)
    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    return parse_coco(load_json(path))[0]


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------


def write_detections(per_scene: Mapping[str, Sequence[Detection]]) -> list:
    """``[{scene_id, detections: [{bbox: [x1, y1, x2, y2], class_id, score}]}]`` sorted by scene id."""
    return [
        {
            "scene_id": sid,
            "detections": [
                {"bbox": list(d.box.as_tuple()), "class_id": d.class_id, "score": d.score}
                for d in per_scene[sid]
            ],
        }
        for sid in sorted(per_scene)
    ]


@_structured
def parse_detections(doc) -> dict[str, list[Detection]]:
    if not isinstance(doc, list):
        raise FormatError("detections document must be a list", "$")
    out: dict[str, list[Detection]] = {}
    for i, entry in enumerate(doc):
        _require(entry, ("scene_id", "detections"), f"$[{i}]")
        sid = str(entry["scene_id"])
        if sid in out:
            raise FormatError(f"duplicate scene_id {sid!r}", f"$[{i}]")
        if not isinstance(entry["detections"], list):
            raise FormatError("detections must be a list", f"$[{i}].detections")
        dets = []
        for j, d in enumerate(entry["detections"]):
            where = f"$[{i}].detections[{j}]"
            _require(d, ("bbox", "class_id", "score"), where)
            try:
                x1, y1, x2, y2 = (float(v) for v in d["bbox"])
                cls = d["class_id"]
                if isinstance(cls, bool) or not isinstance(cls, int):
                    raise ValueError(f"class_id must be an integer, got {cls!r}")
                score = d["score"]
                if isinstance(score, bool) or not isinstance(score, (int, float)):
                    raise ValueError(f"score must be a number, got {score!r}")
                dets.append(Detection(Box(x1, y1, x2, y2), cls, float(score)))
            except (TypeError, ValueError) as exc:
                raise FormatError(str(exc), where) from None
        out[sid] = dets
    return out


# ---------------------------------------------------------------------------
# slice manifests
# ---------------------------------------------------------------------------


def slice_annotation_document(s: SlicedScene) -> dict:
    return {
        "slice_id": s.slice_id,
        "parent_id": s.parent_id,
        "width": s.window.width,
        "height": s.window.height,
        "annotations": [
            {"bbox": list(a.box.as_tuple()), "class_id": a.class_id,
             "visible_fraction": a.visible_fraction, "ignore": a.ignore}
            for a in s.annotations
        ],
    }


@_structured
def parse_slice_annotations(doc) -> list[SlicedAnnotation]:
    _require(doc, ("annotations",), "$")
    out = []
    for i, a in enumerate(doc["annotations"]):
        _require(a, ("bbox", "class_id", "visible_fraction"), f"$.annotations[{i}]")
        try:
            out.append(SlicedAnnotation(Box(*(float(v) for v in a["bbox"])), int(a["class_id"]),
                                        float(a["visible_fraction"]), bool(a.get("ignore", False))))
        except (TypeError, ValueError) as exc:
            raise FormatError(str(exc), f"$.annotations[{i}]") from None
    return out


def build_manifest(slices: Iterable[SlicedScene], annotation_dir: str = "slices") -> dict:
    entries, seen = [], set()
    for s in slices:
        if s.slice_id in seen:
            raise ValueError(f"duplicate slice_id {s.slice_id!r}")
        seen.add(s.slice_id)
        entries.append({
            "slice_id": s.slice_id,
            "parent_id": s.parent_id,
            "window": s.window.as_dict(),
            "annotation_file": f"{annotation_dir}/{s.slice_id}.json",
        })
    return {"slices": entries}


def write_slice_manifest(slices: Sequence[SlicedScene], out_dir) -> Path:
    """Write one annotation JSON per slice plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    manifest = build_manifest(slices)
    for s, entry in zip(slices, manifest["slices"]):
        dump_json(slice_annotation_document(s), out_dir / entry["annotation_file"])
    path = out_dir / "manifest.json"
    dump_json(manifest, path)
    return path


@dataclass(frozen=True)
class ManifestEntry:
    slice_id: str
    parent_id: str
    window: SliceWindow
    annotation_file: str


@_structured
def parse_manifest(doc) -> list[ManifestEntry]:
    _require(doc, ("slices",), "$")
    out, seen = [], set()
    for i, e in enumerate(doc["slices"]):
        where = f"$.slices[{i}]"
        _require(e, ("slice_id", "parent_id", "window", "annotation_file"), where)
        if e["slice_id"] in seen:
            raise FormatError(f"duplicate slice_id {e['slice_id']!r}", where)
        seen.add(e["slice_id"])
        w = e["window"]
        _require(w, ("offset_x", "offset_y", "width", "height"), where + ".window")
        try:
            window = SliceWindow.make(int(w["offset_x"]), int(w["offset_y"]), int(w["width"]), int(w["height"]))
        except (TypeError, ValueError) as exc:
            raise FormatError(str(exc), where + ".window") from None
        out.append(ManifestEntry(str(e["slice_id"]), str(e["parent_id"]), window, str(e["annotation_file"])))
    return out


def reconstruct_global(manifest_path) -> dict[str, list[tuple[str, Annotation, float]]]:
    """Read a manifest and its slice files back into the parent frame.

    Returns ``{parent_id: [(slice_id, global annotation, visible_fraction)]}``.
    """
    manifest_path = Path(manifest_path)
    out: dict[str, list] = {}
    for e in parse_manifest(load_json(manifest_path)):
        anns = parse_slice_annotations(load_json(manifest_path.parent / e.annotation_file))
        rows = out.setdefault(e.parent_id, [])
        for a in anns:
            rows.append((e.slice_id, Annotation(remap_to_global(a.box, e.window), a.class_id, ignore=a.ignore),
                         a.visible_fraction))
    return out


__all__ = [
    "FormatError", "VisDroneParse", "parse_visdrone", "parse_visdrone_report", "write_visdrone",
    "load_visdrone_dir", "parse_coco", "write_coco", "load_dataset", "write_detections",
    "parse_detections", "write_slice_manifest", "build_manifest", "parse_manifest",
    "reconstruct_global", "dump_json", "load_json",
]
