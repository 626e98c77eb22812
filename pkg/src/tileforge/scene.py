"""Scene records and the class table shared by every stage."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .geometry import Box

IGNORED_REGION_ID = 0
CUT_CLASS_ID = 12


@dataclass(frozen=True, slots=True)
class Annotation:
    box: Box
    class_id: int
    truncation: Optional[int] = None
    occlusion: Optional[int] = None
    # VisDrone "score" 0: keep the geometry as an ignore region, never as GT
    ignore: bool = False


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    image_path: Optional[str] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"scene {self.scene_id!r}: non-positive size {self.width}x{self.height}")
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for a in self.annotations:
            b = a.box
            if b.x1 < 0 or b.y1 < 0 or b.x2 > self.width or b.y2 > self.height:
                raise ValueError(f"scene {self.scene_id!r}: annotation {b} outside image")

    def is_ignore_region(self, a: Annotation, table: "ClassTable | None" = None) -> bool:
        ignored_id = IGNORED_REGION_ID if table is None else table.ignored_id
        return a.ignore or a.class_id == ignored_id

    def objects(self, table: "ClassTable | None" = None) -> list[Annotation]:
        """Annotations that count as ground-truth objects."""
        return [a for a in self.annotations if not self.is_ignore_region(a, table)]

    def ignore_regions(self, table: "ClassTable | None" = None) -> list[Box]:
        return [a.box for a in self.annotations if self.is_ignore_region(a, table)]

    def with_annotations(self, annotations) -> "SceneRecord":
        return SceneRecord(self.scene_id, self.width, self.height, tuple(annotations), self.image_path)


@dataclass(frozen=True)
class ClassTable:
    entries: tuple[tuple[int, str], ...]
    ignored_id: int = IGNORED_REGION_ID
    cut_id: int = CUT_CLASS_ID
    names: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate class ids")
        if self.ignored_id not in ids or self.cut_id not in ids:
            raise ValueError("class table must contain the reserved ignored-region and cut ids")
        object.__setattr__(self, "names", dict(self.entries))

    @property
    def object_ids(self) -> list[int]:
        return [i for i, _ in self.entries if i not in (self.ignored_id, self.cut_id)]

    def name(self, class_id: int) -> str:
        return self.names.get(class_id, str(class_id))


VISDRONE_CLASSES = ClassTable(
    (
        (0, "ignored-regions"),
        (1, "pedestrian"),
        (2, "people"),
        (3, "bicycle"),
        (4, "car"),
        (5, "van"),
        (6, "truck"),
        (7, "tricycle"),
        (8, "awning-tricycle"),
        (9, "bus"),
        (10, "motor"),
        (11, "others"),
        (12, "cut"),
    )
)
