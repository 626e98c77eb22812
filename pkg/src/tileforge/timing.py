"""Per-stage wall-clock accounting and FPS."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager

STAGES = ("slicing", "detection", "remap", "merge", "eval")


class StageTimer:
    """Accumulates stage durations and call counts on a monotonic clock.

    ``run()`` brackets the end-to-end span; stages nest inside it.
    """

    def __init__(self, clock=time.perf_counter):
        self.clock = clock
        self.totals: dict[str, float] = defaultdict(float)
        self.calls: dict[str, int] = defaultdict(int)
        self.images = 0
        self.end_to_end = 0.0

    @contextmanager
    def stage(self, name: str):
        t0 = self.clock()
        try:
            yield
        finally:
            self.totals[name] += self.clock() - t0
            self.calls[name] += 1

    @contextmanager
    def run(self, n_images: int = 1):
        t0 = self.clock()
        try:
            yield self
        finally:
            self.end_to_end += self.clock() - t0
            self.images += n_images

    @property
    def detector_calls(self) -> int:
        return self.calls.get("detection", 0)

    @property
    def fps(self):
        return fps(self.images, self.end_to_end)

    def table(self) -> dict:
        return {
            "stages": {s: {"seconds": self.totals.get(s, 0.0), "calls": self.calls.get(s, 0)} for s in STAGES},
            "detector_calls": self.detector_calls,
            "images": self.images,
            "end_to_end_seconds": self.end_to_end,
            "fps": self.fps,
        }


def fps(n_images: int, seconds: float):
    if n_images <= 0 or seconds <= 0:
        return None
    return n_images / seconds


class NullTimer(StageTimer):
    """Timer that records nothing; used when the caller passes none."""

    @contextmanager
    def stage(self, name: str):
        yield

    @contextmanager
    def run(self, n_images: int = 1):
        yield self
