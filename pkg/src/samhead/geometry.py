"""Boxes, overlap, greedy suppression, anchor grids, and evaluation-region tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given as top-left corner plus extent, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"box coordinates must be finite, got {self!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extent must be positive, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + 0.5 * self.w

    @property
    def cy(self) -> float:
        return self.y + 0.5 * self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Candidate:
    """A proposal box with an objectness score in [0, 1]."""

    box: Box
    score: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"candidate score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotated object with occlusion/truncation fractions and an ignore flag."""

    box: Box
    occlusion: float = 0.0
    truncation: float = 0.0
    ignore: bool = False

    def __post_init__(self) -> None:
        for name, v in (("occlusion", self.occlusion), ("truncation", self.truncation)):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Detection:
    """A final detection: box plus a real-valued classifier score."""

    box: Box
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValueError(f"detection score must be finite, got {self.score}")


def default_anchor_heights(base: float = 40.0, factor: float = 1.3, count: int = 9) -> tuple[float, ...]:
    """Geometric series of anchor heights, ``base * factor**k`` for k in [0, count)."""
    return tuple(base * factor**k for k in range(count))


@dataclass(frozen=True)
class AnchorConfig:
    """Single-aspect anchor grid: width is ``ratio * height`` at every scale."""

    ratio: float = 0.41
    scales: tuple[float, ...] = field(default_factory=default_anchor_heights)
    stride: int = 16

    def __post_init__(self) -> None:
        if self.ratio <= 0:
            raise ConfigError(f"anchor ratio must be positive, got {self.ratio}")
        if self.stride <= 0:
            raise ConfigError(f"anchor stride must be positive, got {self.stride}")
        if not self.scales:
            raise ConfigError("anchor scales must be non-empty")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ConfigError(f"anchor scales must be strictly increasing, got {self.scales}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(detections: list[Detection], threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Detections are visited in descending score order (ties keep input order);
    a detection survives iff its IoU with every already-kept detection is
    <= threshold.  Survivors are returned in that same visiting order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"nms threshold must be in [0, 1], got {threshold}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[Detection] = []
    for i in order:
        d = detections[i]
        if all(iou(d.box, k.box) <= threshold for k in kept):
            kept.append(d)
    return kept


def generate_anchors(cfg: AnchorConfig, image_w: int, image_h: int) -> list[Box]:
    """Enumerate anchors centered on a stride-spaced grid covering the image.

    The grid has ceil(image / stride) cells per axis and anchors sit at cell
    centers, one per scale, unclipped.  Ordering is row-major over the grid
    with scales innermost.
    """
    if image_w <= 0 or image_h <= 0:
        raise ConfigError(f"image size must be positive, got {image_w}x{image_h}")
    grid_w = -(-image_w // cfg.stride)
    grid_h = -(-image_h // cfg.stride)
    anchors: list[Box] = []
    for gy in range(grid_h):
        cy = (gy + 0.5) * cfg.stride
        for gx in range(grid_w):
            cx = (gx + 0.5) * cfg.stride
            for h in cfg.scales:
                w = cfg.ratio * h
                anchors.append(Box(cx - 0.5 * w, cy - 0.5 * h, w, h))
    return anchors


@dataclass(frozen=True)
class RegionBounds:
    """Closed rectangle of allowed box centers for evaluation."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ConfigError(f"region bounds must be ordered, got {self!r}")


#: Center bounds conventionally used for 640x480 street-scene footage.
DEFAULT_EVAL_REGION = RegionBounds(5.0, 635.0, 5.0, 475.0)


def in_eval_region(box: Box, bounds: RegionBounds) -> bool:
    """True iff the box center lies inside the closed bounds rectangle."""
    return bounds.x_min <= box.cx <= bounds.x_max and bounds.y_min <= box.cy <= bounds.y_max
