"""RoI pooling over strided maps: max pooling, class histograms, edge statistics.

A box in image pixels is first mapped to a half-open cell rectangle on the
target map (stride-aware, clamped, never empty), then the rectangle is split
into an m x n grid.  Grid boundaries along an extent ``e`` are
``floor(i * e / k)``: an exact partition when ``e >= k``, and clamped,
possibly overlapping one-cell windows when ``e < k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import Box
from .maps import EdgeMap, FeatureMap, LabelMap


class DegenerateRoiError(DataError):
    """The box lies entirely outside the map."""


@dataclass(frozen=True)
class PoolGrid:
    """Pooling grid: m rows by n columns."""

    m: int = 12
    n: int = 5

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ValueError(f"pool grid must be at least 1x1, got {self.m}x{self.n}")

    @property
    def cells(self) -> int:
        return self.m * self.n


@dataclass(frozen=True)
class FeatureRect:
    """Half-open cell rectangle [row_start, row_end) x [col_start, col_end)."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int

    @property
    def rows(self) -> int:
        return self.row_end - self.row_start

    @property
    def cols(self) -> int:
        return self.col_end - self.col_start


def map_to_feature_coords(box: Box, stride: int, map_h: int, map_w: int) -> FeatureRect:
    """Project an image-pixel box onto a map of the given stride.

    Start cells are ``floor(coord / stride)``, end cells ``ceil of the far
    edge``, clamped to the map and forced to span at least one cell.  A box
    with no overlap at all with the map extent is degenerate.
    """
    if stride < 1 or map_h < 1 or map_w < 1:
        raise ValueError(f"bad map geometry: stride={stride}, shape=({map_h}, {map_w})")
    if box.x >= map_w * stride or box.y >= map_h * stride or box.x2 <= 0 or box.y2 <= 0:
        raise DegenerateRoiError(
            f"box {box.as_tuple()} lies outside a stride-{stride} map of ({map_h}, {map_w}) cells"
        )
    rs = math.floor(box.y / stride)
    re = math.ceil(box.y2 / stride)
    cs = math.floor(box.x / stride)
    ce = math.ceil(box.x2 / stride)
    rs = min(max(rs, 0), map_h - 1)
    cs = min(max(cs, 0), map_w - 1)
    re = min(max(re, rs + 1), map_h)
    ce = min(max(ce, cs + 1), map_w)
    return FeatureRect(rs, re, cs, ce)


def _window(extent: int, k: int, i: int) -> tuple[int, int]:
    start = (i * extent) // k
    end = ((i + 1) * extent) // k
    if end <= start:
        start = min(start, extent - 1)
        end = start + 1
    return start, end


def grid_windows(extent: int, k: int) -> list[tuple[int, int]]:
    """Half-open windows assigning ``extent`` source cells to ``k`` grid slots."""
    if extent < 1 or k < 1:
        raise ValueError(f"extent and grid size must be positive, got {extent}, {k}")
    return [_window(extent, k, i) for i in range(k)]


def roi_max_pool(fmap: FeatureMap, rect: FeatureRect, grid: PoolGrid) -> np.ndarray:
    """Per-cell channel-wise max over the rect, flattened channel-major.

    Output has length ``C * m * n``, ordered as out[c, i, j] raveled with the
    channel index slowest.
    """
    _check_rect(rect, fmap.height, fmap.width)
    sub = fmap.data[:, rect.row_start : rect.row_end, rect.col_start : rect.col_end]
    out = np.empty((fmap.channels, grid.m, grid.n), dtype=np.float32)
    rows = grid_windows(rect.rows, grid.m)
    cols = grid_windows(rect.cols, grid.n)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, i, j] = sub[:, r0:r1, c0:c1].max(axis=(1, 2))
    return out.reshape(-1)


def roi_histogram_pool(
    lmap: LabelMap,
    rect: FeatureRect,
    grid: PoolGrid,
    num_classes: int = 21,
    norm: str = "cell",
) -> np.ndarray:
    """Per-cell class histograms over a label map, concatenated cell-major.

    ``norm="cell"`` divides each histogram by its cell pixel count so that it
    sums to one; ``norm="grid"`` divides by m*n instead (a count-based variant
    kept behind this switch).  Output length is ``num_classes * m * n`` with
    cell (i, j)'s histogram contiguous.
    """
    if norm not in ("cell", "grid"):
        raise ValueError(f"unknown histogram norm {norm!r}")
    _check_rect(rect, lmap.height, lmap.width)
    sub = lmap.data[rect.row_start : rect.row_end, rect.col_start : rect.col_end]
    out = np.empty((grid.m, grid.n, num_classes), dtype=np.float32)
    rows = grid_windows(rect.rows, grid.m)
    cols = grid_windows(rect.cols, grid.n)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            cell = sub[r0:r1, c0:c1]
            counts = np.bincount(cell.reshape(-1), minlength=num_classes).astype(np.float32)
            if norm == "cell":
                out[i, j] = counts / cell.size
            else:
                out[i, j] = counts / (grid.m * grid.n)
    return out.reshape(-1)


def pool_max_2d(data: np.ndarray, rect: FeatureRect, grid: PoolGrid) -> np.ndarray:
    """Per-cell max over a single-channel map, length m*n, row-major cells."""
    _check_rect(rect, data.shape[0], data.shape[1])
    sub = data[rect.row_start : rect.row_end, rect.col_start : rect.col_end]
    out = np.empty((grid.m, grid.n), dtype=np.float32)
    rows = grid_windows(rect.rows, grid.m)
    cols = grid_windows(rect.cols, grid.n)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[i, j] = sub[r0:r1, c0:c1].max()
    return out.reshape(-1)


def roi_edge_pool(
    emap: EdgeMap,
    rect: FeatureRect,
    grid: PoolGrid,
    mode: str = "max",
    bins: int = 16,
    norm: str = "cell",
) -> np.ndarray:
    """Per-cell edge statistics: either the max strength or a B-bin histogram.

    ``mode="max"`` yields one value per cell (length m*n).  ``mode="hist"``
    quantizes strengths into ``bins`` uniform bins over [0, 1] (value 1.0
    lands in the top bin) and pools like the class histogram, length
    ``bins * m * n``, cell-major.
    """
    if mode not in ("max", "hist"):
        raise ValueError(f"unknown edge pooling mode {mode!r}")
    if mode == "hist" and bins < 1:
        raise ValueError(f"edge histogram needs at least 1 bin, got {bins}")
    if mode == "max":
        return pool_max_2d(emap.data, rect, grid)
    _check_rect(rect, emap.height, emap.width)
    sub = emap.data[rect.row_start : rect.row_end, rect.col_start : rect.col_end]
    rows = grid_windows(rect.rows, grid.m)
    cols = grid_windows(rect.cols, grid.n)
    out = np.empty((grid.m, grid.n, bins), dtype=np.float32)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            cell = sub[r0:r1, c0:c1]
            q = np.minimum((cell * bins).astype(np.int64), bins - 1)
            counts = np.bincount(q.reshape(-1), minlength=bins).astype(np.float32)
            if norm == "cell":
                out[i, j] = counts / cell.size
            else:
                out[i, j] = counts / (grid.m * grid.n)
    return out.reshape(-1)


def _check_rect(rect: FeatureRect, map_h: int, map_w: int) -> None:
    if not (0 <= rect.row_start < rect.row_end <= map_h
            and 0 <= rect.col_start < rect.col_end <= map_w):
        raise DataError(f"rect {rect} does not fit a ({map_h}, {map_w}) map")
