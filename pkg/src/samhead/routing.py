"""Scale-dependent routing of candidates to layer combinations, plus descriptor assembly.

Each scale bin names the CNN layers pooled for candidates in its height range
and a PCA projector that maps the pooled per-cell channel stack to the shared
target dimension, so descriptors have one length no matter which bin produced
them.  Optional semantic and edge channels are appended after the CNN block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .geometry import Box
from .maps import ImageRecord, NUM_LABEL_CLASSES
from .pca import PcaProjector
from .pooling import (
    PoolGrid,
    map_to_feature_coords,
    pool_max_2d,
    roi_edge_pool,
    roi_histogram_pool,
    roi_max_pool,
)


class MissingLayerError(DataError):
    """A routed layer (or label/edge map) is absent from the image record."""


@dataclass(frozen=True)
class ScaleBin:
    """Height range [min_height, max_height) routed to a layer combination."""

    min_height: float
    max_height: float | None  # None = unbounded
    layers: tuple[str, ...]
    projector_id: str

    def __post_init__(self) -> None:
        if self.min_height <= 0:
            raise ConfigError(f"bin min_height must be positive, got {self.min_height}")
        if self.max_height is not None and self.max_height <= self.min_height:
            raise ConfigError(
                f"bin range [{self.min_height}, {self.max_height}) is empty"
            )
        if not self.layers:
            raise ConfigError("bin must route to at least one layer")
        if len(set(self.layers)) != len(self.layers):
            raise ConfigError(f"bin layers contain duplicates: {self.layers}")

    def contains(self, height: float) -> bool:
        if height < self.min_height:
            return False
        return self.max_height is None or height < self.max_height


@dataclass(frozen=True)
class RoutingTable:
    """Ordered, contiguous scale bins covering [min_height, infinity)."""

    bins: tuple[ScaleBin, ...]
    grid: PoolGrid = field(default_factory=PoolGrid)
    target_dim: int = 0  # 0 = use the smallest bin channel sum (resolved at fit time)

    def __post_init__(self) -> None:
        if not self.bins:
            raise ConfigError("routing table needs at least one bin")
        for a, b in zip(self.bins, self.bins[1:]):
            if a.max_height is None or not math.isclose(a.max_height, b.min_height):
                raise ConfigError(
                    f"bins must be contiguous: [{a.min_height}, {a.max_height}) then "
                    f"[{b.min_height}, {b.max_height})"
                )
        if self.bins[-1].max_height is not None:
            raise ConfigError("last bin must be unbounded above")
        ids = [b.projector_id for b in self.bins]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"projector ids must be unique, got {ids}")


def route(table: RoutingTable, height: float) -> int:
    """Bin index for a candidate height; heights below the first bin route to it."""
    if not (math.isfinite(height) and height > 0):
        raise DataError(f"candidate height must be positive and finite, got {height}")
    for i, b in enumerate(table.bins):
        if b.contains(height):
            return i
    return 0  # below the first bin's minimum


def default_routing_table(grid: PoolGrid | None = None, target_dim: int = 0) -> RoutingTable:
    """Two bins: [50, 80) -> conv3+conv4a, [80, inf) -> conv4a+conv5a."""
    return RoutingTable(
        bins=(
            ScaleBin(50.0, 80.0, ("conv3", "conv4a"), "small"),
            ScaleBin(80.0, None, ("conv4a", "conv5a"), "large"),
        ),
        grid=grid or PoolGrid(),
        target_dim=target_dim,
    )


def pool_bin_cells(
    record: ImageRecord, box: Box, table: RoutingTable, bin_index: int
) -> np.ndarray:
    """Per-cell stacked channel vectors for one bin's layers, shape (m*n, D_bin)."""
    grid = table.grid
    parts = []
    for name in table.bins[bin_index].layers:
        try:
            fmap = record.layer(name)
        except DataError:
            raise MissingLayerError(
                f"image {record.image_id!r} lacks routed layer {name!r}"
            ) from None
        rect = map_to_feature_coords(box, fmap.stride, fmap.height, fmap.width)
        pooled = roi_max_pool(fmap, rect, grid).reshape(fmap.channels, grid.cells)
        parts.append(pooled)
    return np.concatenate(parts, axis=0).T  # (cells, D_bin)


@dataclass(frozen=True)
class ChannelConfig:
    """Which auxiliary channels to append and how to pool them."""

    semantic: bool = False
    semantic_pooling: str = "hist"  # "hist" | "max"
    edge: bool = False
    edge_pooling: str = "max"  # "max" | "hist"
    edge_bins: int = 16
    label_classes: int = NUM_LABEL_CLASSES
    histogram_norm: str = "cell"  # "cell" | "grid"

    def __post_init__(self) -> None:
        if self.semantic_pooling not in ("hist", "max"):
            raise ConfigError(f"unknown semantic pooling {self.semantic_pooling!r}")
        if self.edge_pooling not in ("hist", "max"):
            raise ConfigError(f"unknown edge pooling {self.edge_pooling!r}")
        if self.edge_bins < 1:
            raise ConfigError(f"edge_bins must be >= 1, got {self.edge_bins}")
        if self.histogram_norm not in ("cell", "grid"):
            raise ConfigError(f"unknown histogram norm {self.histogram_norm!r}")

    def block_length(self, grid: PoolGrid) -> int:
        n = 0
        if self.semantic:
            n += (self.label_classes if self.semantic_pooling == "hist" else 1) * grid.cells
        if self.edge:
            n += (self.edge_bins if self.edge_pooling == "hist" else 1) * grid.cells
        return n


class DescriptorExtractor:
    """Binds a routing table, fitted projectors, and channel config together.

    Descriptor layout: the PCA-projected CNN block flattened cell-major
    (cell (0,0)'s d values first), then the semantic block, then the edge
    block.  Length is identical for every candidate.
    """

    def __init__(
        self,
        table: RoutingTable,
        projectors: dict[str, PcaProjector],
        channels: ChannelConfig = ChannelConfig(),
    ):
        self.table = table
        self.projectors = projectors
        self.channels = channels
        dims = set()
        for b in table.bins:
            if b.projector_id not in projectors:
                raise ConfigError(f"no projector fitted for bin {b.projector_id!r}")
            dims.add(projectors[b.projector_id].output_dim)
        if len(dims) != 1:
            raise ConfigError(f"bins project to differing dimensions: {sorted(dims)}")
        self.cell_dim = dims.pop()
        if table.target_dim and table.target_dim != self.cell_dim:
            raise ConfigError(
                f"projectors produce {self.cell_dim} dims per cell, "
                f"table expects {table.target_dim}"
            )

    @property
    def length(self) -> int:
        grid = self.table.grid
        return self.cell_dim * grid.cells + self.channels.block_length(grid)

    def pooled_cells(self, record: ImageRecord, box: Box, bin_index: int) -> np.ndarray:
        """Per-cell stacked channel vectors for a bin's layers, shape (m*n, D_bin)."""
        return pool_bin_cells(record, box, self.table, bin_index)

    def _aux_blocks(self, record: ImageRecord, box: Box) -> list[np.ndarray]:
        grid = self.table.grid
        blocks = []
        if self.channels.semantic:
            if record.label_map is None:
                raise MissingLayerError(f"image {record.image_id!r} lacks a label map")
            rect = map_to_feature_coords(box, 1, record.label_map.height, record.label_map.width)
            if self.channels.semantic_pooling == "hist":
                blocks.append(
                    roi_histogram_pool(
                        record.label_map, rect, grid,
                        num_classes=self.channels.label_classes,
                        norm=self.channels.histogram_norm,
                    )
                )
            else:
                # Max over raw class indices per cell; kept for comparison runs.
                blocks.append(
                    pool_max_2d(record.label_map.data.astype(np.float32), rect, grid)
                )
        if self.channels.edge:
            if record.edge_map is None:
                raise MissingLayerError(f"image {record.image_id!r} lacks an edge map")
            rect = map_to_feature_coords(box, 1, record.edge_map.height, record.edge_map.width)
            blocks.append(
                roi_edge_pool(
                    record.edge_map, rect, grid,
                    mode=self.channels.edge_pooling,
                    bins=self.channels.edge_bins,
                    norm=self.channels.histogram_norm,
                )
            )
        return blocks

    def extract(self, record: ImageRecord, box: Box) -> np.ndarray:
        bin_index = route(self.table, box.h)
        proj = self.projectors[self.table.bins[bin_index].projector_id]
        cells = self.pooled_cells(record, box, bin_index)
        if cells.shape[1] != proj.input_dim:
            raise ConfigError(
                f"bin {bin_index} pools {cells.shape[1]} channels per cell but its "
                f"projector expects {proj.input_dim}"
            )
        cnn = proj.project(cells).reshape(-1)  # cell-major
        blocks = [cnn.astype(np.float32)] + [b.astype(np.float32) for b in self._aux_blocks(record, box)]
        out = np.concatenate(blocks)
        assert out.shape[0] == self.length
        return out

    def extract_many(self, record: ImageRecord, boxes: list[Box]) -> np.ndarray:
        out = np.empty((len(boxes), self.length), dtype=np.float32)
        for i, b in enumerate(boxes):
            out[i] = self.extract(record, b)
        return out


def assemble_descriptor(
    record: ImageRecord,
    box: Box,
    table: RoutingTable,
    projectors: dict[str, PcaProjector],
    channels: ChannelConfig = ChannelConfig(),
) -> np.ndarray:
    """One-shot descriptor assembly (see DescriptorExtractor for the layout)."""
    return DescriptorExtractor(table, projectors, channels).extract(record, box)
