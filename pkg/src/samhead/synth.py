"""Deterministic synthetic dataset generator for desk-scale verification.

Planted objects (pedestrians and distractors) deposit channel patterns into
every layer.  Per layer, a fixed random subset of channels is
class-discriminative: pedestrians push those channels one way, distractors
the opposite way, while a second shared subset gets the same bump from both
classes so low-order statistics match.  The deposit amplitude is scaled by a
log-Gaussian band in the object's pixel height centered on the layer's
``band_center``: each layer resolves objects near its own preferred size and
washes out away from it.  The band center is a property of the layer's depth
(receptive field), not of its stride; dilated layers keep a fine stride while
still preferring larger objects.  Layers with the same channel count share
one channel assignment, so descriptors concatenated from different layer
pairs line up dimension-for-dimension.  Proposal scores correlate with
ground-truth overlap but stay deliberately noisy, so the classifier has to
earn the ranking.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset, ImageSample
from .errors import ConfigError
from .geometry import Box, Candidate, GroundTruthBox, iou
from .maps import EdgeMap, FeatureMap, ImageRecord, LabelMap, NUM_LABEL_CLASSES
from .pooling import map_to_feature_coords

PED_WIDTH_RATIO = 0.41


@dataclass(frozen=True)
class LayerSpec:
    """Geometry and signal band of one synthesized layer.

    ``band_center`` is the object height (px) the layer resolves best; it
    tracks the layer's depth, so a dilated deep layer can pair a fine stride
    with a large-object band.
    """

    stride: int
    channels: int
    band_center: float
    quality: float = 1.0

    def __post_init__(self) -> None:
        if self.stride < 1 or self.channels < 1:
            raise ConfigError(f"bad layer spec: stride={self.stride}, channels={self.channels}")
        if self.band_center <= 0.0:
            raise ConfigError(f"band_center must be positive, got {self.band_center}")
        if not 0.0 < self.quality <= 1.0:
            raise ConfigError(f"layer quality must be in (0, 1], got {self.quality}")


def default_synth_layers() -> dict[str, LayerSpec]:
    return {
        "conv3": LayerSpec(stride=4, channels=64, band_center=56.0),
        "conv4a": LayerSpec(stride=4, channels=64, band_center=84.0),
        "conv5a": LayerSpec(stride=8, channels=64, band_center=124.0),
    }


@dataclass(frozen=True)
class SynthConfig:
    num_images: int = 24
    image_w: int = 256
    image_h: int = 176
    layers: dict[str, LayerSpec] = field(default_factory=default_synth_layers)

    # object population
    peds_per_image: tuple[int, int] = (1, 3)
    small_heights: tuple[float, float] = (52.0, 78.0)
    large_heights: tuple[float, float] = (96.0, 140.0)
    small_fraction: float = 0.55
    distractors_per_image: tuple[int, int] = (1, 3)
    occluded_fraction: float = 0.08

    # proposals
    proposals_per_gt: int = 6
    rough_proposals_per_gt: int = 1
    distractor_proposals: int = 2
    background_proposals: int = 60
    proposal_jitter: float = 0.06
    rough_jitter: float = 0.25
    prior_base: float = 0.25
    prior_iou_weight: float = 0.35
    prior_noise: float = 0.15
    distractor_prior_bonus: float = 0.08

    # feature signal
    class_channels: int = 8
    shared_channels: int = 8
    contour_channels: int = 4
    class_amp: float = 2.4
    shared_amp: float = 0.8
    contour_amp: float = 3.0
    bg_sigma: float = 1.0
    fg_sigma: float = 0.5
    band_log_width: float = 0.3

    # label / edge maps
    ped_class: int = 11
    distractor_classes: tuple[int, ...] = (4, 13)
    distractor_mislabel_rate: float = 0.3
    clutter_rects: int = 6
    edge_noise_segments: int = 12

    # which channels carry class/shared signal (shared across seeds)
    pattern_seed: int = 0
    # max IoU tolerated between any two planted objects
    placement_max_iou: float = 0.1

    def validate(self) -> None:
        if self.num_images < 1:
            raise ConfigError(f"num_images must be >= 1, got {self.num_images}")
        if self.image_w < 32 or self.image_h < 32:
            raise ConfigError(f"image too small: {self.image_w}x{self.image_h}")
        if not self.layers:
            raise ConfigError("need at least one layer spec")
        for rng_name, (lo, hi) in (("small_heights", self.small_heights),
                                   ("large_heights", self.large_heights)):
            if not (0 < lo <= hi):
                raise ConfigError(f"{rng_name} range must be ordered and positive, got ({lo}, {hi})")
        if self.small_heights[1] > self.large_heights[0]:
            raise ConfigError("small and large height ranges must not overlap")
        max_h = self.large_heights[1]
        if max_h + 2 > self.image_h or PED_WIDTH_RATIO * max_h + 2 > self.image_w:
            raise ConfigError(
                f"tallest object ({max_h}px) does not fit a {self.image_w}x{self.image_h} image"
            )
        for name, spec in self.layers.items():
            need = self.class_channels + self.shared_channels + self.contour_channels
            if need > spec.channels:
                raise ConfigError(
                    f"layer {name!r} has {spec.channels} channels, fewer than "
                    f"{self.class_channels} class + {self.shared_channels} shared "
                    f"+ {self.contour_channels} contour"
                )
        for lo, hi in (self.peds_per_image, self.distractors_per_image):
            if lo < 0 or hi < lo:
                raise ConfigError("per-image object count ranges must be ordered and nonnegative")
        if self.peds_per_image[1] == 0 and self.num_images > 0:
            raise ConfigError("config would generate no pedestrians at all")
        if not 0.0 <= self.small_fraction <= 1.0:
            raise ConfigError(f"small_fraction must be in [0, 1], got {self.small_fraction}")
        if not 1 <= self.ped_class < NUM_LABEL_CLASSES:
            raise ConfigError(f"ped_class must be in [1, {NUM_LABEL_CLASSES - 1}]")
        if self.proposals_per_gt < 1:
            raise ConfigError("proposals_per_gt must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = {k: asdict(v) for k, v in self.layers.items()}
        return d


@dataclass(frozen=True)
class _Object:
    box: Box
    sign: float  # +1 pedestrian, -1 distractor


@dataclass
class _Pattern:
    class_idx: np.ndarray
    class_sign: np.ndarray
    class_part: np.ndarray  # (class_channels, 2) vertical sub-band fractions
    shared_idx: np.ndarray
    contour_idx: np.ndarray


# Class channels are part-selective: each responds to one vertical slab of
# the object (head / torso / legs, loosely), so a badly aligned box pools the
# slab pattern into the wrong grid rows and loses its margin.
_PART_BANDS = ((0.0, 0.4), (0.3, 0.7), (0.6, 1.0))


def _draw_patterns(cfg: SynthConfig, rng: np.random.Generator) -> dict[str, _Pattern]:
    # Layers of equal width share one assignment: channel c then means the
    # same thing in every such layer, and descriptors stacked from different
    # layer pairs stay comparable dimension-for-dimension.
    by_width: dict[int, _Pattern] = {}
    patterns = {}
    for name in sorted(cfg.layers):
        width = cfg.layers[name].channels
        if width not in by_width:
            perm = rng.permutation(width)
            part = np.empty((cfg.class_channels, 2))
            for slot, ch in enumerate(rng.permutation(cfg.class_channels)):
                part[ch] = _PART_BANDS[slot % len(_PART_BANDS)]
            n_cs = cfg.class_channels + cfg.shared_channels
            by_width[width] = _Pattern(
                class_idx=perm[: cfg.class_channels].copy(),
                class_sign=rng.choice((-1.0, 1.0), size=cfg.class_channels),
                class_part=part,
                shared_idx=perm[cfg.class_channels : n_cs].copy(),
                contour_idx=perm[n_cs : n_cs + cfg.contour_channels].copy(),
            )
        patterns[name] = by_width[width]
    return patterns


def band_gain(height: float, band_center: float, log_width: float,
              quality: float = 1.0) -> float:
    """Class-signal survival factor for an object of `height` px on one layer."""
    return quality * math.exp(-((math.log(height / band_center) / log_width) ** 2))


def _sample_height(cfg: SynthConfig, rng: np.random.Generator) -> float:
    if rng.random() < cfg.small_fraction:
        lo, hi = cfg.small_heights
    else:
        lo, hi = cfg.large_heights
    return float(rng.uniform(lo, hi))


def _place_box(cfg: SynthConfig, h: float, rng: np.random.Generator) -> Box:
    w = PED_WIDTH_RATIO * h
    x = float(rng.uniform(1.0, cfg.image_w - w - 1.0))
    y = float(rng.uniform(1.0, cfg.image_h - h - 1.0))
    return Box(x, y, w, h)


def _taper(coords: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Flat-top window over [lo, hi]: 1 in the middle, cosine to 0 at edges.

    Gives deposits a boundary falloff so a badly aligned box pools a visibly
    degraded pattern instead of riding the full-strength interior.
    """
    t = (coords - lo) / max(hi - lo, 1e-9)
    edge = np.minimum(t, 1.0 - t)  # distance to nearer box edge, in box units
    w = 0.5 * (1.0 - np.cos(np.pi * np.clip(edge / 0.35, 0.0, 1.0)))
    w[(t < 0.0) | (t > 1.0)] = 0.0
    return w


def _deposit(data: np.ndarray, spec: LayerSpec, pat: _Pattern, obj: _Object,
             cfg: SynthConfig, rng: np.random.Generator) -> None:
    H, W = data.shape[1], data.shape[2]
    rect = map_to_feature_coords(obj.box, spec.stride, H, W)
    g = band_gain(obj.box.h, spec.band_center, cfg.band_log_width, spec.quality)
    amp = float(np.clip(1.0 + 0.1 * rng.standard_normal(), 0.7, 1.3))
    rows = slice(rect.row_start, rect.row_end)
    cols = slice(rect.col_start, rect.col_end)
    shape = (rect.rows, rect.cols)
    prof_x = _taper(np.arange(rect.col_start, rect.col_end) + 0.5,
                    obj.box.x / spec.stride, obj.box.x2 / spec.stride)
    prof_y = _taper(np.arange(rect.row_start, rect.row_end) + 0.5,
                    obj.box.y / spec.stride, obj.box.y2 / spec.stride)
    for idx in pat.shared_idx:
        data[idx, rows, cols] += (cfg.shared_amp * g * amp * np.outer(prof_y, prof_x)
                                  + rng.normal(0.0, cfg.fg_sigma, shape))
    for sign, idx, (plo, phi) in zip(pat.class_sign, pat.class_idx, pat.class_part):
        slab_y0 = obj.box.y + plo * obj.box.h
        slab_y1 = obj.box.y + phi * obj.box.h
        slab = Box(obj.box.x, slab_y0, obj.box.w, slab_y1 - slab_y0)
        sr = map_to_feature_coords(slab, spec.stride, H, W)
        slab_prof = np.outer(
            _taper(np.arange(sr.row_start, sr.row_end) + 0.5,
                   slab_y0 / spec.stride, slab_y1 / spec.stride),
            prof_x[sr.col_start - rect.col_start : sr.col_end - rect.col_start],
        )
        data[idx, sr.row_start : sr.row_end, sr.col_start : sr.col_end] += (
            obj.sign * sign * cfg.class_amp * g * amp * slab_prof
            + rng.normal(0.0, cfg.fg_sigma, (sr.rows, sr.cols))
        )
    # Silhouette strips, orientation-split: contour channel k fires along one
    # side of the object (top, bottom, left, right in turn), for pedestrians
    # and distractors alike.  A crop pinned to one corner keeps only that
    # corner's sides; a centered interior crop keeps none, and max pooling
    # cannot counterfeit the absent sides.
    t = max(1.25 * spec.stride, 0.06 * obj.box.h)
    strips = (
        Box(obj.box.x, obj.box.y, obj.box.w, t),
        Box(obj.box.x, obj.box.y2 - t, obj.box.w, t),
        Box(obj.box.x, obj.box.y, t, obj.box.h),
        Box(obj.box.x2 - t, obj.box.y, t, obj.box.h),
    )
    for k, idx in enumerate(pat.contour_idx):
        rr = map_to_feature_coords(strips[k % 4], spec.stride, H, W)
        data[idx, rr.row_start : rr.row_end, rr.col_start : rr.col_end] += (
            cfg.contour_amp * g * amp
            + rng.normal(0.0, cfg.fg_sigma, (rr.rows, rr.cols))
        )


def _paint_rect(arr: np.ndarray, box: Box, value: int) -> None:
    x0 = max(int(box.x), 0)
    y0 = max(int(box.y), 0)
    x1 = min(int(math.ceil(box.x2)), arr.shape[1])
    y1 = min(int(math.ceil(box.y2)), arr.shape[0])
    if x1 > x0 and y1 > y0:
        arr[y0:y1, x0:x1] = value


def _outline(arr: np.ndarray, box: Box, value: float) -> None:
    x0 = max(int(box.x), 0)
    y0 = max(int(box.y), 0)
    x1 = min(int(math.ceil(box.x2)), arr.shape[1]) - 1
    y1 = min(int(math.ceil(box.y2)), arr.shape[0]) - 1
    if x1 <= x0 or y1 <= y0:
        return
    arr[y0, x0 : x1 + 1] = np.maximum(arr[y0, x0 : x1 + 1], value)
    arr[y1, x0 : x1 + 1] = np.maximum(arr[y1, x0 : x1 + 1], value)
    arr[y0 : y1 + 1, x0] = np.maximum(arr[y0 : y1 + 1, x0], value)
    arr[y0 : y1 + 1, x1] = np.maximum(arr[y0 : y1 + 1, x1], value)


def _jittered(box: Box, rel: float, cfg: SynthConfig, rng: np.random.Generator) -> Box:
    if rel <= 0.0:
        return box
    w = box.w * math.exp(rng.normal(0.0, rel))
    h = box.h * math.exp(rng.normal(0.0, rel))
    x = box.x + rng.normal(0.0, rel * box.w)
    y = box.y + rng.normal(0.0, rel * box.h)
    w = min(max(w, 4.0), cfg.image_w - 1.0)
    h = min(max(h, 4.0), cfg.image_h - 1.0)
    x = min(max(x, 0.0), cfg.image_w - w)
    y = min(max(y, 0.0), cfg.image_h - h)
    return Box(float(x), float(y), float(w), float(h))


def _random_box(cfg: SynthConfig, rng: np.random.Generator) -> Box:
    h = float(rng.uniform(cfg.small_heights[0], cfg.large_heights[1]))
    h = min(h, cfg.image_h - 2.0)
    w = min(PED_WIDTH_RATIO * h, cfg.image_w - 2.0)
    x = float(rng.uniform(0.0, cfg.image_w - w - 1.0))
    y = float(rng.uniform(0.0, cfg.image_h - h - 1.0))
    return Box(x, y, w, h)


def generate_dataset(cfg: SynthConfig, seed: int) -> Dataset:
    """Generate a dataset; identical (cfg, seed) pairs yield identical bytes.

    Which channels carry signal is fixed by ``cfg.pattern_seed``, not by
    ``seed``, so train/test splits generated with different seeds still share
    the same feature semantics.
    """
    cfg.validate()
    patterns = _draw_patterns(
        cfg, np.random.default_rng(np.random.SeedSequence(cfg.pattern_seed))
    )
    children = np.random.SeedSequence(seed).spawn(cfg.num_images)

    samples = []
    for i in range(cfg.num_images):
        rng = np.random.default_rng(children[i])
        image_id = f"img{i:04d}"

        n_ped = int(rng.integers(cfg.peds_per_image[0], cfg.peds_per_image[1] + 1))
        n_dis = int(rng.integers(cfg.distractors_per_image[0], cfg.distractors_per_image[1] + 1))
        # Rejection placement: overlapping opposite-sign deposits would cancel
        # each other, so a crowded draw is retried and eventually dropped.
        objects: list[_Object] = []
        for sign, count in ((1.0, n_ped), (-1.0, n_dis)):
            for _ in range(count):
                for _attempt in range(40):
                    box = _place_box(cfg, _sample_height(cfg, rng), rng)
                    if all(iou(box, o.box) <= cfg.placement_max_iou for o in objects):
                        objects.append(_Object(box, sign))
                        break
        peds = [o for o in objects if o.sign > 0]
        distractors = [o for o in objects if o.sign < 0]

        feature_maps = {}
        for name in sorted(cfg.layers):
            spec = cfg.layers[name]
            H = -(-cfg.image_h // spec.stride)
            W = -(-cfg.image_w // spec.stride)
            data = rng.normal(0.0, cfg.bg_sigma, (spec.channels, H, W)).astype(np.float32)
            for obj in objects:
                _deposit(data, spec, patterns[name], obj, cfg, rng)
            feature_maps[name] = FeatureMap(name, spec.stride, data)

        label = np.zeros((cfg.image_h, cfg.image_w), dtype=np.uint8)
        other = [c for c in range(1, NUM_LABEL_CLASSES) if c != cfg.ped_class]
        for _ in range(cfg.clutter_rects):
            cw = int(rng.integers(cfg.image_w // 8, cfg.image_w // 3 + 1))
            chh = int(rng.integers(cfg.image_h // 8, cfg.image_h // 3 + 1))
            cx = int(rng.integers(0, cfg.image_w - cw + 1))
            cy = int(rng.integers(0, cfg.image_h - chh + 1))
            label[cy : cy + chh, cx : cx + cw] = int(rng.choice(other))
        for obj in distractors:
            if rng.random() < cfg.distractor_mislabel_rate:
                cls = cfg.ped_class
            else:
                cls = int(rng.choice(cfg.distractor_classes))
            _paint_rect(label, obj.box, cls)
        for obj in peds:
            _paint_rect(label, obj.box, cfg.ped_class)

        edge = rng.uniform(0.0, 0.12, (cfg.image_h, cfg.image_w)).astype(np.float32)
        for _ in range(cfg.edge_noise_segments):
            length = int(rng.integers(8, 41))
            strength = float(rng.uniform(0.3, 1.0))
            if rng.random() < 0.5:
                yy = int(rng.integers(0, cfg.image_h))
                xx = int(rng.integers(0, max(cfg.image_w - length, 1)))
                edge[yy, xx : xx + length] = np.maximum(edge[yy, xx : xx + length], strength)
            else:
                yy = int(rng.integers(0, max(cfg.image_h - length, 1)))
                xx = int(rng.integers(0, cfg.image_w))
                edge[yy : yy + length, xx] = np.maximum(edge[yy : yy + length, xx], strength)
        for obj in objects:
            _outline(edge, obj.box, float(rng.uniform(0.6, 1.0)))

        ground_truth = []
        for obj in peds:
            if rng.random() < cfg.occluded_fraction:
                occl = float(rng.uniform(0.45, 0.7))
            else:
                occl = float(rng.uniform(0.0, 0.1))
            ground_truth.append(
                GroundTruthBox(obj.box, occlusion=occl,
                               truncation=float(rng.uniform(0.0, 0.08)))
            )

        boxes: list[Box] = []
        bonuses: list[float] = []
        for obj in peds:
            for _ in range(cfg.proposals_per_gt):
                boxes.append(_jittered(obj.box, cfg.proposal_jitter, cfg, rng))
                bonuses.append(0.0)
            # Loose duplicates imitate the sloppy end of a region-proposal
            # stage; they give training its only box-accuracy contrast.
            for _ in range(cfg.rough_proposals_per_gt):
                boxes.append(_jittered(obj.box, cfg.rough_jitter, cfg, rng))
                bonuses.append(0.0)
        for obj in distractors:
            for _ in range(cfg.distractor_proposals):
                boxes.append(_jittered(obj.box, cfg.proposal_jitter, cfg, rng))
                bonuses.append(cfg.distractor_prior_bonus)
        for _ in range(cfg.background_proposals):
            boxes.append(_random_box(cfg, rng))
            bonuses.append(0.0)
        proposals = []
        for box, bonus in zip(boxes, bonuses):
            best = max((iou(box, g.box) for g in ground_truth), default=0.0)
            score = (cfg.prior_base + cfg.prior_iou_weight * best + bonus
                     + float(rng.normal(0.0, cfg.prior_noise)))
            proposals.append(Candidate(box, float(np.clip(score, 0.01, 0.99))))

        record = ImageRecord(
            image_id=image_id,
            image_w=cfg.image_w,
            image_h=cfg.image_h,
            feature_maps=feature_maps,
            label_map=LabelMap(label),
            edge_map=EdgeMap(edge),
        )
        samples.append(ImageSample(record=record, ground_truth=ground_truth,
                                   proposals=proposals))

    meta = {
        "generator": "samhead.synth",
        "seed": seed,
        "config": cfg.to_dict(),
        "layers": {name: {"stride": spec.stride, "channels": spec.channels}
                   for name, spec in sorted(cfg.layers.items())},
    }
    return Dataset(samples=samples, meta=meta)
