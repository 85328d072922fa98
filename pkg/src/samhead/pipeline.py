"""Training and inference orchestration.

Wires the pieces together: fit per-bin projectors, build descriptors for
proposal boxes, run the staged boosting schedule, then score and NMS test
proposals.  Also holds model (de)serialization and the layer-ablation sweep.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError
from .evaluation import EvalProtocol, evaluate_detections, log_average_miss_rate
from .forest import (
    Forest,
    TrainConfig,
    TrainingError,
    bootstrap_train,
    full_training_config,
    select_hard_negatives,
)
from .geometry import Box, Candidate, Detection, iou, nms
from .maps import ImageRecord
from .pca import PcaProjector, fit_pca
from .routing import (
    ChannelConfig,
    DescriptorExtractor,
    RoutingTable,
    ScaleBin,
    default_routing_table,
    pool_bin_cells,
    route,
)

MODEL_FORMAT = "samhead-model"
MODEL_VERSION = 1

_BG_ASPECT = 0.41  # width/height of sampled background boxes


@dataclass(frozen=True)
class Caps:
    """Per-image proposal budgets."""

    test_top_k: int = 100
    train_top_k: int = 1000

    def __post_init__(self) -> None:
        if self.test_top_k < 1 or self.train_top_k < 1:
            raise ConfigError(f"proposal caps must be >= 1, got {self}")


@dataclass(frozen=True)
class TrainSettings:
    """Everything train_detector needs besides the dataset itself."""

    routing: RoutingTable = field(default_factory=default_routing_table)
    channels: ChannelConfig = field(default_factory=ChannelConfig)
    forest: TrainConfig = field(default_factory=full_training_config)
    caps: Caps = field(default_factory=Caps)
    pca_sample_cap: int = 100000
    pca_min_samples: int = 0  # 0 = max(2 * target_dim, 512)
    prior_logit_clamp: float = 10.0
    background_prior_score: float = 0.1
    nms_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.pca_sample_cap < 2:
            raise ConfigError("pca_sample_cap must be >= 2")
        if not (0.0 < self.background_prior_score < 1.0):
            raise ConfigError(
                f"background_prior_score must be in (0, 1), got {self.background_prior_score}"
            )
        if self.prior_logit_clamp <= 0:
            raise ConfigError("prior_logit_clamp must be positive")
        if not (0.0 <= self.nms_threshold <= 1.0):
            raise ConfigError(f"nms_threshold must be in [0, 1], got {self.nms_threshold}")


def settings_hash(settings: TrainSettings) -> str:
    """Stable 16-hex digest of the full training configuration."""
    blob = json.dumps(asdict(settings), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def prior_logits(scores, clamp: float) -> np.ndarray:
    """Proposal scores in (0, 1) mapped to clamped log-odds."""
    s = np.clip(np.asarray(scores, dtype=np.float64), 1e-9, 1.0 - 1e-9)
    return np.clip(np.log(s / (1.0 - s)), -clamp, clamp)


def _top_candidates(proposals: list[Candidate], k: int) -> list[Candidate]:
    """Top-k proposals by score; ties keep input order."""
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    return [proposals[i] for i in order[:k]]


def _inside_image(box: Box, image_w: int, image_h: int) -> bool:
    return box.x < image_w and box.y < image_h and box.x2 > 0 and box.y2 > 0


class _DatasetSource:
    """Bootstrap feed built from a dataset's proposals.

    Positives are top proposals at IoU >= pos_iou against a non-ignored
    annotation.  The hard-negative pool keeps proposals under neg_iou against
    every annotation, ignored ones included, so don't-care regions seed no
    negatives.  Background negatives are rejection-sampled random boxes under
    the same overlap rule.
    """

    def __init__(self, dataset: Dataset, extractor: DescriptorExtractor, settings: TrainSettings):
        self._extractor = extractor
        self._settings = settings
        self._pos_iou = settings.forest.pos_iou
        self._neg_iou = settings.forest.neg_iou
        self._top: list[tuple] = [
            (s, _top_candidates(s.proposals, settings.caps.train_top_k)) for s in dataset
        ]
        self._pool: tuple | None = None

    def positives(self) -> tuple[np.ndarray, np.ndarray]:
        table = self._extractor.table
        per_bin: Counter = Counter()
        rows: list[np.ndarray] = []
        priors: list[float] = []
        for s, cands in self._top:
            real = [g.box for g in s.ground_truth if not g.ignore]
            if not real:
                continue
            boxes, scores = [], []
            for c in cands:
                if not _inside_image(c.box, s.record.image_w, s.record.image_h):
                    continue
                if max((iou(c.box, g) for g in real), default=0.0) >= self._pos_iou:
                    boxes.append(c.box)
                    scores.append(c.score)
            if not boxes:
                continue
            rows.append(self._extractor.extract_many(s.record, boxes))
            priors.extend(prior_logits(scores, self._settings.prior_logit_clamp))
            for b in boxes:
                per_bin[route(table, b.h)] += 1
        if not rows:
            raise TrainingError(
                f"no proposal reaches IoU {self._pos_iou} with a non-ignored annotation"
            )
        for i, b in enumerate(table.bins):
            if per_bin[i] == 0:
                raise TrainingError(
                    f"scale bin {b.projector_id!r} [{b.min_height}, {b.max_height}) "
                    "received no positive samples; restrict the routing table or widen "
                    "the training subset"
                )
        return np.vstack(rows), np.asarray(priors, dtype=np.float64)

    def negative_pool(self) -> tuple[np.ndarray, np.ndarray, list]:
        if self._pool is None:
            rows, priors, keys = [], [], []
            for s, cands in self._top:
                gts = [g.box for g in s.ground_truth]
                boxes, scores = [], []
                for j, c in enumerate(cands):
                    if not _inside_image(c.box, s.record.image_w, s.record.image_h):
                        continue
                    if max((iou(c.box, g) for g in gts), default=0.0) < self._neg_iou:
                        boxes.append(c.box)
                        scores.append(c.score)
                        keys.append((s.image_id, j))
                if boxes:
                    rows.append(self._extractor.extract_many(s.record, boxes))
                    priors.extend(prior_logits(scores, self._settings.prior_logit_clamp))
            X = (
                np.vstack(rows)
                if rows
                else np.empty((0, self._extractor.length), dtype=np.float32)
            )
            self._pool = (X, np.asarray(priors, dtype=np.float64), keys)
        return self._pool

    def background_negatives(self, count: int, seed) -> tuple[np.ndarray, np.ndarray, list]:
        rng = np.random.default_rng(seed)
        table = self._extractor.table
        lo = table.bins[0].min_height
        hi_cap = table.bins[-1].max_height
        samples = [s for s, _ in self._top]
        usable = [i for i, s in enumerate(samples) if s.record.image_h - 2.0 > lo]
        if not usable:
            raise TrainingError(
                f"no image is tall enough to hold a height->{lo} background box"
            )
        boxes_per_image: list[list[Box]] = [[] for _ in samples]
        gt_cache = [[g.box for g in s.ground_truth] for s in samples]
        made, attempts = 0, 0
        max_attempts = 200 * count + 1000
        while made < count and attempts < max_attempts:
            attempts += 1
            i = usable[int(rng.integers(len(usable)))]
            rec = samples[i].record
            hmax = min(hi_cap if hi_cap is not None else rec.image_h - 2.0, rec.image_h - 2.0)
            if hmax <= lo:
                continue
            h = float(rng.uniform(lo, hmax))
            w = _BG_ASPECT * h
            if w >= rec.image_w - 2.0:
                continue
            box = Box(
                float(rng.uniform(0.0, rec.image_w - w - 1.0)),
                float(rng.uniform(0.0, rec.image_h - h - 1.0)),
                w,
                h,
            )
            if max((iou(box, g) for g in gt_cache[i]), default=0.0) >= self._neg_iou:
                continue
            boxes_per_image[i].append(box)
            made += 1
        if made == 0:
            raise TrainingError("could not place a single background box clear of annotations")
        if made < count:
            warnings.warn(
                f"background sampling placed {made} of {count} requested boxes",
                stacklevel=2,
            )
        rows = [
            self._extractor.extract_many(samples[i].record, bs)
            for i, bs in enumerate(boxes_per_image)
            if bs
        ]
        X = np.vstack(rows)
        prior = float(prior_logits([self._settings.background_prior_score],
                                   self._settings.prior_logit_clamp)[0])
        priors = np.full(X.shape[0], prior, dtype=np.float64)
        keys = [("bg", i) for i in range(X.shape[0])]
        return X, priors, keys


def _collect_pca_samples(
    dataset: Dataset,
    table: RoutingTable,
    bin_index: int,
    bin_dim: int,
    target_dim: int,
    settings: TrainSettings,
    seed,
) -> tuple[np.ndarray, int]:
    """Per-cell channel vectors for fitting one bin's projector.

    Annotated pedestrians in the bin's height range supply up to half the
    cap; random background boxes (overlap with objects is harmless here)
    fill the rest, and always enough of them that the covariance can reach
    the requested rank.
    """
    rng = np.random.default_rng(seed)
    spec = table.bins[bin_index]
    pos_rows = []
    for s in dataset:
        for g in s.ground_truth:
            if g.ignore or route(table, g.box.h) != bin_index:
                continue
            if not _inside_image(g.box, s.record.image_w, s.record.image_h):
                continue
            pos_rows.append(pool_bin_cells(s.record, g.box, table, bin_index))
    pos = np.vstack(pos_rows) if pos_rows else np.empty((0, bin_dim), dtype=np.float32)
    half = settings.pca_sample_cap // 2
    if pos.shape[0] > half:
        sel = rng.choice(pos.shape[0], size=half, replace=False)
        sel.sort()
        pos = pos[sel]
    min_total = settings.pca_min_samples or max(2 * target_dim, 512)
    bg_needed = max(pos.shape[0], min_total - pos.shape[0])
    bg_needed = min(bg_needed, settings.pca_sample_cap - pos.shape[0])

    lo = spec.min_height
    usable = [s for s in dataset if s.record.image_h - 2.0 > lo]
    if not usable:
        raise TrainingError(
            f"no image can hold a background box for scale bin {spec.projector_id!r}"
        )
    cells = table.grid.cells
    bg_rows = []
    got = 0
    while got < bg_needed:
        s = usable[int(rng.integers(len(usable)))]
        rec = s.record
        hmax = min(spec.max_height if spec.max_height is not None else rec.image_h - 2.0,
                   rec.image_h - 2.0)
        if hmax <= lo:
            continue
        h = float(rng.uniform(lo, hmax))
        w = _BG_ASPECT * h
        if w >= rec.image_w - 2.0:
            continue
        box = Box(
            float(rng.uniform(0.0, rec.image_w - w - 1.0)),
            float(rng.uniform(0.0, rec.image_h - h - 1.0)),
            w,
            h,
        )
        bg_rows.append(pool_bin_cells(rec, box, table, bin_index))
        got += cells
    bg = np.vstack(bg_rows) if bg_rows else np.empty((0, bin_dim), dtype=np.float32)
    return np.vstack([pos, bg]).astype(np.float64), pos.shape[0]


@dataclass
class DetectorModel:
    """A trained detector: routing, projectors, channel config, and the forest."""

    table: RoutingTable
    projectors: dict[str, PcaProjector]
    channels: ChannelConfig
    forest: Forest
    caps: Caps = field(default_factory=Caps)
    prior_logit_clamp: float = 10.0
    nms_threshold: float = 0.5

    def __post_init__(self) -> None:
        self._extractor = DescriptorExtractor(self.table, self.projectors, self.channels)
        if self.forest.n_features != self._extractor.length:
            raise ConfigError(
                f"forest scores {self.forest.n_features} features but descriptors "
                f"have {self._extractor.length}"
            )

    @property
    def extractor(self) -> DescriptorExtractor:
        return self._extractor

    @property
    def descriptor_length(self) -> int:
        return self._extractor.length


def train_detector(dataset: Dataset, settings: TrainSettings) -> tuple[DetectorModel, dict]:
    """Fit projectors, run the staged boosting schedule, return model + manifest.

    The manifest is JSON-ready and fully determined by (dataset, settings):
    config hash, seed, per-bin projector report, and per-stage training logs.
    """
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    layer_dims = dataset.layer_channels()
    table = settings.routing
    bin_dims = []
    for b in table.bins:
        missing = [n for n in b.layers if n not in layer_dims]
        if missing:
            raise ConfigError(
                f"routing bin {b.projector_id!r} wants layers {missing}, dataset has "
                f"{sorted(layer_dims)}"
            )
        bin_dims.append(sum(layer_dims[n] for n in b.layers))
    target = table.target_dim if table.target_dim else min(bin_dims)
    low = [b.projector_id for b, d in zip(table.bins, bin_dims) if d < target]
    if low:
        raise ConfigError(
            f"bins {low} pool fewer than the {target} target channels per cell"
        )
    table = replace(table, target_dim=target)

    pca_seeds = np.random.SeedSequence(settings.forest.seed).spawn(len(table.bins))
    projectors: dict[str, PcaProjector] = {}
    pca_report: dict[str, dict] = {}
    for i, (b, dim) in enumerate(zip(table.bins, bin_dims)):
        if dim == target:
            projectors[b.projector_id] = PcaProjector.identity(target)
            pca_report[b.projector_id] = {
                "identity": True,
                "input_dim": dim,
                "output_dim": target,
                "energy": 1.0,
                "samples": 0,
                "positive_samples": 0,
            }
            continue
        samples, n_pos = _collect_pca_samples(
            dataset, table, i, dim, target, settings, pca_seeds[i]
        )
        proj = fit_pca(samples, components=target)
        if proj.output_dim != target:
            raise TrainingError(
                f"projector for bin {b.projector_id!r} reached rank {proj.output_dim} "
                f"< target {target}; supply more training data"
            )
        projectors[b.projector_id] = proj
        pca_report[b.projector_id] = {
            "identity": False,
            "input_dim": dim,
            "output_dim": proj.output_dim,
            "energy": proj.energy,
            "samples": int(samples.shape[0]),
            "positive_samples": int(n_pos),
        }

    extractor = DescriptorExtractor(table, projectors, settings.channels)
    source = _DatasetSource(dataset, extractor, settings)
    forest = bootstrap_train(source, settings.forest)
    model = DetectorModel(
        table=table,
        projectors=projectors,
        channels=settings.channels,
        forest=forest,
        caps=settings.caps,
        prior_logit_clamp=settings.prior_logit_clamp,
        nms_threshold=settings.nms_threshold,
    )
    manifest = {
        "config_hash": settings_hash(settings),
        "seed": settings.forest.seed,
        "descriptor_length": extractor.length,
        "target_dim": target,
        "dataset": {
            "images": len(dataset),
            "generator_seed": dataset.meta.get("seed"),
        },
        "caps": asdict(settings.caps),
        "pca": pca_report,
        "stages": [h.to_dict() for h in forest.stage_history],
    }
    return model, manifest


def mine_hard_negatives(
    model: DetectorModel,
    dataset: Dataset,
    count: int,
    exclude: set = frozenset(),
    settings: TrainSettings | None = None,
) -> tuple[np.ndarray, np.ndarray, list]:
    """Top-count scoring negatives from the dataset's proposal pool.

    Returns (descriptors, priors, keys); keys identify (image, proposal) so
    repeat mining rounds can exclude what previous rounds already took.
    """
    if settings is None:
        settings = TrainSettings(
            routing=model.table,
            channels=model.channels,
            caps=model.caps,
            prior_logit_clamp=model.prior_logit_clamp,
            nms_threshold=model.nms_threshold,
        )
    source = _DatasetSource(dataset, model.extractor, settings)
    X, priors, keys = source.negative_pool()
    if X.shape[0] == 0:
        return X, priors, []
    scores = model.forest.score(X, priors)
    sel = select_hard_negatives(scores, keys, count, set(exclude))
    return X[sel], priors[sel], [keys[i] for i in sel]


# --- inference ----------------------------------------------------------------


def detect_image(
    model: DetectorModel, record: ImageRecord, proposals: list[Candidate]
) -> list[Detection]:
    """Score the top proposals and return NMS survivors, best first."""
    cands = _top_candidates(proposals, model.caps.test_top_k)
    boxes, scores = [], []
    for c in cands:
        if _inside_image(c.box, record.image_w, record.image_h):
            boxes.append(c.box)
            scores.append(c.score)
    if not boxes:
        return []
    X = model.extractor.extract_many(record, boxes)
    margins = model.forest.score(X, prior_logits(scores, model.prior_logit_clamp))
    dets = [Detection(box=b, score=float(m)) for b, m in zip(boxes, margins)]
    return nms(dets, model.nms_threshold)


def detect_dataset(
    model: DetectorModel, dataset: Dataset, threads: int = 1
) -> dict[str, list[Detection]]:
    """Detections per image id; thread count never changes the result."""
    import os

    samples = list(dataset)
    if threads < 1:
        threads = os.cpu_count() or 1
    if threads == 1:
        results = [detect_image(model, s.record, s.proposals) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(
                ex.map(lambda s: detect_image(model, s.record, s.proposals), samples)
            )
    return {s.image_id: r for s, r in zip(samples, results)}


# --- model serialization --------------------------------------------------------


def routing_table_from_dict(r: dict) -> RoutingTable:
    """Build a routing table from its JSON form; grid and target_dim optional."""
    from .pooling import PoolGrid

    try:
        grid = r.get("grid")
        bins = tuple(
            ScaleBin(
                min_height=float(b["min_height"]),
                max_height=None if b.get("max_height") is None else float(b["max_height"]),
                layers=tuple(b["layers"]),
                projector_id=b["projector_id"],
            )
            for b in r["bins"]
        )
        return RoutingTable(
            bins=bins,
            grid=PoolGrid(m=int(grid["m"]), n=int(grid["n"])) if grid else PoolGrid(),
            target_dim=int(r.get("target_dim", 0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed routing table: {e}") from e


def model_to_dict(model: DetectorModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "routing": {
            "grid": {"m": model.table.grid.m, "n": model.table.grid.n},
            "target_dim": model.table.target_dim,
            "bins": [
                {
                    "min_height": b.min_height,
                    "max_height": b.max_height,
                    "layers": list(b.layers),
                    "projector_id": b.projector_id,
                }
                for b in model.table.bins
            ],
        },
        "channels": asdict(model.channels),
        "caps": asdict(model.caps),
        "prior_logit_clamp": model.prior_logit_clamp,
        "nms_threshold": model.nms_threshold,
        "projectors": {
            pid: {
                "mean": p.mean.tolist(),
                "basis": p.basis.tolist(),
                "eigenvalues": p.eigenvalues.tolist(),
                "energy": p.energy,
                "requested_dim": p.requested_dim,
            }
            for pid, p in sorted(model.projectors.items())
        },
        "forest": model.forest.to_dict(),
    }


def model_from_dict(d: dict) -> DetectorModel:
    if d.get("format") != MODEL_FORMAT:
        raise DataError(f"not a detector model file (format {d.get('format')!r})")
    if d.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model version {d.get('version')!r}")
    try:
        table = routing_table_from_dict(d["routing"])
        projectors = {
            pid: PcaProjector(
                mean=np.asarray(p["mean"], dtype=np.float64),
                basis=np.asarray(p["basis"], dtype=np.float64),
                eigenvalues=np.asarray(p["eigenvalues"], dtype=np.float64),
                energy=float(p["energy"]),
                requested_dim=p.get("requested_dim"),
            )
            for pid, p in d["projectors"].items()
        }
        model = DetectorModel(
            table=table,
            projectors=projectors,
            channels=ChannelConfig(**d["channels"]),
            forest=Forest.from_dict(d["forest"]),
            caps=Caps(**d["caps"]),
            prior_logit_clamp=float(d["prior_logit_clamp"]),
            nms_threshold=float(d["nms_threshold"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed model file: {e}") from e
    return model


def save_model(path, model: DetectorModel) -> None:
    text = json.dumps(model_to_dict(model), sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_model(path) -> DetectorModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"model file is not valid JSON: {e}") from e
    return model_from_dict(d)


def save_manifest(path, manifest: dict) -> None:
    Path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


# --- layer ablation sweep --------------------------------------------------------

SUBSET_BOUNDS: dict[str, tuple[float, float | None]] = {
    "small": (50.0, 80.0),
    "large": (80.0, None),
    "all": (50.0, None),
}


def ablation_sweep(
    train_set: Dataset,
    test_set: Dataset,
    combinations: list[tuple[str, ...]],
    subsets: tuple[str, ...] = ("small", "large", "all"),
    settings: TrainSettings | None = None,
    protocol: EvalProtocol = EvalProtocol(),
    threads: int = 1,
) -> list[dict]:
    """Train one fixed-layer detector per (combination, subset) and report MR.

    Each run routes every candidate to the same layer combination, trains on
    a height-restricted view of the training set, and scores the full test
    set under a protocol restricted to the same height range.  Miss rate is
    log-averaged over FPPI 1e-4..1.
    """
    if settings is None:
        settings = TrainSettings()
    for name in subsets:
        if name not in SUBSET_BOUNDS:
            raise ConfigError(
                f"unknown subset {name!r}; expected one of {sorted(SUBSET_BOUNDS)}"
            )
    rows = []
    for combo in combinations:
        combo = tuple(combo)
        for name in subsets:
            lo, hi = SUBSET_BOUNDS[name]
            run_settings = replace(
                settings,
                routing=RoutingTable(
                    bins=(ScaleBin(lo, None, combo, "only"),),
                    grid=settings.routing.grid,
                    target_dim=0,
                ),
            )
            model, _ = train_detector(train_set.subset_by_height(lo, hi), run_settings)
            dets = detect_dataset(model, test_set, threads=threads)
            proto = replace(
                protocol, height_min=lo, height_max=hi, fppi_exponents=(-4.0, 0.0)
            )
            matches = evaluate_detections(dets, test_set.ground_truth_by_image(), proto)
            mr, _ = log_average_miss_rate(matches, proto)
            rows.append({"combination": "+".join(combo), "subset": name, "mr4": mr})
    return rows


def write_sweep_csv(path, rows: list[dict]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["combination", "subset", "mr4"])
        for r in rows:
            w.writerow([r["combination"], r["subset"], repr(float(r["mr4"]))])


def read_sweep_csv(path) -> list[dict]:
    import csv

    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["combination", "subset", "mr4"]:
            raise DataError(f"unexpected sweep header {header}")
        return [
            {"combination": c, "subset": s, "mr4": float(v)} for c, s, v in reader
        ]
