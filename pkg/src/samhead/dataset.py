"""Dataset container: per-image records plus ground truth and proposals, with disk IO.

Directory layout::

    <root>/meta.json            image ids, sizes, layer geometry, generator echo
    <root>/annotations.jsonl    one row per image (possibly empty box list)
    <root>/proposals.jsonl      one row per image
    <root>/maps/<id>.fmap       CNN feature maps
    <root>/maps/<id>.lmap       label map (optional)
    <root>/maps/<id>.emap       edge map (optional)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DataError
from .formats import (
    read_edge_map,
    read_feature_maps,
    read_ground_truth_jsonl,
    read_label_map,
    read_proposals_jsonl,
    write_edge_map,
    write_feature_maps,
    write_ground_truth_jsonl,
    write_label_map,
    write_proposals_jsonl,
)
from .geometry import Candidate, GroundTruthBox
from .maps import ImageRecord


@dataclass
class ImageSample:
    """One image's record, annotations, and proposals."""

    record: ImageRecord
    ground_truth: list[GroundTruthBox] = field(default_factory=list)
    proposals: list[Candidate] = field(default_factory=list)

    @property
    def image_id(self) -> str:
        return self.record.image_id


@dataclass
class Dataset:
    samples: list[ImageSample]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def image_ids(self) -> list[str]:
        return [s.image_id for s in self.samples]

    def ground_truth_by_image(self) -> dict[str, list[GroundTruthBox]]:
        return {s.image_id: s.ground_truth for s in self.samples}

    def proposals_by_image(self) -> dict[str, list[Candidate]]:
        return {s.image_id: s.proposals for s in self.samples}

    def layer_channels(self) -> dict[str, int]:
        """Channel count per layer name, validated to be uniform across images."""
        out: dict[str, int] = {}
        for s in self.samples:
            for name, fm in s.record.feature_maps.items():
                if out.setdefault(name, fm.channels) != fm.channels:
                    raise DataError(f"layer {name!r} has inconsistent channel counts")
        return out

    def subset_by_height(self, min_height: float, max_height: float | None) -> "Dataset":
        """A view for scale-restricted training: out-of-range ground truth
        becomes ignore (it seeds no positives and shields overlapping boxes
        from the negative pool)."""
        samples = []
        for s in self.samples:
            gts = []
            for g in s.ground_truth:
                inside = g.box.h >= min_height and (max_height is None or g.box.h < max_height)
                gts.append(g if inside else replace(g, ignore=True))
            samples.append(ImageSample(record=s.record, ground_truth=gts, proposals=s.proposals))
        return Dataset(samples=samples, meta=dict(self.meta))

    def save(self, root: str | Path) -> None:
        root = Path(root)
        (root / "maps").mkdir(parents=True, exist_ok=True)
        ids = []
        for s in self.samples:
            ids.append(s.image_id)
            rec = s.record
            write_feature_maps(root / "maps" / f"{s.image_id}.fmap",
                               list(rec.feature_maps.values()))
            if rec.label_map is not None:
                write_label_map(root / "maps" / f"{s.image_id}.lmap", rec.label_map)
            if rec.edge_map is not None:
                write_edge_map(root / "maps" / f"{s.image_id}.emap", rec.edge_map)
        write_ground_truth_jsonl(root / "annotations.jsonl", self.ground_truth_by_image())
        write_proposals_jsonl(root / "proposals.jsonl", self.proposals_by_image())
        first = self.samples[0].record if self.samples else None
        meta = dict(self.meta)
        meta.update(
            {
                "image_ids": ids,
                "image_w": first.image_w if first else 0,
                "image_h": first.image_h if first else 0,
            }
        )
        (root / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n",
                                        encoding="utf-8")

    @classmethod
    def load(cls, root: str | Path) -> "Dataset":
        root = Path(root)
        meta_path = root / "meta.json"
        if not meta_path.exists():
            raise DataError(f"{root} is not a dataset directory (missing meta.json)")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        gts = read_ground_truth_jsonl(root / "annotations.jsonl")
        props = read_proposals_jsonl(root / "proposals.jsonl")
        samples = []
        for image_id in meta["image_ids"]:
            layers = read_feature_maps(root / "maps" / f"{image_id}.fmap")
            lmap_path = root / "maps" / f"{image_id}.lmap"
            emap_path = root / "maps" / f"{image_id}.emap"
            record = ImageRecord(
                image_id=image_id,
                image_w=int(meta["image_w"]),
                image_h=int(meta["image_h"]),
                feature_maps={fm.layer_name: fm for fm in layers},
                label_map=read_label_map(lmap_path) if lmap_path.exists() else None,
                edge_map=read_edge_map(emap_path) if emap_path.exists() else None,
            )
            samples.append(
                ImageSample(
                    record=record,
                    ground_truth=gts.get(image_id, []),
                    proposals=props.get(image_id, []),
                )
            )
        return cls(samples=samples, meta=meta)
