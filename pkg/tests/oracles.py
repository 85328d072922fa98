"""Brute-force reference implementations shared by module and acceptance tests.

Everything here favors obviousness over speed: per-pixel Python loops and
exhaustive scans, no vectorization, no code shared with the package beyond
its public data types.  Divisions that define float32 outputs are performed
in float32 so comparisons against the package can be exact.
"""

import math

import numpy as np

from samhead.geometry import Box, Detection, GroundTruthBox, iou
from samhead.maps import EdgeMap, FeatureMap, LabelMap
from samhead.pooling import PoolGrid


def oracle_windows(extent, k):
    """Grid slot boundaries: floor(i * extent / k), degenerate slots pinned to one cell."""
    out = []
    for i in range(k):
        a = math.floor(i * extent / k)
        b = math.floor((i + 1) * extent / k)
        if b <= a:
            a = min(a, extent - 1)
            b = a + 1
        out.append((a, b))
    return out


def oracle_max_pool(data, rect, m, n):
    """Channel-major per-cell max via per-pixel scanning; float32 output."""
    channels = data.shape[0]
    rows = oracle_windows(rect.row_end - rect.row_start, m)
    cols = oracle_windows(rect.col_end - rect.col_start, n)
    out = []
    for c in range(channels):
        for r0, r1 in rows:
            for c0, c1 in cols:
                best = -math.inf
                for r in range(rect.row_start + r0, rect.row_start + r1):
                    for cc in range(rect.col_start + c0, rect.col_start + c1):
                        v = float(data[c, r, cc])
                        if v > best:
                            best = v
                out.append(best)
    return np.array(out, dtype=np.float32)


def oracle_histogram_pool(labels, rect, m, n, num_classes, norm="cell"):
    """Cell-major per-cell class histograms via per-pixel counting."""
    rows = oracle_windows(rect.row_end - rect.row_start, m)
    cols = oracle_windows(rect.col_end - rect.col_start, n)
    out = []
    for r0, r1 in rows:
        for c0, c1 in cols:
            counts = [0] * num_classes
            pixels = 0
            for r in range(rect.row_start + r0, rect.row_start + r1):
                for cc in range(rect.col_start + c0, rect.col_start + c1):
                    counts[int(labels[r, cc])] += 1
                    pixels += 1
            denom = pixels if norm == "cell" else m * n
            hist = np.array(counts, dtype=np.float32) / np.float32(denom)
            out.extend(hist.tolist())
    return np.array(out, dtype=np.float32)


def oracle_edge_hist_pool(edges, rect, m, n, bins):
    """Cell-major per-cell edge-strength histograms, value 1.0 in the top bin."""
    rows = oracle_windows(rect.row_end - rect.row_start, m)
    cols = oracle_windows(rect.col_end - rect.col_start, n)
    out = []
    for r0, r1 in rows:
        for c0, c1 in cols:
            counts = [0] * bins
            pixels = 0
            for r in range(rect.row_start + r0, rect.row_start + r1):
                for cc in range(rect.col_start + c0, rect.col_start + c1):
                    q = int(np.float32(edges[r, cc]) * np.float32(bins))
                    counts[min(q, bins - 1)] += 1
                    pixels += 1
            hist = np.array(counts, dtype=np.float32) / np.float32(pixels)
            out.extend(hist.tolist())
    return np.array(out, dtype=np.float32)


def random_pool_instance(rng):
    """One randomized (maps, box, grid) pooling instance overlapping the map."""
    stride = int(rng.choice([1, 2, 4, 8, 16]))
    map_h = int(rng.integers(2, 21))
    map_w = int(rng.integers(2, 21))
    channels = int(rng.integers(1, 5))
    fmap = FeatureMap(
        "layer", stride, rng.normal(size=(channels, map_h, map_w)).astype(np.float32)
    )
    labels = LabelMap(rng.integers(0, 21, size=(map_h, map_w)).astype(np.uint8))
    edges = rng.random(size=(map_h, map_w), dtype=np.float64).astype(np.float32)
    if rng.random() < 0.5:
        edges[int(rng.integers(0, map_h)), int(rng.integers(0, map_w))] = 1.0
    grid = PoolGrid(int(rng.integers(1, 15)), int(rng.integers(1, 15)))
    w_px, h_px = map_w * stride, map_h * stride
    while True:
        x = float(rng.uniform(-0.3 * w_px, 0.95 * w_px))
        y = float(rng.uniform(-0.3 * h_px, 0.95 * h_px))
        bw = float(rng.uniform(0.5, 1.1 * w_px))
        bh = float(rng.uniform(0.5, 1.1 * h_px))
        if x + bw > 0 and y + bh > 0:
            break
    return fmap, labels, EdgeMap(edges), Box(x, y, bw, bh), grid


def random_match_instance(rng, max_boxes=6):
    """Random detections and ground truth for one image, box counts <= max_boxes.

    Ground truth mixes eligible and ignore-worthy boxes (short, occluded, or
    flagged); detections cluster near ground truth often enough to produce
    real matching pressure, and scores are coarse so ties occur.
    """
    def rand_box():
        return Box(float(rng.uniform(0, 150)), float(rng.uniform(0, 150)),
                   float(rng.uniform(5, 60)), float(rng.uniform(20, 100)))

    gts = [
        GroundTruthBox(
            rand_box(),
            occlusion=float(rng.uniform(0, 0.5)),
            truncation=float(rng.uniform(0, 0.3)),
            ignore=bool(rng.random() < 0.2),
        )
        for _ in range(int(rng.integers(0, max_boxes + 1)))
    ]
    dets = []
    for _ in range(int(rng.integers(0, max_boxes + 1))):
        if gts and rng.random() < 0.6:
            g = gts[int(rng.integers(0, len(gts)))].box
            b = Box(
                g.x + float(rng.uniform(-5, 5)),
                g.y + float(rng.uniform(-5, 5)),
                g.w * float(rng.uniform(0.8, 1.2)),
                g.h * float(rng.uniform(0.8, 1.2)),
            )
        else:
            b = rand_box()
        dets.append(Detection(b, round(float(rng.uniform(0, 1)), 1)))
    return dets, gts


def oracle_greedy_match(detections, ground_truth, iou_threshold, eligible_flags):
    """Greedy matching, restated with exhaustive pair scans and no sorting tricks.

    ``eligible_flags[k]`` says whether ground_truth[k] counts (ineligible boxes
    act as ignore regions).  Detections are visited in score order, ties by
    input position; each claims its best-overlapping unclaimed eligible box at
    or above the threshold, else is ignored if any ignore region overlaps
    enough, else is a false positive.  Returns (ordered scores, flags,
    eligible count) with flags 1=TP, 0=FP, -1=ignored.
    """
    remaining = list(range(len(detections)))
    order = []
    while remaining:
        best = remaining[0]
        for idx in remaining[1:]:
            if detections[idx].score > detections[best].score:
                best = idx
        remaining.remove(best)
        order.append(best)

    claimed = [False] * len(ground_truth)
    flags = []
    for idx in order:
        det = detections[idx]
        best_k = -1
        best_overlap = 0.0
        for k, gt in enumerate(ground_truth):
            if not eligible_flags[k] or claimed[k]:
                continue
            overlap = iou(det.box, gt.box)
            if overlap >= iou_threshold and overlap > best_overlap:
                best_overlap = overlap
                best_k = k
        if best_k >= 0:
            claimed[best_k] = True
            flags.append(1)
            continue
        ignored = False
        for k, gt in enumerate(ground_truth):
            if eligible_flags[k]:
                continue
            if iou(det.box, gt.box) >= iou_threshold:
                ignored = True
                break
        flags.append(-1 if ignored else 0)

    scores = [detections[idx].score for idx in order]
    eligible = sum(1 for f in eligible_flags if f)
    return scores, flags, eligible
