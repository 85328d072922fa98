"""Boosted decision-tree ensembles trained with RealBoost and hard-negative mining.

Trees are grown greedily on quantile-binned features, choosing at every node
the split that minimizes Z = 2 * sum_leaves sqrt(W+ * W-).  Leaf scores are
half log-odds with additive smoothing.  A forest scores a sample as
``prior_weight * prior + sum_t f_t(x)``; the proposal prior therefore acts as
a fixed round-zero margin, and boosting weights are initialized from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


class TrainingError(DataError):
    """Training inputs are unusable (for example, no positive samples)."""


# --- trees -----------------------------------------------------------------


@dataclass
class Tree:
    """Decision tree stored as preorder node arrays; left == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        while True:
            feat = self.feature[node]
            live = feat >= 0
            if not live.any():
                break
            rows = np.flatnonzero(live)
            cur = node[rows]
            goes_left = X[rows, feat[rows]] <= self.threshold[cur]
            node[rows] = np.where(goes_left, self.left[cur], self.right[cur])
        return self.value[node]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_arrays(self) -> dict[str, list]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_arrays(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
        )


class FeatureBinner:
    """Per-feature threshold candidates: unique-value midpoints, capped by quantiles.

    Features with at most ``max_bins`` distinct values get the midpoints of
    consecutive unique values as candidate thresholds (exact search); denser
    features fall back to at most ``max_bins - 1`` deterministic quantile cut
    points.
    """

    def __init__(self, X: np.ndarray, max_bins: int = 256):
        if max_bins < 2 or max_bins > 256:
            raise ConfigError(f"max_bins must be in [2, 256], got {max_bins}")
        X = np.asarray(X)
        if X.ndim != 2:
            raise TrainingError(f"feature matrix must be 2-D, got shape {X.shape}")
        n, n_features = X.shape
        self.n_features = n_features
        self.cuts: list[np.ndarray] = []
        bins = np.empty((n, n_features), dtype=np.uint8)
        interior = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
        for f in range(n_features):
            col = X[:, f].astype(np.float64)
            uniq = np.unique(col)
            if uniq.size <= max_bins:
                cuts = (uniq[:-1] + uniq[1:]) / 2.0
            else:
                cuts = np.unique(np.quantile(col, interior))
            self.cuts.append(cuts)
            bins[:, f] = np.searchsorted(cuts, col, side="left")
        self.bins = bins
        self.n_cuts = np.array([c.size for c in self.cuts], dtype=np.int64)
        self.width = int(self.n_cuts.max(initial=0)) + 1


def _leaf_score(wp: float, wn: float, eps: float) -> float:
    return 0.5 * math.log((wp + eps) / (wn + eps))


def train_tree(
    binner: FeatureBinner,
    w: np.ndarray,
    y: np.ndarray,
    max_depth: int,
    eps: float,
) -> Tree:
    """Grow one tree on binned features, minimizing Z greedily.

    ``w`` must be nonnegative; ``y`` in {-1, +1}.  Ties between equally good
    splits resolve to the smallest feature index, then smallest threshold.
    """
    if max_depth < 1:
        raise ConfigError(f"tree depth must be >= 1, got {max_depth}")
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y)
    if w.shape != y.shape or w.shape[0] != binner.bins.shape[0]:
        raise TrainingError("weights, labels, and features disagree on sample count")
    pos = y > 0
    w_pos = np.where(pos, w, 0.0)
    w_neg = np.where(pos, 0.0, w)
    B = binner.width
    F = binner.n_features
    col_offset = np.arange(F, dtype=np.int64) * B
    # Candidate cut b of feature f is only meaningful when b < n_cuts[f].
    invalid = np.arange(B - 1, dtype=np.int64)[None, :] >= binner.n_cuts[:, None]

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def build(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)

        wp = float(w_pos[idx].sum())
        wn = float(w_neg[idx].sum())
        if depth >= max_depth or idx.size < 2 or wp == 0.0 or wn == 0.0:
            value[node] = _leaf_score(wp, wn, eps)
            return node

        flat = (binner.bins[idx].astype(np.int64) + col_offset[None, :]).reshape(-1)
        hp = np.bincount(flat, weights=np.repeat(w_pos[idx], F), minlength=F * B)
        hn = np.bincount(flat, weights=np.repeat(w_neg[idx], F), minlength=F * B)
        cp = np.cumsum(hp.reshape(F, B), axis=1)[:, : B - 1]
        cn = np.cumsum(hn.reshape(F, B), axis=1)[:, : B - 1]
        # Right-side masses are differences of nearly equal sums; roundoff can
        # push them a hair below zero, which sqrt would turn into NaN.
        rp = np.maximum(wp - cp, 0.0)
        rn = np.maximum(wn - cn, 0.0)
        z = 2.0 * (np.sqrt(cp * cn) + np.sqrt(rp * rn))
        bad = invalid | ((cp + cn) <= 0.0) | ((rp + rn) <= 0.0)
        z[bad] = np.inf
        best = int(np.argmin(z))
        if not np.isfinite(z.reshape(-1)[best]):
            value[node] = _leaf_score(wp, wn, eps)
            return node
        f, b = divmod(best, B - 1)
        cut = float(binner.cuts[f][b])

        feature[node] = f
        threshold[node] = cut
        goes_left = binner.bins[idx, f] <= b
        left[node] = build(idx[goes_left], depth + 1)
        right[node] = build(idx[~goes_left], depth + 1)
        return node

    build(np.arange(binner.bins.shape[0], dtype=np.int64), 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


# --- boosting ----------------------------------------------------------------


@dataclass(frozen=True)
class BoostConfig:
    """Knobs for one RealBoost run."""

    max_depth: int = 5
    leaf_smoothing: float | None = None  # default 1 / (2 * sample count)
    margin_clamp: float = 50.0
    max_bins: int = 256
    prior_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.leaf_smoothing is not None and self.leaf_smoothing <= 0:
            raise ConfigError("leaf_smoothing must be positive")
        if self.margin_clamp <= 0:
            raise ConfigError("margin_clamp must be positive")


@dataclass
class RoundLog:
    """Diagnostics recorded while boosting one stage."""

    losses: list[float] = field(default_factory=list)
    weight_sum_errors: list[float] = field(default_factory=list)
    clamp_events: int = 0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


@dataclass
class StageLog:
    """Bookkeeping for one bootstrapping stage."""

    stage: int
    tree_count: int
    negatives: int
    hard_added: int
    hard_requested: int
    final_loss: float
    clamp_events: int

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "tree_count": self.tree_count,
            "negatives": self.negatives,
            "hard_added": self.hard_added,
            "hard_requested": self.hard_requested,
            "final_loss": self.final_loss,
            "clamp_events": self.clamp_events,
        }


@dataclass
class Forest:
    """Additive tree ensemble with a weighted proposal prior."""

    trees: list[Tree]
    prior_weight: float = 1.0
    n_features: int = 0
    stage_history: list[StageLog] = field(default_factory=list)

    def score(self, X: np.ndarray, priors: np.ndarray | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X))
        if self.n_features and X.shape[1] != self.n_features:
            raise DataError(f"forest expects {self.n_features} features, got {X.shape[1]}")
        if priors is None:
            out = np.zeros(X.shape[0], dtype=np.float64)
        else:
            priors = np.asarray(priors, dtype=np.float64)
            if priors.shape[0] != X.shape[0]:
                raise DataError("priors and samples disagree on count")
            out = self.prior_weight * priors.copy()
        for t in self.trees:
            out += t.apply(X)
        return out

    def to_dict(self) -> dict:
        return {
            "prior_weight": self.prior_weight,
            "n_features": self.n_features,
            "trees": [t.to_arrays() for t in self.trees],
            "stage_history": [s.to_dict() for s in self.stage_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls(
            trees=[Tree.from_arrays(t) for t in d["trees"]],
            prior_weight=float(d["prior_weight"]),
            n_features=int(d["n_features"]),
            stage_history=[StageLog(**s) for s in d.get("stage_history", [])],
        )


def realboost_fit(
    X: np.ndarray,
    y: np.ndarray,
    rounds: int,
    config: BoostConfig = BoostConfig(),
    priors: np.ndarray | None = None,
    binner: FeatureBinner | None = None,
) -> tuple[Forest, RoundLog]:
    """Fit ``rounds`` trees by RealBoost.

    Sample weights start at ``exp(-y * prior_weight * prior)`` (uniform
    without priors), are renormalized to sum to one every round, and margins
    are clamped to ``+/- margin_clamp`` before exponentiation (occurrences
    are counted in the log).  The recorded exponential loss is non-increasing
    round over round; this is asserted.
    """
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise TrainingError(f"bad training shapes: X {X.shape}, y {y.shape}")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise TrainingError("labels must be -1 or +1")
    n = X.shape[0]
    if n == 0:
        raise TrainingError("cannot boost on an empty sample set")
    if rounds < 0:
        raise ConfigError(f"rounds must be >= 0, got {rounds}")

    if priors is None:
        margins = np.zeros(n, dtype=np.float64)
    else:
        priors = np.asarray(priors, dtype=np.float64)
        margins = config.prior_weight * priors * 1.0
    margins = y * margins  # signed margin y * F(x)

    eps = config.leaf_smoothing if config.leaf_smoothing is not None else 1.0 / (2.0 * n)
    if binner is None:
        binner = FeatureBinner(X, max_bins=config.max_bins)
    log = RoundLog()
    clamp = config.margin_clamp

    def clamped(m: np.ndarray) -> np.ndarray:
        over = np.abs(m) > clamp
        log.clamp_events += int(over.sum())
        return np.clip(m, -clamp, clamp)

    trees: list[Tree] = []
    prev_loss = float(np.mean(np.exp(-clamped(margins))))
    for _ in range(rounds):
        w = np.exp(-np.clip(margins, -clamp, clamp))
        w /= w.sum()
        log.weight_sum_errors.append(abs(float(w.sum()) - 1.0))
        tree = train_tree(binner, w, y, config.max_depth, eps)
        trees.append(tree)
        margins += y * tree.apply(X)
        loss = float(np.mean(np.exp(-clamped(margins))))
        assert loss <= prev_loss + 1e-12, (
            f"exponential loss increased: {prev_loss} -> {loss}"
        )
        log.losses.append(loss)
        prev_loss = loss

    forest = Forest(trees=trees, prior_weight=config.prior_weight, n_features=X.shape[1])
    return forest, log


# --- hard-negative bootstrapping ---------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Staged training schedule plus boosting knobs.

    ``stage_tree_counts[s]`` trees are trained from scratch at stage s; stage
    0 uses ``initial_negatives`` randomly sampled background boxes and every
    later stage appends up to ``hard_negatives_per_stage`` mined false
    positives before retraining.
    """

    stage_tree_counts: tuple[int, ...] = (64, 128, 256, 512, 1024, 2048)
    initial_negatives: int = 30000
    hard_negatives_per_stage: int = 5000
    max_depth: int = 5
    pos_iou: float = 0.5
    neg_iou: float = 0.3
    prior_weight: float = 1.0
    margin_clamp: float = 50.0
    max_bins: int = 256
    leaf_smoothing: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.stage_tree_counts or any(t < 1 for t in self.stage_tree_counts):
            raise ConfigError(f"bad stage tree counts {self.stage_tree_counts}")
        if self.initial_negatives < 1:
            raise ConfigError("initial_negatives must be >= 1")
        if self.hard_negatives_per_stage < 0:
            raise ConfigError("hard_negatives_per_stage must be >= 0")
        if not (0.0 <= self.neg_iou <= self.pos_iou <= 1.0):
            raise ConfigError(
                f"need 0 <= neg_iou <= pos_iou <= 1, got {self.neg_iou}, {self.pos_iou}"
            )

    def boost_config(self) -> BoostConfig:
        return BoostConfig(
            max_depth=self.max_depth,
            leaf_smoothing=self.leaf_smoothing,
            margin_clamp=self.margin_clamp,
            max_bins=self.max_bins,
            prior_weight=self.prior_weight,
        )


def full_training_config(**overrides) -> TrainConfig:
    """Six-stage schedule: 64..2048 trees, 30k initial negatives, +5k per stage."""
    defaults = dict(
        stage_tree_counts=(64, 128, 256, 512, 1024, 2048),
        initial_negatives=30000,
        hard_negatives_per_stage=5000,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def basic_training_config(**overrides) -> TrainConfig:
    """Reduced five-stage schedule: 32..512 trees, 10k initial negatives, +1k per stage."""
    defaults = dict(
        stage_tree_counts=(32, 64, 128, 256, 512),
        initial_negatives=10000,
        hard_negatives_per_stage=1000,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def select_hard_negatives(
    scores: np.ndarray,
    keys: list,
    k: int,
    exclude: set,
) -> list[int]:
    """Indices of the top-k scores whose keys are not yet taken.

    Ordering is by descending score with input order breaking ties; fewer
    than k survivors simply yields them all.
    """
    if k <= 0:
        return []
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    out: list[int] = []
    for i in order:
        if keys[i] in exclude:
            continue
        out.append(int(i))
        if len(out) == k:
            break
    return out


class BootstrapSource:
    """Interface bootstrap_train consumes (duck-typed; subclassing optional).

    ``positives()`` -> (X, priors) for all positive samples.
    ``background_negatives(count, seed)`` -> (X, priors, keys) random
    background samples.
    ``negative_pool()`` -> (X, priors, keys) every candidate eligible as a
    hard negative (already overlap-filtered against ground truth).
    """

    def positives(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def background_negatives(self, count: int, seed: int) -> tuple[np.ndarray, np.ndarray, list]:
        raise NotImplementedError

    def negative_pool(self) -> tuple[np.ndarray, np.ndarray, list]:
        raise NotImplementedError


def bootstrap_train(source, cfg: TrainConfig) -> Forest:
    """Run the staged schedule: train, mine false positives, retrain from scratch.

    The returned forest is the final stage's; its ``stage_history`` records
    per-stage tree counts, negative-set sizes, and how many mined negatives
    were actually added (mining can come up short when the pool is small).
    """
    Xp, pp = source.positives()
    Xp = np.asarray(Xp, dtype=np.float32)
    if Xp.ndim != 2 or Xp.shape[0] == 0:
        raise TrainingError("bootstrap training needs at least one positive sample")
    Xn, pn, neg_keys = source.background_negatives(cfg.initial_negatives, cfg.seed)
    Xn = np.asarray(Xn, dtype=np.float32)
    if Xn.shape[0] == 0:
        raise TrainingError("bootstrap training needs at least one negative sample")
    taken = set(neg_keys)

    pool = None
    forest: Forest | None = None
    history: list[StageLog] = []
    for stage, tree_count in enumerate(cfg.stage_tree_counts):
        added = 0
        if stage > 0:
            if pool is None:
                pool = source.negative_pool()
            pool_X, pool_p, pool_keys = pool
            if len(pool_keys):
                scores = forest.score(pool_X, pool_p)
                sel = select_hard_negatives(scores, pool_keys, cfg.hard_negatives_per_stage, taken)
                if sel:
                    Xn = np.vstack([Xn, np.asarray(pool_X, dtype=np.float32)[sel]])
                    pn = np.concatenate([pn, np.asarray(pool_p, dtype=np.float64)[sel]])
                    taken.update(pool_keys[i] for i in sel)
                    added = len(sel)
        X = np.vstack([Xp, Xn])
        y = np.concatenate([np.ones(Xp.shape[0]), -np.ones(Xn.shape[0])])
        priors = np.concatenate([np.asarray(pp, dtype=np.float64),
                                 np.asarray(pn, dtype=np.float64)])
        forest, log = realboost_fit(X, y, tree_count, cfg.boost_config(), priors=priors)
        history.append(
            StageLog(
                stage=stage,
                tree_count=tree_count,
                negatives=Xn.shape[0],
                hard_added=added,
                hard_requested=0 if stage == 0 else cfg.hard_negatives_per_stage,
                final_loss=log.final_loss,
                clamp_events=log.clamp_events,
            )
        )
    forest.stage_history = history
    return forest
