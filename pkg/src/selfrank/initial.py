"""Initial anomaly detection used to seed pseudo labels.

Pipeline: flatten -> PCA -> two generic detectors -> score fusion.

The two detectors are:
  * sp_score: nearest-neighbor distance to a small random subsample,
    bagged over m rounds.
  * isolation forest: randomized trees; points isolated near the root get
    path lengths far below the expected unsuccessful-search length c(n) and
    therefore scores near 1 under s(z) = 2**(-E(h(z)) / c(n)). The negative
    exponent is deliberate so that short paths (easy isolation) mean MORE
    anomalous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FrameSet, flatten

EULER_GAMMA = 0.5772156649


class DetectError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreVector:
    """One real anomaly score per frame; larger means more anomalous."""

    scores: np.ndarray
    provenance: str = "unknown"  # sp | iforest | fused | learner | ensemble

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise DetectError("scores must be a nonempty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise DetectError("scores contain NaN/Inf")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class InitConfig:
    """Knobs for the initial-detection stage."""

    pca_components: int = 100
    sp_subsample: int = 16
    sp_bags: int = 30
    forest_trees: int = 100
    forest_subsample: int = 256
    seed: int = 0


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray        # (D,)
    components: np.ndarray  # (M, D) orthonormal rows, variance-descending

    @property
    def m(self) -> int:
        return self.components.shape[0]


def pca_fit(x: np.ndarray, m_target: int = 100) -> PcaModel:
    """Principal basis of the top min(m_target, D, K) components.

    Deterministic sign convention: the largest-magnitude coefficient of each
    component is made positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DetectError("PCA needs a K x D matrix with K >= 2")
    k, d = x.shape
    m = min(m_target, d, k)
    mean = x.mean(axis=0)
    centered = x - mean
    # Economy SVD of the centered data is the covariance eigendecomposition
    # with singular values ordered descending.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:m].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components)


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.size:
        raise DetectError(
            f"expected K x {model.mean.size} matrix, got shape {x.shape}"
        )
    return (x - model.mean) @ model.components.T


# ---------------------------------------------------------------------------
# Sp: subsample nearest-neighbor distance, bagged
# ---------------------------------------------------------------------------


def sp_score(z: np.ndarray, subsample_size: int = 16, m_bags: int = 30, seed: int = 0) -> ScoreVector:
    """Mean over bags of the distance to the nearest subsample member.

    Each bag draws a uniform subsample without replacement; a point inside
    the current subsample scores 0 in that bag (self-distance counts).
    """
    z = np.asarray(z, dtype=np.float64)
    k = z.shape[0]
    if not 1 <= subsample_size <= k:
        raise DetectError(f"subsample_size must be in 1..{k}, got {subsample_size}")
    if m_bags < 1:
        raise DetectError("m_bags must be >= 1")
    rng = np.random.default_rng(seed)
    sq_norms = (z**2).sum(axis=1)
    total = np.zeros(k)
    for _ in range(m_bags):
        idx = rng.choice(k, size=subsample_size, replace=False)
        sub = z[idx]
        d2 = sq_norms[:, None] + sq_norms[idx][None, :] - 2.0 * (z @ sub.T)
        np.maximum(d2, 0.0, out=d2)
        d2[idx, np.arange(subsample_size)] = 0.0  # exact self-distance
        total += np.sqrt(d2.min(axis=1))
    return ScoreVector(total / m_bags, provenance="sp")


# ---------------------------------------------------------------------------
# Isolation forest
# ---------------------------------------------------------------------------


def expected_path_length(n: int) -> float:
    """c(n): expected unsuccessful-search path length in a BST of n points."""
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass
class _Tree:
    """Flat node arrays; feature == -1 marks a leaf, `size` its point count."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray


@dataclass
class IsolationForest:
    trees: list
    subsample_size: int
    n_trees: int
    height_limit: int
    m: int


def _interior_cut(lo: float, hi: float, rng: np.random.Generator, attempts: int = 8):
    """Uniform cut strictly inside (lo, hi); None when the range is too
    narrow to hold a representable interior float."""
    for _ in range(attempts):
        cut = lo + (hi - lo) * rng.random()
        if lo < cut < hi:
            return cut
    return None


def _grow_tree(data: np.ndarray, height_limit: int, rng: np.random.Generator) -> _Tree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def build(idx: np.ndarray, level: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(idx.size)
        depth.append(level)
        if idx.size <= 1 or level >= height_limit:
            return node
        sub = data[idx]
        lows = sub.min(axis=0)
        highs = sub.max(axis=0)
        candidates = np.nonzero(highs > lows)[0]
        if candidates.size == 0:  # duplicate-only node
            return node
        f = int(rng.integers(0, data.shape[1]))
        if lows[f] == highs[f]:
            f = int(candidates[rng.integers(0, candidates.size)])
        cut = _interior_cut(lows[f], highs[f], rng)
        while cut is None:  # range too narrow to split; fall back to another
            candidates = candidates[candidates != f]
            if candidates.size == 0:
                return node
            f = int(candidates[rng.integers(0, candidates.size)])
            cut = _interior_cut(lows[f], highs[f], rng)
        go_left = data[idx, f] < cut
        feature[node] = f
        threshold[node] = cut
        left[node] = build(idx[go_left], level + 1)
        right[node] = build(idx[~go_left], level + 1)
        return node

    build(np.arange(data.shape[0]), 0)
    return _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        size=np.array(size, dtype=np.int64),
        depth=np.array(depth, dtype=np.int64),
    )


def iforest_fit(
    z: np.ndarray, n_trees: int = 100, subsample_size: int = 256, seed: int = 0
) -> IsolationForest:
    """Grow n_trees isolation trees on independent uniform subsamples.

    Split feature uniform over the columns (redrawn among splittable
    columns when the first draw is constant in the node); split threshold
    uniform strictly between the node's min and max on that feature; growth
    stops at isolation, duplicate-only nodes, or ceil(log2(subsample)).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise DetectError("isolation forest needs a K x M matrix with K >= 2")
    if n_trees < 1:
        raise DetectError("n_trees must be >= 1")
    k = z.shape[0]
    n_sub = min(subsample_size, k)
    height_limit = max(1, math.ceil(math.log2(n_sub)))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        idx = rng.choice(k, size=n_sub, replace=False)
        trees.append(_grow_tree(z[idx], height_limit, rng))
    return IsolationForest(
        trees=trees, subsample_size=n_sub, n_trees=n_trees,
        height_limit=height_limit, m=z.shape[1],
    )


def iforest_score(forest: IsolationForest, z: np.ndarray) -> ScoreVector:
    """s(z) = 2**(-E(h(z)) / c(subsample)); h adds c(q) at leaves of size q."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != forest.m:
        raise DetectError(f"expected K x {forest.m} matrix, got shape {z.shape}")
    k = z.shape[0]
    path_sum = np.zeros(k)
    leaf_adjust = np.array(
        [expected_path_length(q) for q in range(forest.subsample_size + 1)]
    )
    rows = np.arange(k)
    for tree in forest.trees:
        node = np.zeros(k, dtype=np.int64)
        active = tree.feature[node] >= 0
        while active.any():
            cur = node[active]
            go_left = z[rows[active], tree.feature[cur]] < tree.threshold[cur]
            node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
            active = tree.feature[node] >= 0
        path_sum += tree.depth[node] + leaf_adjust[tree.size[node]]
    mean_path = path_sum / forest.n_trees
    scores = 2.0 ** (-mean_path / expected_path_length(forest.subsample_size))
    return ScoreVector(scores, provenance="iforest")


# ---------------------------------------------------------------------------
# Fusion and the public entry point
# ---------------------------------------------------------------------------


def _minmax(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.full_like(scores, 0.5)
    return (scores - lo) / (hi - lo)


def fuse_scores(s1: ScoreVector, s2: ScoreVector) -> ScoreVector:
    """Min-max rescale both score vectors to [0, 1] and average them."""
    a = np.asarray(s1.scores)
    b = np.asarray(s2.scores)
    if a.size != b.size:
        raise DetectError(f"score lengths differ: {a.size} vs {b.size}")
    return ScoreVector(0.5 * (_minmax(a) + _minmax(b)), provenance="fused")


def initial_scores(fs: FrameSet, cfg: InitConfig = InitConfig()) -> ScoreVector:
    """flatten -> PCA -> Sp + isolation forest -> fused scores."""
    x = flatten(fs)
    pca = pca_fit(x, cfg.pca_components)
    z = pca_transform(pca, x)
    root = np.random.SeedSequence(cfg.seed)
    sp_seed, forest_seed = (int(s.generate_state(1)[0]) for s in root.spawn(2))
    s1 = sp_score(z, min(cfg.sp_subsample, fs.k), cfg.sp_bags, seed=sp_seed)
    forest = iforest_fit(z, cfg.forest_trees, cfg.forest_subsample, seed=forest_seed)
    s2 = iforest_score(forest, z)
    return fuse_scores(s1, s2)
