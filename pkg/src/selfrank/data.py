"""Frame collections, file ingestion, and synthetic scenes with ground truth.

Frames come in two modes: feature vectors (one row per frame) or small
grayscale images with pixels in [0, 1]. Frame ids are 0..K-1 in temporal
order; downstream neighbor expansion relies on that ordering.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pgm import read_pgm, write_pgm

VECTOR = "vector"
IMAGE = "image"

# Synthetic image scene constants: background / disc / planted-square gray
# levels and the per-pixel noise sigma.
SCENE_BACKGROUND = 0.1
SCENE_DISC_LEVEL = 0.85
SCENE_SQUARE_LEVEL = 1.0
SCENE_NOISE_SIGMA = 0.02


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """One frame: a D-vector or an H x W image, with its temporal index."""

    id: int
    payload: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.payload)):
            raise DataError(f"frame {self.id}: payload contains NaN/Inf")


class FrameSet:
    """Ordered, immutable collection of frames sharing one mode and shape.

    Backed by a single read-only array of shape (K, D) or (K, H, W).
    """

    def __init__(self, data: np.ndarray, mode: str):
        data = np.asarray(data, dtype=np.float64)
        if mode not in (VECTOR, IMAGE):
            raise DataError(f"unknown mode {mode!r}")
        want_ndim = 2 if mode == VECTOR else 3
        if data.ndim != want_ndim:
            raise DataError(f"{mode} mode expects {want_ndim}-D data, got shape {data.shape}")
        if data.shape[0] < 1:
            raise DataError("no frames")
        if not np.all(np.isfinite(data)):
            raise DataError("frame payloads contain NaN/Inf")
        if mode == IMAGE and (data.min() < 0.0 or data.max() > 1.0):
            raise DataError("image pixels must lie in [0, 1]")
        data = data.copy()
        data.setflags(write=False)
        self._data = data
        self.mode = mode

    @property
    def k(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self):
        """Feature dimension D (vector mode) or (H, W) shape (image mode)."""
        if self.mode == VECTOR:
            return self._data.shape[1]
        return self._data.shape[1:]

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.k)

    def frame(self, fid: int) -> Frame:
        if not 0 <= fid < self.k:
            raise DataError(f"frame id {fid} out of range 0..{self.k - 1}")
        return Frame(fid, self._data[fid])

    @property
    def frames(self) -> list[Frame]:
        return [Frame(i, self._data[i]) for i in range(self.k)]

    def __len__(self) -> int:
        return self.k


@dataclass(frozen=True)
class GroundTruth:
    """Per-frame 0/1 anomaly labels, used only for evaluation and the
    simulated expert, never inside the training loop.

    Image scenes additionally carry the planted square's bounding box per
    anomalous frame (localization ground truth) and the id of the normal
    frame sharing the same disc position (`pair_ids`).
    """

    labels: np.ndarray
    boxes: Optional[tuple] = None      # per frame: (r0, c0, r1, c1) or None
    pair_ids: Optional[tuple] = None   # per frame: paired normal id or None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size < 1:
            raise DataError("ground truth must be a nonempty 1-D label array")
        if not np.all(np.isin(labels, (0, 1))):
            raise DataError("ground truth labels must be 0 or 1")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        for name in ("boxes", "pair_ids"):
            val = getattr(self, name)
            if val is not None and len(val) != labels.size:
                raise DataError(f"{name} length {len(val)} != label count {labels.size}")

    def __len__(self) -> int:
        return self.labels.size


def load_feature_csv(path) -> FrameSet:
    """Read a headerless numeric CSV, one frame per row, row order kept."""
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataError(
                    f"{path}: row {lineno} has {len(cells)} cells, expected {width}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: non-numeric cell ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: no frames")
    return FrameSet(np.array(rows, dtype=np.float64), VECTOR)


def save_feature_csv(fs: FrameSet, path) -> None:
    if fs.mode != VECTOR:
        raise DataError("save_feature_csv expects a vector-mode FrameSet")
    with open(path, "w", encoding="utf-8") as fh:
        for row in fs.data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_image_frames(manifest) -> FrameSet:
    """Read a manifest of PGM paths (one per line, temporal order)."""
    base = os.path.dirname(os.path.abspath(manifest))
    paths = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                paths.append(line if os.path.isabs(line) else os.path.join(base, line))
    if not paths:
        raise DataError(f"{manifest}: no frames")
    images = []
    shape = None
    for p in paths:
        img = read_pgm(p)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(
                f"{p}: frame shape {img.shape} does not match first frame {shape}"
            )
        images.append(img)
    return FrameSet(np.stack(images), IMAGE)


def save_image_frames(fs: FrameSet, out_dir, manifest_name: str = "manifest.txt") -> str:
    """Write frames as frame_0000.pgm ... plus a manifest; returns manifest path."""
    if fs.mode != IMAGE:
        raise DataError("save_image_frames expects an image-mode FrameSet")
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i in range(fs.k):
        name = f"frame_{i:04d}.pgm"
        write_pgm(os.path.join(out_dir, name), fs.data[i])
        names.append(name)
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(names) + "\n")
    return manifest


def load_ground_truth_csv(path) -> GroundTruth:
    """Read one 0/1 label per line, aligned to frame order."""
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise DataError(f"{path}: line {lineno}: expected 0 or 1, got {line!r}")
            labels.append(int(line))
    if not labels:
        raise DataError(f"{path}: no labels")
    return GroundTruth(np.array(labels, dtype=np.int64))


def save_ground_truth_csv(gt: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(v)) for v in gt.labels) + "\n")


def synth_vector_scene(
    k_normal: int, k_anomaly: int, d: int, separation: float, seed: int
) -> tuple[FrameSet, GroundTruth]:
    """Two-blob normal population with an offset anomaly cluster.

    Normals come from a balanced 2-component Gaussian mixture (unit
    covariance, means at -1/+1 on axis 0); anomalies from an isotropic unit
    Gaussian centered `separation` standard deviations away on axis 1
    (axis 0 when d == 1). Frame order is a seed-determined shuffle.
    """
    if k_normal < 2 or k_anomaly < 1 or d < 1 or separation <= 0:
        raise DataError("need k_normal >= 2, k_anomaly >= 1, d >= 1, separation > 0")
    rng = np.random.default_rng(seed)
    normals = rng.standard_normal((k_normal, d))
    component = rng.integers(0, 2, size=k_normal)
    normals[:, 0] += np.where(component == 0, -1.0, 1.0)
    anomalies = rng.standard_normal((k_anomaly, d))
    anomalies[:, min(1, d - 1)] += separation
    x = np.vstack([normals, anomalies])
    labels = np.concatenate(
        [np.zeros(k_normal, dtype=np.int64), np.ones(k_anomaly, dtype=np.int64)]
    )
    perm = rng.permutation(k_normal + k_anomaly)
    return FrameSet(x[perm], VECTOR), GroundTruth(labels[perm])


def _render_disc(h: int, w: int, cx: float, radius: float) -> np.ndarray:
    img = np.full((h, w), SCENE_BACKGROUND)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    mask = (rows - h / 2.0) ** 2 + (cols - cx) ** 2 <= radius**2
    img[mask] = SCENE_DISC_LEVEL
    return img


def synth_image_scene(
    k_normal: int, k_anomaly: int, h: int, w: int, seed: int
) -> tuple[FrameSet, GroundTruth]:
    """Disc-on-a-path scene with planted bright squares as anomalies.

    Every frame shows a disc translating along a fixed horizontal path plus
    pixel noise. Each anomalous frame reuses the disc position of a randomly
    chosen normal frame and additionally carries a bright square of side w//4
    at a random location; the square's bounding box and the paired normal's
    frame id are recorded on the returned GroundTruth.
    """
    if h < 16 or w < 16 or k_normal < 1 or k_anomaly < 1:
        raise DataError("need h, w >= 16 and both frame counts >= 1")
    rng = np.random.default_rng(seed)
    radius = max(2.0, min(h, w) / 8.0)
    margin = radius + 1.0
    side = w // 4

    def path_x(i: int) -> float:
        t = i / max(1, k_normal - 1)
        return margin + t * (w - 1 - 2 * margin)

    images, labels, boxes, base_index = [], [], [], []
    for i in range(k_normal):
        images.append(_render_disc(h, w, path_x(i), radius))
        labels.append(0)
        boxes.append(None)
        base_index.append(None)
    for _ in range(k_anomaly):
        base = int(rng.integers(0, k_normal))
        img = _render_disc(h, w, path_x(base), radius)
        r0 = int(rng.integers(1, h - side))
        c0 = int(rng.integers(1, w - side))
        img[r0 : r0 + side, c0 : c0 + side] = SCENE_SQUARE_LEVEL
        images.append(img)
        labels.append(1)
        boxes.append((r0, c0, r0 + side, c0 + side))
        base_index.append(base)

    stack = np.stack(images)
    stack = np.clip(stack + rng.normal(0.0, SCENE_NOISE_SIGMA, stack.shape), 0.0, 1.0)
    perm = rng.permutation(k_normal + k_anomaly)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)  # original index -> shuffled id
    gt = GroundTruth(
        np.array(labels, dtype=np.int64)[perm],
        boxes=tuple(boxes[j] for j in perm),
        pair_ids=tuple(None if base_index[j] is None else int(inv[base_index[j]]) for j in perm),
    )
    return FrameSet(stack[perm], IMAGE), gt


def flatten(fs: FrameSet) -> np.ndarray:
    """K x D feature matrix: identity for vectors, row-major flatten for images."""
    if fs.mode == VECTOR:
        return np.array(fs.data)
    k = fs.k
    return np.array(fs.data.reshape(k, -1))
