"""Differentiable anomaly scorers trained by two-target ordinal regression.

A scorer is a backbone (small MLP or strided conv trunk with global average
pooling) followed by a scoring head, trained with the absolute loss
|score - target| where pseudo anomalies get target c1 and pseudo normals
get target c2 (c1 > c2). Everything is plain numpy with hand-written
backprop; subgradient 0 is used at the kinks of both the rectifier and the
absolute loss.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import Frame, FrameSet
from .initial import ScoreVector

MLP = "mlp"
CONV_GAP = "conv-gap"
CONV_GAP_LINEAR = "conv-gap-linear"
ARCH_KINDS = (MLP, CONV_GAP, CONV_GAP_LINEAR)

CHECKPOINT_MAGIC = b"SRKM"
CHECKPOINT_VERSION = 1


class NetError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    """Backbone/head layout.

    kind "mlp": input_shape (D,), hidden = dense widths.
    kind "conv-gap"/"conv-gap-linear": input_shape (H, W), hidden = channel
    counts of 3x3 stride-2 conv layers, pooled by global averaging.
    head_hidden > 0 adds a rectified hidden layer before the linear output
    unit; "conv-gap-linear" requires head_hidden == 0 so the score is exactly
    linear in the pooled activations (the activation-map identity).
    """

    kind: str
    input_shape: tuple
    hidden: tuple
    head_hidden: int = 100

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise NetError(f"unknown architecture kind {self.kind!r}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        if len(self.hidden) < 1:
            raise NetError("need at least one backbone layer")
        if self.kind == MLP:
            if len(self.input_shape) != 1:
                raise NetError("mlp expects input_shape (D,)")
        else:
            if len(self.input_shape) != 2:
                raise NetError("conv backbones expect input_shape (H, W)")
            h, w = self.conv_grid()
            if h < 1 or w < 1:
                raise NetError(f"input {self.input_shape} too small for {len(self.hidden)} conv layers")
        if self.kind == CONV_GAP_LINEAR:
            if self.head_hidden != 0:
                raise NetError("conv-gap-linear uses a single linear head (head_hidden=0)")
        elif self.head_hidden < 1:
            raise NetError(f"{self.kind} needs head_hidden >= 1")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]

    def conv_grid(self) -> tuple[int, int]:
        """Spatial shape of the last conv layer's activations."""
        if self.kind == MLP:
            raise NetError("mlp has no conv grid")
        h, w = self.input_shape
        for _ in self.hidden:
            h = (h - 3) // 2 + 1
            w = (w - 3) // 2 + 1
        return h, w


def mlp_architecture(d: int, hidden=(64, 32), head_hidden: int = 100) -> Architecture:
    return Architecture(MLP, (d,), tuple(hidden), head_hidden)


def conv_architecture(h: int, w: int, channels=(8, 16), head_hidden: int = 100) -> Architecture:
    return Architecture(CONV_GAP, (h, w), tuple(channels), head_hidden)


def conv_linear_architecture(h: int, w: int, channels=(8, 16)) -> Architecture:
    return Architecture(CONV_GAP_LINEAR, (h, w), tuple(channels), 0)


def _param_shapes(arch: Architecture) -> list[tuple]:
    """(W, b) shapes in declaration order: backbone layers, then the head."""
    shapes: list[tuple] = []
    if arch.kind == MLP:
        prev = arch.input_shape[0]
        for width in arch.hidden:
            shapes += [(prev, width), (width,)]
            prev = width
    else:
        prev_c = 1
        for c in arch.hidden:
            shapes += [(c, prev_c, 3, 3), (c,)]
            prev_c = c
    feat = arch.feature_dim
    if arch.head_hidden > 0:
        shapes += [(feat, arch.head_hidden), (arch.head_hidden,)]
        feat = arch.head_hidden
    shapes += [(feat, 1), (1,)]
    return shapes


def _fan_in(shape: tuple) -> int:
    if len(shape) == 2:
        return shape[0]
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[0]


class ScoringModel:
    """Architecture plus its parameter arrays (declaration order)."""

    def __init__(self, arch: Architecture, params: list, seed: int = 0):
        self.arch = arch
        self.params = params
        self.seed = seed

    def copy(self) -> "ScoringModel":
        return ScoringModel(self.arch, [p.copy() for p in self.params], self.seed)

    def param_count(self) -> int:
        return sum(p.size for p in self.params)


def net_init(arch: Architecture, seed: int) -> ScoringModel:
    """Scaled-uniform weights with bound sqrt(6 / fan_in); zero biases.

    The output unit's weights start at zero so a fresh scorer is the zero
    function: every ranking it later produces is learned, not inherited
    from the random draw. (Randomly drawn output weights make a fresh
    model emit an arbitrary O(1) ranking over frames it was never trained
    on, which destabilizes the relabel-retrain loop at small sample
    counts.)
    """
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(arch)
    params = []
    for i, shape in enumerate(shapes):
        if len(shape) == 1 or i == len(shapes) - 2:
            params.append(np.zeros(shape))
        else:
            bound = math.sqrt(6.0 / _fan_in(shape))
            params.append(rng.uniform(-bound, bound, size=shape))
    return ScoringModel(arch, params, seed)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    # x (B, C, H, W), w (O, C, 3, 3), stride 2, valid padding; im2col matmul
    n_out = w.shape[0]
    win = sliding_window_view(x, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    bsz, c, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, c * 9)
    z = (cols @ w.reshape(n_out, -1).T + b).reshape(bsz, ho, wo, n_out)
    return np.ascontiguousarray(z.transpose(0, 3, 1, 2)), cols


def _conv_backward(dz, cols, w, x_shape, need_dx: bool):
    bsz, n_out, ho, wo = dz.shape
    dz_flat = np.ascontiguousarray(dz.transpose(0, 2, 3, 1)).reshape(-1, n_out)
    dw = (dz_flat.T @ cols).reshape(w.shape)
    db = dz_flat.sum(axis=0)
    dx = None
    if need_dx:
        c = x_shape[1]
        dcols = (dz_flat @ w.reshape(n_out, -1)).reshape(bsz, ho, wo, c, 3, 3)
        dx = np.zeros(x_shape)
        for u in range(3):
            for v in range(3):
                dx[:, :, u : u + 2 * ho - 1 : 2, v : v + 2 * wo - 1 : 2] += dcols[
                    :, :, :, :, u, v
                ].transpose(0, 3, 1, 2)
    return dw, db, dx


def _batch_input(model: ScoringModel, data: np.ndarray) -> np.ndarray:
    arch = model.arch
    if arch.kind == MLP:
        if data.ndim == 3:  # image frames through an mlp: flatten
            data = data.reshape(data.shape[0], -1)
        if data.shape[1] != arch.input_shape[0]:
            raise NetError(f"expected input dim {arch.input_shape[0]}, got {data.shape[1]}")
        return data
    if data.ndim != 3 or data.shape[1:] != arch.input_shape:
        raise NetError(f"expected image batch of shape (B, {arch.input_shape[0]}, {arch.input_shape[1]})")
    return data[:, None, :, :]


def _forward(model: ScoringModel, data: np.ndarray, need_cache: bool = False):
    """Batched forward pass; returns (scores, cache).

    The cache holds every tensor backprop needs plus the rectifier
    activation-sign pattern (used for kink detection in gradient checks).
    """
    arch = model.arch
    p = model.params
    x = _batch_input(model, data)
    cache = {"relu_pre": [], "dense_in": [], "conv_cols": [], "conv_in_shape": []}
    idx = 0
    if arch.kind == MLP:
        a = x
        for _ in arch.hidden:
            w, b = p[idx], p[idx + 1]
            idx += 2
            cache["dense_in"].append(a)
            z = a @ w + b
            cache["relu_pre"].append(z)
            a = np.maximum(z, 0.0)
        feats = a
    else:
        a = x
        for _ in arch.hidden:
            w, b = p[idx], p[idx + 1]
            idx += 2
            cache["conv_in_shape"].append(a.shape)
            z, cols = _conv_forward(a, w, b)
            cache["conv_cols"].append(cols)
            cache["relu_pre"].append(z)
            a = np.maximum(z, 0.0)
        cache["gap_grid"] = a.shape[2:]
        cache["last_conv_act"] = a
        feats = a.mean(axis=(2, 3))
    if arch.head_hidden > 0:
        w, b = p[idx], p[idx + 1]
        idx += 2
        cache["head_in"] = feats
        zh = feats @ w + b
        cache["relu_pre"].append(zh)
        feats = np.maximum(zh, 0.0)
    w, b = p[idx], p[idx + 1]
    cache["out_in"] = feats
    scores = (feats @ w + b)[:, 0]
    if not need_cache:
        return scores, None
    return scores, cache


def _backward(model: ScoringModel, cache: dict, dscores: np.ndarray) -> list:
    """Gradient of sum(dscores * scores) w.r.t. every parameter."""
    arch = model.arch
    p = model.params
    grads = [None] * len(p)
    idx = len(p) - 2
    dout = dscores[:, None]
    grads[idx] = cache["out_in"].T @ dout
    grads[idx + 1] = dout.sum(axis=0)
    dfeats = dout @ p[idx].T
    relu_pre = cache["relu_pre"]
    r = len(relu_pre) - 1
    if arch.head_hidden > 0:
        dzh = dfeats * (relu_pre[r] > 0)
        r -= 1
        idx -= 2
        grads[idx] = cache["head_in"].T @ dzh
        grads[idx + 1] = dzh.sum(axis=0)
        dfeats = dzh @ p[idx].T
    if arch.kind == MLP:
        da = dfeats
        for layer in range(len(arch.hidden) - 1, -1, -1):
            dz = da * (relu_pre[r] > 0)
            r -= 1
            idx -= 2
            grads[idx] = cache["dense_in"][layer].T @ dz
            grads[idx + 1] = dz.sum(axis=0)
            if layer > 0:
                da = dz @ p[idx].T
    else:
        grid_h, grid_w = cache["gap_grid"]
        da = np.repeat(
            np.repeat(dfeats[:, :, None, None], grid_h, axis=2), grid_w, axis=3
        ) / (grid_h * grid_w)
        for layer in range(len(arch.hidden) - 1, -1, -1):
            dz = da * (relu_pre[r] > 0)
            r -= 1
            idx -= 2
            dw, db, dx = _conv_backward(
                dz, cache["conv_cols"][layer], p[idx],
                cache["conv_in_shape"][layer], need_dx=layer > 0,
            )
            grads[idx] = dw
            grads[idx + 1] = db
            da = dx
    return grads


def forward(model: ScoringModel, frame: Frame) -> float:
    scores, _ = _forward(model, np.asarray(frame.payload)[None, ...])
    return float(scores[0])


def forward_batch(model: ScoringModel, data: np.ndarray) -> np.ndarray:
    scores, _ = _forward(model, np.asarray(data, dtype=np.float64))
    return scores


def score_frames(model: ScoringModel, fs: FrameSet) -> ScoreVector:
    return ScoreVector(forward_batch(model, fs.data), provenance="learner")


def conv_activations(model: ScoringModel, frame: Frame) -> np.ndarray:
    """Post-rectifier activations of the last conv layer, shape (C, h', w')."""
    if model.arch.kind == MLP:
        raise NetError("mlp backbones have no conv activations")
    _, cache = _forward(model, np.asarray(frame.payload)[None, ...], need_cache=True)
    return cache["last_conv_act"][0]


def loss(score: float, y: float) -> float:
    return abs(score - y)


def batch_loss(model: ScoringModel, data: np.ndarray, targets: np.ndarray) -> float:
    scores = forward_batch(model, data)
    return float(np.mean(np.abs(scores - targets)))


def activation_pattern(model: ScoringModel, data: np.ndarray, targets: np.ndarray):
    """Rectifier signs and loss-side signs; two inputs on the same smooth
    piece of the loss surface share identical patterns."""
    scores, cache = _forward(model, np.asarray(data, dtype=np.float64), need_cache=True)
    signs = [pre > 0 for pre in cache["relu_pre"]]
    signs.append(np.sign(scores - targets))
    return signs


def gradient_arrays(model: ScoringModel, data: np.ndarray, targets: np.ndarray) -> list:
    """Gradient of the mean absolute loss over the batch."""
    data = np.asarray(data, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    scores, cache = _forward(model, data, need_cache=True)
    dscores = np.sign(scores - targets) / targets.size
    return _backward(model, cache, dscores)


def gradient(model: ScoringModel, batch: list) -> list:
    """batch: list of (Frame, target) pairs."""
    if not batch:
        raise NetError("gradient needs a nonempty batch")
    data = np.stack([np.asarray(f.payload) for f, _ in batch])
    targets = np.array([y for _, y in batch], dtype=np.float64)
    return gradient_arrays(model, data, targets)


def sgd_step(model: ScoringModel, grads: list, lr: float) -> ScoringModel:
    """Plain SGD update in place; returns the model for chaining."""
    for p, g in zip(model.params, grads):
        p -= lr * g
    return model


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 128
    epochs: int = 50
    c1: float = 1.0
    c2: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise NetError("learning_rate, batch_size and epochs must be positive")
        # c1 == c2 is allowed purely as a degenerate diagnostic mode.
        if self.c1 < self.c2:
            raise NetError("ordinal targets need c1 >= c2")


def shift_positive(weights: np.ndarray) -> np.ndarray:
    """Scores used as sampling weights, shifted to be strictly positive."""
    w = np.asarray(weights, dtype=np.float64)
    return w - w.min() + 1e-6


def _fit(
    model: ScoringModel,
    x_anom: np.ndarray,
    x_norm: np.ndarray,
    cfg: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
    p_anom=None,
    on_epoch=None,
    on_batch=None,
) -> ScoringModel:
    """Shared mini-batch loop. Handles a missing side (feedback rounds may
    carry labels of only one class) by filling batches from the other.
    `on_batch(ia, ii)` exposes the sampled candidate indices (diagnostics)."""
    n_a, n_n = len(x_anom), len(x_norm)
    if n_a == 0 and n_n == 0:
        return model
    n_batches = math.ceil((n_a + n_n) / cfg.batch_size)
    half = cfg.batch_size // 2
    eval_x = np.concatenate([a for a in (x_anom, x_norm) if len(a)])
    eval_y = np.concatenate(
        [np.full(n_a, cfg.c1), np.full(n_n, cfg.c2)]
    )
    for epoch in range(epochs):
        for _ in range(n_batches):
            if n_a and n_n:
                ia = rng.choice(n_a, size=half, replace=True, p=p_anom)
                ii = rng.choice(n_n, size=cfg.batch_size - half, replace=True)
                xb = np.concatenate([x_anom[ia], x_norm[ii]])
                yb = np.concatenate(
                    [np.full(half, cfg.c1), np.full(cfg.batch_size - half, cfg.c2)]
                )
            elif n_a:
                ia = rng.choice(n_a, size=cfg.batch_size, replace=True, p=p_anom)
                ii = np.empty(0, dtype=np.int64)
                xb, yb = x_anom[ia], np.full(cfg.batch_size, cfg.c1)
            else:
                ia = np.empty(0, dtype=np.int64)
                ii = rng.choice(n_n, size=cfg.batch_size, replace=True)
                xb, yb = x_norm[ii], np.full(cfg.batch_size, cfg.c2)
            if on_batch is not None:
                on_batch(ia, ii)
            grads = gradient_arrays(model, xb, yb)
            sgd_step(model, grads, cfg.learning_rate)
        if on_epoch is not None:
            on_epoch(epoch, batch_loss(model, eval_x, eval_y))
    return model


def train(
    model: ScoringModel,
    fs: FrameSet,
    anomaly_ids,
    normal_ids,
    cfg: TrainConfig,
    seed: int,
    anomaly_weights=None,
    on_epoch=None,
    on_batch=None,
) -> ScoringModel:
    """Train a copy of `model` on the pseudo-labeled candidate sets.

    Every mini-batch is half anomaly candidates (sampled with replacement,
    probability proportional to `anomaly_weights` shifted strictly positive;
    uniform when None) and half normal candidates (uniform with
    replacement). Targets are cfg.c1 / cfg.c2. Deterministic per seed.
    """
    anomaly_ids = np.asarray(anomaly_ids, dtype=np.int64)
    normal_ids = np.asarray(normal_ids, dtype=np.int64)
    if anomaly_ids.size == 0 or normal_ids.size == 0:
        raise NetError("both candidate sets must be nonempty")
    if np.intersect1d(anomaly_ids, normal_ids).size:
        raise NetError("candidate sets must be disjoint")
    p_anom = None
    if anomaly_weights is not None:
        w = shift_positive(anomaly_weights)
        if w.size != anomaly_ids.size:
            raise NetError("one weight per anomaly candidate required")
        p_anom = w / w.sum()
    rng = np.random.default_rng(seed)
    return _fit(
        model.copy(),
        fs.data[anomaly_ids],
        fs.data[normal_ids],
        cfg,
        cfg.epochs,
        rng,
        p_anom=p_anom,
        on_epoch=on_epoch,
        on_batch=on_batch,
    )


# ---------------------------------------------------------------------------
# Checkpoints: versioned flat binary, float32 parameter blocks
# ---------------------------------------------------------------------------


def save_checkpoint(model: ScoringModel, path) -> None:
    arch = model.arch
    descriptor = json.dumps(
        {
            "kind": arch.kind,
            "input_shape": list(arch.input_shape),
            "hidden": list(arch.hidden),
            "head_hidden": arch.head_hidden,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(descriptor)))
        fh.write(descriptor)
        fh.write(struct.pack("<Q", model.seed & 0xFFFFFFFFFFFFFFFF))
        fh.write(struct.pack("<I", len(model.params)))
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path) -> ScoringModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
    off = 4
    try:
        (version,) = struct.unpack_from("<I", blob, off)
        off += 4
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (desc_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        desc = json.loads(blob[off : off + desc_len].decode("utf-8"))
        arch = Architecture(
            desc["kind"], tuple(desc["input_shape"]), tuple(desc["hidden"]), desc["head_hidden"]
        )
        off += desc_len
        (seed,) = struct.unpack_from("<Q", blob, off)
        off += 8
        (n_params,) = struct.unpack_from("<I", blob, off)
        off += 4
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint header ({exc})") from exc
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt architecture descriptor ({exc})") from exc
    shapes = _param_shapes(arch)
    if n_params != len(shapes):
        raise CheckpointError(f"{path}: expected {len(shapes)} parameter blocks, got {n_params}")
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        block = blob[off : off + 4 * count]
        if len(block) != 4 * count:
            raise CheckpointError(f"{path}: truncated parameter block")
        params.append(np.frombuffer(block, dtype="<f4").astype(np.float64).reshape(shape))
        off += 4 * count
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after parameter blocks")
    return ScoringModel(arch, params, seed=int(seed))
