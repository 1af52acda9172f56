"""Activation-map localization over conv backbones.

For the conv-gap-linear scorer the score is exactly linear in the pooled
activations, so the weighted activation map M(i,j) = sum_k w_k * p_k(i,j)
decomposes the score spatially: mean(M) + bias == score(x). The map is
defined per cell so its MEAN, not raw sum, recovers the score (the pooling
constant is absorbed into the identity). Upsampling to frame size uses
align-corners bilinear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Frame
from .nets import CONV_GAP_LINEAR, ScoringModel, conv_activations
from .pgm import pgm_bytes


class SaliencyError(ValueError):
    pass


@dataclass(frozen=True)
class ActivationMap:
    grid: np.ndarray  # (h', w'), last conv layer's spatial shape
    frame_id: int
    model: ScoringModel


@dataclass(frozen=True)
class SaliencyMap:
    grid: np.ndarray        # (H, W) raw upsampled values
    normalized: np.ndarray  # (H, W) min-max normalized display copy in [0, 1]


def cam(model: ScoringModel, frame: Frame) -> ActivationMap:
    """Map of per-cell score contributions; requires the linear-head conv arch."""
    if model.arch.kind != CONV_GAP_LINEAR:
        raise SaliencyError(
            f"activation maps need the {CONV_GAP_LINEAR} architecture, got {model.arch.kind}"
        )
    acts = conv_activations(model, frame)       # (C, h', w')
    w = model.params[-2][:, 0]                  # (C,) head weights
    grid = np.einsum("k,kij->ij", w, acts)
    return ActivationMap(grid=grid, frame_id=frame.id, model=model)


def cam_bias(model: ScoringModel) -> float:
    return float(model.params[-1][0])


def cell_center(model: ScoringModel, i: int, j: int) -> tuple[int, int]:
    """Frame coordinates of grid cell (i, j)'s receptive-field center.

    Each 3x3 stride-2 layer contributes offset 1*jump and doubles the jump,
    so after L layers a cell maps to offset + jump*index per axis. Use this
    to decode an activation-map argmax to a frame position; align-corners
    upsampling stretches border cells and can shift peaks by several pixels.
    """
    if model.arch.kind == CONV_GAP_LINEAR or model.arch.kind == "conv-gap":
        offset, jump = 0, 1
        for _ in model.arch.hidden:
            offset += jump
            jump *= 2
        return offset + jump * i, offset + jump * j
    raise SaliencyError("cell_center needs a conv backbone")


def upsample(amap: ActivationMap, h: int, w: int) -> SaliencyMap:
    """Bilinear align-corners upsampling to (h, w); never downsizes."""
    grid = amap.grid
    gh, gw = grid.shape
    if h < gh or w < gw:
        raise SaliencyError(f"cannot downsize {grid.shape} map to ({h}, {w})")
    rows = np.linspace(0.0, gh - 1.0, h) if h > 1 else np.zeros(1)
    cols = np.linspace(0.0, gw - 1.0, w) if w > 1 else np.zeros(1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, gh - 1)
    c1 = np.minimum(c0 + 1, gw - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    out = (
        grid[np.ix_(r0, c0)] * (1 - fr) * (1 - fc)
        + grid[np.ix_(r0, c1)] * (1 - fr) * fc
        + grid[np.ix_(r1, c0)] * fr * (1 - fc)
        + grid[np.ix_(r1, c1)] * fr * fc
    )
    lo, hi = out.min(), out.max()
    normalized = np.full_like(out, 0.5) if hi == lo else (out - lo) / (hi - lo)
    return SaliencyMap(grid=out, normalized=normalized)


def saliency_pgm_bytes(smap: SaliencyMap) -> bytes:
    return pgm_bytes(smap.normalized)


def save_saliency(smap: SaliencyMap, pgm_path, csv_path=None) -> None:
    """8-bit PGM of the normalized map plus an optional raw-grid CSV."""
    with open(pgm_path, "wb") as fh:
        fh.write(saliency_pgm_bytes(smap))
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            for row in smap.grid:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
