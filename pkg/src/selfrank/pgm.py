"""Minimal binary (P5) PGM reader/writer for 8-bit grayscale frames."""

from __future__ import annotations

import numpy as np


class PgmError(ValueError):
    pass


def _read_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset of the byte right after the single
    whitespace character that terminates the last token.
    """
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise PgmError("truncated PGM header")
        tokens.append(data[start:i])
        if len(tokens) == count:
            if i >= n:
                raise PgmError("truncated PGM header")
            i += 1  # single whitespace after maxval, then raster starts
    return tokens, i


def read_pgm(path) -> np.ndarray:
    """Load an 8-bit binary PGM as a float array in [0, 1], shape (H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise PgmError(f"{path}: not a binary PGM (missing P5 magic)")
    try:
        (magic, w_tok, h_tok, maxval_tok), offset = _read_tokens(data, 4)
        width, height, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except (ValueError, PgmError) as exc:
        raise PgmError(f"{path}: ill-formed PGM header ({exc})") from exc
    if maxval != 255:
        raise PgmError(f"{path}: only 8-bit PGM supported, got maxval {maxval}")
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise PgmError(f"{path}: raster truncated ({len(raster)} of {width * height} bytes)")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / 255.0


def pgm_bytes(image: np.ndarray) -> bytes:
    """Encode a float image in [0, 1] as binary PGM bytes."""
    if image.ndim != 2:
        raise PgmError(f"expected a 2-D image, got shape {image.shape}")
    quantized = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    return header + quantized.astype(np.uint8).tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(image))
