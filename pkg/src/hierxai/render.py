"""Visualization: threshold selection and brightness-banded overlays.

PNG output goes through a tiny built-in encoder (fixed zlib settings, no
ancillary chunks) so identical inputs always produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import math
import struct
import zlib

import numpy as np

from .image import Image, Mask
from .shaping import ScoreMap

__all__ = ["ThresholdSpec", "threshold_map", "render_overlay", "write_png"]


@dataclasses.dataclass(frozen=True)
class ThresholdSpec:
    """Selection rule for "the top X% most important" pixels.

    mode "score_rank": the top_percent highest-scoring positive pixels.
    mode "score_range": pixels with score >= (1 - top_percent/100) * max.
    """

    top_percent: float
    mode: str = "score_rank"

    def __post_init__(self):
        if not (0.0 < self.top_percent <= 100.0):
            raise ValueError(f"top_percent must be in (0, 100], got {self.top_percent}")
        if self.mode not in ("score_rank", "score_range"):
            raise ValueError(f"unknown threshold mode {self.mode!r}")


def threshold_map(s: ScoreMap, t: ThresholdSpec) -> Mask:
    """Mask of the most important pixels; empty when no score is positive.

    Rank mode counts k = ceil(top_percent% of the positive-score pixels) and
    keeps the k best, breaking score ties by pixel index (stable).
    """
    flat = s.scores.ravel().astype(np.float64)
    positive = flat > 0
    n_positive = int(positive.sum())
    bits = np.zeros(flat.shape, dtype=bool)
    if n_positive == 0:
        return Mask(bits.reshape(s.scores.shape))
    if t.mode == "score_range":
        cutoff = (1.0 - t.top_percent / 100.0) * flat.max()
        bits = flat >= cutoff if cutoff > 0 else positive.copy()
    else:
        k = min(n_positive, math.ceil(t.top_percent / 100.0 * n_positive))
        # stable order: score descending, then pixel index ascending
        order = np.lexsort((np.arange(len(flat)), -flat))
        bits[order[:k]] = True
    return Mask(bits.reshape(s.scores.shape))


def render_overlay(img: Image, s: ScoreMap, levels: int = 5) -> bytes:
    """PNG overlay: scored pixels brightened in quantized bands, the rest dimmed.

    Positive scores are quantized into ``levels`` brightness bands (higher
    score, brighter); zero-score pixels keep a dimmed version of the image.
    Returns the encoded PNG bytes (deterministic for fixed inputs).
    """
    if (s.height, s.width) != (img.height, img.width):
        raise ValueError("score map does not match image dimensions")
    if levels < 1:
        raise ValueError("levels must be at least 1")
    base = img.data
    if img.norm is not None:
        mean, std = img.norm
        base = base * std.reshape(-1, 1, 1) + mean.reshape(-1, 1, 1)
    base = np.clip(base, 0.0, 1.0)
    if base.shape[0] == 1:
        base = np.repeat(base, 3, axis=0)

    scores = s.scores.astype(np.float64)
    top = scores.max()
    if top > 0:
        band = np.ceil(scores / top * levels)  # 0 for zero scores, else 1..levels
    else:
        band = np.zeros_like(scores)
    # brightness factor: dimmed 0.25 at band 0, up to 1.0 at the top band
    factor = 0.25 + 0.75 * (band / levels)
    out = np.clip(base * factor[None, :, :], 0.0, 1.0)
    rgb = np.round(out * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return write_png(rgb)


def write_png(pixels: np.ndarray) -> bytes:
    """Minimal PNG encoder for 8-bit gray (H, W) or RGB (H, W, 3) arrays."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        color_type, planes = 0, 1
        rows = pixels[:, :, None]
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        color_type, planes = 2, 3
        rows = pixels
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) uint8, got {pixels.shape}")
    height, width = rows.shape[:2]

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload)))

    header = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    raw = bytearray()
    for y in range(height):
        raw.append(0)  # filter type: none
        raw.extend(rows[y].tobytes())
    body = zlib.compress(bytes(raw), 9)
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", header)
            + chunk(b"IDAT", body)
            + chunk(b"IEND", b""))
