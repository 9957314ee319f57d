"""Image container, masking/fill and the blur baseline used by the curves.

Images are float32, channel-major (C, H, W), values in [0, 1] unless a
normalization has been applied (recorded in ``Image.norm``).  Instances are
immutable after construction; all operations return new objects.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

__all__ = [
    "Image",
    "Mask",
    "FillPolicy",
    "load_image",
    "apply_mask",
    "blur_baseline",
    "resize_bilinear",
    "save_npy",
    "load_npy",
]


@dataclasses.dataclass(frozen=True)
class Image:
    """An H x W x C float raster stored channel-major.

    ``norm`` records a per-channel (mean, std) normalization that has
    already been applied to ``data``; None means raw [0, 1] values.
    """

    data: np.ndarray  # float32, shape (C, H, W)
    norm: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"image data must be (C, H, W), got shape {data.shape}")
        c, h, w = data.shape
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
        if h < 2 or w < 2:
            raise ValueError(f"image must be at least 2x2, got {h}x{w}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if self.norm is not None:
            mean = np.asarray(self.norm[0], dtype=np.float32).reshape(-1)
            std = np.asarray(self.norm[1], dtype=np.float32).reshape(-1)
            if mean.shape[0] != c or std.shape[0] != c:
                raise ValueError("normalization length must match channel count")
            object.__setattr__(self, "norm", (mean, std))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def normalized(self, mean, std) -> "Image":
        """Return a copy with per-channel normalization applied and recorded."""
        if self.norm is not None:
            raise ValueError("image already normalized")
        mean = np.asarray(mean, dtype=np.float32).reshape(-1, 1, 1)
        std = np.asarray(std, dtype=np.float32).reshape(-1, 1, 1)
        return Image((self.data - mean) / std, norm=(mean.reshape(-1), std.reshape(-1)))


@dataclasses.dataclass(frozen=True)
class Mask:
    """Boolean per-pixel mask; True marks the pixels an operation acts on."""

    bits: np.ndarray  # bool, shape (H, W)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {bits.shape}")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def popcount(self) -> int:
        return int(self.bits.sum())

    def union(self, other: "Mask") -> "Mask":
        return Mask(self.bits | other.bits)

    def complement(self) -> "Mask":
        return Mask(~self.bits)


@dataclasses.dataclass(frozen=True)
class FillPolicy:
    """How occluded pixels are replaced.

    kind "zero_norm" fills with 0 in the image's current space, which equals
    the dataset mean before normalization when a normalization was applied.
    kind "constant" fills every channel with ``value``; kind "mean" fills each
    channel with the corresponding entry of ``channel_means``.
    """

    kind: str = "zero_norm"
    value: float = 0.0
    channel_means: tuple[float, ...] | None = None

    def fill_values(self, img: Image) -> np.ndarray:
        if self.kind == "zero_norm":
            return np.zeros(img.channels, dtype=np.float32)
        if self.kind == "constant":
            return np.full(img.channels, self.value, dtype=np.float32)
        if self.kind == "mean":
            if self.channel_means is None or len(self.channel_means) != img.channels:
                raise ValueError("mean fill requires one mean per channel")
            return np.asarray(self.channel_means, dtype=np.float32)
        raise ValueError(f"unknown fill policy kind {self.kind!r}")


def load_image(path, target: tuple[int, int] | None = None,
               norm: tuple | None = None) -> Image:
    """Load a PNG (8-bit gray/RGB) or NPY (float32) image.

    PNG values are mapped to [0, 1].  NPY files hold float32 arrays of shape
    (C, H, W) or (H, W).  When ``target`` = (H, W) is given the image is
    bilinearly resized (half-pixel-center convention).  ``norm`` = (mean, std)
    applies and records a per-channel normalization after loading.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    if path.suffix.lower() == ".npy":
        arr = load_npy(path)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise ValueError(f"NPY image must be (C, H, W) or (H, W), got {arr.shape}")
        data = np.ascontiguousarray(arr, dtype=np.float32)
    else:
        from PIL import Image as PILImage

        with PILImage.open(path) as pil:
            if pil.mode not in ("L", "RGB"):
                if pil.mode in ("RGBA", "P", "LA", "I;16", "I"):
                    pil = pil.convert("RGB" if pil.mode in ("RGBA", "P") else "L")
                else:
                    raise ValueError(f"unsupported PNG mode {pil.mode!r}")
            raw = np.asarray(pil)
        if raw.size == 0:
            raise ValueError(f"zero-sized image: {path}")
        if raw.dtype != np.uint8:
            raise ValueError(f"unsupported bit depth {raw.dtype} (8-bit only)")
        if raw.ndim == 2:
            raw = raw[:, :, None]
        data = np.ascontiguousarray(raw.transpose(2, 0, 1), dtype=np.float32) / 255.0
    if target is not None:
        data = resize_bilinear(data, int(target[0]), int(target[1]))
    img = Image(data)
    if norm is not None:
        img = img.normalized(norm[0], norm[1])
    return img


def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (C, H, W) array with half-pixel-center sampling.

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped
    to the valid range, so a same-size resize is exactly the identity.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be positive")
    c, in_h, in_w = data.shape
    if (in_h, in_w) == (out_h, out_w):
        return np.ascontiguousarray(data, dtype=np.float32)

    def axis_coords(n_out, n_in):
        coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        coords = np.clip(coords, 0.0, n_in - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = coords - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)
    d = data.astype(np.float64)
    top = d[:, y0][:, :, x0] * (1 - fx) + d[:, y0][:, :, x1] * fx
    bot = d[:, y1][:, :, x0] * (1 - fx) + d[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[None, :, None] + bot * fy[None, :, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def resize_area(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter downsample of a (C, H, W) array.

    Output pixel (i, j) averages the source rectangle it covers, with
    fractional coverage at the seams, so the per-channel mean is preserved
    exactly.  Intended for shrinking; sizes may not grow.
    """
    c, in_h, in_w = data.shape
    if out_h > in_h or out_w > in_w:
        raise ValueError("area resampling only shrinks")
    if (in_h, in_w) == (out_h, out_w):
        return np.ascontiguousarray(data, dtype=np.float32)

    def axis_weights(n_out, n_in):
        # rows: output index; cols: fractional coverage of each input cell
        weights = np.zeros((n_out, n_in), dtype=np.float64)
        scale = n_in / n_out
        for i in range(n_out):
            lo, hi = i * scale, (i + 1) * scale
            first, last = int(np.floor(lo)), int(np.ceil(hi)) - 1
            for j in range(first, min(last + 1, n_in)):
                weights[i, j] = min(hi, j + 1) - max(lo, j)
        return weights / scale

    wy = axis_weights(out_h, in_h)
    wx = axis_weights(out_w, in_w)
    out = np.einsum("oi,cij,pj->cop", wy, data.astype(np.float64), wx)
    return np.ascontiguousarray(out, dtype=np.float32)


def apply_mask(img: Image, mask: Mask, fill: FillPolicy) -> Image:
    """Replace the pixels where ``mask`` is True according to ``fill``."""
    if (mask.height, mask.width) != (img.height, img.width):
        raise ValueError(
            f"mask {mask.height}x{mask.width} does not match image "
            f"{img.height}x{img.width}")
    values = fill.fill_values(img)
    data = img.data.copy()
    for ch in range(img.channels):
        plane = data[ch]
        plane[mask.bits] = values[ch]
    return Image(data, norm=img.norm)


def blur_baseline(img: Image, keep_fraction: float) -> Image:
    """Strong-blur stand-in: downsample to ~keep_fraction of the pixels, then
    bilinearly upsample back to the original size.

    The linear scale factor is sqrt(keep_fraction), so the intermediate image
    holds approximately keep_fraction * H * W pixels.  The downsample is a
    box filter (area average), which keeps per-channel energy stable.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    if keep_fraction == 1.0:
        return img
    scale = math.sqrt(keep_fraction)
    small_h = max(1, int(round(img.height * scale)))
    small_w = max(1, int(round(img.width * scale)))
    small = resize_area(img.data, small_h, small_w)
    return Image(resize_bilinear(small, img.height, img.width), norm=img.norm)


def save_npy(path, arr: np.ndarray) -> None:
    """Write an array as NPY v1.0, C-order, little-endian.

    float arrays are stored as float32, boolean masks as uint8 0/1.
    """
    arr = np.asarray(arr)
    if arr.dtype == bool:
        out = np.ascontiguousarray(arr, dtype=np.uint8)
    elif np.issubdtype(arr.dtype, np.floating):
        out = np.ascontiguousarray(arr, dtype=np.float32)
    else:
        out = np.ascontiguousarray(arr)
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, out, version=(1, 0))


def load_npy(path) -> np.ndarray:
    arr = np.load(path, allow_pickle=False)
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise ValueError(f"array in {path} contains non-finite values")
    return arr
