"""4-adjacency pixel graph with guidance-derived edge dissimilarities.

Edge order is deterministic: for each pixel in row-major order, first the
edge to its right neighbour, then the edge to the neighbour below.  Every
edge is stored as (u, v, w) with u < v.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .image import Image

__all__ = ["GuidanceMap", "WeightedPixelGraph", "sobel_edge_map", "weight_from_guidance"]

# ITU-R 601 luma coefficients for RGB -> gray
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclasses.dataclass(frozen=True)
class GuidanceMap:
    """Per-pixel field steering the segmentation.

    kind "edge" holds non-negative edge strengths used as-is; kind
    "attribution" holds raw signed attribution values whose absolute value
    is taken at edge-weighting time.
    """

    values: np.ndarray  # float32, shape (H, W)
    kind: str = "edge"

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"guidance map must be 2-d, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("guidance map contains non-finite values")
        if self.kind not in ("edge", "attribution"):
            raise ValueError(f"unknown guidance kind {self.kind!r}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclasses.dataclass(frozen=True)
class WeightedPixelGraph:
    """4-adjacency grid graph over H*W pixels with per-edge weights.

    ``edges_u``/``edges_v`` hold the canonical endpoint indices (u < v,
    row-major pixel numbering) and ``weights`` the non-negative
    dissimilarities, all in the fixed right-then-down edge order.
    """

    height: int
    width: int
    edges_u: np.ndarray
    edges_v: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        h, w = self.height, self.width
        if h < 1 or w < 1 or h * w < 2:
            raise ValueError("grid needs at least one edge")
        n_edges = h * (w - 1) + (h - 1) * w
        u = np.ascontiguousarray(self.edges_u, dtype=np.int64)
        v = np.ascontiguousarray(self.edges_v, dtype=np.int64)
        wts = np.ascontiguousarray(self.weights, dtype=np.float64)
        if not (len(u) == len(v) == len(wts) == n_edges):
            raise ValueError(f"expected {n_edges} edges, got {len(wts)}")
        if not np.all(u < v):
            raise ValueError("edges must be canonically oriented (u < v)")
        if not np.all(np.isfinite(wts)) or np.any(wts < 0):
            raise ValueError("edge weights must be finite and non-negative")
        for name, arr in (("edges_u", u), ("edges_v", v), ("weights", wts)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return self.height * self.width

    @property
    def n_edges(self) -> int:
        return len(self.weights)


def grid_edges(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical 4-adjacency edge endpoints (right edge then down edge per pixel)."""
    us, vs = [], []
    for y in range(height):
        for x in range(width):
            p = y * width + x
            if x + 1 < width:
                us.append(p)
                vs.append(p + 1)
            if y + 1 < height:
                us.append(p)
                vs.append(p + width)
    return np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64)


def sobel_edge_map(img: Image) -> GuidanceMap:
    """Gradient magnitude of the luminance via a 3x3 Sobel pair, scaled to [0, 1].

    Fallback guidance when no precomputed edge map is available.  Borders are
    handled by edge replication.
    """
    if img.channels == 3:
        gray = np.tensordot(_LUMA, img.data, axes=(0, 0))
    else:
        gray = img.data[0].astype(np.float32)
    padded = np.pad(gray, 1, mode="edge").astype(np.float64)

    def shifted(dy, dx):
        return padded[1 + dy:1 + dy + gray.shape[0], 1 + dx:1 + dx + gray.shape[1]]

    gx = (shifted(-1, 1) + 2 * shifted(0, 1) + shifted(1, 1)
          - shifted(-1, -1) - 2 * shifted(0, -1) - shifted(1, -1))
    gy = (shifted(1, -1) + 2 * shifted(1, 0) + shifted(1, 1)
          - shifted(-1, -1) - 2 * shifted(-1, 0) - shifted(-1, 1))
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return GuidanceMap(mag.astype(np.float32), kind="edge")


def weight_from_guidance(height: int, width: int, guidance: GuidanceMap,
                         combine: str = "mean") -> WeightedPixelGraph:
    """Build the pixel graph with edge weight = combined endpoint guidance.

    Endpoint values are passed through f (identity for edge maps, absolute
    value for attributions) and averaged:  w(u, v) = (f(g[u]) + f(g[v])) / 2.
    combine="max" takes the max of the two endpoint values instead.
    """
    if (guidance.height, guidance.width) != (height, width):
        raise ValueError(
            f"guidance {guidance.height}x{guidance.width} does not match "
            f"grid {height}x{width}")
    values = guidance.values.astype(np.float64).ravel()
    if guidance.kind == "attribution":
        values = np.abs(values)
    us, vs = grid_edges(height, width)
    if combine == "mean":
        weights = (values[us] + values[vs]) / 2.0
    elif combine == "max":
        weights = np.maximum(values[us], values[vs])
    else:
        raise ValueError(f"unknown combine rule {combine!r}")
    return WeightedPixelGraph(height, width, us, vs, weights)
