"""Per-region occlusion attributes over a hierarchy (Occ and CaOC metrics)."""

from __future__ import annotations

import dataclasses

import numpy as np

from .hierarchy import Hierarchy, node_mask
from .image import FillPolicy, Image, Mask, apply_mask
from .oracle import OracleError

__all__ = [
    "RankingContext",
    "AttributeVector",
    "occ_impact",
    "caoc_movement",
    "ranking_position",
    "build_ranking_context",
    "score_hierarchy",
]


@dataclasses.dataclass(frozen=True)
class RankingContext:
    """Reference logits for one class over a fixed image set, used by CaOC.

    ``reference_logits`` is stored sorted descending.  An image's position in
    the ranking is 1 + the number of strictly greater reference logits, so at
    ties the ranked image goes first.
    """

    class_index: int
    reference_logits: np.ndarray
    source: str = ""

    def __post_init__(self):
        refs = np.sort(np.asarray(self.reference_logits, dtype=np.float64))[::-1]
        if refs.size == 0:
            raise ValueError("ranking context needs at least one reference logit")
        if not np.all(np.isfinite(refs)):
            raise ValueError("reference logits must be finite")
        refs = np.ascontiguousarray(refs)
        refs.flags.writeable = False
        object.__setattr__(self, "reference_logits", refs)

    def __len__(self) -> int:
        return len(self.reference_logits)


@dataclasses.dataclass(frozen=True)
class AttributeVector:
    """One float per hierarchy node; 0 for nodes below the min-area cutoff."""

    values: np.ndarray
    metric: str
    class_index: int
    min_area: int

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("attributes must be finite and non-negative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


def build_ranking_context(oracle, images, class_index: int, source: str = "") -> RankingContext:
    """Query the oracle once per reference image and freeze the class ranking."""
    logits = oracle.logits(images)
    return RankingContext(class_index, logits[:, class_index], source=source)


def ranking_position(ctx: RankingContext, logit: float) -> int:
    """1-based rank of ``logit`` among the references (ties rank first)."""
    return 1 + int(np.sum(ctx.reference_logits > logit))


def occ_impact(oracle, img: Image, mask: Mask, class_index: int, fill: FillPolicy) -> float:
    """Absolute change of the class logit when the masked region is filled."""
    if mask.popcount() == 0:
        raise ValueError("occlusion mask is empty")
    _check_class(oracle, class_index)
    out = oracle.logits([img, apply_mask(img, mask, fill)])
    return float(abs(out[0, class_index] - out[1, class_index]))


def caoc_movement(ctx: RankingContext, oracle, img: Image, mask: Mask,
                  class_index: int, fill: FillPolicy) -> float:
    """Rank movement of the image in the class ranking caused by the occlusion."""
    if class_index != ctx.class_index:
        raise ValueError(f"context was built for class {ctx.class_index}, not {class_index}")
    if mask.popcount() == 0:
        raise ValueError("occlusion mask is empty")
    out = oracle.logits([img, apply_mask(img, mask, fill)])
    before = ranking_position(ctx, float(out[0, class_index]))
    after = ranking_position(ctx, float(out[1, class_index]))
    return float(abs(before - after))


def _check_class(oracle, class_index: int) -> None:
    n = oracle.hello().n_classes
    if not (0 <= class_index < n):
        raise ValueError(f"class index {class_index} out of range (oracle has {n})")


def score_hierarchy(oracle, img: Image, h: Hierarchy, metric: str,
                    class_index: int, min_area: int, fill: FillPolicy,
                    ctx: RankingContext | None = None,
                    batch_size: int = 32) -> AttributeVector:
    """Occlusion attribute for every analyzable hierarchy node.

    Nodes with area >= min_area (and not flagged sub-minimal) are occluded
    and measured with the chosen metric; all other nodes get attribute 0.
    Oracle queries are batched; the result does not depend on batch_size.
    """
    if metric not in ("occ", "caoc"):
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "caoc":
        if ctx is None:
            raise ValueError("caoc scoring needs a RankingContext")
        if ctx.class_index != class_index:
            raise ValueError("ranking context class does not match")
    if (h.height, h.width) != (img.height, img.width):
        raise ValueError("hierarchy was built for different image dimensions")
    _check_class(oracle, class_index)

    analyzable = [n for n in range(h.n_nodes)
                  if h.area[n] >= min_area and not h.sub_minimal[n]]
    # coarse regions first: nicer progress and identical results either way
    analyzable.sort(key=lambda n: (-int(h.area[n]), n))

    base = oracle.logits([img])[0]
    base_logit = float(base[class_index])
    base_pos = ranking_position(ctx, base_logit) if metric == "caoc" else 0

    values = np.zeros(h.n_nodes, dtype=np.float64)
    for start in range(0, len(analyzable), max(1, batch_size)):
        chunk = analyzable[start:start + max(1, batch_size)]
        occluded = [apply_mask(img, node_mask(h, n), fill) for n in chunk]
        try:
            out = oracle.logits(occluded)
        except OracleError as exc:
            done = start
            raise OracleError(
                f"scoring aborted after {done}/{len(analyzable)} nodes: {exc}") from exc
        for j, n in enumerate(chunk):
            logit = float(out[j, class_index])
            if metric == "occ":
                values[n] = abs(base_logit - logit)
            else:
                values[n] = abs(base_pos - ranking_position(ctx, logit))
    return AttributeVector(values, metric=metric, class_index=class_index,
                           min_area=min_area)
