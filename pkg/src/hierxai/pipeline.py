"""End-to-end composition: guidance -> hierarchy -> scoring -> shaping -> map."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import __version__
from .config import PipelineConfig
from .graph import GuidanceMap, sobel_edge_map, weight_from_guidance
from .hierarchy import Hierarchy, build_bpt, build_watershed, filter_min_area
from .image import Image, load_image, load_npy, save_npy
from .oracle import CachedOracle, WireOracle
from .scoring import RankingContext, build_ranking_context, score_hierarchy
from .shaping import ScoreMap, aggregate_scores, build_shape_tree, persistence

__all__ = ["open_oracle", "make_guidance", "make_hierarchy", "explain_image",
            "attribute_image", "ranking_context_for", "write_meta"]


def open_oracle(config: PipelineConfig):
    return CachedOracle(WireOracle(config.oracle_command))


def make_guidance(config: PipelineConfig, img: Image) -> GuidanceMap:
    if config.guidance == "sobel":
        return sobel_edge_map(img)
    arr = load_npy(config.guidance).astype(np.float32)
    if arr.shape != (img.height, img.width):
        raise ValueError(
            f"guidance shape {arr.shape} does not match image "
            f"{(img.height, img.width)}")
    return GuidanceMap(arr, kind=config.guidance_kind)


def make_hierarchy(config: PipelineConfig, img: Image, guidance: GuidanceMap) -> Hierarchy:
    g = weight_from_guidance(img.height, img.width, guidance,
                             combine=config.edge_combine)
    if config.hierarchy == "bpt":
        h = build_bpt(g)
    else:
        attr = "area" if config.hierarchy == "watershed-area" else "volume"
        h = build_watershed(g, attr)
    if config.min_area > 1:
        h = filter_min_area(h, min(config.min_area, h.n_leaves))
    return h


def ranking_context_for(config: PipelineConfig, oracle, class_index: int) -> RankingContext:
    """CaOC reference ranking; logits are cached on disk per oracle/class/set."""
    from .evaluation import DatasetManifest

    manifest = DatasetManifest.load(config.caoc_references)
    info = oracle.hello()
    cache_dir = config.resolved_cache_dir()
    key = hashlib.sha256(json.dumps(
        [info.name, class_index, sorted(e.image_path for e in manifest.entries)],
        sort_keys=True).encode()).hexdigest()[:24]
    cache_file = cache_dir / f"caoc-{key}.npy" if cache_dir else None
    if cache_file is not None and cache_file.exists():
        refs = load_npy(cache_file)
        return RankingContext(class_index, refs, source=config.caoc_references)
    images = manifest.load_images(target=info.input_shape[1:])
    ctx = build_ranking_context(oracle, images, class_index,
                                source=config.caoc_references)
    if cache_file is not None:
        save_npy(cache_file, ctx.reference_logits)
    return ctx


def attribute_image(config: PipelineConfig, oracle, img: Image,
                    class_index: int | None = None):
    """Steps 1-2: hierarchy plus per-node occlusion attributes.

    Returns (hierarchy, attributes, class_index); the class defaults to the
    oracle's prediction for the unmasked image.
    """
    if class_index is None:
        class_index = int(np.argmax(oracle.logits([img])[0]))
    guidance = make_guidance(config, img)
    h = make_hierarchy(config, img, guidance)
    ctx = None
    if config.metric == "caoc":
        ctx = ranking_context_for(config, oracle, class_index)
    attrs = score_hierarchy(oracle, img, h, config.metric, class_index,
                            config.min_area, config.fill, ctx=ctx,
                            batch_size=config.batch_size)
    return h, attrs, class_index


def explain_image(config: PipelineConfig, oracle, img: Image,
                  class_index: int | None = None):
    """Full pipeline; returns (hierarchy, attributes, score_map, class_index)."""
    h, attrs, class_index = attribute_image(config, oracle, img, class_index)
    tree = build_shape_tree(h, attrs)
    pers = persistence(tree)
    smap = aggregate_scores(h, pers)
    smap = ScoreMap(smap.scores, hierarchy_kind=h.kind, metric=config.metric,
                    min_area=config.min_area)
    return h, attrs, smap, class_index


def load_input_image(config: PipelineConfig, oracle, path) -> Image:
    """Load and resize an image to the oracle's input, applying any
    configured normalization."""
    info = oracle.hello()
    norm = None
    if config.norm_mean is not None and config.norm_std is not None:
        norm = (config.norm_mean, config.norm_std)
    img = load_image(path, target=info.input_shape[1:], norm=norm)
    if img.channels != info.input_shape[0]:
        if img.channels == 1 and info.input_shape[0] == 3:
            img = Image(np.repeat(img.data, 3, axis=0), norm=img.norm)
        else:
            raise ValueError(
                f"image has {img.channels} channels, oracle expects "
                f"{info.input_shape[0]}")
    return img


def write_meta(path, config: PipelineConfig, extra: dict | None = None) -> None:
    """Deterministic run metadata: config hash, versions, method name."""
    meta = {
        "config_hash": config.config_hash(),
        "method": config.method_name(),
        "versions": {"hierxai": __version__, "numpy": np.__version__},
    }
    meta.update(extra or {})
    with open(path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
