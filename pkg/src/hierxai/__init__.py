"""Hierarchical-segmentation explanations for black-box image classifiers.

The pipeline: build a segmentation hierarchy over a pixel graph weighted by
an edge or attribution guidance map, score every sufficiently large region
by its occlusion impact on the classifier, extract multiscale importance by
max-tree persistence over the node-weighted hierarchy, and aggregate the
persistences root-to-leaf into a per-pixel score map.  The evaluation
harness measures any score map (ours or imported) with exclusion/inclusion
statistics, pixel impact rate, softmax/accuracy information curves and
McNemar paired tests.
"""

__version__ = "0.1.0"

from .image import FillPolicy, Image, Mask, apply_mask, blur_baseline, load_image
from .graph import GuidanceMap, WeightedPixelGraph, sobel_edge_map, weight_from_guidance
from .hierarchy import Hierarchy, build_bpt, build_watershed, filter_min_area, node_mask
from .oracle import CachedOracle, ConstantOracle, LinearOracle, OracleInfo, PlantedPatchOracle, WireOracle, make_toy_oracle
from .scoring import AttributeVector, RankingContext, caoc_movement, occ_impact, score_hierarchy
from .shaping import ScoreMap, ShapeTree, aggregate_scores, build_shape_tree, persistence
from .render import ThresholdSpec, render_overlay, threshold_map
from .evaluation import auc, exclusion_eval, inclusion_eval, mcnemar, pir, sic_aic_curves, sliding_occlusion_map

__all__ = [
    "FillPolicy", "Image", "Mask", "apply_mask", "blur_baseline", "load_image",
    "GuidanceMap", "WeightedPixelGraph", "sobel_edge_map", "weight_from_guidance",
    "Hierarchy", "build_bpt", "build_watershed", "filter_min_area", "node_mask",
    "CachedOracle", "ConstantOracle", "LinearOracle", "OracleInfo",
    "PlantedPatchOracle", "WireOracle", "make_toy_oracle",
    "AttributeVector", "RankingContext", "caoc_movement", "occ_impact", "score_hierarchy",
    "ScoreMap", "ShapeTree", "aggregate_scores", "build_shape_tree", "persistence",
    "ThresholdSpec", "render_overlay", "threshold_map",
    "auc", "exclusion_eval", "inclusion_eval", "mcnemar", "pir",
    "sic_aic_curves", "sliding_occlusion_map",
]
