"""Command-line surface: explain, score, eval, curves, render, check.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Failures emit one machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .evaluation import (DatasetManifest, exclusion_eval, inclusion_eval,
                         paired_mcnemar, pir, sic_aic_curves)
from .hierarchy import save_hierarchy
from .image import apply_mask, load_image, load_npy, save_npy
from .oracle import OracleError
from .pipeline import (attribute_image, explain_image, load_input_image,
                       open_oracle, write_meta)
from .render import ThresholdSpec, render_overlay, threshold_map
from .shaping import ScoreMap

__all__ = ["main"]


def _fail(stage: str, message: str, code: int) -> int:
    print(json.dumps({"error": message, "stage": stage}), file=sys.stderr)
    return code


def _config_from_args(args) -> "PipelineConfig":
    overrides = {}
    for key in ("hierarchy", "metric", "guidance", "min_area", "top_percent", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def cmd_check(args) -> int:
    config = _config_from_args(args)
    oracle = open_oracle(config)
    try:
        info = oracle.hello()
        print(json.dumps({"ok": True, "classes": info.n_classes,
                          "input": list(info.input_shape), "name": info.name}))
        return 0
    finally:
        oracle.close()


def cmd_explain(args) -> int:
    config = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle = open_oracle(config)
    try:
        img = load_input_image(config, oracle, args.image)
        h, attrs, smap, class_index = explain_image(
            config, oracle, img, class_index=args.class_index)
    finally:
        oracle.close()
    save_npy(out_dir / "scoremap.npy", smap.scores)
    (out_dir / "overlay.png").write_bytes(
        render_overlay(img, smap, levels=config.overlay_levels))
    write_meta(out_dir / "meta.json", config, {
        "image": str(args.image),
        "class_index": class_index,
        "hierarchy_nodes": h.n_nodes,
        "scored_nodes": int(np.count_nonzero(attrs.values)),
    })
    return 0


def cmd_score(args) -> int:
    config = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle = open_oracle(config)
    try:
        img = load_input_image(config, oracle, args.image)
        h, attrs, class_index = attribute_image(
            config, oracle, img, class_index=args.class_index)
    finally:
        oracle.close()
    save_hierarchy(out_dir / "hierarchy.hxt", h)
    save_npy(out_dir / "attributes.npy", attrs.values)
    write_meta(out_dir / "meta.json", config, {
        "image": str(args.image),
        "class_index": class_index,
        "metric": attrs.metric,
        "min_area": attrs.min_area,
    })
    return 0


def _eval_inputs(config, oracle, manifest: DatasetManifest):
    return [load_input_image(config, oracle, e.image_path)
            for e in manifest.entries]


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    manifest = DatasetManifest.load(args.manifest)
    methods = args.methods.split(",") if args.methods else manifest.methods()
    if not methods:
        raise ConfigError("manifest lists no score maps to evaluate")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    oracle = open_oracle(config)
    try:
        images = _eval_inputs(config, oracle, manifest)
        reports, inclusion, pir_stats = {}, {}, {}
        for method in methods:
            maps = manifest.load_maps(method)
            reports[method] = exclusion_eval(
                oracle, images, maps, top_percent=config.top_percent,
                fill=config.fill, jobs=config.jobs)
            inclusion[method] = inclusion_eval(
                oracle, images, maps, top_percent=config.top_percent,
                fill=config.fill, jobs=config.jobs)
            pir_stats[method] = _pir_stats(oracle, images, maps, config)
    finally:
        oracle.close()

    reference = args.reference or max(methods, key=lambda m: reports[m].ch)
    summary = {"reference": reference, "top_percent": config.top_percent,
               "methods": {}}
    for method in methods:
        rep = reports[method]
        stat, p, test = paired_mcnemar(reports[reference].rows, rep.rows)
        summary["methods"][method] = {
            "ch": rep.ch, "same": rep.same, "total": rep.total, "n": rep.n,
            "skipped": rep.skipped, "inclusion": inclusion[method],
            "pir_avg": pir_stats[method][0], "pir_std": pir_stats[method][1],
            "mcnemar_vs_reference": {"statistic": stat, "p": p, "test": test},
        }
    with open(out_dir / "eval.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_dir / "eval.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "image", "changed", "same"])
        for method in methods:
            for entry, (changed, same) in zip(manifest.entries, reports[method].rows):
                writer.writerow([method, entry.image_path, int(changed), int(same)])
    write_meta(out_dir / "meta.json", config, {"manifest": str(args.manifest),
                                               "methods": methods})
    return 0


def _pir_stats(oracle, images, maps, config) -> tuple[float, float]:
    spec = ThresholdSpec(config.top_percent, "score_rank")
    rates = []
    for img, smap in zip(images, maps):
        mask = threshold_map(smap, spec)
        if mask.popcount() == 0:
            continue
        out = oracle.logits([img, apply_mask(img, mask, config.fill)])
        orig_class = int(np.argmax(out[0]))
        impact = abs(float(out[0, orig_class]) - float(out[1, orig_class]))
        rates.append(pir(impact, mask))
    if not rates:
        return 0.0, 0.0
    return float(np.mean(rates)), float(np.std(rates))


def cmd_curves(args) -> int:
    config = _config_from_args(args)
    manifest = DatasetManifest.load(args.manifest)
    methods = args.methods.split(",") if args.methods else manifest.methods()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    oracle = open_oracle(config)
    try:
        images = _eval_inputs(config, oracle, manifest)
        curves = {}
        for method in methods:
            maps = manifest.load_maps(method)
            curves[method] = sic_aic_curves(
                oracle, images, maps, thresholds=config.thresholds,
                keep_fraction=config.keep_fraction, fill=config.fill)
    finally:
        oracle.close()

    doc = {m: {"thresholds": list(c.thresholds), "sic": list(c.sic),
               "aic": list(c.aic), "auc_sic": c.auc_sic, "auc_aic": c.auc_aic}
           for m, c in curves.items()}
    with open(out_dir / "curves.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_dir / "curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "threshold", "sic", "aic"])
        for method, c in curves.items():
            for t, s_val, a_val in zip(c.thresholds, c.sic, c.aic):
                writer.writerow([method, t, s_val, a_val])
    for field in ("sic", "aic"):
        svg = _line_chart({m: (c.thresholds, getattr(c, field))
                           for m, c in curves.items()}, field.upper())
        (out_dir / f"curves_{field}.svg").write_text(svg)
    write_meta(out_dir / "meta.json", config, {"manifest": str(args.manifest),
                                               "methods": methods})
    return 0


def _line_chart(series: dict, title: str, width: int = 640, height: int = 400) -> str:
    """Plain SVG polyline chart; y is assumed to live in [0, 1]."""
    pad = 40
    xs_all = [x for xs, _ in series.values() for x in xs]
    x_min, x_max = min(xs_all), max(xs_all)
    span = (x_max - x_min) or 1.0

    def sx(x):
        return pad + (x - x_min) / span * (width - 2 * pad)

    def sy(y):
        return height - pad - y * (height - 2 * pad)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width/2}" y="20" text-anchor="middle">{title}</text>',
             f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>']
    for i, (name, (xs, ys)) in enumerate(sorted(series.items())):
        color = palette[i % len(palette)]
        points = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" points="{points}"/>')
        parts.append(f'<text x="{width-pad+4}" y="{pad+14*i}" fill="{color}" '
                     f'font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_render(args) -> int:
    scores = load_npy(args.scoremap).astype(np.float32)
    smap = ScoreMap(np.maximum(scores, 0.0))
    img = load_image(args.image, target=scores.shape)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.top_percent is not None:
        mode = "score_rank" if args.mode == "rank" else "score_range"
        mask = threshold_map(smap, ThresholdSpec(args.top_percent, mode))
        masked = np.where(mask.bits, smap.scores, 0.0).astype(np.float32)
        smap = ScoreMap(masked)
    out.write_bytes(render_overlay(img, smap, levels=args.levels))
    meta = {"scoremap": str(args.scoremap), "image": str(args.image),
            "levels": args.levels, "top_percent": args.top_percent,
            "mode": args.mode, "versions": {"hierxai": __version__}}
    with open(out.with_suffix(".meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierxai",
        description="Hierarchical-segmentation explanations for image classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", required=True, help="TOML pipeline config")
        p.add_argument("--hierarchy", choices=["bpt", "watershed-area", "watershed-volume"])
        p.add_argument("--metric", choices=["occ", "caoc"])
        p.add_argument("--guidance", help="'sobel' or a guidance .npy path")
        p.add_argument("--min-area", dest="min_area", type=int)

    p = sub.add_parser("check", help="handshake with the oracle process")
    add_config(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("explain", help="score map + overlay for one image")
    add_config(p)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("score", help="hierarchy + per-node attributes for one image")
    add_config(p)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="exclusion/inclusion/PIR over a manifest")
    add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", help="comma-separated subset of manifest methods")
    p.add_argument("--reference", help="method for the McNemar comparisons")
    p.add_argument("--top-percent", dest="top_percent", type=float)
    p.add_argument("--jobs", type=int, help="concurrent per-image evaluations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="SIC/AIC information curves over a manifest")
    add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("render", help="re-render an overlay from a saved score map")
    p.add_argument("--scoremap", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--top-percent", dest="top_percent", type=float, default=None)
    p.add_argument("--mode", choices=["rank", "range"], default="rank")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(args.command, str(exc), 2)
    except FileNotFoundError as exc:
        return _fail(args.command, str(exc), 2)
    except OracleError as exc:
        return _fail(args.command, str(exc), 1)
    except (ValueError, OSError) as exc:
        return _fail(args.command, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
