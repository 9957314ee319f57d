"""Quantitative evaluation of score maps: exclusion/inclusion, PIR,
softmax/accuracy information curves, AUC, McNemar, and the sliding-window
occlusion baseline generator.

All evaluators accept any per-pixel score map aligned to the image, whether
produced by this package or imported from another method.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .image import FillPolicy, Image, Mask, apply_mask, blur_baseline, load_image, load_npy
from .oracle import OracleError
from .render import ThresholdSpec, threshold_map
from .shaping import ScoreMap

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "ExclusionReport",
    "CurveReport",
    "exclusion_eval",
    "inclusion_eval",
    "pir",
    "sic_aic_curves",
    "auc",
    "mcnemar",
    "paired_mcnemar",
    "sliding_occlusion_map",
    "DEFAULT_CURVE_THRESHOLDS",
]

# percentage thresholds swept by the information curves
DEFAULT_CURVE_THRESHOLDS = (0.5, 1, 2, 3, 4, 5, 7, 10, 13, 21, 34, 50, 75)

logger = logging.getLogger(__name__)


def _per_image(fn, items, jobs):
    """Map fn over items, optionally in threads; results stay in item order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclasses.dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    label: int
    maps: dict[str, str] = dataclasses.field(default_factory=dict)  # method -> npy path


@dataclasses.dataclass(frozen=True)
class DatasetManifest:
    """Images, ground-truth labels and per-method score-map files."""

    entries: tuple[ManifestEntry, ...]
    oracle_id: str = ""

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        base = path.parent
        entries = []
        for row in doc["entries"]:
            image_path = str((base / row["image"]).resolve())
            maps = {m: str((base / p).resolve()) for m, p in row.get("maps", {}).items()}
            entries.append(ManifestEntry(image_path, int(row["label"]), maps))
        manifest = cls(tuple(entries), oracle_id=doc.get("oracle", ""))
        manifest.validate()
        return manifest

    def validate(self) -> None:
        for e in self.entries:
            if not Path(e.image_path).exists():
                raise FileNotFoundError(f"manifest image not found: {e.image_path}")
            for method, p in e.maps.items():
                if not Path(p).exists():
                    raise FileNotFoundError(f"score map for {method!r} not found: {p}")

    def methods(self) -> list[str]:
        names: list[str] = []
        for e in self.entries:
            for m in e.maps:
                if m not in names:
                    names.append(m)
        return names

    def load_images(self, target: tuple[int, int] | None = None) -> list[Image]:
        return [load_image(e.image_path, target=target) for e in self.entries]

    def load_maps(self, method: str) -> list[ScoreMap]:
        maps = []
        for e in self.entries:
            if method not in e.maps:
                raise KeyError(f"entry {e.image_path} has no map for {method!r}")
            arr = load_npy(e.maps[method]).astype(np.float32)
            maps.append(ScoreMap(np.maximum(arr, 0.0), metric=method))
        return maps


@dataclasses.dataclass(frozen=True)
class ExclusionReport:
    """Class-change statistics after occluding the selected regions.

    ch: fraction whose predicted class changed; same: fraction keeping the
    class with a strictly reduced logit; total = ch + same.  rows holds one
    (changed, same) pair per evaluated image for paired tests.
    """

    ch: float
    same: float
    total: float
    n: int
    rows: tuple[tuple[bool, bool], ...]
    skipped: int = 0


@dataclasses.dataclass(frozen=True)
class CurveReport:
    thresholds: tuple[float, ...]
    sic: tuple[float, ...]   # mean softmax prob of the original class
    aic: tuple[float, ...]   # fraction keeping the original class
    auc_sic: float
    auc_aic: float

    def __post_init__(self):
        ts = self.thresholds
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if any(not (0.0 <= v <= 1.0) for v in self.aic):
            raise ValueError("accuracy points must be in [0, 1]")


def _predict(oracle, img: Image) -> tuple[int, np.ndarray]:
    out = oracle.logits([img])[0]
    return int(np.argmax(out)), out


def exclusion_eval(oracle, images, maps, top_percent: float = 25.0,
                   fill: FillPolicy = FillPolicy(), jobs: int = 1) -> ExclusionReport:
    """Occlude each image's top-scoring regions and measure the class impact.

    Per image: take the originally predicted class, mask the top_percent
    highest-scoring pixels, and re-classify.  "Ch" counts argmax changes;
    "Same" counts unchanged argmax with a strictly decreased class logit.
    Images whose oracle call fails are skipped (logged, counted in
    ``skipped``, never imputed).  ``jobs`` caps concurrent image evaluations.
    """
    spec = ThresholdSpec(top_percent, "score_rank")

    def one(pair):
        index, (img, smap) = pair
        try:
            orig_class, orig_out = _predict(oracle, img)
            mask = threshold_map(smap, spec)
            if mask.popcount() == 0:
                return (False, False)
            occluded_out = oracle.logits([apply_mask(img, mask, fill)])[0]
        except OracleError as exc:
            logger.warning("exclusion: skipping image %d: %s", index, exc)
            return None
        new_class = int(np.argmax(occluded_out))
        changed = new_class != orig_class
        same = (not changed) and occluded_out[orig_class] < orig_out[orig_class]
        return (changed, same)

    results = _per_image(one, list(enumerate(zip(images, maps))), jobs)
    rows = [r for r in results if r is not None]
    skipped = sum(1 for r in results if r is None)
    n = len(rows)
    ch = sum(1 for c, _ in rows if c) / n if n else 0.0
    same = sum(1 for _, s in rows if s) / n if n else 0.0
    return ExclusionReport(ch=ch, same=same, total=ch + same, n=n,
                           rows=tuple(rows), skipped=skipped)


def inclusion_eval(oracle, images, maps, top_percent: float = 25.0,
                   fill: FillPolicy = FillPolicy(), jobs: int = 1) -> float:
    """Occlude everything except the selected regions; fraction of class changes.

    Lower is better: the kept region alone should preserve the prediction.
    """
    spec = ThresholdSpec(top_percent, "score_rank")

    def one(pair):
        index, (img, smap) = pair
        try:
            orig_class, _ = _predict(oracle, img)
            keep = threshold_map(smap, spec)
            occluded = apply_mask(img, keep.complement(), fill)
            return int(np.argmax(oracle.logits([occluded])[0])) != orig_class
        except OracleError as exc:
            logger.warning("inclusion: skipping image %d: %s", index, exc)
            return None

    results = _per_image(one, list(enumerate(zip(images, maps))), jobs)
    kept = [r for r in results if r is not None]
    return sum(kept) / len(kept) if kept else 0.0


def pir(impact: float, mask: Mask) -> float:
    """Pixel impact rate: occlusion impact divided by the occluded pixel count."""
    count = mask.popcount()
    if count == 0:
        raise ValueError("pixel impact rate needs a non-empty mask")
    return float(impact) / count


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits.astype(np.float64) - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def sic_aic_curves(oracle, images, maps, thresholds=DEFAULT_CURVE_THRESHOLDS,
                   keep_fraction: float = 0.1,
                   fill: FillPolicy = FillPolicy()) -> CurveReport:
    """Information curves: reveal the top t% pixels over a blurred baseline.

    For each threshold, each image's composite is the blurred image with the
    original pixels restored inside the thresholded mask.  SIC averages the
    softmax probability of the originally predicted class; AIC is the
    fraction of images still classified as that class.  AUCs integrate the
    curves over the threshold axis normalized to [0, 1].
    """
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("need at least one threshold")
    specs = [ThresholdSpec(t, "score_rank") for t in thresholds]

    usable: list[tuple[Image, Image, ScoreMap, int]] = []
    for img, smap in zip(images, maps):
        try:
            orig_class, _ = _predict(oracle, img)
        except OracleError:
            continue
        usable.append((img, blur_baseline(img, keep_fraction), smap, orig_class))
    if not usable:
        raise ValueError("no image survived the original-prediction pass")

    sic_points, aic_points = [], []
    for spec in specs:
        probs, hits = [], []
        for img, blurred, smap, orig_class in usable:
            mask = threshold_map(smap, spec)
            composite_data = blurred.data.copy()
            composite_data[:, mask.bits] = img.data[:, mask.bits]
            composite = Image(composite_data, norm=img.norm)
            out = oracle.logits([composite])[0]
            probs.append(_softmax(out)[orig_class])
            hits.append(int(np.argmax(out)) == orig_class)
        sic_points.append(float(np.mean(probs)))
        aic_points.append(float(np.mean(hits)))

    if len(thresholds) > 1:
        auc_sic = auc(list(thresholds), sic_points)
        auc_aic = auc(list(thresholds), aic_points)
    else:
        auc_sic, auc_aic = sic_points[0], aic_points[0]
    return CurveReport(thresholds, tuple(sic_points), tuple(aic_points),
                       auc_sic=auc_sic, auc_aic=auc_aic)


def auc(xs, ys) -> float:
    """Trapezoid area under the curve with x normalized to [0, 1]."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("need equally many xs and ys (at least two points)")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    span = xs[-1] - xs[0]
    norm = (xs - xs[0]) / span
    return float(np.trapezoid(ys, norm))


def mcnemar(b: int, c: int) -> tuple[float, float, str]:
    """Paired-test on discordant counts; returns (statistic, p_value, method).

    Small samples (b + c < 25) use the exact two-sided binomial test,
    p = min(1, 2 * BinomCDF(min(b, c); b + c, 1/2)); larger samples use the
    continuity-corrected chi-square (|b - c| - 1)^2 / (b + c) with 1 dof.
    """
    if b < 0 or c < 0:
        raise ValueError("discordant counts must be non-negative")
    n = b + c
    if n == 0:
        return 0.0, 1.0, "exact-binomial"
    if n < 25:
        k = min(b, c)
        cdf = sum(math.comb(n, i) for i in range(k + 1)) * 0.5 ** n
        return float(k), min(1.0, 2.0 * cdf), "exact-binomial"
    stat = (abs(b - c) - 1.0) ** 2 / n
    p = math.erfc(math.sqrt(stat / 2.0))  # chi-square(1) survival function
    return stat, p, "chi-square"


def paired_mcnemar(rows_a, rows_b, field: int = 0) -> tuple[float, float, str]:
    """McNemar test between two methods' per-image outcome rows.

    ``field`` selects the outcome column of ExclusionReport.rows (0 =
    class-changed).  b counts images where only method A succeeded, c where
    only method B did.
    """
    if len(rows_a) != len(rows_b):
        raise ValueError("paired test needs the same images for both methods")
    b = sum(1 for ra, rb in zip(rows_a, rows_b) if ra[field] and not rb[field])
    c = sum(1 for ra, rb in zip(rows_a, rows_b) if rb[field] and not ra[field])
    return mcnemar(b, c)


def sliding_occlusion_map(oracle, img: Image, class_index: int,
                          window: tuple[int, int, int],
                          step: tuple[int, int, int],
                          fill: FillPolicy = FillPolicy()) -> ScoreMap:
    """Occlusion-sensitivity baseline: slide a window, accumulate impacts.

    ``window`` and ``step`` are (C, H, W); the channel extent must cover all
    channels (whole-pixel occlusion).  Each window position contributes the
    impact (absolute class-logit change) to every pixel it covers; scores
    are averaged by per-pixel coverage.  A final row/column of positions is
    added when the step does not land flush on the border.
    """
    wc, wh, ww = window
    sc, sh, sw = step
    if wc != img.channels or sc not in (wc, img.channels):
        raise ValueError("window must span all channels")
    if wh > img.height or ww > img.width:
        raise ValueError(f"window {wh}x{ww} larger than image {img.height}x{img.width}")
    if sh < 1 or sw < 1:
        raise ValueError("steps must be positive")

    def positions(extent, win, stp):
        pos = list(range(0, extent - win + 1, stp))
        if pos[-1] != extent - win:
            pos.append(extent - win)
        return pos

    ys = positions(img.height, wh, sh)
    xs = positions(img.width, ww, sw)
    base = float(oracle.logits([img])[0][class_index])

    total = np.zeros((img.height, img.width), dtype=np.float64)
    coverage = np.zeros((img.height, img.width), dtype=np.int64)
    batch, rects = [], []
    for y in ys:
        for x in xs:
            bits = np.zeros((img.height, img.width), dtype=bool)
            bits[y:y + wh, x:x + ww] = True
            batch.append(apply_mask(img, Mask(bits), fill))
            rects.append((y, x))
    out = oracle.logits(batch)
    for (y, x), logits_row in zip(rects, out):
        impact = abs(base - float(logits_row[class_index]))
        total[y:y + wh, x:x + ww] += impact
        coverage[y:y + wh, x:x + ww] += 1
    scores = np.divide(total, coverage, out=np.zeros_like(total), where=coverage > 0)
    return ScoreMap(scores.astype(np.float32), metric="occlusion-baseline")
