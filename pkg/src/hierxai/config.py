"""Pipeline configuration: TOML file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from pathlib import Path

import tomli

from .image import FillPolicy

__all__ = ["PipelineConfig", "ConfigError", "load_config"]

HIERARCHY_KINDS = ("bpt", "watershed-area", "watershed-volume")
CACHE_ENV = "HIERXAI_CACHE"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


@dataclasses.dataclass
class PipelineConfig:
    oracle_command: list[str]
    hierarchy: str = "watershed-area"
    guidance: str = "sobel"          # "sobel" or a .npy file path
    guidance_kind: str = "edge"      # edge | attribution (for .npy guidance)
    guidance_label: str = ""         # method tag used in output names, e.g. "IG"
    metric: str = "occ"              # occ | caoc
    min_area: int = 1
    edge_combine: str = "mean"       # mean | max
    batch_size: int = 32
    fill: FillPolicy = dataclasses.field(default_factory=FillPolicy)
    top_percent: float = 25.0
    thresholds: tuple[float, ...] = (0.5, 1, 2, 3, 4, 5, 7, 10, 13, 21, 34, 50, 75)
    keep_fraction: float = 0.1
    caoc_references: str = ""        # manifest with the CaOC reference images
    cache_dir: str = ""
    jobs: int = 1
    overlay_levels: int = 5
    norm_mean: tuple[float, ...] | None = None
    norm_std: tuple[float, ...] | None = None

    def validate(self) -> None:
        if not self.oracle_command:
            raise ConfigError("oracle command is required")
        if self.hierarchy not in HIERARCHY_KINDS:
            raise ConfigError(f"hierarchy must be one of {HIERARCHY_KINDS}")
        if self.metric not in ("occ", "caoc"):
            raise ConfigError("metric must be 'occ' or 'caoc'")
        if self.min_area < 1:
            raise ConfigError("min_area must be at least 1")
        if self.edge_combine not in ("mean", "max"):
            raise ConfigError("edge_combine must be 'mean' or 'max'")
        if self.guidance != "sobel" and not Path(self.guidance).exists():
            raise ConfigError(f"guidance not found: {self.guidance}")
        if self.metric == "caoc":
            if not self.caoc_references:
                raise ConfigError("caoc metric needs caoc_references")
            if not Path(self.caoc_references).exists():
                raise ConfigError(f"caoc_references not found: {self.caoc_references}")
        if not (0 < self.keep_fraction <= 1):
            raise ConfigError("keep_fraction must be in (0, 1]")
        if not (0 < self.top_percent <= 100):
            raise ConfigError("top_percent must be in (0, 100]")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ConfigError("thresholds must be strictly increasing")

    def method_name(self) -> str:
        """Configuration tag used in reports and metadata."""
        tree = {"bpt": "TreeB", "watershed-area": "TreeW",
                "watershed-volume": "TreeV"}[self.hierarchy]
        metric = {"occ": "Occ", "caoc": "CaOC"}[self.metric]
        prefix = f"{self.guidance_label}-" if self.guidance_label else ""
        return f"{prefix}{tree}-{metric}"

    def resolved_cache_dir(self) -> Path | None:
        path = os.environ.get(CACHE_ENV, "") or self.cache_dir
        if not path:
            return None
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        return out

    def config_hash(self) -> str:
        doc = dataclasses.asdict(self)
        doc["fill"] = {"kind": self.fill.kind, "value": self.fill.value,
                       "channel_means": self.fill.channel_means}
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _fill_from_table(table: dict) -> FillPolicy:
    kind = table.get("kind", "zero_norm")
    means = table.get("channel_means")
    return FillPolicy(kind=kind, value=float(table.get("value", 0.0)),
                      channel_means=tuple(means) if means else None)


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read a TOML config file and apply flat key overrides on top."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    oracle = doc.get("oracle", {})
    command = oracle.get("command", [])
    if isinstance(command, str):
        command = command.split()
    pipe = doc.get("pipeline", {})
    eval_tab = doc.get("eval", {})
    caoc = doc.get("caoc", {})
    norm = doc.get("normalization", {})

    cfg = PipelineConfig(
        oracle_command=[str(c) for c in command],
        hierarchy=pipe.get("hierarchy", "watershed-area"),
        guidance=str(pipe.get("guidance", "sobel")),
        guidance_kind=pipe.get("guidance_kind", "edge"),
        guidance_label=pipe.get("guidance_label", ""),
        metric=pipe.get("metric", "occ"),
        min_area=int(pipe.get("min_area", 1)),
        edge_combine=pipe.get("edge_combine", "mean"),
        batch_size=int(pipe.get("batch_size", 32)),
        fill=_fill_from_table(doc.get("fill", {})),
        top_percent=float(eval_tab.get("top_percent", 25.0)),
        thresholds=tuple(float(t) for t in eval_tab.get(
            "thresholds", PipelineConfig.__dataclass_fields__["thresholds"].default)),
        keep_fraction=float(eval_tab.get("keep_fraction", 0.1)),
        caoc_references=str(caoc.get("references", "")),
        cache_dir=str(pipe.get("cache_dir", "")),
        jobs=int(pipe.get("jobs", 1)),
        overlay_levels=int(pipe.get("overlay_levels", 5)),
        norm_mean=tuple(norm["mean"]) if "mean" in norm else None,
        norm_std=tuple(norm["std"]) if "std" in norm else None,
    )
    # guidance paths in the file are relative to the file
    if cfg.guidance != "sobel" and not Path(cfg.guidance).is_absolute():
        cfg.guidance = str((path.parent / cfg.guidance).resolve())
    if cfg.caoc_references and not Path(cfg.caoc_references).is_absolute():
        cfg.caoc_references = str((path.parent / cfg.caoc_references).resolve())

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
