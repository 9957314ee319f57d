"""Model construction and adapter configuration."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import tomli
import torch
from torch import nn


@dataclasses.dataclass
class AdapterConfig:
    kind: str                      # linear | mlp2 | tinycnn | torchvision:<name>
    n_classes: int
    input_size: tuple[int, int, int]  # (C, H, W)
    weights: str = ""              # optional state-dict path
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None
    device: str = "cpu"

    def validate(self) -> None:
        c = self.input_size[0]
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if any(d <= 0 for d in self.input_size):
            raise ValueError("input size must be positive")
        for name, vec in (("mean", self.mean), ("std", self.std)):
            if vec is not None and len(vec) != c:
                raise ValueError(f"normalization {name} length must equal channels")
        if self.weights and not Path(self.weights).exists():
            raise ValueError(f"weights file not found: {self.weights}")


def load_config(path) -> AdapterConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    model = doc.get("model", {})
    norm = doc.get("normalization", {})
    cfg = AdapterConfig(
        kind=model.get("kind", "tinycnn"),
        n_classes=int(model.get("classes", 2)),
        input_size=tuple(int(d) for d in model.get("input_size", (3, 32, 32))),
        weights=str(model.get("weights", "")),
        mean=tuple(norm["mean"]) if "mean" in norm else None,
        std=tuple(norm["std"]) if "std" in norm else None,
        device=model.get("device", "cpu"),
    )
    if cfg.weights and not Path(cfg.weights).is_absolute():
        cfg.weights = str((path.parent / cfg.weights).resolve())
    cfg.validate()
    return cfg


class Normalize(nn.Module):
    def __init__(self, mean, std):
        super().__init__()
        self.register_buffer("mean", torch.as_tensor(mean, dtype=torch.float32).view(1, -1, 1, 1))
        self.register_buffer("std", torch.as_tensor(std, dtype=torch.float32).view(1, -1, 1, 1))

    def forward(self, x):
        return (x - self.mean) / self.std


def _linear(cfg: AdapterConfig) -> nn.Module:
    c, h, w = cfg.input_size
    return nn.Sequential(nn.Flatten(), nn.Linear(c * h * w, cfg.n_classes))


def _mlp2(cfg: AdapterConfig) -> nn.Module:
    c, h, w = cfg.input_size
    return nn.Sequential(
        nn.Flatten(),
        nn.Linear(c * h * w, 32),
        nn.ReLU(),
        nn.Linear(32, cfg.n_classes),
    )


def _tinycnn(cfg: AdapterConfig) -> nn.Module:
    c, h, w = cfg.input_size
    if h % 4 or w % 4:
        raise ValueError("tinycnn needs input sides divisible by 4")
    return nn.Sequential(
        nn.Conv2d(c, 8, kernel_size=3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(4),
        nn.Flatten(),
        nn.Linear(8 * (h // 4) * (w // 4), cfg.n_classes),
    )


def build_model(cfg: AdapterConfig) -> nn.Module:
    """Instantiate the configured network, load weights, wrap normalization."""
    if cfg.kind == "linear":
        net = _linear(cfg)
    elif cfg.kind == "mlp2":
        net = _mlp2(cfg)
    elif cfg.kind == "tinycnn":
        net = _tinycnn(cfg)
    elif cfg.kind.startswith("torchvision:"):
        import torchvision.models as tvm

        name = cfg.kind.split(":", 1)[1]
        net = getattr(tvm, name)(num_classes=cfg.n_classes)
    else:
        raise ValueError(f"unknown model kind {cfg.kind!r}")
    if cfg.weights:
        state = torch.load(cfg.weights, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
    if cfg.mean is not None and cfg.std is not None:
        net = nn.Sequential(Normalize(cfg.mean, cfg.std), net)
    net.eval()
    return net.to(cfg.device)
