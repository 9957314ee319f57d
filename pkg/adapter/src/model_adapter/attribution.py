"""Pixel-attribution maps: saliency, input x gradient, integrated gradients,
guided backpropagation.

All functions take the raw input tensor (C, H, W) in model input space and
return a signed per-pixel attribution of the same shape; ``export_guidance``
reduces channels by the sum of absolute values and writes float32 NPY.
"""

from __future__ import annotations

import contextlib
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .models import AdapterConfig, build_model

METHODS = ("saliency", "ixg", "ig", "gbp")


def _input_gradient(model: nn.Module, x: torch.Tensor, target: int) -> torch.Tensor:
    inp = x.unsqueeze(0).clone().requires_grad_(True)
    out = model(inp)
    out[0, target].backward()
    return inp.grad[0].detach()


def saliency(model: nn.Module, x: torch.Tensor, target: int) -> torch.Tensor:
    """Gradient magnitude of the target logit with respect to the input."""
    return _input_gradient(model, x, target).abs()


def input_x_gradient(model: nn.Module, x: torch.Tensor, target: int) -> torch.Tensor:
    return x * _input_gradient(model, x, target)


def integrated_gradients(model: nn.Module, x: torch.Tensor, target: int,
                         steps: int = 64,
                         baseline: torch.Tensor | None = None) -> torch.Tensor:
    """Path integral of gradients from the baseline (black) to the input,
    midpoint Riemann rule; satisfies completeness on smooth models."""
    if baseline is None:
        baseline = torch.zeros_like(x)
    delta = x - baseline
    total = torch.zeros_like(x)
    for i in range(steps):
        alpha = (i + 0.5) / steps
        total += _input_gradient(model, baseline + alpha * delta, target)
    return delta * total / steps


@contextlib.contextmanager
def _guided_relu(model: nn.Module):
    """Clamp the gradients flowing back through every ReLU to be positive."""

    def hook(module, grad_input, grad_output):
        return tuple(g.clamp(min=0.0) if g is not None else None
                     for g in grad_input)

    handles = [m.register_full_backward_hook(hook)
               for m in model.modules() if isinstance(m, nn.ReLU)]
    try:
        yield
    finally:
        for h in handles:
            h.remove()


def guided_backprop(model: nn.Module, x: torch.Tensor, target: int) -> torch.Tensor:
    with _guided_relu(model):
        return _input_gradient(model, x, target)


def attribute(model: nn.Module, x: torch.Tensor, target: int, method: str) -> torch.Tensor:
    if method == "saliency":
        return saliency(model, x, target)
    if method == "ixg":
        return input_x_gradient(model, x, target)
    if method == "ig":
        return integrated_gradients(model, x, target)
    if method == "gbp":
        return guided_backprop(model, x, target)
    raise ValueError(f"unsupported method {method!r} (one of {METHODS})")


def load_image_tensor(path, input_size) -> torch.Tensor:
    """PNG (8-bit) or NPY float32 image as a (C, H, W) tensor in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        arr = np.load(path, allow_pickle=False).astype(np.float32)
        if arr.ndim == 2:
            arr = arr[None]
    else:
        from PIL import Image

        with Image.open(path) as pil:
            pil = pil.convert("RGB" if input_size[0] == 3 else "L")
            arr = np.asarray(pil, dtype=np.float32) / 255.0
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    tensor = torch.from_numpy(np.ascontiguousarray(arr))
    c, h, w = input_size
    if tensor.shape[0] != c:
        raise ValueError(f"image has {tensor.shape[0]} channels, model wants {c}")
    if tensor.shape[1:] != (h, w):
        tensor = torch.nn.functional.interpolate(
            tensor.unsqueeze(0), size=(h, w), mode="bilinear",
            align_corners=False).squeeze(0)
    return tensor


def export_guidance(cfg: AdapterConfig, image_path, method: str, out_path,
                    target: int | None = None) -> np.ndarray:
    """Write the channel-reduced attribution of the image as NPY v1.0 float32.

    The map is H x W (sum of absolute per-channel attributions); the target
    class defaults to the model's prediction.
    """
    if method not in METHODS:
        raise ValueError(f"unsupported method {method!r} (one of {METHODS})")
    model = build_model(cfg)
    x = load_image_tensor(image_path, cfg.input_size).to(cfg.device)
    if target is None:
        with torch.no_grad():
            target = int(model(x.unsqueeze(0))[0].argmax())
    attr = attribute(model, x, target, method)
    reduced = attr.abs().sum(dim=0).cpu().numpy().astype(np.float32)
    out = np.ascontiguousarray(reduced)
    with open(out_path, "wb") as fh:
        np.lib.format.write_array(fh, out, version=(1, 0))
    return out
