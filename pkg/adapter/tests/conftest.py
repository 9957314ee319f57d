from pathlib import Path

import numpy as np
import pytest
import torch

from model_adapter.models import AdapterConfig, build_model

torch.manual_seed(20240817)


@pytest.fixture
def rng():
    return np.random.RandomState(20240817)


@pytest.fixture
def linear_config(tmp_path):
    cfg = AdapterConfig(kind="linear", n_classes=2, input_size=(1, 4, 4))
    model = build_model(cfg)
    weights = tmp_path / "linear.pt"
    torch.save(model.state_dict(), weights)
    cfg.weights = str(weights)
    return cfg


def write_adapter_toml(path: Path, kind: str, classes: int, input_size,
                       weights: str = "", norm=None) -> Path:
    lines = ["[model]", f'kind = "{kind}"', f"classes = {classes}",
             f"input_size = {list(input_size)}"]
    if weights:
        lines.append(f'weights = "{weights}"')
    if norm is not None:
        lines += ["", "[normalization]", f"mean = {list(norm[0])}",
                  f"std = {list(norm[1])}"]
    path.write_text("\n".join(lines) + "\n")
    return path
