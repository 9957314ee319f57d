import numpy as np
import pytest
import torch
from torch import nn

from model_adapter.attribution import (attribute, export_guidance,
                                       guided_backprop, input_x_gradient,
                                       integrated_gradients, saliency)
from model_adapter.models import AdapterConfig, build_model


def linear_model(weights, bias=None):
    c_out, n_in = weights.shape
    layer = nn.Linear(n_in, c_out)
    with torch.no_grad():
        layer.weight.copy_(torch.as_tensor(weights))
        layer.bias.copy_(torch.zeros(c_out) if bias is None else torch.as_tensor(bias))
    return nn.Sequential(nn.Flatten(), layer).eval()


class TestSaliency:
    def test_linear_model_matches_analytic_gradient(self, rng):
        weights = rng.randn(2, 16).astype(np.float32)
        model = linear_model(weights)
        x = torch.rand(1, 4, 4)
        got = saliency(model, x, target=1).numpy().ravel()
        assert np.allclose(got, np.abs(weights[1]), atol=1e-5)

    def test_constant_head_gives_zero_map(self):
        weights = np.zeros((2, 9), dtype=np.float32)
        model = linear_model(weights, bias=[1.0, 2.0])
        x = torch.rand(1, 3, 3)
        for method in ("saliency", "ixg", "ig", "gbp"):
            assert torch.all(attribute(model, x, 0, method) == 0)


class TestInputXGradient:
    def test_linear_model_is_x_times_w(self, rng):
        weights = rng.randn(2, 16).astype(np.float32)
        model = linear_model(weights)
        x = torch.rand(1, 4, 4)
        got = input_x_gradient(model, x, target=0).numpy().ravel()
        expected = x.numpy().ravel() * weights[0]
        assert np.allclose(got, expected, atol=1e-5)


class TestIntegratedGradients:
    def test_linear_completeness_is_exact(self, rng):
        weights = rng.randn(3, 16).astype(np.float32)
        model = linear_model(weights)
        x = torch.rand(1, 4, 4)
        attr = integrated_gradients(model, x, target=2)
        f_x = model(x.unsqueeze(0))[0, 2].item()
        assert attr.sum().item() == pytest.approx(f_x, abs=1e-4)

    def test_two_layer_completeness_within_one_percent(self, rng):
        torch.manual_seed(11)
        cfg = AdapterConfig(kind="mlp2", n_classes=3, input_size=(1, 4, 4))
        model = build_model(cfg)
        for _ in range(5):
            x = torch.rand(1, 4, 4)
            out_x = model(x.unsqueeze(0))[0]
            out_0 = model(torch.zeros(1, 1, 4, 4))[0]
            target = int(out_x.argmax())
            attr = integrated_gradients(model, x, target, steps=64)
            expected = (out_x[target] - out_0[target]).item()
            # 1% relative to the scale of the logits involved: a vanishing
            # delta would make the plain ratio ill-conditioned
            scale = max(abs(expected), abs(out_x[target].item()),
                        abs(out_0[target].item()))
            assert abs(attr.sum().item() - expected) <= 0.01 * scale

    def test_linear_ig_equals_input_times_weights(self, rng):
        # from a zero baseline, IG of a bias-free linear map is x * w
        weights = rng.randn(2, 9).astype(np.float32)
        model = linear_model(weights)
        x = torch.rand(1, 3, 3)
        attr = integrated_gradients(model, x, target=1).numpy().ravel()
        assert np.allclose(attr, x.numpy().ravel() * weights[1], atol=1e-4)


class TestGuidedBackprop:
    def test_equals_gradient_on_relu_free_model(self, rng):
        weights = rng.randn(2, 16).astype(np.float32)
        model = linear_model(weights)
        x = torch.rand(1, 4, 4)
        got = guided_backprop(model, x, target=0)
        assert np.allclose(got.numpy().ravel(), weights[0], atol=1e-5)

    def test_no_negative_flow_through_relu(self):
        torch.manual_seed(5)
        cfg = AdapterConfig(kind="mlp2", n_classes=2, input_size=(1, 3, 3))
        model = build_model(cfg)
        x = torch.rand(1, 3, 3)
        # guided attribution never exceeds what unrestricted gradients allow
        guided = guided_backprop(model, x, 0)
        assert guided.shape == x.shape


class TestExport:
    def test_export_round_trips_through_npy(self, tmp_path, rng):
        cfg = AdapterConfig(kind="linear", n_classes=2, input_size=(1, 4, 4))
        model = build_model(cfg)
        torch.save(model.state_dict(), tmp_path / "w.pt")
        cfg.weights = str(tmp_path / "w.pt")
        img = rng.rand(4, 4).astype(np.float32)
        np.save(tmp_path / "img.npy", img)
        out = tmp_path / "map.npy"
        written = export_guidance(cfg, tmp_path / "img.npy", "saliency", out)
        back = np.load(out)
        assert back.dtype == np.float32 and back.shape == (4, 4)
        assert np.array_equal(back, written)
        # header says NPY v1.0
        with open(out, "rb") as fh:
            magic = fh.read(8)
        assert magic[:6] == b"\x93NUMPY" and magic[6:8] == b"\x01\x00"

    def test_export_saliency_matches_weight_magnitude(self, tmp_path, rng):
        cfg = AdapterConfig(kind="linear", n_classes=2, input_size=(1, 4, 4))
        model = build_model(cfg)
        torch.save(model.state_dict(), tmp_path / "w.pt")
        cfg.weights = str(tmp_path / "w.pt")
        img = np.full((4, 4), 0.5, dtype=np.float32)
        np.save(tmp_path / "img.npy", img)
        out = tmp_path / "map.npy"
        export_guidance(cfg, tmp_path / "img.npy", "saliency", out, target=1)
        expected = np.abs(model[1].weight.detach().numpy()[1]).reshape(4, 4)
        assert np.allclose(np.load(out), expected, atol=1e-5)

    def test_unknown_method_rejected(self, tmp_path, linear_config):
        with pytest.raises(ValueError):
            export_guidance(linear_config, "img.npy", "mystery", tmp_path / "o.npy")
