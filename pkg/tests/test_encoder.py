import numpy as np
import pytest

from hhfusion.adapter import AdapterLayer
from hhfusion.encoder import (AdaptedModel, Backbone, EncoderConfig, combine_losses, encode, logits_losses,
                              task_losses)
from hhfusion.errors import ConfigError, DataError, InputError
from hhfusion.nn import Adam
from hhfusion.tensor import Tensor, no_grad
from hhfusion.testing import gradcheck

SMALL = EncoderConfig(num_layers=1, model_dim=8, num_heads=2, ffn_dim=12, vocab_in=6, vocab_out=5)


def test_zero_length_and_determinism():
    m = Backbone(SMALL, 0)
    assert encode(m, np.zeros(0, dtype=int)).shape == (0, 8)
    x = np.array([1, 2, 3, 0])
    assert np.array_equal(encode(m, x).data, encode(m, x).data)
    assert np.array_equal(encode(Backbone(SMALL, 0), x).data, encode(m, x).data)
    batch = np.stack([x, x[::-1]])
    assert np.allclose(encode(m, batch).data[1], encode(m, x[::-1]).data, atol=1e-14)


def test_out_of_vocabulary():
    with pytest.raises(InputError):
        encode(Backbone(SMALL), np.array([0, 6]))
    with pytest.raises(InputError):
        encode(Backbone(SMALL), np.array([-1]))


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(model_dim=10, num_heads=4)
    with pytest.raises(ConfigError):
        EncoderConfig(num_layers=0)


def test_combine_losses():
    assert abs(combine_losses(1.0, 2.0, 3.0, 0.3, 0.01) - 1.33) < 1e-12
    assert combine_losses(1.0, 2.0, 3.0, 0.0, 0.0) == 1.0
    assert combine_losses(1.0, 2.0, 3.0, 1.0, 0.0) == 2.0
    assert combine_losses(1.0, 2.0, None, 0.5, 0.01) == 1.5
    with pytest.raises(ConfigError):
        combine_losses(1.0, 2.0, 3.0, 1.2, 0.0)
    with pytest.raises(ConfigError):
        combine_losses(1.0, 2.0, 3.0, 0.3, -1.0)


def test_logits_losses_trivial():
    labels = np.array([[0, 3, 4]])
    uniform = np.zeros((1, 3, 5))
    lp, la = logits_losses(Tensor(uniform), Tensor(uniform), labels)
    assert abs(lp.item() - np.log(5)) < 1e-9 and abs(la.item() - np.log(5)) < 1e-9
    perfect = np.full((1, 3, 5), -40.0)
    perfect[0, np.arange(3), labels[0]] = 40.0
    assert logits_losses(Tensor(perfect), Tensor(perfect), labels)[0].item() < 1e-6


def test_task_losses_shape_mismatch():
    with pytest.raises(DataError):
        task_losses(AdaptedModel(Backbone(SMALL)), (np.zeros((2, 3), int), np.zeros((2, 4), int)))


def test_task_losses_decrease_on_toy_mapping():
    rng = np.random.default_rng(0)
    model = AdaptedModel(Backbone(SMALL, 1))
    x = rng.integers(0, 6, (16, 5))
    y = x % 5
    opt = Adam([p for _, p in model.named_parameters()], lr=1e-2)
    losses = []
    for _ in range(50):
        opt.zero_grad()
        l1, l2 = task_losses(model, (x, y))
        loss = combine_losses(l1, l2, None, 0.3, 0.0)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < 0.5 * losses[0]


def test_backbone_gradients():
    rng = np.random.default_rng(3)
    model = AdaptedModel(Backbone(SMALL, 2))
    x, y = rng.integers(0, 6, (2, 4)), rng.integers(0, 5, (2, 4))
    params = [p for _, p in model.named_parameters()]
    assert gradcheck(lambda: combine_losses(*task_losses(model, (x, y)), None, 0.3, 0.0), params) < 1e-4


def test_adapter_slot_names_and_frozen_encoding():
    rng = np.random.default_rng(4)
    backbone = Backbone(SMALL, 0).freeze()
    adapter = AdapterLayer(8, rng=rng)
    model = AdaptedModel(backbone, adapter, "adapter/s00h")
    names = [n for n, _ in model.named_parameters()]
    assert names[0].startswith("backbone/") and "adapter/s00h/up/weight" in names
    x, y = rng.integers(0, 6, (8, 5)), rng.integers(0, 5, (8, 5))
    with no_grad():
        before = encode(backbone, x).data.copy()
    opt = Adam(adapter.parameters(), lr=1e-2)
    for _ in range(10):
        opt.zero_grad()
        combine_losses(*task_losses(model, (x, y)), None, 0.3, 0.0).backward()
        opt.step()
    assert np.array_equal(encode(backbone, x).data, before)
    assert np.any(adapter.up.weight.data != 0)
    assert all(p.grad is None for p in backbone.parameters())
