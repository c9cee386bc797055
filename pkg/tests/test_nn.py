import numpy as np
import pytest

from hhfusion import tensor as T
from hhfusion.errors import ShapeError
from hhfusion.nn import Adam, LayerNorm, Linear, Module, Parameter
from hhfusion.testing import gradcheck


class Pair(Module):
    def __init__(self, rng):
        self.first = Linear(3, 4, rng)
        self.rest = [LayerNorm(4), Linear(4, 2, rng, bias=False)]
        self._hidden = Parameter(np.zeros(2))


def test_named_parameters_paths(rng):
    names = [n for n, _ in Pair(rng).named_parameters("m/")]
    assert names == ["m/first/weight", "m/first/bias", "m/rest/0/gamma", "m/rest/0/beta", "m/rest/1/weight"]


def test_freeze_and_counts(rng):
    m = Pair(rng)
    assert m.num_trainable() == 3 * 4 + 4 + 4 + 4 + 4 * 2
    m.rest[0].freeze()
    assert m.num_trainable() == 3 * 4 + 4 + 8
    m.unfreeze()
    assert all(p.requires_grad for p in m.parameters())


def test_state_dict_round_trip(rng):
    a, b = Pair(rng), Pair(np.random.default_rng(99))
    b.load_state_dict(a.state_dict())
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_load_state_dict_strict(rng):
    m = Pair(rng)
    state = m.state_dict()
    state.pop("first/bias")
    with pytest.raises(Exception):
        m.load_state_dict(state)
    bad = m.state_dict()
    bad["first/weight"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        m.load_state_dict(bad)


def test_clone_is_independent(rng):
    m = Pair(rng)
    c = m.clone()
    c.first.weight.data += 1
    assert not np.array_equal(c.first.weight.data, m.first.weight.data)


def test_linear_and_layer_norm_gradients(rng):
    lin, ln = Linear(5, 3, rng), LayerNorm(3)
    x = T.Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    ln.gamma.data = rng.standard_normal(3)
    w = rng.standard_normal((4, 3))
    params = [x, lin.weight, lin.bias, ln.gamma, ln.beta]
    assert gradcheck(lambda: T.tsum(ln(lin(x)) * w), params) < 1e-6


def test_adam_minimises_quadratic(rng):
    w = Parameter(rng.standard_normal(4))
    target = np.arange(4.0)
    opt = Adam([w], lr=0.05)
    for _ in range(600):
        opt.zero_grad()
        T.tsum((w - target) ** 2).backward()
        opt.step()
    assert np.abs(w.data - target).max() < 1e-3


def test_adam_skips_frozen(rng):
    w = Parameter(np.ones(2))
    frozen = Parameter(np.ones(2), requires_grad=False)
    opt = Adam([w, frozen], lr=0.1)
    T.tsum(w * 3).backward()
    opt.step()
    assert np.array_equal(frozen.data, np.ones(2))
    assert np.all(w.data < 1)
