import numpy as np
import pytest
from hypothesis import given, strategies as st

from hhfusion import tensor as T
from hhfusion.errors import ShapeError, SingularDirectionError
from hhfusion.householder import (HouseholderCouple, HouseholderStack, couple_apply, degrees_of_freedom,
                                  init_stack, materialize, reflect, rotation_only, stack_apply, trainable_count)
from hhfusion.tensor import Tensor
from hhfusion.testing import gradcheck

from oracles import dense_reflection, dense_stack


def test_reflect_axis_example():
    assert np.allclose(reflect(np.array([1.0, 0]), np.array([3.0, 4])).data, [-3, 4])


@given(st.integers(0, 10_000), st.integers(2, 9))
def test_reflect_involution_and_norm(seed, d):
    rng = np.random.default_rng(seed)
    v, x = rng.standard_normal(d), rng.standard_normal((3, d))
    y = reflect(v, x).data
    assert np.abs(reflect(v, y).data - x).max() < 1e-12
    assert np.abs(np.linalg.norm(y, axis=-1) - np.linalg.norm(x, axis=-1)).max() < 1e-12


def test_reflect_zero_vector():
    with pytest.raises(SingularDirectionError):
        reflect(np.zeros(3), np.ones(3))


def test_reflect_gradient(rng):
    v = Tensor(rng.standard_normal(5), requires_grad=True)
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = rng.standard_normal((3, 5))
    assert gradcheck(lambda: T.tsum(reflect(v, x) * w), [v, x]) < 1e-8


def test_couple_with_zero_v2_is_identity(rng):
    x = rng.standard_normal((4, 6))
    out = couple_apply(HouseholderCouple(rng.standard_normal(6), np.zeros(6)), x).data
    assert np.allclose(out, x, atol=1e-14)


def test_couple_degenerate_reports_index():
    v = np.array([1.0, 2.0])
    with pytest.raises(SingularDirectionError) as exc:
        couple_apply(HouseholderCouple(v, v), np.ones(2), index=3)
    assert exc.value.couple_index == 3
    stack = HouseholderStack(np.array([[1.0, 0], [0, 1]]), np.array([[0.0, 1], [0, -1]]))
    with pytest.raises(SingularDirectionError) as exc:
        stack_apply(stack, np.ones(2))
    assert exc.value.couple_index == 1


def test_couple_orthogonal(rng):
    for _ in range(10):
        c = HouseholderCouple(rng.standard_normal(7), rng.standard_normal(7))
        P = couple_apply(c, np.eye(7)).data.T
        assert np.abs(P.T @ P - np.eye(7)).max() < 1e-12


def test_init_scale_couple_near_identity():
    # brute-force bound at d=256: 4*sqrt(2)*0.01/sqrt(d) = 3.54e-3, measured worst over 200 seeds 3.5355e-3
    h = init_stack(64, 256, seed=0)
    for c in range(h.num_couples):
        P = couple_apply(h.couple(c), np.eye(256)).data.T
        assert np.linalg.norm(P - np.eye(256)) < 4e-3
        v1, v2 = h.v1.data[c], h.v2.data[c]
        assert np.abs(P - dense_reflection(v1 - v2) @ dense_reflection(v1 + v2)).max() < 1e-12


def test_materialize_rotation_by_pi():
    h = HouseholderStack(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert np.allclose(materialize(h).data, -np.eye(2), atol=1e-15)


def test_identity_cases(rng):
    v1 = rng.standard_normal((3, 5))
    h = HouseholderStack(v1, np.zeros((3, 5)), np.ones(5))
    assert np.allclose(materialize(h).data, np.eye(5), atol=1e-14)
    s = rng.standard_normal(5)
    scaled = HouseholderStack(v1, np.zeros((3, 5)), s)
    x = rng.standard_normal((2, 4, 5))
    assert np.allclose(stack_apply(scaled, x).data, x * s, atol=1e-13)
    one = HouseholderStack(v1[:1], np.zeros((1, 5)))
    assert np.allclose(stack_apply(one, x).data, x, atol=1e-14)


@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 5), st.booleans())
def test_materialize_matches_dense_oracle(seed, d, c, scaled):
    rng = np.random.default_rng(seed)
    v1, v2 = rng.standard_normal((c, d)), rng.standard_normal((c, d))
    s = rng.standard_normal(d) if scaled else None
    h = HouseholderStack(v1, v2, s)
    W = materialize(h).data
    assert np.abs(W - dense_stack(v1, v2, s)).max() < 1e-10
    x = rng.standard_normal((4, d))
    assert np.abs(stack_apply(h, x).data - x @ W.T).max() < 1e-10


def test_rotation_only_is_special_orthogonal(rng):
    h = HouseholderStack(rng.standard_normal((5, 6)), rng.standard_normal((5, 6)), rng.standard_normal(6))
    P = materialize(rotation_only(h)).data
    assert np.linalg.norm(P.T @ P - np.eye(6)) < 1e-12
    assert abs(np.linalg.det(P) - 1) < 1e-10


def test_init_stack_norms_and_determinism():
    for d in (4, 32, 256):
        h = init_stack(8, d, seed=3)
        assert np.abs(np.linalg.norm(h.v1.data, axis=1) - 1).max() < 1e-12
        assert np.abs(np.linalg.norm(h.v2.data, axis=1) - 0.01 / np.sqrt(d)).max() < 1e-12
    a, b = init_stack(4, 16, seed=11), init_stack(4, 16, seed=11)
    assert np.array_equal(a.v1.data, b.v1.data) and np.array_equal(a.v2.data, b.v2.data)


def test_init_stack_reg_loss_small():
    # measured worst over 200 brute-force seeds: 8.2e-4
    h = init_stack(64, 256, seed=5)
    W = materialize(h).data
    assert np.sum((np.eye(256) - W) ** 2) < 1e-3


def test_stack_gradients(rng):
    h = HouseholderStack(rng.standard_normal((3, 4)), rng.standard_normal((3, 4)), rng.standard_normal(4))
    x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    w = rng.standard_normal((2, 4))
    assert gradcheck(lambda: T.tsum(stack_apply(h, x) * w), [h.v1, h.v2, h.s, x]) < 1e-7


def test_counts():
    assert trainable_count(64, 256, scaled=False) == 32_768
    assert trainable_count(64, 256, scaled=True) == 33_024
    for d in (4, 16, 256):
        assert degrees_of_freedom(d) == d * d


def test_shape_errors():
    with pytest.raises(ShapeError):
        HouseholderStack(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ShapeError):
        init_stack(0, 4)
