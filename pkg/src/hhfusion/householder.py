"""Orthogonal value matrices built from products of Householder reflections.

A reflection about the hyperplane orthogonal to ``v`` is
``P = I - 2 v v^T / ||v||^2``. Reflections are applied to the last axis of
their input without ever forming ``P``.

Couples ``(v1, v2)`` define two reflections along ``a = v1 - v2`` and
``b = v1 + v2``; for small ``v2`` the two nearly coincide and their product is
close to the identity, which gives an orthogonal layer that starts near ``I``.
A stack of ``C`` couples realises ``P_C = P_1 P_2 ... P_C`` and optionally a
diagonal row scaling, ``W_C = diag(s) P_C``.

Matrices act on column vectors; for row-major batches ``x[..., d]``,
:func:`stack_apply` returns ``x @ W_C.T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ShapeError, SingularDirectionError
from .nn import Module, Parameter
from .tensor import Tensor

DEGENERACY_TOL = 1e-12


def reflect(v, x) -> Tensor:
    """Apply ``I - 2 v v^T / ||v||^2`` to the last axis of ``x``."""
    v, x = T.as_tensor(v), T.as_tensor(x)
    if v.ndim != 1:
        raise ShapeError(f"reflection direction must be a vector, got shape {v.shape}")
    if x.shape[-1] != v.shape[0]:
        raise ShapeError(f"reflection of shape {x.shape} along a {v.shape[0]}-vector")
    vd, xd = v.data, x.data
    s = float(vd @ vd)
    if np.sqrt(s) < DEGENERACY_TOL:
        raise SingularDirectionError("reflection direction has zero length")
    proj = xd @ vd
    out = xd - (2.0 / s) * proj[..., None] * vd

    def backward(g):
        gv = g @ vd
        gx = g - (2.0 / s) * gv[..., None] * vd
        gflat = g.reshape(-1, vd.size)
        xflat = xd.reshape(-1, vd.size)
        gvf = gv.reshape(-1)
        pf = proj.reshape(-1)
        grad_v = (-2.0 / s) * (gvf @ xflat + pf @ gflat) + (4.0 / (s * s)) * float(gvf @ pf) * vd
        return grad_v, gx

    return T.custom_op(out, (v, x), backward, "reflect")


@dataclass
class HouseholderCouple:
    v1: Tensor
    v2: Tensor

    def directions(self):
        return self.v1 - self.v2, self.v1 + self.v2


def _check_couple(a: np.ndarray, b: np.ndarray, index) -> None:
    label = "" if index is None else f" in couple {index}"
    if np.linalg.norm(a) < DEGENERACY_TOL:
        raise SingularDirectionError(f"v1 - v2 vanished{label}", couple_index=index)
    if np.linalg.norm(b) < DEGENERACY_TOL:
        raise SingularDirectionError(f"v1 + v2 vanished{label}", couple_index=index)


def couple_apply(couple: HouseholderCouple, x, index: Optional[int] = None) -> Tensor:
    """Apply ``(I - 2aa^T/|a|^2)(I - 2bb^T/|b|^2)``; the ``b`` reflection acts first."""
    a, b = couple.directions()
    _check_couple(a.data, b.data, index)
    return reflect(a, reflect(b, x))


class HouseholderStack(Module):
    """``C`` trainable couples stored row-wise, plus an optional scaling vector."""

    def __init__(self, v1: np.ndarray, v2: np.ndarray, scaling: Optional[np.ndarray] = None):
        v1 = np.atleast_2d(np.asarray(v1, dtype=np.float64))
        v2 = np.atleast_2d(np.asarray(v2, dtype=np.float64))
        if v1.shape != v2.shape:
            raise ShapeError(f"couple halves differ in shape: {v1.shape} vs {v2.shape}")
        self.v1 = Parameter(v1)
        self.v2 = Parameter(v2)
        if scaling is not None:
            scaling = np.asarray(scaling, dtype=np.float64)
            if scaling.shape != (v1.shape[1],):
                raise ShapeError(f"scaling vector shape {scaling.shape} != ({v1.shape[1]},)")
            self.s = Parameter(scaling)
        else:
            self.s = None

    @property
    def num_couples(self) -> int:
        return self.v1.shape[0]

    @property
    def dim(self) -> int:
        return self.v1.shape[1]

    @property
    def scaled(self) -> bool:
        return self.s is not None

    def couple(self, c: int) -> HouseholderCouple:
        return HouseholderCouple(self.v1[c], self.v2[c])

    def check(self) -> None:
        a = self.v1.data - self.v2.data
        b = self.v1.data + self.v2.data
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        bad = np.flatnonzero((na < DEGENERACY_TOL) | (nb < DEGENERACY_TOL))
        if bad.size:
            c = int(bad[0])
            _check_couple(a[c], b[c], c)

    def __call__(self, x) -> Tensor:
        return stack_apply(self, x)


def stack_apply(h: HouseholderStack, x) -> Tensor:
    """Return ``x @ W_C.T`` in O(C d) per row; couple 0 is the leftmost factor."""
    x = T.as_tensor(x)
    if x.shape[-1] != h.dim:
        raise ShapeError(f"input last extent {x.shape[-1]} != stack dimension {h.dim}")
    h.check()
    a_all = h.v1 - h.v2
    b_all = h.v1 + h.v2
    out = x
    for c in range(h.num_couples - 1, -1, -1):
        out = reflect(b_all[c], out)
        out = reflect(a_all[c], out)
    if h.s is not None:
        out = out * h.s
    return out


def materialize(h: HouseholderStack) -> Tensor:
    """Dense ``W_C`` (differentiable), built by pushing the identity basis through the stack."""
    return T.transpose(stack_apply(h, np.eye(h.dim)))


def rotation_only(h: HouseholderStack) -> HouseholderStack:
    """A copy of ``h`` without its scaling vector (the pure ``P_C``)."""
    return HouseholderStack(h.v1.data.copy(), h.v2.data.copy(), None)


def init_stack(num_couples: int, d: int, seed=None, scaled: bool = True) -> HouseholderStack:
    """Standard-normal couples; ``v1`` rescaled to unit length, ``v2`` to ``0.01/sqrt(d)``."""
    if num_couples < 1:
        raise ShapeError("a Householder stack needs at least one couple")
    if d < 2:
        raise ShapeError("Householder stacks need d >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v1 = rng.standard_normal((num_couples, d))
    v2 = rng.standard_normal((num_couples, d))
    v1 /= np.linalg.norm(v1, axis=1, keepdims=True)
    v2 *= (0.01 / np.sqrt(d)) / np.linalg.norm(v2, axis=1, keepdims=True)
    return HouseholderStack(v1, v2, np.ones(d) if scaled else None)


def trainable_count(num_couples: int, d: int, scaled: bool) -> int:
    return 2 * num_couples * d + (d if scaled else 0)


def degrees_of_freedom(d: int, num_vectors: Optional[int] = None, scaled: bool = True) -> int:
    """Free parameters of ``num_vectors`` unit-length directions (d-1 each) plus scaling."""
    m = d if num_vectors is None else num_vectors
    return m * (d - 1) + (d if scaled else 0)
