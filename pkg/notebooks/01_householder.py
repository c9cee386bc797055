"""
Householder stacks as orthogonal value layers
=============================================

A couple of reflections is a rotation. Stacking C couples and scaling the
result gives a value matrix with far fewer parameters than a dense d x d one.
"""

# %%
import numpy as np

from hhfusion.analysis import orthogonality_report
from hhfusion.householder import (degrees_of_freedom, init_stack, materialize, rotation_only,
                                  stack_apply, trainable_count)

# %% a fresh stack sits close to the identity
d = 256
h = init_stack(8, d, seed=0)
W = materialize(h).data
print("||W - I||_F =", np.linalg.norm(W - np.eye(d)))

# %% the rotation part is orthogonal to machine precision, with determinant +1
P = materialize(rotation_only(h)).data
print(orthogonality_report(P))
print("det =", np.linalg.det(P))

# %% applying the stack to a batch never builds the d x d matrix
x = np.random.default_rng(1).standard_normal((4, d))
print(np.abs(stack_apply(h, x).data - x @ W.T).max())

# %% parameter budget against a dense matrix
for c in (1, 8, 64, 128):
    print(f"C={c:4d}  params={trainable_count(c, d, scaled=True):7d}  dense={d * d}")
print("d unit vectors + scaling span", degrees_of_freedom(d), "degrees of freedom")
