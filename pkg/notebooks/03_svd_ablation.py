"""
What does a trained dense value layer do?
=========================================

Split W into rotation and scaling. W_UV keeps only the rotation, W_Sigma only
the scaling; if W_UV alone does nearly as well, W is mostly a rotation.
"""

# %%
import numpy as np

from hhfusion.analysis import build_wsigma, build_wuv, orthogonality_report, row_norms, svd_decompose

rng = np.random.default_rng(3)
d = 32

# %% a stand-in for a trained W: a rotation with mild anisotropic scaling
Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
W = Q @ np.diag(1 + 0.1 * rng.standard_normal(d))

parts = svd_decompose(W)
print("reconstruction", np.linalg.norm(parts.reconstruct() - W))
print("singular values", parts.Sigma.min().round(3), "to", parts.Sigma.max().round(3))

# %% the rotation-only and scaling-only replacements
uv = build_wuv(parts).matrix
sig = build_wsigma(parts, W).matrix
print("W_UV defect", orthogonality_report(uv)["frobenius_defect"])
print("W_Sigma diagonal range", np.diag(sig).min().round(3), np.diag(sig).max().round(3))
print("row norms of W", row_norms(W).min().round(3), row_norms(W).max().round(3))

# %% W_UV is the nearest orthogonal matrix to W
other, _ = np.linalg.qr(rng.standard_normal((d, d)))
print(np.linalg.norm(W - uv), "<", np.linalg.norm(W - other))
