"""
Fusing frozen adapters
======================

Each adapter output is scored against the backbone output, the scores are
softmaxed over adapters, and the weighted sum goes through the value layer.
"""

# %%
import numpy as np

from hhfusion.adapter import AdapterLayer
from hhfusion.analysis import count_parameters
from hhfusion.fusion import FusionConfig, FusionLayer, attention_scores, fusion_forward, reg_loss
from hhfusion.pipeline.variants import parse_variant

rng = np.random.default_rng(0)
d, n, t = 16, 4, 6

# %% frozen adapters start as the identity, so perturb them to get distinct outputs
adapters = [AdapterLayer(d, rng=i) for i in range(n)]
for a in adapters:
    a.up.weight.data = 0.3 * rng.standard_normal(a.up.weight.shape)
y_o = rng.standard_normal((t, d))
y_a = np.stack([a(y_o).data for a in adapters])

# %% attention weights per frame
layer = FusionLayer(FusionConfig(n, d_att=8, value="householder", num_couples=4), d, rng)
alpha = attention_scores(layer, y_o, y_a).data
print(alpha.round(3))
print("rows sum to", alpha.sum(axis=1))

# %% output and regulariser at initialisation
y_f = fusion_forward(layer, y_o, y_a).data
print(y_f.shape, "reg =", reg_loss(layer).item())

# %% parameter counts at d=256 with 14 adapters
for name in ("Fusion-256dAtt+W", "Fusion-64dAtt+W", "Fusion-W", "Fusion-W_64", "Fusion-P_64"):
    v = parse_variant(name)
    print(f"{name:18s}", count_parameters(FusionLayer(v.fusion_config(14), 256, 0)).total)
