"""
The four-step pipeline, in process and from the shell
=====================================================

Step 1 trains the backbone, step 2 a shared adapter, step 3 one adapter per
speaker, step 4 the fusion layer for each target fold. This uses a shrunken
config so it finishes in well under a minute.
"""

# %%
from hhfusion.config import from_dict
from hhfusion.pipeline.matrix import c_sweep, run_matrix
from hhfusion.pipeline.steps import PipelineState, run_step

cfg = from_dict({
    "experiment": "notebook",
    "corpus": {"canonical_utterances": 300},
    "pretrain": {"max_epochs": 25, "patience": 5},
    "train": {"max_epochs": 15, "patience": 5},
})

# %%
state = PipelineState(cfg)
for step in (1, 2, 3):
    run_step(step, state)

# %% a small couple-count sweep
table = run_matrix(state, c_sweep(couples=(1, 8), fractions=(0.6,)))
print(table.sorted().to_csv())

# %% the same thing from the shell, one command per step:
#
#   hhfusion default-config > cfg.json
#   hhfusion pretrain --config cfg.json --out runs
#   hhfusion train-adapters --config cfg.json --out runs
#   hhfusion train-fusion --config cfg.json --out runs --variant Fusion-W_C --c-couples 8
#   hhfusion audit runs/default/step4/<row>/<target>_fold0.ckpt
#   hhfusion table runs/default
