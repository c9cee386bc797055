"""Experiment row names and the model each one denotes.

Names follow the result-table convention: ``Fusion-64dAtt+W`` is a fusion
layer with 64-dimensional key/query projections and a dense value matrix,
``Fusion-W_8`` a value-only layer using eight scaled Householder couples,
``Fusion-P_8`` the same without scaling. A literal ``C`` (``Fusion-W_C``)
takes the couple count from the run configuration.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from ..errors import ConfigError
from ..fusion import FusionConfig

BASELINES = ("Pretrain", "Pretrain-Adpt", "Source-Adpt-avg", "Target-Adpt")
ABLATIONS = {"Fusion-W_UV": "uv", "Fusion-W_Sigma": "sigma", "Fusion-W_Σ": "sigma"}

_ATT_DENSE = re.compile(r"^Fusion-(\d+)dAtt\+W$")
_ATT_ONLY = re.compile(r"^Fusion-(\d+)dAtt$")
_ATT_HH = re.compile(r"^Fusion-(\d+)dAtt\+W_(\d+|C)$")
_HH_SCALED = re.compile(r"^Fusion-W_(\d+|C)$")
_HH_ROT = re.compile(r"^Fusion-P_(\d+|C)$")


@dataclass(frozen=True)
class Variant:
    name: str
    kind: str  # "pretrain" | "pretrain_adpt" | "source_avg" | "target_adpt" | "fusion" | "ablation"
    attention: bool = False
    d_att: int = 0
    value: str = "absent"
    num_couples: int = 0
    scaled: bool = False
    ablation: Optional[str] = None

    @property
    def trains(self) -> bool:
        return self.kind in ("target_adpt", "fusion")

    def fusion_config(self, num_adapters: int) -> FusionConfig:
        return FusionConfig(num_adapters=num_adapters, attention=self.attention, d_att=self.d_att or 1,
                            value=self.value, num_couples=self.num_couples or 1, scaled=self.scaled)


def _couples(token: str, c_couples: Optional[int], name: str) -> int:
    if token == "C":
        if not c_couples:
            raise ConfigError(f"variant {name!r} needs a couple count (--c-couples)")
        return int(c_couples)
    return int(token)


def parse_variant(name: str, c_couples: Optional[int] = None) -> Variant:
    if name in BASELINES:
        kind = {"Pretrain": "pretrain", "Pretrain-Adpt": "pretrain_adpt",
                "Source-Adpt-avg": "source_avg", "Target-Adpt": "target_adpt"}[name]
        return Variant(name, kind)
    if name in ABLATIONS:
        return Variant(name, "ablation", value="dense", ablation=ABLATIONS[name])
    if name == "Fusion-W":
        return Variant(name, "fusion", value="dense")
    if m := _ATT_DENSE.match(name):
        return Variant(name, "fusion", attention=True, d_att=int(m.group(1)), value="dense")
    if m := _ATT_ONLY.match(name):
        return Variant(name, "fusion", attention=True, d_att=int(m.group(1)))
    if m := _ATT_HH.match(name):
        c = _couples(m.group(2), c_couples, name)
        return Variant(name, "fusion", attention=True, d_att=int(m.group(1)), value="householder",
                       num_couples=c, scaled=True)
    if m := _HH_SCALED.match(name):
        return Variant(name, "fusion", value="householder", num_couples=_couples(m.group(1), c_couples, name),
                       scaled=True)
    if m := _HH_ROT.match(name):
        return Variant(name, "fusion", value="householder", num_couples=_couples(m.group(1), c_couples, name),
                       scaled=False)
    raise ConfigError(f"unknown variant name {name!r}")


def resolved_name(name: str, c_couples: Optional[int]) -> str:
    """Substitute the couple count into names that use the literal ``C``."""
    v = parse_variant(name, c_couples)
    if v.value == "householder" and name.endswith("_C"):
        return name[:-1] + str(v.num_couples)
    return name
