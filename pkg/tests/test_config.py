import json

import pytest
from hypothesis import given, strategies as st

from hhfusion.config import RunConfig, from_dict, load_config, loads
from hhfusion.errors import ConfigError


def test_default_round_trip():
    cfg = RunConfig()
    again = loads(cfg.to_json())
    assert again == cfg and again.to_json() == cfg.to_json() and again.digest() == cfg.digest()


@given(st.integers(0, 2**31), st.floats(0.01, 1.0), st.sampled_from(["Fusion-W", "Fusion-W_C", "Fusion-P_8"]),
       st.integers(1, 128))
def test_round_trip_with_overrides(seed, frac, variant, c):
    cfg = RunConfig().replace(seed=seed, fusion={"data_fraction": frac, "variant": variant, "c_couples": c})
    assert loads(cfg.to_json()) == cfg


def test_unknown_keys_rejected_with_path():
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict({"sed": 1})
    with pytest.raises(ConfigError, match="fusion"):
        from_dict({"fusion": {"varient": "Fusion-W"}})
    with pytest.raises(ConfigError, match="train"):
        from_dict({"train": {"learning_rate": 0.1}})


def test_type_errors():
    with pytest.raises(ConfigError, match="seed"):
        from_dict({"seed": "zero"})
    with pytest.raises(ConfigError):
        from_dict({"seed": True})
    with pytest.raises(ConfigError):
        from_dict({"fusion": {"folds": 0}})
    with pytest.raises(ConfigError):
        from_dict({"model": {"model_dim": 30, "num_heads": 4}})
    with pytest.raises(ConfigError):
        from_dict({"train": {"lambda1": 1.5}})


def test_parse_error_has_line_and_column(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 1,\n  "out": \n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert f"{path}:4:1" in str(exc.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_partial_document_fills_defaults():
    cfg = from_dict({"seed": 4, "fusion": {"c_couples": 2}})
    assert cfg.seed == 4 and cfg.fusion.c_couples == 2
    assert cfg.fusion.variant == RunConfig().fusion.variant
    assert json.loads(cfg.to_json())["seed"] == 4
