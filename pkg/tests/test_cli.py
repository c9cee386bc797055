import json

import numpy as np
import pytest

from hhfusion.checkpoint import Checkpoint, encode_checkpoint, load_checkpoint, prefixed, save_checkpoint
from hhfusion.cli import main
from hhfusion.config import loads
from hhfusion.fusion import FusionConfig, FusionLayer
from hhfusion.pipeline.steps import run_pipeline, train_variant

TOY = {
    "experiment": "toy",
    "corpus": {"canonical_utterances": 300},
    "pretrain": {"max_epochs": 25, "patience": 5},
    "train": {"max_epochs": 15, "patience": 5},
    "fusion": {"variant": "Fusion-W_C", "c_couples": 2},
}


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = root / "toy.json"
    cfg.write_text(json.dumps(dict(TOY, out=str(root))))
    assert main(["pretrain", "--config", str(cfg)]) == 0
    assert main(["train-adapters", "--config", str(cfg)]) == 0
    assert main(["train-fusion", "--config", str(cfg)]) == 0
    return root, cfg


def fusion_ckpts(root, row):
    return sorted((root / "toy" / "step4" / row).glob("*.ckpt"))


def test_layout_and_bitwise_reload(toy_run):
    root, _ = toy_run
    path = root / "toy" / "step1" / "backbone.ckpt"
    assert (root / "toy" / "corpus.tsv").exists()
    ckpt = load_checkpoint(path)
    assert encode_checkpoint(ckpt) == path.read_bytes()
    assert all(n.startswith("backbone/") for n in ckpt.tensors)
    manifest = json.loads((root / "toy" / "step1" / "manifest.json").read_text())
    assert {"config_hash", "seed", "content_hash", "outputs"} <= set(manifest)
    adapters = load_checkpoint(root / "toy" / "step3" / "adapters.ckpt")
    assert adapters.has_namespace("adapter/shared") and adapters.has_namespace("adapter/s03h")
    assert len(fusion_ckpts(root, "Fusion-W_2__frac0.6__seed0")) == 3


def test_commands_are_idempotent(toy_run, capsys):
    root, cfg = toy_run
    before = {p: p.read_bytes() for p in root.rglob("*") if p.is_file()}
    capsys.readouterr()
    for cmd in ("pretrain", "train-adapters", "train-fusion"):
        assert main([cmd, "--config", str(cfg)]) == 0
        assert "cached" in capsys.readouterr().out
    assert before == {p: p.read_bytes() for p in root.rglob("*") if p.is_file()}


def test_three_commands_match_in_process_pipeline(toy_run):
    root, cfg = toy_run
    manifest = json.loads((root / "toy" / "step4" / "Fusion-W_2__frac0.6__seed0" / "manifest.json").read_text())
    state = run_pipeline(loads(cfg.read_text()), through=3)
    out = train_variant(state, "Fusion-W_2")
    assert manifest["row"]["error_rate"] == out.test_error
    assert manifest["row"]["valid_loss"] == out.valid_loss
    assert manifest["row"]["params"] == out.params


def test_missing_adapters_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(TOY, out=str(tmp_path))))
    (tmp_path / "toy" / "step1").mkdir(parents=True)
    assert main(["train-fusion", "--config", str(cfg)]) == 2
    assert main(["train-adapters", "--config", str(cfg)]) == 2
    assert "backbone/" in capsys.readouterr().err


def test_missing_adapters_names_namespace(toy_run, tmp_path, capsys):
    root, cfg = toy_run
    import shutil
    shutil.copytree(root / "toy" / "step1", tmp_path / "toy" / "step1")
    alt = tmp_path / "alt.json"
    alt.write_text(json.dumps(dict(TOY, out=str(tmp_path))))
    capsys.readouterr()
    assert main(["train-fusion", "--config", str(alt)]) == 2
    assert "adapter/" in capsys.readouterr().err


def test_config_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1,\n "fusion": {"variant": }}')
    assert main(["pretrain", "--config", str(bad)]) == 1
    assert f"{bad}:2:" in capsys.readouterr().err
    bad.write_text('{"fusion": {"c_coupels": 3}}')
    assert main(["pretrain", "--config", str(bad)]) == 1
    assert "c_coupels" in capsys.readouterr().err
    assert main(["train-fusion", "--variant", "Fusion-Q", "--out", str(tmp_path)]) == 1


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    from hhfusion.cli import _load, build_parser
    monkeypatch.setenv("HHFUSION_OUT", str(tmp_path / "envroot"))
    args = build_parser().parse_args(["train-fusion", "--seed", "3", "--variant", "Fusion-P_C", "--c-couples", "4",
                                      "--data-fraction", "0.05"])
    cfg = _load(args)
    assert cfg.out == str(tmp_path / "envroot") and cfg.seed == 3
    assert (cfg.fusion.variant, cfg.fusion.c_couples, cfg.fusion.data_fraction) == ("Fusion-P_C", 4, 0.05)
    args = build_parser().parse_args(["pretrain", "--out", str(tmp_path / "flag")])
    assert _load(args).out == str(tmp_path / "flag")


def write_fusion(path, layer):
    save_checkpoint(path, Checkpoint(prefixed(layer.state_dict(), "fusion"), {}, 0, {}))


def audit(path, capsys):
    capsys.readouterr()
    code = main(["audit", str(path)])
    lines = capsys.readouterr().out.splitlines()
    return code, dict(line.split("=", 1) for line in lines)


def test_audit_fresh_dense(tmp_path, capsys):
    d = 16
    write_fusion(tmp_path / "f.ckpt", FusionLayer(FusionConfig(3, attention=False), d))
    code, rep = audit(tmp_path / "f.ckpt", capsys)
    assert code == 0 and rep["value.kind"] == "dense"
    assert float(rep["reg_loss"]) == pytest.approx((d * d - d) * 1e-12, rel=1e-9)
    assert int(rep["params.total"]) == d * d


def test_audit_identity_value(tmp_path, capsys):
    layer = FusionLayer(FusionConfig(2, attention=False), 4)
    layer.value.W.data = np.eye(4)
    write_fusion(tmp_path / "i.ckpt", layer)
    _, rep = audit(tmp_path / "i.ckpt", capsys)
    assert float(rep["svd.sigma_max"]) == pytest.approx(1.0, abs=1e-12)
    assert float(rep["svd.sigma_min"]) == pytest.approx(1.0, abs=1e-12)
    assert float(rep["reg_loss"]) == 0.0


def test_audit_householder(toy_run, capsys):
    root, _ = toy_run
    path = fusion_ckpts(root, "Fusion-W_2__frac0.6__seed0")[0]
    code, rep = audit(path, capsys)
    assert code == 0 and rep["value.kind"] == "householder" and rep["couples"] == "2"
    assert float(rep["orthogonality.frobenius_defect"]) < 1e-9
    assert int(rep["params.total"]) == 2 * 2 * 32 + 32


def test_audit_errors(tmp_path, toy_run, capsys):
    root, _ = toy_run
    assert main(["audit", str(root / "toy" / "step3" / "adapters.ckpt")]) != 0
    assert main(["audit", str(tmp_path / "missing.ckpt")]) == 2
    layer = FusionLayer(FusionConfig(1, attention=False, value="householder", num_couples=1), 3)
    layer.value.householder.v2.data = layer.value.householder.v1.data.copy()  # a = v1 - v2 = 0
    write_fusion(tmp_path / "deg.ckpt", layer)
    assert main(["audit", str(tmp_path / "deg.ckpt")]) == 3


def test_table(toy_run, tmp_path, capsys):
    root, cfg = toy_run
    assert main(["train-fusion", "--config", str(cfg), "--seed", "0", "--variant", "Pretrain"]) == 0
    capsys.readouterr()
    assert main(["table", str(root)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "name,params,error_rate,data_fraction,seed"
    names = [l.split(",")[0] for l in lines[1:]]
    assert names == sorted(names) and "Pretrain" in names and "Fusion-W_2" in names
    row = next(l for l in lines[1:] if l.startswith("Fusion-W_2,")).split(",")
    _, rep = audit(fusion_ckpts(root, "Fusion-W_2__frac0.6__seed0")[0], capsys)
    assert row[1] == rep["params.total"]
    (tmp_path / "empty").mkdir()
    assert main(["table", str(tmp_path / "empty")]) == 2
    assert main(["table", str(tmp_path / "nope")]) == 2


def test_table_two_seeds_and_tamper_detection(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(TOY, out=str(tmp_path))))
    for seed in ("0", "1"):
        for cmd in ("pretrain", "train-adapters"):
            assert main([cmd, "--config", str(cfg), "--seed", seed]) == 0
        assert main(["train-fusion", "--config", str(cfg), "--seed", seed, "--variant", "Fusion-P_C"]) == 0
    capsys.readouterr()
    assert main(["table", str(tmp_path)]) == 0
    rows = [l.split(",") for l in capsys.readouterr().out.splitlines()[1:]]
    assert [r[4] for r in rows] == ["0", "1"] and rows[0][1] == rows[1][1] == str(2 * 2 * 32)
    victim = next((tmp_path / "toy" / "step4").rglob("*.ckpt"))
    data = bytearray(victim.read_bytes())
    data[-1] ^= 0xFF
    victim.write_bytes(bytes(data))
    assert main(["table", str(tmp_path)]) == 3
