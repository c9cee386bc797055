"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 missing prerequisite,
3 numerical invariant violation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import analysis
from .adapter import AdapterLayer
from .checkpoint import Checkpoint, file_digest, load_checkpoint, prefixed, save_checkpoint
from .config import RunConfig, load_config
from .encoder import Backbone
from .errors import ConfigError, DataError, InvariantViolation, MissingArtifactError, StateError
from .householder import HouseholderStack, materialize, rotation_only
from .pipeline.corpus import write_corpus
from .pipeline.matrix import ResultRow, ResultTable, row_from_outcome
from .pipeline.steps import PipelineState, run_step, train_variant
from .pipeline.variants import parse_variant, resolved_name

log = logging.getLogger("hhfusion")

OUT_ENV = "HHFUSION_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3
ORTHOGONALITY_TOL = 1e-9


# ---------------------------------------------------------------------------
# run directories and manifests
# ---------------------------------------------------------------------------
def _upstream_hash(cfg: RunConfig) -> str:
    d = cfg.to_dict()
    keep = {k: d[k] for k in ("seed", "model", "adapter", "corpus", "pretrain", "train")}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()


def _portable(cfg: RunConfig) -> dict:
    # checkpoints must not depend on where the run directory lives
    d = cfg.to_dict()
    d.pop("out")
    return d


def run_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out) / cfg.experiment


def _content_hash(outputs: Dict[str, str]) -> str:
    blob = "".join(f"{k}:{v}\n" for k, v in sorted(outputs.items()))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(directory: Path, command: str, cfg: RunConfig, outputs: Dict[str, str], **extra) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "upstream_hash": _upstream_hash(cfg),
        "seed": cfg.seed,
        "outputs": outputs,
        "content_hash": _content_hash(outputs),
        "config": cfg.to_dict(),
    }
    manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(directory: Path) -> Optional[dict]:
    path = directory / "manifest.json"
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _outputs_intact(directory: Path, manifest: dict) -> bool:
    for name, digest in manifest.get("outputs", {}).items():
        f = directory / name
        if not f.exists() or file_digest(f) != digest:
            return False
    return _content_hash(manifest.get("outputs", {})) == manifest.get("content_hash")


def _cached(directory: Path, cfg: RunConfig, key: str = "config_hash") -> bool:
    manifest = read_manifest(directory)
    if manifest is None:
        return False
    expected = cfg.digest() if key == "config_hash" else _upstream_hash(cfg)
    return manifest.get(key) == expected and _outputs_intact(directory, manifest)


def _require_file(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing prerequisite {what}: {path} not found")
    return path


# ---------------------------------------------------------------------------
# state restoration
# ---------------------------------------------------------------------------
def _restore(cfg: RunConfig, through: int) -> PipelineState:
    root = run_dir(cfg)
    state = PipelineState(cfg)
    ck1 = load_checkpoint(_require_file(root / "step1" / "backbone.ckpt", "backbone/ checkpoint (run pretrain)"))
    manifest = read_manifest(root / "step1")
    if manifest is None or manifest.get("upstream_hash") != _upstream_hash(cfg):
        raise MissingArtifactError("backbone/ checkpoint was built with a different configuration; rerun pretrain")
    backbone = Backbone(cfg.model)
    backbone.load_state_dict(ck1.namespace("backbone"))
    backbone.freeze()
    state.backbone = backbone
    state.completed = 1
    if through < 3:
        return state
    path = root / "step3" / "adapters.ckpt"
    if not path.exists():
        raise MissingArtifactError(f"missing prerequisite adapter/ namespace: {path} not found (run train-adapters)")
    ck3 = load_checkpoint(path)
    manifest = read_manifest(root / "step3")
    if manifest is None or manifest.get("upstream_hash") != _upstream_hash(cfg):
        raise MissingArtifactError("adapter/ checkpoints were built with a different configuration; rerun train-adapters")
    d, d_inner = cfg.model.model_dim, cfg.adapter.d_inner
    shared = AdapterLayer(d, d_inner, 0, cfg.adapter.activation)
    shared.load_state_dict(ck3.namespace("adapter/shared"))
    shared.freeze()
    state.shared_adapter = shared
    for sid in state.plan.source_speakers:
        if not ck3.has_namespace(f"adapter/{sid}"):
            raise MissingArtifactError(f"adapter/{sid} missing from {path}")
        a = AdapterLayer(d, d_inner, 0, cfg.adapter.activation)
        a.load_state_dict(ck3.namespace(f"adapter/{sid}"))
        a.freeze()
        state.source_adapters[sid] = a
    state.completed = 3
    return state


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_pretrain(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    step = root / "step1"
    if _cached(step, cfg, "upstream_hash"):
        print(f"cached: {step}")
        return EXIT_OK
    state = PipelineState(cfg)
    run_step(1, state)
    root.mkdir(parents=True, exist_ok=True)
    write_corpus(root / "corpus.tsv", list(state.speakers.values()))
    ckpt = Checkpoint(prefixed(state.backbone.state_dict(), "backbone"), _portable(cfg), cfg.seed,
                      {"step": 1, **{k: v for k, v in state.logs[1].items()}})
    digest = save_checkpoint(step / "backbone.ckpt", ckpt)
    write_manifest(step, "pretrain", cfg, {"backbone.ckpt": digest}, log=state.logs[1])
    print(f"wrote {step / 'backbone.ckpt'}")
    return EXIT_OK


def cmd_train_adapters(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    step3 = root / "step3"
    if _cached(step3, cfg, "upstream_hash") and _cached(root / "step2", cfg, "upstream_hash"):
        print(f"cached: {step3}")
        return EXIT_OK
    state = _restore(cfg, through=1)
    run_step(2, state)
    run_step(3, state)
    shared = prefixed(state.shared_adapter.state_dict(), "adapter/shared")
    d2 = save_checkpoint(root / "step2" / "shared_adapter.ckpt",
                         Checkpoint(shared, _portable(cfg), cfg.seed, {"step": 2}))
    write_manifest(root / "step2", "train-adapters", cfg, {"shared_adapter.ckpt": d2}, log=state.logs[2])
    tensors = dict(shared)
    for sid, a in state.source_adapters.items():
        tensors.update(prefixed(a.state_dict(), f"adapter/{sid}"))
    d3 = save_checkpoint(step3 / "adapters.ckpt", Checkpoint(tensors, _portable(cfg), cfg.seed,
                                                             {"step": 3, "speakers": list(state.source_adapters)}))
    write_manifest(step3, "train-adapters", cfg, {"adapters.ckpt": d3}, log=state.logs[3])
    print(f"wrote {step3 / 'adapters.ckpt'}")
    return EXIT_OK


def row_dir_name(name: str, fraction: float, seed: int) -> str:
    safe = re.sub(r"[^A-Za-z0-9_.-]", lambda m: {"+": "plus", "Σ": "Sigma"}.get(m.group(0), "-"), name)
    return f"{safe}__frac{fraction!r}__seed{seed}"


def cmd_train_fusion(cfg: RunConfig) -> int:
    fcfg = cfg.fusion
    name = resolved_name(fcfg.variant, fcfg.c_couples)
    variant = parse_variant(name, fcfg.c_couples)
    out_dir = run_dir(cfg) / "step4" / row_dir_name(name, fcfg.data_fraction, cfg.seed)
    if _cached(out_dir, cfg):
        print(f"cached: {out_dir}")
        return EXIT_OK
    state = _restore(cfg, through=3)
    run_step(4, state)
    outcome = train_variant(state, name, fcfg.data_fraction, fcfg.c_couples)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    meta_base = {"step": 4, "variant": name, "data_fraction": fcfg.data_fraction}
    if variant.value != "absent" and variant.kind != "ablation":
        meta_base["value_kind"] = variant.value
    for fo in outcome.folds:
        if not fo.state:
            continue
        fname = f"{fo.target}_fold{fo.fold}.ckpt"
        meta = dict(meta_base, target=fo.target, fold=fo.fold, num_couples=variant.num_couples,
                    scaled=variant.scaled, attention=variant.attention, d_att=variant.d_att)
        outputs[fname] = save_checkpoint(out_dir / fname, Checkpoint(fo.state, _portable(cfg), cfg.seed, meta))
    row = row_from_outcome(outcome, cfg.seed)
    write_manifest(out_dir, "train-fusion", cfg, outputs,
                   row={"name": row.name, "params": row.params, "error_rate": row.error_rate,
                        "data_fraction": row.data_fraction, "seed": row.seed,
                        "valid_error": row.valid_error, "valid_loss": row.valid_loss})
    print(",".join(row.csv_fields()))
    return EXIT_OK


def audit_checkpoint(ckpt: Checkpoint) -> Dict[str, object]:
    """Counts per namespace plus value-matrix diagnostics, as an ordered mapping."""
    if not ckpt.has_namespace("fusion"):
        raise MissingArtifactError("checkpoint has no fusion/ namespace")
    report: Dict[str, object] = {}
    counts = analysis.count_parameters(ckpt.tensors)
    report["params.total"] = counts.total
    for ns, n in counts.groups.items():
        report[f"params.{ns}"] = n
    fine: Dict[str, int] = {}
    for name, arr in ckpt.tensors.items():
        parts = name.split("/")
        if parts[0] == "fusion" and len(parts) > 2:
            key = "/".join(parts[:2])
            fine[key] = fine.get(key, 0) + int(arr.size)
    for ns in sorted(fine):
        report[f"params.{ns}"] = fine[ns]
    values = ckpt.namespace("fusion/value")
    if "W" in values:
        W = values["W"]
        parts = analysis.svd_decompose(W)
        c = analysis.row_norms(W)
        wuv = analysis.build_wuv(parts).matrix
        report.update({
            "value.kind": "dense",
            "value.dim": W.shape[0],
            "reg_loss": float(np.sum((np.eye(W.shape[0]) - W) ** 2)),
            "svd.sigma_max": float(parts.Sigma.max()),
            "svd.sigma_min": float(parts.Sigma.min()),
            "svd.reconstruction_error": float(np.linalg.norm(parts.reconstruct() - W)),
            "row_norm.min": float(c.min()),
            "row_norm.max": float(c.max()),
            "row_norm.mean": float(c.mean()),
            "wuv.frobenius_defect": analysis.orthogonality_report(wuv)["frobenius_defect"],
        })
    elif "householder/v1" in values:
        stack = HouseholderStack(values["householder/v1"], values["householder/v2"], values.get("householder/s"))
        P = materialize(rotation_only(stack)).data
        Wc = materialize(stack).data
        orth = analysis.orthogonality_report(P)
        report.update({
            "value.kind": "householder",
            "value.dim": stack.dim,
            "couples": stack.num_couples,
            "scaled": stack.scaled,
            "orthogonality.frobenius_defect": orth["frobenius_defect"],
            "orthogonality.max_abs_defect": orth["max_abs_defect"],
            "determinant": float(np.linalg.det(P)),
            "reg_loss": float(np.sum((np.eye(stack.dim) - Wc) ** 2)),
        })
        if stack.scaled:
            report["scaling.min"] = float(stack.s.data.min())
            report["scaling.max"] = float(stack.s.data.max())
    else:
        report["value.kind"] = "absent"
    return report


def cmd_audit(path: str) -> int:
    ckpt = load_checkpoint(_require_file(Path(path), "checkpoint"))
    report = audit_checkpoint(ckpt)
    sys.stdout.write(analysis.format_report(report))
    defect = report.get("orthogonality.frobenius_defect")
    if defect is not None and defect >= ORTHOGONALITY_TOL:
        log.error("orthogonality defect %.3e above tolerance %.1e", defect, ORTHOGONALITY_TOL)
        return EXIT_NUMERIC
    return EXIT_OK


def collect_rows(directory: Path) -> ResultTable:
    rows = []
    for mpath in sorted(directory.rglob("manifest.json")):
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if "row" not in manifest:
            continue
        if not _outputs_intact(mpath.parent, manifest):
            raise InvariantViolation(f"outputs of {mpath.parent} do not match their manifest hashes")
        r = manifest["row"]
        rows.append(ResultRow(r["name"], r["params"], r["error_rate"], r["data_fraction"], r["seed"],
                              r.get("valid_error", float("nan")), r.get("valid_loss", float("nan"))))
    return ResultTable(rows).sorted()


def cmd_table(directory: str) -> int:
    path = Path(directory)
    if not path.is_dir():
        raise MissingArtifactError(f"run directory {path} does not exist")
    table = collect_rows(path)
    if not len(table):
        raise MissingArtifactError(f"no completed runs under {path}")
    sys.stdout.write(table.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates: dict = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    out = args.out or (os.environ.get(OUT_ENV) if not args.config or cfg.out == "runs" else None)
    if out:
        updates["out"] = out
    fusion = {}
    if getattr(args, "variant", None):
        fusion["variant"] = args.variant
    if getattr(args, "data_fraction", None) is not None:
        fusion["data_fraction"] = args.data_fraction
    if getattr(args, "c_couples", None) is not None:
        fusion["c_couples"] = args.c_couples
    if fusion:
        updates["fusion"] = fusion
    return cfg.replace(**updates) if updates else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hhfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, fusion=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help=f"output root (default: ${OUT_ENV} or config 'out')")
        if fusion:
            p.add_argument("--variant", help="result-table row name, e.g. Fusion-W_C")
            p.add_argument("--data-fraction", type=float, dest="data_fraction")
            p.add_argument("--c-couples", type=int, dest="c_couples")

    run_args(sub.add_parser("pretrain", help="step 1: pretrain and freeze the backbone"))
    run_args(sub.add_parser("train-adapters", help="steps 2-3: shared and per-speaker adapters"))
    run_args(sub.add_parser("train-fusion", help="step 4: train one result-table row"), fusion=True)
    p = sub.add_parser("audit", help="parameter counts and value-matrix diagnostics of a checkpoint")
    p.add_argument("checkpoint")
    p = sub.add_parser("table", help="aggregate completed rows into the result CSV")
    p.add_argument("run_dir")
    p = sub.add_parser("default-config", help="print the default configuration")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "pretrain":
            return cmd_pretrain(_load(args))
        if args.command == "train-adapters":
            return cmd_train_adapters(_load(args))
        if args.command == "train-fusion":
            return cmd_train_fusion(_load(args))
        if args.command == "audit":
            return cmd_audit(args.checkpoint)
        if args.command == "table":
            return cmd_table(args.run_dir)
        if args.command == "default-config":
            sys.stdout.write(RunConfig().to_json())
            return EXIT_OK
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InvariantViolation, StateError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
