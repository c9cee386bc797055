"""The four training steps, run in order on a synthetic corpus.

1. pretrain the backbone on undistorted speech, then freeze it;
2. train one adapter jointly on source speakers;
3. clone it per source speaker and train each clone on that speaker alone;
4. train a fusion layer (or another row variant) on a target speaker's folds.

The backbone and adapters are frozen before they are reused, so their
outputs are computed once and cached.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..adapter import AdapterLayer, clone_adapter, stack_adapter_outputs
from ..analysis import build_wsigma, build_wuv, count_parameters, svd_decompose
from ..config import RunConfig
from ..encoder import AdaptedModel, Backbone, combine_losses, encode, logits_losses
from ..errors import InvariantViolation, StateError
from ..fusion import FusionLayer, fixed_value, fusion_forward, reg_loss
from ..nn import Module
from ..tensor import Tensor, no_grad
from .corpus import SyntheticSpeaker, derive_rng, generate_canonical, generate_corpus
from .metrics import corpus_error_rate, token_accuracy
from .splits import SplitPlan, holdout_split, plan_from_corpus, target_fold
from .training import FitResult, TrainConfig, fit
from .variants import Variant, parse_variant, resolved_name

logger = logging.getLogger(__name__)


@dataclass
class Features:
    """Cached encoder outputs (and optionally stacked adapter outputs) with labels."""

    y_o: np.ndarray
    labels: np.ndarray
    y_a: Optional[np.ndarray] = None

    def take(self, idx) -> "Features":
        idx = np.asarray(idx)
        y_a = None if self.y_a is None else self.y_a[:, idx]
        return Features(self.y_o[idx], self.labels[idx], y_a)

    @staticmethod
    def concat(parts: List["Features"]) -> "Features":
        y_a = None if parts[0].y_a is None else np.concatenate([p.y_a for p in parts], axis=1)
        return Features(np.concatenate([p.y_o for p in parts]), np.concatenate([p.labels for p in parts]), y_a)

    def __len__(self) -> int:
        return len(self.labels)


SlotFn = Callable[[Features], Tensor]


@dataclass
class Evaluation:
    accuracy: float
    loss: float
    error_rate: float


def _objective(backbone: Backbone, slot: SlotFn, fb: Features, cfg: TrainConfig,
               reg_fn: Optional[Callable[[], Tensor]] = None):
    logits_p, logits_a = backbone.heads(slot(fb))
    l_trans, l_aux = logits_losses(logits_p, logits_a, fb.labels)
    reg = reg_fn() if reg_fn is not None else None
    return combine_losses(l_trans, l_aux, reg, cfg.lambda1, cfg.lambda2), logits_p


def evaluate(backbone: Backbone, slot: SlotFn, fb: Features, cfg: TrainConfig,
             reg_fn: Optional[Callable[[], Tensor]] = None) -> Evaluation:
    with no_grad():
        loss, logits = _objective(backbone, slot, fb, cfg, reg_fn)
    pred = logits.data.argmax(axis=-1)
    return Evaluation(token_accuracy(pred, fb.labels), loss.item(), corpus_error_rate(pred, fb.labels))


def train_slot(backbone: Backbone, slot: SlotFn, params: Dict, train: Features, valid: Features,
               cfg: TrainConfig, rng: np.random.Generator, reg_fn=None) -> FitResult:
    def batch_loss(idx):
        return _objective(backbone, slot, train.take(idx), cfg, reg_fn)[0]

    def validate():
        ev = evaluate(backbone, slot, valid, cfg, reg_fn)
        return ev.accuracy, ev.loss

    return fit(params, batch_loss, validate, len(train), cfg, rng)


def identity_slot(fb: Features) -> Tensor:
    return Tensor(fb.y_o)


def adapter_slot(adapter: AdapterLayer) -> SlotFn:
    return lambda fb: adapter(Tensor(fb.y_o))


def fusion_slot(layer: FusionLayer) -> SlotFn:
    return lambda fb: fusion_forward(layer, Tensor(fb.y_o), Tensor(fb.y_a))


def average_slot(fb: Features) -> Tensor:
    return Tensor(fb.y_a.mean(axis=0))


@dataclass
class FoldOutcome:
    target: str
    fold: int
    params: Optional[int]
    valid: Evaluation
    test: Evaluation
    initial_valid_loss: Optional[float] = None
    state: Dict[str, np.ndarray] = field(default_factory=dict)
    epochs: int = 0


@dataclass
class VariantOutcome:
    name: str
    data_fraction: float
    folds: List[FoldOutcome]

    @property
    def params(self) -> Optional[int]:
        return self.folds[0].params if self.folds else None

    @property
    def test_error(self) -> float:
        return float(np.mean([f.test.error_rate for f in self.folds]))

    @property
    def valid_error(self) -> float:
        return float(np.mean([f.valid.error_rate for f in self.folds]))

    @property
    def valid_loss(self) -> float:
        return float(np.mean([f.valid.loss for f in self.folds]))


def _snapshot(named) -> Dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in named}


def _changed(before: Dict[str, np.ndarray], named) -> List[str]:
    now = dict(named)
    return [n for n, arr in before.items() if n in now and not np.array_equal(arr, now[n].data)]


class PipelineState:
    """Everything produced so far by a seeded run."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.seed = config.seed
        self.canonical: SyntheticSpeaker = generate_canonical(config.corpus, config.seed)
        speakers = generate_corpus(config.corpus, config.seed)
        self.speakers: Dict[str, SyntheticSpeaker] = {s.speaker_id: s for s in speakers}
        self.plan: SplitPlan = plan_from_corpus(speakers, config.fusion.target_subset, config.fusion.data_fraction)
        self.backbone: Optional[Backbone] = None
        self.shared_adapter: Optional[AdapterLayer] = None
        self.source_adapters: Dict[str, AdapterLayer] = {}
        self.completed = 0
        self.logs: Dict[int, dict] = {}
        self.outcomes: Dict[Tuple[str, float], VariantOutcome] = {}
        self._encodings: Dict[str, np.ndarray] = {}
        self._adapter_outputs: Dict[str, np.ndarray] = {}

    # -- cached features ----------------------------------------------------
    def encoding(self, speaker_id: str) -> np.ndarray:
        if speaker_id not in self._encodings:
            with no_grad():
                self._encodings[speaker_id] = encode(self.backbone, self.speakers[speaker_id].inputs).data
        return self._encodings[speaker_id]

    def features(self, speaker_id: str, with_adapters: bool = False) -> Features:
        spk = self.speakers[speaker_id]
        y_o = self.encoding(speaker_id)
        y_a = None
        if with_adapters:
            if speaker_id not in self._adapter_outputs:
                with no_grad():
                    self._adapter_outputs[speaker_id] = stack_adapter_outputs(
                        list(self.source_adapters.values()), y_o).data
            y_a = self._adapter_outputs[speaker_id]
        return Features(y_o, spk.labels, y_a)

    def frozen_named(self):
        """Parameters that no later step may change, namespaced as in checkpoints."""
        named = []
        if self.backbone is not None:
            named += list(self.backbone.named_parameters("backbone/"))
        if self.shared_adapter is not None and self.completed >= 2:
            named += list(self.shared_adapter.named_parameters("adapter/shared/"))
        for sid, a in self.source_adapters.items():
            named += list(a.named_parameters(f"adapter/{sid}/"))
        return named


def _require(state: PipelineState, step: int) -> None:
    if step == 4:
        if state.completed < 3:
            raise StateError(f"step 4 needs steps 1-3 first (completed: {state.completed})")
    elif state.completed != step - 1:
        raise StateError(f"step {step} cannot run after step {state.completed}")
    if step >= 2 and any(p.requires_grad for p in state.backbone.parameters()):
        raise InvariantViolation("backbone must be frozen before adapter training")
    if step == 4 and any(p.requires_grad for a in state.source_adapters.values() for p in a.parameters()):
        raise InvariantViolation("source adapters must be frozen before fusion training")


def _step1(state: PipelineState) -> dict:
    cfg = state.config
    backbone = Backbone(cfg.model, derive_rng(state.seed, "backbone-init"))
    model = AdaptedModel(backbone)
    spk = state.canonical
    tr, va = holdout_split(len(spk), state.seed, "canonical")
    pcfg = cfg.pretrain

    def objective(idx):
        lp, la = model(spk.inputs[idx])
        l1, l2 = logits_losses(lp, la, spk.labels[idx])
        return combine_losses(l1, l2, None, pcfg.lambda1, pcfg.lambda2), lp

    def batch_loss(idx):
        return objective(tr[idx])[0]

    def validate():
        loss, lp = objective(va)
        return token_accuracy(lp.data.argmax(-1), spk.labels[va]), loss.item()

    params = dict(backbone.named_parameters())
    result = fit(params, batch_loss, validate, len(tr), pcfg, derive_rng(state.seed, "step1"))
    backbone.freeze()
    state.backbone = backbone
    return {"valid_accuracy": result.final[0], "valid_loss": result.final[1], "epochs": len(result.history)}


def _step2(state: PipelineState) -> dict:
    cfg = state.config
    d = cfg.model.model_dim
    adapter = AdapterLayer(d, cfg.adapter.d_inner, derive_rng(state.seed, "shared-adapter"), cfg.adapter.activation)
    split = state.plan.shared_adapter_split()
    if split is not None:
        train = Features.concat([state.features(s) for s in split[0]])
        valid = Features.concat([state.features(s) for s in split[1]])
    else:
        trains, valids = [], []
        for sid in state.plan.source_speakers:
            fb = state.features(sid)
            tr, va = holdout_split(len(fb), state.seed, f"step2-{sid}")
            trains.append(fb.take(tr))
            valids.append(fb.take(va))
        train, valid = Features.concat(trains), Features.concat(valids)
    result = train_slot(state.backbone, adapter_slot(adapter), dict(adapter.named_parameters()),
                        train, valid, cfg.train, derive_rng(state.seed, "step2"))
    adapter.freeze()
    state.shared_adapter = adapter
    return {"valid_accuracy": result.final[0], "valid_loss": result.final[1], "epochs": len(result.history),
            "held_out_subset": split is not None}


def _step3(state: PipelineState) -> dict:
    cfg = state.config
    info = {}
    for sid in state.plan.source_speakers:
        adapter = clone_adapter(state.shared_adapter)
        fb = state.features(sid)
        tr, va = holdout_split(len(fb), state.seed, f"step3-{sid}")
        result = train_slot(state.backbone, adapter_slot(adapter), dict(adapter.named_parameters()),
                            fb.take(tr), fb.take(va), cfg.train, derive_rng(state.seed, "step3", sid))
        adapter.freeze()
        state.source_adapters[sid] = adapter
        info[sid] = {"valid_accuracy": result.final[0], "epochs": len(result.history)}
    return info


def _fit_fold(state: PipelineState, variant: Variant, fb: Features, fold, rng, cfg: TrainConfig) -> FoldOutcome:
    backbone = state.backbone
    train, valid, test = fb.take(fold.train), fb.take(fold.valid), fb.take(fold.test)
    if variant.kind == "pretrain":
        slot, reg_fn, params = identity_slot, None, None
    elif variant.kind == "pretrain_adpt":
        slot, reg_fn, params = adapter_slot(state.shared_adapter), None, None
    elif variant.kind == "source_avg":
        slot, reg_fn, params = average_slot, None, None
    elif variant.kind == "target_adpt":
        adapter = clone_adapter(state.shared_adapter)
        slot, reg_fn = adapter_slot(adapter), None
        module: Module = adapter
        prefix = "adapter/target/"
    elif variant.kind == "fusion":
        layer = FusionLayer(variant.fusion_config(len(state.source_adapters)), backbone.config.model_dim, rng)
        slot = fusion_slot(layer)
        reg_fn = (lambda: reg_loss(layer)) if layer.value is not None else None
        module = layer
        prefix = "fusion/"
    else:
        raise StateError(f"variant kind {variant.kind!r} is not trained directly")

    if variant.trains:
        named = dict(module.named_parameters(prefix))
        initial = evaluate(backbone, slot, valid, cfg, reg_fn).loss
        result = train_slot(backbone, slot, named, train, valid, cfg, rng, reg_fn)
        params = count_parameters(module).total
        state_dict = {n: p.data.copy() for n, p in named.items()}
        epochs = len(result.history)
    else:
        initial, state_dict, epochs = None, {}, 0
    return FoldOutcome(fold=-1, target="", params=params,
                       valid=evaluate(backbone, slot, valid, cfg, reg_fn),
                       test=evaluate(backbone, slot, test, cfg, reg_fn),
                       initial_valid_loss=initial, state=state_dict, epochs=epochs)


def _ablate(state: PipelineState, dense: FoldOutcome, kind: str, fb: Features, fold, cfg) -> FoldOutcome:
    W = dense.state["fusion/value/W"]
    parts = svd_decompose(W)
    M = build_wuv(parts).matrix if kind == "uv" else build_wsigma(parts, W).matrix
    layer = FusionLayer(parse_variant("Fusion-W").fusion_config(len(state.source_adapters)), W.shape[0])
    layer.value = fixed_value(M)
    slot = fusion_slot(layer)
    valid, test = fb.take(fold.valid), fb.take(fold.test)
    return FoldOutcome(fold=-1, target="", params=None,
                       valid=evaluate(state.backbone, slot, valid, cfg),
                       test=evaluate(state.backbone, slot, test, cfg))


def train_variant(state: PipelineState, name: str, data_fraction: Optional[float] = None,
                  c_couples: Optional[int] = None, folds=None) -> VariantOutcome:
    """Train (or evaluate) one result-table row on every target speaker and fold."""
    cfg = state.config
    fraction = cfg.fusion.data_fraction if data_fraction is None else data_fraction
    c_couples = cfg.fusion.c_couples if c_couples is None else c_couples
    folds = cfg.fusion.folds if folds is None else folds
    name = resolved_name(name, c_couples)
    key = (name, float(fraction))
    if key in state.outcomes:
        return state.outcomes[key]
    variant = parse_variant(name, c_couples)
    dense = train_variant(state, "Fusion-W", fraction, c_couples, folds) if variant.kind == "ablation" else None
    outcomes = []
    for target in state.plan.target_speakers:
        fb = state.features(target, with_adapters=True)
        for i, f in enumerate(folds):
            fold = target_fold(len(fb), f, state.seed, target, fraction)
            if variant.kind == "ablation":
                out = _ablate(state, dense.folds[len(outcomes)], variant.ablation, fb, fold, cfg.train)
            else:
                rng = derive_rng(state.seed, "step4", name, target, f, repr(float(fraction)))
                out = _fit_fold(state, variant, fb, fold, rng, cfg.train)
            out.target, out.fold = target, f
            outcomes.append(out)
    result = VariantOutcome(name, float(fraction), outcomes)
    state.outcomes[key] = result
    return result


def _step4(state: PipelineState) -> dict:
    fcfg = state.config.fusion
    out = train_variant(state, fcfg.variant, fcfg.data_fraction, fcfg.c_couples)
    return {"variant": out.name, "params": out.params, "valid_error": out.valid_error, "test_error": out.test_error}


_STEPS = {1: _step1, 2: _step2, 3: _step3, 4: _step4}


def run_step(step: int, state: PipelineState, config: Optional[RunConfig] = None) -> PipelineState:
    """Execute one step in place, enforcing order and the freeze contract."""
    if step not in _STEPS:
        raise StateError(f"unknown step {step}")
    if config is not None:
        state.config = config
    _require(state, step)
    frozen = state.frozen_named()
    before = _snapshot(frozen)
    info = _STEPS[step](state)
    moved = _changed(before, frozen)
    if moved:
        raise InvariantViolation(f"step {step} modified frozen parameters: {moved[:5]}")
    info["frozen_checked"] = len(before)
    state.logs[step] = info
    state.completed = max(state.completed, step)
    logger.info("step %d done: %s", step, {k: v for k, v in info.items() if not isinstance(v, dict)})
    return state


def run_pipeline(config: RunConfig, through: int = 4) -> PipelineState:
    state = PipelineState(config)
    for step in range(1, through + 1):
        run_step(step, state)
    return state
