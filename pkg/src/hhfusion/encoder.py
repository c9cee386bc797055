"""Miniature transformer encoder, its two classification heads, and the hybrid loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, InputError
from .nn import LayerNorm, Linear, Module, Parameter
from .tensor import Tensor


@dataclass
class EncoderConfig:
    num_layers: int = 2
    model_dim: int = 32
    num_heads: int = 4
    ffn_dim: int = 64
    vocab_in: int = 32
    vocab_out: int = 32

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"encoder {name} must be a positive int, got {value!r}")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = 1.0 / (10000.0 ** (np.arange(0, d, 2) / d))
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: d // 2])
    return table


class SelfAttention(Module):
    def __init__(self, d: int, heads: int, rng):
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self._heads = heads

    def __call__(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self._heads
        dh = d // h

        def split(z):
            return T.transpose(T.reshape(z, (b, t, h, dh)), (0, 2, 1, 3))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        ctx = T.matmul(T.softmax(scores, axis=-1), v)
        return self.o(T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, d)))


class EncoderLayer(Module):
    """Post-norm transformer block."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.attn = SelfAttention(cfg.model_dim, cfg.num_heads, rng)
        self.norm1 = LayerNorm(cfg.model_dim)
        self.ff1 = Linear(cfg.model_dim, cfg.ffn_dim, rng)
        self.ff2 = Linear(cfg.ffn_dim, cfg.model_dim, rng)
        self.norm2 = LayerNorm(cfg.model_dim)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ff2(T.relu(self.ff1(x))))


class Backbone(Module):
    """Embedding + encoder layers (``M_O``) and the frozen output stage.

    The output stage (final layer norm and the two heads) comes after the
    adapter slot, so adapters and fusion layers feed the same heads the
    backbone was pretrained with.
    """

    def __init__(self, cfg: EncoderConfig, seed=0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.config = cfg
        d = cfg.model_dim
        self.embed = Parameter(rng.normal(0.0, 1.0, size=(cfg.vocab_in, d)))
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.num_layers)]
        self.final_norm = LayerNorm(d)
        self.head_primary = Linear(d, cfg.vocab_out, rng)
        self.head_aux = Linear(d, cfg.vocab_out, rng)

    def encode(self, tokens) -> Tensor:
        return encode(self, tokens)

    def heads(self, h: Tensor) -> Tuple[Tensor, Tensor]:
        z = self.final_norm(h)
        return self.head_primary(z), self.head_aux(z)


def encode(model: Backbone, tokens) -> Tensor:
    """``Y_O`` for a ``[T]`` sequence or a ``[B, T]`` batch of token ids."""
    cfg = model.config
    tok = np.asarray(tokens)
    if tok.size and (not np.issubdtype(tok.dtype, np.integer)):
        raise InputError(f"token ids must be integers, got dtype {tok.dtype}")
    tok = tok.astype(np.int64)
    if tok.size and (tok.min() < 0 or tok.max() >= cfg.vocab_in):
        bad = tok[(tok < 0) | (tok >= cfg.vocab_in)][0]
        raise InputError(f"token id {int(bad)} outside vocabulary of size {cfg.vocab_in}")
    single = tok.ndim == 1
    batch = tok[None] if single else tok
    if batch.ndim != 2:
        raise InputError(f"tokens must be [T] or [B, T], got shape {tok.shape}")
    b, t = batch.shape
    if t == 0:
        out = Tensor(np.zeros((b, 0, cfg.model_dim)))
    else:
        x = T.embedding(model.embed, batch) + sinusoidal_positions(t, cfg.model_dim)
        for layer in model.layers:
            x = layer(x)
        out = x
    return out[0] if single else out


class AdaptedModel(Module):
    """Backbone with an optional module in the adapter slot after the last layer.

    ``slot_name`` namespaces the slot's parameters (``adapter/<id>`` for a
    single adapter); ``None`` means the slot supplies full names itself.
    """

    def __init__(self, backbone: Backbone, slot: Optional[Callable] = None,
                 slot_name: Optional[str] = "adapter/shared"):
        self.backbone = backbone
        self._slot = slot
        self._slot_name = slot_name

    @property
    def slot(self):
        return self._slot

    def named_parameters(self, prefix: str = ""):
        yield from self.backbone.named_parameters(prefix + "backbone/")
        if isinstance(self._slot, Module):
            inner = prefix if self._slot_name is None else f"{prefix}{self._slot_name}/"
            yield from self._slot.named_parameters(inner)

    def from_encoding(self, y_o: Tensor) -> Tuple[Tensor, Tensor]:
        h = y_o if self._slot is None else self._slot(y_o)
        return self.backbone.heads(h)

    def __call__(self, tokens) -> Tuple[Tensor, Tensor]:
        return self.from_encoding(encode(self.backbone, tokens))


def task_losses(model, batch) -> Tuple[Tensor, Tensor]:
    """Cross-entropy of the primary and auxiliary heads against per-token labels."""
    inputs, labels = batch
    inputs, labels = np.asarray(inputs), np.asarray(labels)
    if inputs.shape != labels.shape:
        raise DataError(f"labels shape {labels.shape} does not align with inputs {inputs.shape}")
    logits_p, logits_a = model(inputs)
    return logits_losses(logits_p, logits_a, labels)


def logits_losses(logits_p: Tensor, logits_a: Tensor, labels) -> Tuple[Tensor, Tensor]:
    labels = np.asarray(labels)
    if labels.shape != logits_p.shape[:-1]:
        raise DataError(f"labels shape {labels.shape} does not align with outputs {logits_p.shape[:-1]}")
    return T.cross_entropy(logits_p, labels), T.cross_entropy(logits_a, labels)


def combine_losses(l_trans, l_ctc, l_reg, lambda1: float, lambda2: float):
    """``(1 - lambda1) * l_trans + lambda1 * l_ctc + lambda2 * l_reg``."""
    if not 0.0 <= lambda1 <= 1.0:
        raise ConfigError(f"lambda1 must lie in [0, 1], got {lambda1}")
    if lambda2 < 0.0:
        raise ConfigError(f"lambda2 must be non-negative, got {lambda2}")
    total = (1.0 - lambda1) * l_trans + lambda1 * l_ctc
    if l_reg is not None:
        total = total + lambda2 * l_reg
    return total
