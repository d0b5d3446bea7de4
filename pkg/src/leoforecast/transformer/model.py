"""Encoder-decoder forecaster with ProbSparse self-attention.

The encoder stacks ProbSparse self-attention and position-wise feed-forward
blocks (post-norm residuals). The decoder sees the last ``label_len`` known
values followed by ``pred_len`` zero placeholders, applies masked ProbSparse
self-attention and full cross-attention to the encoder output, and a linear
head maps every position to a value. The last ``pred_len`` outputs are the
forecast, produced in a single pass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from .attention import attention, num_active_queries
from .autodiff import Tensor, concat, dropout, gelu, layer_norm
from .timefeatures import N_TIME_FEATURES

__all__ = ["TransformerConfig", "Module", "Linear", "SparseTransformer"]


@dataclass
class TransformerConfig:
    seq_len: int = 96
    pred_len: int = 24
    label_len: int | None = None
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 1
    d_ff: int = 128
    factor: float = 5.0
    dropout: float = 0.05
    learning_rate: float = 1e-4
    lr_decay: float = 0.5
    batch_size: int = 32
    epochs: int = 10
    patience: int = 3
    seed: int = 0
    dtype: str = "float64"
    sample_keys: bool = False
    max_train_windows: int | None = None
    max_val_windows: int | None = 2000
    zero_head: bool = False

    def __post_init__(self) -> None:
        if self.label_len is None:
            self.label_len = self.seq_len // 2
        if min(self.seq_len, self.pred_len, self.d_model, self.n_heads, self.d_ff) < 1:
            raise ValueError("lengths and widths must be positive")
        if self.label_len < 0 or self.label_len > self.seq_len:
            raise ValueError("label_len must lie in [0, seq_len]")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def dec_len(self) -> int:
        return self.label_len + self.pred_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TransformerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


class Module:
    """Parameter container; parameters are discovered from attributes in order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype, bias: bool = True):
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.weight = _param(rng.uniform(-limit, limit, (n_in, n_out)).astype(dtype), "weight")
        self.bias = _param(np.zeros(n_out, dtype=dtype), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, dtype):
        self.gamma = _param(np.ones(d, dtype=dtype), "gamma")
        self.beta = _param(np.zeros(d, dtype=dtype), "beta")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class AttentionLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, dtype):
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.factor = cfg.factor
        self.sample_keys = cfg.sample_keys
        self.query = Linear(d, d, rng, dtype)
        self.key = Linear(d, d, rng, dtype)
        self.value = Linear(d, d, rng, dtype)
        self.out = Linear(d, d, rng, dtype)

    def _heads(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, xq: Tensor, xkv: Tensor, causal: bool = False, sparse: bool = True,
                 rng: np.random.Generator | None = None) -> Tensor:
        b, lq, d = xq.shape
        lk = xkv.shape[1]
        q = self._heads(self.query(xq))
        k = self._heads(self.key(xkv))
        v = self._heads(self.value(xkv))
        u = num_active_queries(lq, self.factor) if sparse else lq
        key_sample = None
        if sparse and self.sample_keys and u < lq:
            n_sample = min(lk, num_active_queries(lk, self.factor))
            picker = rng if rng is not None else np.random.default_rng(0)
            key_sample = np.sort(picker.choice(lk, n_sample, replace=False))
        ctx = attention(q, k, v, u=u, causal=causal, key_sample=key_sample)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, lq, d)
        return self.out(ctx)


class EncoderLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, dtype):
        self.attn = AttentionLayer(cfg, rng, dtype)
        self.ff_in = Linear(cfg.d_model, cfg.d_ff, rng, dtype)
        self.ff_out = Linear(cfg.d_ff, cfg.d_model, rng, dtype)
        self.norm1 = LayerNorm(cfg.d_model, dtype)
        self.norm2 = LayerNorm(cfg.d_model, dtype)
        self.p = cfg.dropout

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        x = self.norm1(x + dropout(self.attn(x, x, rng=rng), self.p, rng))
        y = self.ff_out(dropout(gelu(self.ff_in(x)), self.p, rng))
        return self.norm2(x + dropout(y, self.p, rng))


class DecoderLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, dtype):
        self.self_attn = AttentionLayer(cfg, rng, dtype)
        self.cross_attn = AttentionLayer(cfg, rng, dtype)
        self.ff_in = Linear(cfg.d_model, cfg.d_ff, rng, dtype)
        self.ff_out = Linear(cfg.d_ff, cfg.d_model, rng, dtype)
        self.norm1 = LayerNorm(cfg.d_model, dtype)
        self.norm2 = LayerNorm(cfg.d_model, dtype)
        self.norm3 = LayerNorm(cfg.d_model, dtype)
        self.p = cfg.dropout

    def __call__(self, x: Tensor, memory: Tensor, rng=None) -> Tensor:
        x = self.norm1(x + dropout(self.self_attn(x, x, causal=True, rng=rng), self.p, rng))
        x = self.norm2(x + dropout(self.cross_attn(x, memory, sparse=False), self.p, rng))
        y = self.ff_out(dropout(gelu(self.ff_in(x)), self.p, rng))
        return self.norm3(x + dropout(y, self.p, rng))


class DataEmbedding(Module):
    """Value projection + time-feature projection + fixed sinusoidal position code."""

    def __init__(self, cfg: TransformerConfig, max_len: int, rng: np.random.Generator, dtype):
        self.value = Linear(1, cfg.d_model, rng, dtype)
        self.time = Linear(N_TIME_FEATURES, cfg.d_model, rng, dtype, bias=False)
        pos = np.arange(max_len)[:, None]
        div = np.exp(np.arange(0, cfg.d_model, 2) * (-math.log(10000.0) / cfg.d_model))
        pe = np.zeros((max_len, cfg.d_model))
        pe[:, 0::2] = np.sin(pos * div)
        pe[:, 1::2] = np.cos(pos * div)[:, : cfg.d_model // 2]
        self._pe = pe.astype(dtype)
        self.p = cfg.dropout

    def __call__(self, x: Tensor, t: Tensor, rng=None) -> Tensor:
        b, n = x.shape
        h = self.value(x.reshape(b, n, 1)) + self.time(t) + Tensor(self._pe[:n])
        return dropout(h, self.p, rng)


class SparseTransformer(Module):
    def __init__(self, cfg: TransformerConfig):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        max_len = max(cfg.seq_len, cfg.dec_len)
        self.enc_embed = DataEmbedding(cfg, max_len, rng, dtype)
        self.dec_embed = DataEmbedding(cfg, max_len, rng, dtype)
        self.encoder = [EncoderLayer(cfg, rng, dtype) for _ in range(cfg.enc_layers)]
        self.enc_norm = LayerNorm(cfg.d_model, dtype)
        self.decoder = [DecoderLayer(cfg, rng, dtype) for _ in range(cfg.dec_layers)]
        self.dec_norm = LayerNorm(cfg.d_model, dtype)
        self.head = Linear(cfg.d_model, 1, rng, dtype)
        if cfg.zero_head:
            self.head.weight.data[...] = 0.0
        self.forward_calls = 0

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.cfg.dtype)

    def __call__(self, x_enc, t_enc, t_dec, rng: np.random.Generator | None = None) -> Tensor:
        return self.forward(x_enc, t_enc, t_dec, rng)

    def forward(self, x_enc, t_enc, t_dec, rng: np.random.Generator | None = None) -> Tensor:
        """Predict ``(batch, pred_len)`` from ``(batch, seq_len)`` inputs.

        ``t_enc`` and ``t_dec`` hold the time features of the encoder window
        and of the decoder span (last ``label_len`` inputs plus the horizon).
        ``rng`` enables dropout; leave it None for deterministic inference.
        """
        cfg = self.cfg
        self.forward_calls += 1
        x_enc = _as_tensor(x_enc, self.dtype)
        t_enc = _as_tensor(t_enc, self.dtype)
        t_dec = _as_tensor(t_dec, self.dtype)
        if x_enc.ndim == 1:
            x_enc = x_enc.reshape(1, -1)
            t_enc = t_enc.reshape(1, *t_enc.shape)
            t_dec = t_dec.reshape(1, *t_dec.shape)
        b, n = x_enc.shape
        if n != cfg.seq_len:
            raise ValueError(f"encoder input has length {n}, expected {cfg.seq_len}")
        if t_enc.shape != (b, n, N_TIME_FEATURES):
            raise ValueError(f"encoder time features have shape {t_enc.shape}")
        if t_dec.shape != (b, cfg.dec_len, N_TIME_FEATURES):
            raise ValueError(f"decoder time features have shape {t_dec.shape}")

        h = self.enc_embed(x_enc, t_enc, rng)
        for layer in self.encoder:
            h = layer(h, rng)
        memory = self.enc_norm(h)

        placeholder = Tensor(np.zeros((b, cfg.pred_len), dtype=self.dtype))
        known = x_enc[:, n - cfg.label_len :] if cfg.label_len else None
        x_dec = concat([known, placeholder], axis=1) if known is not None else placeholder
        y = self.dec_embed(x_dec, t_dec, rng)
        for layer in self.decoder:
            y = layer(y, memory, rng)
        y = self.dec_norm(y)
        out = self.head(y).reshape(b, cfg.dec_len)
        return out[:, cfg.label_len :]


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
