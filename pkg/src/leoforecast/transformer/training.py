"""Training loop, one-shot inference and model persistence."""

from __future__ import annotations

import io
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from ..trace_io import Standardizer, Trace, fit_standardizer
from .autodiff import NonFiniteError, Tensor, mse_loss, no_grad
from .model import SparseTransformer, TransformerConfig
from .timefeatures import calendar_features

__all__ = [
    "TrainingDiverged",
    "TrainedModel",
    "Adam",
    "WindowSet",
    "train",
    "predict",
    "predict_batch",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

MAGIC = b"LEOF"
FORMAT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    """Loss or an intermediate tensor became non-finite."""


class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class WindowSet:
    """Sliding (input, target) windows over one standardized split."""

    values: np.ndarray
    features: np.ndarray
    seq_len: int
    pred_len: int
    label_len: int
    starts: np.ndarray

    @classmethod
    def from_trace(
        cls, trace: Trace, scaler: Standardizer, cfg: TransformerConfig, stride: int = 1
    ) -> "WindowSet":
        values = scaler.apply(trace.values)
        feats = calendar_features(trace.start_time, trace.timestamp_ms())
        n_win = len(values) - cfg.seq_len - cfg.pred_len + 1
        if n_win < 1:
            raise ValueError(
                f"split of length {len(values)} is too short for seq_len={cfg.seq_len}, "
                f"pred_len={cfg.pred_len}"
            )
        starts = np.arange(0, n_win, stride)
        return cls(values, feats, cfg.seq_len, cfg.pred_len, cfg.label_len, starts)

    def __len__(self) -> int:
        return self.starts.size

    def batch(self, starts: np.ndarray):
        s, p, lab = self.seq_len, self.pred_len, self.label_len
        enc_idx = starts[:, None] + np.arange(s)
        dec_idx = starts[:, None] + np.arange(s - lab, s + p)
        tgt_idx = starts[:, None] + s + np.arange(p)
        return (
            self.values[enc_idx],
            self.features[enc_idx],
            self.features[dec_idx],
            self.values[tgt_idx],
        )


@dataclass
class TrainedModel:
    model: SparseTransformer
    scaler: Standardizer
    history: dict = field(default_factory=dict)

    @property
    def config(self) -> TransformerConfig:
        return self.model.cfg


def _subsample(starts: np.ndarray, limit: int | None) -> np.ndarray:
    if limit is None or starts.size <= limit:
        return starts
    pick = np.linspace(0, starts.size - 1, limit).round().astype(int)
    return starts[pick]


def evaluate(model: SparseTransformer, windows: WindowSet, starts: np.ndarray, batch_size: int = 256) -> float:
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, starts.size, batch_size):
            xe, te, td, y = windows.batch(starts[i : i + batch_size])
            pred = model.forward(xe, te, td).data
            total += float(np.sum((pred - y) ** 2))
            count += y.size
    return total / count


def train(
    train_split: Trace,
    val_split: Trace,
    config: TransformerConfig,
    model: SparseTransformer | None = None,
    scaler: Standardizer | None = None,
) -> TrainedModel:
    """Fit the forecaster by mini-batch Adam on MSE with early stopping.

    Windows slide with stride 1 over the training split and are reshuffled
    each epoch; ``max_train_windows`` caps how many are visited per epoch.
    The learning rate decays by ``lr_decay`` after every epoch, and the
    weights with the best validation MSE are restored at the end.
    """
    cfg = config
    scaler = scaler or fit_standardizer(train_split)
    model = model or SparseTransformer(cfg)
    tr = WindowSet.from_trace(train_split, scaler, cfg)
    va = WindowSet.from_trace(val_split, scaler, cfg)
    val_starts = _subsample(va.starts, cfg.max_val_windows)
    rng = np.random.default_rng(cfg.seed + 1)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate)

    history: dict[str, list[float]] = {"train_loss": [], "val_loss": [], "lr": [], "seconds": []}
    best = (np.inf, [p.data.copy() for p in params])
    stale = 0
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        order = rng.permutation(tr.starts)
        if cfg.max_train_windows is not None:
            order = order[: cfg.max_train_windows]
        losses = []
        for step, i in enumerate(range(0, order.size, cfg.batch_size)):
            xe, te, td, y = tr.batch(order[i : i + cfg.batch_size])
            try:
                loss = mse_loss(model.forward(xe, te, td, rng=rng), y)
                opt.zero_grad()
                loss.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite value at epoch {epoch}, step {step}, lr {opt.lr:.3g}: {exc}"
                ) from exc
            if not all(np.all(np.isfinite(p.data)) for p in params):
                raise TrainingDiverged(f"non-finite parameters after epoch {epoch}, step {step}")
            losses.append(float(loss.data))
        val = evaluate(model, va, val_starts)
        history["train_loss"].append(float(np.mean(losses)))
        history["val_loss"].append(val)
        history["lr"].append(opt.lr)
        history["seconds"].append(time.perf_counter() - tic)
        log.info("epoch %d train %.4f val %.4f (%.1fs)", epoch, history["train_loss"][-1], val,
                 history["seconds"][-1])
        if val < best[0]:
            best = (val, [p.data.copy() for p in params])
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
        opt.lr *= cfg.lr_decay
    for p, saved in zip(params, best[1]):
        p.data[...] = saved
    history["best_val_loss"] = [best[0]]
    return TrainedModel(model, scaler, history)


def _future_features(start_time: datetime, granularity_ms: int, cfg: TransformerConfig) -> tuple:
    offsets = np.arange(cfg.seq_len + cfg.pred_len, dtype=np.int64) * granularity_ms
    feats = calendar_features(start_time, offsets)
    return feats[: cfg.seq_len], feats[cfg.seq_len - cfg.label_len :]


def predict(trained: TrainedModel, window, start_time: datetime, granularity_ms: int) -> np.ndarray:
    """Forecast ``pred_len`` raw-scale values after ``window`` in one forward pass.

    ``start_time`` is the timestamp of the first value of the window.
    """
    cfg = trained.config
    x = np.asarray(window, dtype=np.float64)
    if x.size != cfg.seq_len:
        raise ValueError(f"window has length {x.size}, expected {cfg.seq_len}")
    t_enc, t_dec = _future_features(start_time, granularity_ms, cfg)
    with no_grad():
        out = trained.model.forward(trained.scaler.apply(x)[None, :], t_enc[None], t_dec[None])
    return trained.scaler.invert(out.data[0].astype(np.float64))


def predict_batch(trained: TrainedModel, windows: WindowSet, starts: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Standardized-scale forecasts for many windows (one forward pass per batch)."""
    outs = []
    with no_grad():
        for i in range(0, starts.size, batch_size):
            xe, te, td, _ = windows.batch(starts[i : i + batch_size])
            outs.append(trained.model.forward(xe, te, td).data.astype(np.float64))
    return np.concatenate(outs) if outs else np.zeros((0, trained.config.pred_len))


# --------------------------------------------------------------------------
# persistence: MAGIC, version byte, length-prefixed JSON header, then tensors
# each tagged with name, ndim and shape, stored little-endian float64


def save_model(trained: TrainedModel, path: str | Path) -> None:
    header = {
        "config": trained.config.to_dict(),
        "scaler": {"mean": trained.scaler.mean, "std": trained.scaler.std},
        "history": trained.history,
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", FORMAT_VERSION))
    raw = json.dumps(header).encode()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    named = list(trained.model.named_parameters())
    buf.write(struct.pack("<I", len(named)))
    for name, p in named:
        key = name.encode()
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<B", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> TrainedModel:
    data = memoryview(Path(path).read_bytes())
    if bytes(data[:4]) != MAGIC:
        raise ValueError(f"{path}: not a model file")
    (version,) = struct.unpack_from("<B", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    (hlen,) = struct.unpack_from("<I", data, 5)
    pos = 9
    header = json.loads(bytes(data[pos : pos + hlen]))
    pos += hlen
    cfg = TransformerConfig.from_dict(header["config"])
    model = SparseTransformer(cfg)
    params = dict(model.named_parameters())
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if count != len(params):
        raise ValueError(f"{path}: expected {len(params)} tensors, found {count}")
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = bytes(data[pos : pos + klen]).decode()
        pos += klen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        if name not in params or params[name].data.shape != tuple(shape):
            raise ValueError(f"{path}: unexpected tensor {name} {shape}")
        params[name].data[...] = arr
    scaler = Standardizer(**header["scaler"])
    return TrainedModel(model, scaler, header.get("history", {}))
