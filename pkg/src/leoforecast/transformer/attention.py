"""Scaled dot-product attention and its ProbSparse (top-u query) variant.

Arrays carry arbitrary leading batch axes: Q is ``(..., L_Q, d_k)``, K is
``(..., L_K, d_k)``, V is ``(..., L_K, d_v)``.

Only the ``u`` queries with the largest max-minus-mean score get a full
softmax row. The remaining "lazy" queries output the mean of V, or the
running mean of the rows they may see under a causal mask.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .autodiff import Function, Tensor

__all__ = [
    "OpCounter",
    "softmax",
    "full_attention",
    "sparsity_score",
    "top_u",
    "num_active_queries",
    "prob_sparse_attention",
    "SparseAttention",
    "attention",
]


class OpCounter(Counter):
    """Tally of multiply/add/exp operations, keyed by stage."""

    @property
    def total(self) -> int:
        return sum(self.values())


def _check(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> None:
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"Q and K feature dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"K and V lengths differ: {k.shape[-2]} vs {v.shape[-2]}")
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise ValueError("Q, K and V batch shapes differ")


def _weighted_sum(w: np.ndarray, v: np.ndarray, exact: bool = True) -> np.ndarray:
    # einsum accumulates each output element independently of how many rows
    # w has, so a selected row is bit-identical to the same row of full attention.
    # BLAS matmul is much faster but its rounding depends on the block shape.
    return np.einsum("...ij,...jk->...ik", w, v) if exact else w @ v


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _causal_mask(lq: int, lk: int) -> np.ndarray:
    """True where query i may not see key j (j > i)."""
    return np.triu(np.ones((lq, lk), dtype=bool), k=1)


def full_attention(q, k, v, causal_mask: bool = False) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V with an optional lower-triangular mask."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    _check(q, k, v)
    scores = _scores(q, k)
    if causal_mask:
        scores = np.where(_causal_mask(q.shape[-2], k.shape[-2]), -np.inf, scores)
    return _weighted_sum(softmax(scores), v)


def _scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    return (q @ np.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))


def sparsity_score(q, k, key_sample: np.ndarray | None = None) -> np.ndarray:
    """Max-minus-mean of each query's scaled dot products over the keys.

    ``key_sample`` restricts the statistic to a subset of key indices (the
    sampled approximation); by default every key is used.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if key_sample is not None:
        k = k[..., key_sample, :]
    s = _scores(q, k)
    return s.max(axis=-1) - s.mean(axis=-1)


def num_active_queries(l_q: int, factor: float = 5.0) -> int:
    """u = max(1, ceil(c ln L_Q)), capped at L_Q."""
    return int(min(l_q, max(1, math.ceil(factor * math.log(l_q))))) if l_q > 1 else 1


def top_u(scores: np.ndarray, u: int) -> np.ndarray:
    """Indices of the u largest scores along the last axis; ties go to the lower index."""
    return np.argsort(-scores, axis=-1, kind="stable")[..., :u]


def _lazy_fill(v: np.ndarray, l_q: int, causal: bool) -> np.ndarray:
    if causal:
        csum = np.cumsum(v, axis=-2)[..., :l_q, :]
        counts = np.arange(1, l_q + 1, dtype=v.dtype)[:, None]
        if l_q > v.shape[-2]:
            raise ValueError("causal attention needs L_Q <= L_K")
        return csum / counts
    mean = v.mean(axis=-2, keepdims=True)
    return np.broadcast_to(mean, v.shape[:-2] + (l_q, v.shape[-1])).copy()


def _sparse_forward(q, k, v, u, causal, key_sample=None, counter=None, exact=True):
    """Shared forward pass. Returns the output plus what backward needs."""
    lq, lk, dk, dv = q.shape[-2], k.shape[-2], q.shape[-1], v.shape[-1]
    scale = 1.0 / math.sqrt(dk)
    if u >= lq and key_sample is None:
        scores = _scores(q, k)
        idx = np.broadcast_to(np.arange(lq), q.shape[:-2] + (lq,))
    elif key_sample is None:
        # exact scoring already produces every row the selected queries need
        full = _scores(q, k)
        m = full.max(axis=-1) - full.mean(axis=-1)
        idx = top_u(m, u)  # (..., u)
        scores = np.take_along_axis(full, idx[..., None], axis=-2)  # (..., u, L_K)
    else:
        idx = top_u(sparsity_score(q, k, key_sample), u)
        q_sel = np.take_along_axis(q, idx[..., None], axis=-2)
        scores = _scores(q_sel, k)
    if causal:
        scores = np.where(idx[..., None] < np.arange(lk), -np.inf, scores)
    w = softmax(scores)
    out = _lazy_fill(v, lq, causal)
    np.put_along_axis(out, idx[..., None], _weighted_sum(w, v, exact), axis=-2)

    if counter is not None:
        batch = int(np.prod(q.shape[:-2], dtype=np.int64))
        n_keys = lk if key_sample is None else len(key_sample)
        counter["score"] += batch * lq * n_keys * (2 * dk + 1)
        # softmax (max, exp, sum, divide) and the weighted sum of values
        counter["attend"] += batch * u * lk * (4 + 2 * dv)
        counter["lazy"] += batch * (lk + lq) * dv
    return out, idx, w, scale


def prob_sparse_attention(
    q,
    k,
    v,
    u: int,
    causal_mask: bool = False,
    key_sample: np.ndarray | None = None,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Attention where only the top-u queries by sparsity score get full rows."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    _check(q, k, v)
    lq = q.shape[-2]
    if not 1 <= u <= lq:
        raise ValueError(f"u must lie in [1, {lq}], got {u}")
    out, *_ = _sparse_forward(q, k, v, u, causal_mask, key_sample, counter)
    return out


class SparseAttention(Function):
    """Differentiable ProbSparse attention.

    The top-u selection is a constant of each step; gradients flow through
    the softmax rows of the selected queries and through the mean (or running
    mean) used for the lazy ones.
    """

    def forward(self, q, k, v, u, causal, key_sample=None):
        self.q, self.k, self.v, self.causal = q, k, v, causal
        out, self.idx, self.w, self.scale = _sparse_forward(
            q, k, v, u, causal, key_sample, exact=False
        )
        return out

    def backward(self, g):
        q, k, v, idx, w, scale = self.q, self.k, self.v, self.idx, self.w, self.scale
        lq, lk = q.shape[-2], k.shape[-2]
        g_sel = np.take_along_axis(g, idx[..., None], axis=-2)  # (..., u, dv)
        g_lazy = g.copy()
        np.put_along_axis(g_lazy, idx[..., None], 0.0, axis=-2)

        if self.causal:
            counts = np.arange(1, lq + 1, dtype=g.dtype)[:, None]
            per_row = g_lazy / counts
            # out_i = mean(v_0..v_i): dv_j = sum_{i >= j} g_i / (i + 1)
            dv = np.zeros_like(v)
            dv[..., :lq, :] = np.flip(np.cumsum(np.flip(per_row, -2), axis=-2), -2)
        else:
            dv = np.broadcast_to(g_lazy.sum(axis=-2, keepdims=True) / lk, v.shape).copy()

        dv += np.swapaxes(w, -1, -2) @ g_sel
        dw = g_sel @ np.swapaxes(v, -1, -2)
        ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True)) * scale
        q_sel = np.take_along_axis(q, idx[..., None], axis=-2)
        dq = np.zeros_like(q)
        np.put_along_axis(dq, idx[..., None], ds @ k, axis=-2)
        dk = np.swapaxes(ds, -1, -2) @ q_sel
        return dq, dk, dv


def attention(q: Tensor, k: Tensor, v: Tensor, u: int, causal: bool = False, key_sample=None) -> Tensor:
    return SparseAttention.apply(q, k, v, u=u, causal=causal, key_sample=key_sample)
