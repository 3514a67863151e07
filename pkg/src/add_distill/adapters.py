"""Attention-based adaptation of student features and object queries.

By default both adapters output the attention result directly (no residual,
no output projection). ``residual=True`` adds the adapter input to the
attention output; with zeroed value projections such an adapter starts as the
identity. Adapters exist only during distillation; student inference never
calls them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .instrument import CALL_COUNTS
from .tensor_core import (
    MlpParams,
    as_tensor,
    matmul,
    mlp_backward,
    mlp_forward,
    softmax_rows,
    softmax_rows_vjp,
)

DEFAULT_HEADS = 4


def _t(x):
    return np.ascontiguousarray(x.T)


def _mha_forward(q, k, v, heads):
    if q.shape[1] % heads or v.shape[1] % heads:
        raise DimensionError(f"channels {q.shape[1]}/{v.shape[1]} not divisible by {heads} heads")
    dq, dv = q.shape[1] // heads, v.shape[1] // heads
    scale = 1.0 / np.sqrt(dq)
    outs, probs = [], []
    for h in range(heads):
        qh = np.ascontiguousarray(q[:, h * dq:(h + 1) * dq])
        kh = np.ascontiguousarray(k[:, h * dq:(h + 1) * dq])
        vh = np.ascontiguousarray(v[:, h * dv:(h + 1) * dv])
        a = softmax_rows(matmul(qh, _t(kh)) * scale)
        probs.append(a)
        outs.append(matmul(a, vh))
    return np.concatenate(outs, axis=1), (q, k, v, heads, probs)


def _mha_backward(cache, g_out):
    q, k, v, heads, probs = cache
    dq, dv = q.shape[1] // heads, v.shape[1] // heads
    scale = 1.0 / np.sqrt(dq)
    gq, gk, gv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
    for h in range(heads):
        a = probs[h]
        sq, sv = slice(h * dq, (h + 1) * dq), slice(h * dv, (h + 1) * dv)
        go = np.ascontiguousarray(g_out[:, sv])
        gv[:, sv] = matmul(_t(a), go)
        g_logits = softmax_rows_vjp(a, matmul(go, _t(v[:, sv]))) * scale
        gq[:, sq] = matmul(g_logits, np.ascontiguousarray(k[:, sq]))
        gk[:, sq] = matmul(_t(g_logits), np.ascontiguousarray(q[:, sq]))
    return gq, gk, gv


@dataclass
class SelfAttnParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    heads: int = DEFAULT_HEADS
    residual: bool = False

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "b_q", "b_k", "b_v"):
            setattr(self, name, as_tensor(getattr(self, name)))
        c = self.w_q.shape[0]
        for w in (self.w_q, self.w_k, self.w_v):
            if w.shape != (c, c):
                raise DimensionError("self-attention projections must be C x C")
        if c % self.heads:
            raise DimensionError(f"C={c} not divisible by {self.heads} heads")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def init(cls, channels, rng, heads=DEFAULT_HEADS, qk_scale=1.0, residual=False):
        """Random query/key projections and zero biases.

        The value projection is the identity, or zero when ``residual`` is set
        so that the adapter starts as the identity map.
        """
        s = qk_scale / np.sqrt(channels)
        z = np.zeros(channels)
        return cls(
            rng.standard_normal((channels, channels)) * s,
            rng.standard_normal((channels, channels)) * s,
            np.zeros((channels, channels)) if residual else np.eye(channels),
            z, z.copy(), z.copy(),
            heads,
            residual,
        )

    def arrays(self) -> list:
        return [self.w_q, self.w_k, self.w_v, self.b_q, self.b_k, self.b_v]

    def with_arrays(self, arrays) -> "SelfAttnParams":
        return SelfAttnParams(*arrays, heads=self.heads, residual=self.residual)


def self_attention_forward(f_k, pe, params: SelfAttnParams):
    f_k = as_tensor(f_k, 3)
    pe = as_tensor(pe, 3)
    if pe.shape != f_k.shape:
        raise DimensionError(f"PE shape {pe.shape} differs from feature shape {f_k.shape}")
    h, w, c = f_k.shape
    if c != params.channels:
        raise DimensionError(f"features have {c} channels, adapter expects {params.channels}")
    CALL_COUNTS["self_attention"] += 1
    x = f_k.reshape(h * w, c)
    s = x + pe.reshape(h * w, c)
    q = matmul(s, params.w_q) + params.b_q
    k = matmul(s, params.w_k) + params.b_k
    v = matmul(x, params.w_v) + params.b_v
    out, mha = _mha_forward(q, k, v, params.heads)
    if params.residual:
        out = out + x
    return out.reshape(h, w, c), (x, s, mha)


def self_attention_adapt(f_k, pe, params: SelfAttnParams) -> np.ndarray:
    """3D-aware self-attention: PE enters queries and keys, values are plain features."""
    return self_attention_forward(f_k, pe, params)[0]


def self_attention_backward(params: SelfAttnParams, cache, seed):
    """Return ``(d f_k, d pe, [d w_q, d w_k, d w_v, d b_q, d b_k, d b_v])``."""
    x, s, mha = cache
    g = as_tensor(seed).reshape(x.shape)
    gq, gk, gv = _mha_backward(mha, g)
    gs = matmul(gq, _t(params.w_q)) + matmul(gk, _t(params.w_k))
    gx = matmul(gv, _t(params.w_v)) + gs
    if params.residual:
        gx = gx + g
    grads = [
        matmul(_t(s), gq), matmul(_t(s), gk), matmul(_t(x), gv),
        gq.sum(axis=0), gk.sum(axis=0), gv.sum(axis=0),
    ]
    shape = seed.shape
    return gx.reshape(shape), gs.reshape(shape), grads


@dataclass
class QuerySet:
    level: int
    queries: np.ndarray

    def __post_init__(self):
        self.queries = as_tensor(self.queries, 2)

    @property
    def n_q(self) -> int:
        return self.queries.shape[0]


@dataclass
class CrossAttnParams:
    q_mlp: MlpParams  # student queries -> attention space
    k_mlp: MlpParams  # teacher queries -> attention space
    v_mlp: MlpParams  # teacher queries -> query channels
    heads: int = DEFAULT_HEADS
    residual: bool = False

    def __post_init__(self):
        if self.q_mlp.out_dim != self.k_mlp.out_dim:
            raise DimensionError("query and key MLPs must agree on output width")
        if self.k_mlp.in_dim != self.v_mlp.in_dim:
            raise DimensionError("key and value MLPs must read the same teacher queries")
        if self.v_mlp.out_dim != self.q_mlp.in_dim:
            raise DimensionError("value width must equal the student query channel count")
        if self.q_mlp.out_dim % self.heads or self.v_mlp.out_dim % self.heads:
            raise DimensionError(f"widths not divisible by {self.heads} heads")

    @classmethod
    def init(cls, channels, rng, heads=DEFAULT_HEADS, attn_dim=None, qk_scale=1.0, residual=False):
        attn_dim = attn_dim or channels
        v_mlp = MlpParams.identity(channels)
        if residual:
            v_mlp = v_mlp.with_arrays([np.zeros((channels, channels)), np.zeros(channels)])
        return cls(
            MlpParams.init([channels, attn_dim], rng, scale=qk_scale),
            MlpParams.init([channels, attn_dim], rng, scale=qk_scale),
            v_mlp,
            heads,
            residual,
        )

    def arrays(self) -> list:
        return self.q_mlp.arrays() + self.k_mlp.arrays() + self.v_mlp.arrays()

    def with_arrays(self, arrays) -> "CrossAttnParams":
        nq, nk = len(self.q_mlp.arrays()), len(self.k_mlp.arrays())
        return CrossAttnParams(
            self.q_mlp.with_arrays(arrays[:nq]),
            self.k_mlp.with_arrays(arrays[nq:nq + nk]),
            self.v_mlp.with_arrays(arrays[nq + nk:]),
            self.heads,
            self.residual,
        )


def cross_attention_forward(f_v: QuerySet, t_v: QuerySet, params: CrossAttnParams):
    if f_v.level != t_v.level:
        raise DomainError(f"student level {f_v.level} vs teacher level {t_v.level}")
    if f_v.n_q != t_v.n_q:
        raise DimensionError(f"query counts differ: {f_v.n_q} vs {t_v.n_q}")
    CALL_COUNTS["cross_attention"] += 1
    q, cq = mlp_forward(params.q_mlp, f_v.queries)
    k, ck = mlp_forward(params.k_mlp, t_v.queries)
    v, cv = mlp_forward(params.v_mlp, t_v.queries)
    out, mha = _mha_forward(q, k, v, params.heads)
    if params.residual:
        out = out + f_v.queries
    return QuerySet(f_v.level, out), (cq, ck, cv, mha)


def cross_attention_adapt(f_v: QuerySet, t_v: QuerySet, params: CrossAttnParams) -> QuerySet:
    """Student queries attend over teacher queries (keys and values from the teacher)."""
    return cross_attention_forward(f_v, t_v, params)[0]


def cross_attention_backward(params: CrossAttnParams, cache, seed):
    """Return ``(d f_v, d t_v, d params arrays)``."""
    cq, ck, cv, mha = cache
    seed = as_tensor(seed, 2)
    gq, gk, gv = _mha_backward(mha, seed)
    gf, dq = mlp_backward(params.q_mlp, cq, gq)
    if params.residual:
        gf = gf + seed
    gt_k, dk = mlp_backward(params.k_mlp, ck, gk)
    gt_v, dv = mlp_backward(params.v_mlp, cv, gv)
    return gf, gt_k + gt_v, dq.arrays() + dk.arrays() + dv.arrays()
