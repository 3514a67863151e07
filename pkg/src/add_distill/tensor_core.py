"""Dense float64 kernels with paired forward passes and vector-Jacobian products.

Tensors are C-contiguous ``numpy.float64`` arrays. Matrix products go through
the selected kernel backend so every output element is accumulated in
ascending inner-index order, independent of BLAS threading.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backend import kernels as _k
from .errors import DimensionError, DomainError, NumericError

ACTIVATIONS = ("identity", "relu")


def as_tensor(x, ndim: int | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d tensor, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a, 2)
    b = as_tensor(b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return _k.matmul(a, b)


def matmul_vjp(a, b, seed) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``<seed, a @ b>`` with respect to ``a`` and ``b``."""
    seed = as_tensor(seed, 2)
    a = as_tensor(a, 2)
    b = as_tensor(b, 2)
    return matmul(seed, np.ascontiguousarray(b.T)), matmul(np.ascontiguousarray(a.T), seed)


def softmax_rows(x) -> np.ndarray:
    x = as_tensor(x, 2)
    if x.shape[1] == 0:
        return x.copy()
    return _k.softmax_rows(x)


def softmax_rows_vjp(y, seed) -> np.ndarray:
    """VJP of softmax given its output ``y``."""
    y = as_tensor(y, 2)
    seed = as_tensor(seed, 2)
    dot = np.sum(seed * y, axis=1, keepdims=True)
    return y * (seed - dot)


@dataclass
class MlpParams:
    """A per-position MLP, i.e. a stack of 1x1 convolutions.

    ``weights[i]`` has shape ``(in_i, out_i)`` and ``biases[i]`` shape ``(out_i,)``.
    """

    weights: list
    biases: list
    activations: tuple = field(default=())

    def __post_init__(self):
        self.weights = [as_tensor(w, 2) for w in self.weights]
        self.biases = [as_tensor(b, 1) for b in self.biases]
        if not self.activations:
            self.activations = ("identity",) * len(self.weights)
        self.activations = tuple(self.activations)
        self.validate()

    def validate(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)) or not self.weights:
            raise DimensionError("MLP needs matching, non-empty weight/bias/activation lists")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise DomainError(f"unknown activation {act!r}")
            if b.shape[0] != w.shape[1]:
                raise DimensionError(f"layer {i}: bias length {b.shape[0]} != width {w.shape[1]}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"layer {i}: input {w.shape[0]} does not chain onto {self.weights[i - 1].shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator, activation="relu", scale=1.0):
        """Random layers; ``activation`` applies between layers, the last layer is linear."""
        ws, bs = [], []
        for din, dout in zip(dims[:-1], dims[1:]):
            ws.append(rng.standard_normal((din, dout)) * (scale / np.sqrt(din)))
            bs.append(np.zeros(dout))
        acts = (activation,) * (len(dims) - 2) + ("identity",)
        return cls(ws, bs, acts)

    @classmethod
    def identity(cls, dim: int):
        return cls([np.eye(dim)], [np.zeros(dim)], ("identity",))

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), self.activations)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, list]:
    """Forward pass returning the output and the cache needed by ``mlp_backward``."""
    h = as_tensor(x, 2)
    if h.shape[1] != params.in_dim:
        raise DimensionError(f"MLP expects {params.in_dim} input columns, got {h.shape[1]}")
    cache = []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = matmul(h, w) + b
        cache.append((h, z))
        h = np.maximum(z, 0.0) if act == "relu" else z
    return h, cache


def mlp_apply(params: MlpParams, x) -> np.ndarray:
    return mlp_forward(params, x)[0]


def mlp_backward(params: MlpParams, cache: list, seed) -> tuple[np.ndarray, MlpParams]:
    """Return ``(dx, dparams)`` for the seed ``d loss / d output``."""
    g = as_tensor(seed, 2)
    dws, dbs = [None] * len(cache), [None] * len(cache)
    for i in range(len(cache) - 1, -1, -1):
        h, z = cache[i]
        if params.activations[i] == "relu":
            g = g * (z > 0.0)
        dws[i] = matmul(np.ascontiguousarray(h.T), g)
        dbs[i] = g.sum(axis=0)
        g = matmul(g, np.ascontiguousarray(params.weights[i].T))
    return g, MlpParams(dws, dbs, params.activations)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centre linear interpolation weights, shape ``(n_out, n_in)``."""
    r = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        r[i, i0] += 1.0 - t
        r[i, i1] += t
    return r


def bilinear_resize(x, out_h: int, out_w: int) -> np.ndarray:
    x = as_tensor(x, 3)
    h, w, c = x.shape
    if out_h < 1 or out_w < 1 or h < 1 or w < 1:
        raise DimensionError(f"cannot resize {x.shape} to ({out_h}, {out_w})")
    rows = matmul(_interp_matrix(h, out_h), x.reshape(h, w * c)).reshape(out_h, w, c)
    cols = np.ascontiguousarray(rows.transpose(1, 0, 2)).reshape(w, out_h * c)
    out = matmul(_interp_matrix(w, out_w), cols).reshape(out_w, out_h, c)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def bilinear_resize_vjp(in_shape, seed) -> np.ndarray:
    """Adjoint of ``bilinear_resize`` applied to ``seed``."""
    h, w, c = in_shape
    seed = as_tensor(seed, 3)
    oh, ow, _ = seed.shape
    rh = np.ascontiguousarray(_interp_matrix(h, oh).T)
    rw = np.ascontiguousarray(_interp_matrix(w, ow).T)
    cols = np.ascontiguousarray(seed.transpose(1, 0, 2)).reshape(ow, oh * c)
    g = matmul(rw, cols).reshape(w, oh, c)
    g = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(oh, w * c)
    return matmul(rh, g).reshape(h, w, c)


def channel_argmax(x) -> np.ndarray:
    """Per-position argmax over the last axis; ties go to the lowest index."""
    x = as_tensor(x, 3)
    if x.shape[2] < 1:
        raise DimensionError("channel_argmax needs at least one channel")
    return np.argmax(x, axis=2)


def embedding_lookup(table, idx) -> np.ndarray:
    table = as_tensor(table, 2)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DomainError(f"embedding index outside [0, {table.shape[0]})")
    return table[idx]


def embedding_lookup_vjp(table_shape, idx, seed) -> np.ndarray:
    """Gradient with respect to the table; rows are accumulated in raster order."""
    grad = np.zeros(table_shape)
    idx = np.asarray(idx, dtype=np.intp).ravel()
    np.add.at(grad, idx, as_tensor(seed).reshape(idx.size, table_shape[1]))
    return grad


@dataclass(frozen=True)
class DiffOp:
    """A differentiable map ``x -> forward(x)`` with ``vjp(x, seed) = J(x)^T seed``."""

    forward: Callable[[np.ndarray], np.ndarray]
    vjp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "op"


def vjp_check(op: DiffOp, x, seed, eps: float = 1e-5) -> float:
    """Max relative error of the analytic VJP against central differences.

    The scalar probed is ``<seed, op.forward(x)>``; for every input coordinate
    the error is ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    if not 0.0 < eps <= 1e-2:
        raise DomainError(f"eps must lie in (0, 1e-2], got {eps}")
    x = as_tensor(x).copy()
    seed = as_tensor(seed)
    analytic = check_finite(as_tensor(op.vjp(x, seed)), f"{op.name} vjp").ravel()
    if analytic.size != x.size:
        raise DimensionError(f"{op.name}: vjp returned {analytic.size} values for {x.size} inputs")
    flat = x.ravel()
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(np.sum(seed * check_finite(as_tensor(op.forward(x)), op.name)))
        flat[i] = orig - eps
        fm = float(np.sum(seed * check_finite(as_tensor(op.forward(x)), op.name)))
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        worst = max(worst, abs(analytic[i] - numeric) / (abs(numeric) + 1e-8))
    return worst


def matmul_op(b) -> DiffOp:
    b = as_tensor(b, 2)
    return DiffOp(lambda a: matmul(a, b), lambda a, s: matmul_vjp(a, b, s)[0], "matmul")


def softmax_op() -> DiffOp:
    return DiffOp(softmax_rows, lambda x, s: softmax_rows_vjp(softmax_rows(x), s), "softmax_rows")


def mlp_op(params: MlpParams) -> DiffOp:
    def vjp(x, s):
        _, cache = mlp_forward(params, x)
        return mlp_backward(params, cache, s)[0]

    return DiffOp(lambda x: mlp_apply(params, x), vjp, "mlp")


def resize_op(out_h: int, out_w: int) -> DiffOp:
    return DiffOp(
        lambda x: bilinear_resize(x, out_h, out_w),
        lambda x, s: bilinear_resize_vjp(x.shape, s),
        "bilinear_resize",
    )
