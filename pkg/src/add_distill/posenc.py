"""Depth-guided 3D-aware positional encoding.

Depth -> per-pixel MLP + bilinear resize (encoded depth, ``C_d`` channels)
-> channel argmax (depth-bin index map) -> embedding table lookup
(``C_dim`` channels) -> post-embedding MLP (``C`` channels), ready to be
added point-wise to flattened level-k features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .instrument import CALL_COUNTS
from .tensor_core import (
    MlpParams,
    as_tensor,
    bilinear_resize,
    channel_argmax,
    embedding_lookup,
    embedding_lookup_vjp,
    mlp_apply,
    mlp_backward,
    mlp_forward,
)

DEFAULT_C_D = 64
DEFAULT_C_DIM = 256


@dataclass
class DepthMap:
    depth: np.ndarray
    valid: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self):
        self.depth = as_tensor(self.depth, 2)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.depth.shape:
            raise DimensionError("validity mask shape differs from depth grid")
        if not self.d_min < self.d_max:
            raise DomainError(f"empty depth range [{self.d_min}, {self.d_max}]")
        v = self.depth[self.valid]
        if v.size and (v.min() < self.d_min or v.max() > self.d_max):
            raise DomainError("valid depth outside [d_min, d_max]")

    @classmethod
    def dense(cls, depth, d_min, d_max):
        depth = as_tensor(depth, 2)
        return cls(depth, np.ones(depth.shape, dtype=bool), d_min, d_max)

    def filled(self) -> np.ndarray:
        """Depth with invalid pixels imputed by ``d_min``."""
        return np.where(self.valid, self.depth, self.d_min)


@dataclass
class PosEncParams:
    depth_mlp: MlpParams  # 1 -> C_d, the G_A MLP
    table: np.ndarray  # C_d x C_dim
    post_mlp: MlpParams  # C_dim -> C

    def __post_init__(self):
        self.table = as_tensor(self.table, 2)
        if self.depth_mlp.in_dim != 1:
            raise DimensionError("depth MLP must take a single scalar depth")
        if self.depth_mlp.out_dim != self.table.shape[0]:
            raise DimensionError(
                f"depth MLP emits {self.depth_mlp.out_dim} channels, table has {self.table.shape[0]} rows"
            )
        if self.post_mlp.in_dim != self.table.shape[1]:
            raise DimensionError("post-embedding MLP does not accept the embedding dimension")

    @property
    def c_d(self) -> int:
        return self.table.shape[0]

    @property
    def c_dim(self) -> int:
        return self.table.shape[1]

    @property
    def channels(self) -> int:
        return self.post_mlp.out_dim

    @classmethod
    def init(cls, channels, d_min, d_max, rng, c_d=DEFAULT_C_D, c_dim=DEFAULT_C_DIM, scale=1.0):
        """Binning depth MLP plus random table and post-embedding layer.

        The depth MLP is a linear layer scoring channel c as
        ``2 mu_c d - mu_c**2``, whose argmax is the nearest of ``c_d`` uniform
        bin centres ``mu_c``. It receives no gradient through the argmax, so
        this initialisation is what fixes the bins.
        """
        mu = d_min + (np.arange(c_d) + 0.5) * (d_max - d_min) / c_d
        depth_mlp = MlpParams([2.0 * mu[None, :]], [-(mu**2)], ("identity",))
        table = rng.standard_normal((c_d, c_dim))
        post = MlpParams.init([c_dim, channels], rng, scale=scale)
        return cls(depth_mlp, table, post)

    def arrays(self) -> list:
        return [self.table] + self.post_mlp.arrays()

    def with_arrays(self, arrays) -> "PosEncParams":
        return PosEncParams(self.depth_mlp, arrays[0], self.post_mlp.with_arrays(arrays[1:]))


def encode_depth(d: DepthMap, params: PosEncParams, h_k: int, w_k: int) -> np.ndarray:
    """Encoded depth feature of shape (h_k, w_k, C_d)."""
    h, w = d.depth.shape
    per_pixel = mlp_apply(params.depth_mlp, d.filled().reshape(h * w, 1))
    return bilinear_resize(per_pixel.reshape(h, w, params.c_d), h_k, w_k)


def position_index(f_d) -> np.ndarray:
    return channel_argmax(f_d)


def build_3d_pe_forward(d: DepthMap, params: PosEncParams, h_k: int, w_k: int):
    CALL_COUNTS["posenc"] += 1
    idx = position_index(encode_depth(d, params, h_k, w_k))
    emb = embedding_lookup(params.table, idx).reshape(h_k * w_k, params.c_dim)
    out, cache = mlp_forward(params.post_mlp, emb)
    return out.reshape(h_k, w_k, params.channels), (idx, cache)


def build_3d_pe(d: DepthMap, params: PosEncParams, h_k: int, w_k: int) -> np.ndarray:
    return build_3d_pe_forward(d, params, h_k, w_k)[0]


def build_3d_pe_backward(params: PosEncParams, cache, seed) -> list:
    """Gradients ``[d table, d post-MLP arrays...]``; the index path is constant."""
    idx, mlp_cache = cache
    seed = as_tensor(seed).reshape(-1, params.channels)
    d_emb, d_post = mlp_backward(params.post_mlp, mlp_cache, seed)
    return [embedding_lookup_vjp(params.table.shape, idx, d_emb)] + d_post.arrays()


def rasterize_object_depth(boxes, depths, background, d_min, d_max) -> DepthMap:
    """Paint each 2D box region with its object depth; the nearest object wins on overlap.

    ``boxes`` are pixel-unit ``Box2D``s on the grid of ``background``; a pixel
    belongs to a box when its centre lies inside it.
    """
    background = as_tensor(background, 2)
    depth = background.copy()
    h, w = depth.shape
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    # paint far to near so nearer objects overwrite
    for i in sorted(range(len(depths)), key=lambda i: -depths[i]):
        b = boxes[i]
        inside = (xs >= b.x1) & (xs <= b.x2) & (ys >= b.y1) & (ys <= b.y2)
        depth[inside] = depths[i]
    return DepthMap.dense(depth, d_min, d_max)
