"""Region features from a single backbone feature map.

A three-stage, parameter-free transform turns one n x h x w map into an
n x p matrix of region descriptors:

1. pyramid_pool: multi-kernel max pooling. Level i (1-based) uses stride
   (floor(h/i), floor(w/i)) and kernel (h - (i-1)*floor(h/i), ...), which
   tiles the map into exactly i x i windows whose union covers it.
2. encode_kqv: global average pooling of each level gives the value vectors;
   the deepest level doubles as the query; keys mix each level's pooled
   vector with the query, normalized elementwise by the coarsest level.
3. self_attend: softmax attention over the p region indices with a residual
   shortcut, so column i of the output is (alpha_i + 1) * value_i.

Attention logits are accumulated with math.fsum, which is exact for float64
inputs, so permuting the channels of the input map permutes the output rows
bitwise-identically.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import NonFinite, OutOfRange, PyramidTooDeep, ShapeMismatch

# Elementwise guard for the key-encoder division; zero denominators (dead
# ReLU channels) are treated as +1e-8.
DENOM_FLOOR = 1e-8


def _as_feature_map(maps) -> np.ndarray:
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatch(f"feature map must be n x h x w, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeMismatch(f"feature map has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("feature map contains non-finite entries")
    return arr


def pyramid_pool(maps, levels: int) -> list[np.ndarray]:
    """Max-pool a feature map into levels 1..p, level i of shape (n, i, i)."""
    arr = _as_feature_map(maps)
    n, h, w = arr.shape
    if levels < 1:
        raise OutOfRange(f"levels must be >= 1, got {levels}")
    if levels > min(h, w):
        raise PyramidTooDeep(f"levels {levels} exceeds min spatial size {min(h, w)}")
    out = []
    for i in range(1, levels + 1):
        sh, sw = h // i, w // i
        kh, kw = h - (i - 1) * sh, w - (i - 1) * sw
        level = np.empty((n, i, i), dtype=np.float64)
        for a in range(i):
            for b in range(i):
                window = arr[:, a * sh : a * sh + kh, b * sw : b * sw + kw]
                level[:, a, b] = window.max(axis=(1, 2))
        out.append(level)
    return out


def encode_kqv(levels: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pooled-level encoders: returns (keys (p, n), values (p, n), query (n,))."""
    if not levels:
        raise ShapeMismatch("need at least one pyramid level")
    gaps = np.stack([np.asarray(lv, dtype=np.float64).mean(axis=(1, 2)) for lv in levels])
    values = gaps
    query = gaps[-1]
    denom = gaps[0]
    guarded = np.where(denom < 0.0, -1.0, 1.0) * np.maximum(np.abs(denom), DENOM_FLOOR)
    keys = gaps * query / guarded + gaps
    return keys, values, query


def self_attend(keys: np.ndarray, values: np.ndarray, query: np.ndarray, n: int) -> np.ndarray:
    """Attention over region indices with residual; returns the n x p matrix."""
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if keys.shape != values.shape or keys.ndim != 2 or keys.shape[1] != n or query.shape != (n,):
        raise ShapeMismatch(
            f"inconsistent attention shapes: keys {keys.shape}, values {values.shape}, query {query.shape}, n={n}"
        )
    scale = 1.0 / math.sqrt(n)
    # fsum keeps the channel reduction order-independent down to the last bit.
    logits = np.array([math.fsum((query * k).tolist()) * scale for k in keys])
    shifted = logits - logits.max()
    weights = np.exp(shifted)
    weights /= math.fsum(weights.tolist())
    return (values * (weights + 1.0)[:, None]).T


def region_features(maps, levels: int) -> np.ndarray:
    """Full transform: pyramid pooling, k/q/v encoding, region attention."""
    arr = _as_feature_map(maps)
    keys, values, query = encode_kqv(pyramid_pool(arr, levels))
    return self_attend(keys, values, query, arr.shape[0])
