"""Image path: precomputed conv feature maps -> Weldon pooling -> projection -> L2 norm.

Also produces per-word spatial activation heatmaps by scoring each spatial
column against a single-word sentence embedding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .embeddings import WordSpace
from .errors import FeatureMapError, PoolingError
from .text_encoder import (
    TextEncoderParams,
    TokenSequence,
    encode_forward,
    l2_normalize,
    l2_normalize_backward,
    resolve_tokens,
)

FMAP_MAGIC = b"FMAP"


@dataclass(frozen=True)
class FeatureMap:
    """C x H x W grid of convolutional activations standing in for an image."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise FeatureMapError(f"feature map must be (C, H, W) with all dims >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise FeatureMapError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


def write_fmap(path, fm: FeatureMap) -> None:
    """Binary layout: b"FMAP", u32le C, H, W, then C*H*W f32le in (c, h, w) order."""
    c, h, w = fm.data.shape
    with open(path, "wb") as fh:
        fh.write(FMAP_MAGIC)
        fh.write(struct.pack("<III", c, h, w))
        fh.write(fm.data.astype("<f4").tobytes(order="C"))


def read_fmap(path) -> FeatureMap:
    with open(path, "rb") as fh:
        return parse_fmap(fh.read(), name=str(path))


def parse_fmap(payload: bytes, name: str = "<bytes>") -> FeatureMap:
    if len(payload) < 16 or payload[:4] != FMAP_MAGIC:
        raise FeatureMapError(f"{name}: missing FMAP magic header")
    c, h, w = struct.unpack("<III", payload[4:16])
    if c < 1 or h < 1 or w < 1:
        raise FeatureMapError(f"{name}: bad dimensions C={c} H={h} W={w}")
    expected = 16 + 4 * c * h * w
    if len(payload) != expected:
        raise FeatureMapError(
            f"{name}: payload is {len(payload)} bytes, expected {expected} for {c}x{h}x{w}"
        )
    data = np.frombuffer(payload, dtype="<f4", offset=16).reshape(c, h, w)
    return FeatureMap(data=data.astype(np.float64))


@dataclass
class ImageEncoderParams:
    """Weldon extreme counts plus the pooled-signature projection into the joint space."""

    k_pos: int
    k_neg: int
    proj_w: np.ndarray  # (joint_dim, channels)
    proj_b: np.ndarray  # (joint_dim,)

    def __post_init__(self):
        if self.k_pos < 1 or self.k_neg < 1:
            raise PoolingError(f"k+ and k- must be >= 1, got {self.k_pos}, {self.k_neg}")

    @property
    def channels(self) -> int:
        return self.proj_w.shape[1]

    @property
    def joint_dim(self) -> int:
        return self.proj_w.shape[0]


def default_k(height: int, width: int) -> int:
    return max(1, (height * width) // 10)


def init_image_encoder(
    channels: int,
    joint_dim: int,
    rng: np.random.Generator,
    k_pos: int = 1,
    k_neg: int = 1,
) -> ImageEncoderParams:
    bound = 1.0 / np.sqrt(channels)
    return ImageEncoderParams(
        k_pos=k_pos,
        k_neg=k_neg,
        proj_w=rng.uniform(-bound, bound, size=(joint_dim, channels)),
        proj_b=np.zeros(joint_dim),
    )


def weldon_forward(fm: FeatureMap, k_pos: int, k_neg: int):
    """Per channel: mean of the k+ largest plus mean of the k- smallest activations.

    Ties are broken toward the lowest flat spatial index so pooling (and its
    gradient) is deterministic. Returns (signature, cache).
    """
    c, h, w = fm.data.shape
    spatial = h * w
    if not (1 <= k_pos <= spatial and 1 <= k_neg <= spatial):
        raise PoolingError(
            f"k+={k_pos}, k-={k_neg} out of range for {h}x{w} grid ({spatial} positions)"
        )
    flat = fm.data.reshape(c, spatial)
    asc = np.argsort(flat, axis=1, kind="stable")
    desc = np.argsort(-flat, axis=1, kind="stable")
    top_idx = desc[:, :k_pos]
    bot_idx = asc[:, :k_neg]
    rows = np.arange(c)[:, None]
    # summing the selected values in ascending order keeps the result
    # bit-identical to a plain full-sort implementation
    top_vals = np.sort(flat[rows, top_idx], axis=1)
    bot_vals = np.sort(flat[rows, bot_idx], axis=1)
    signature = top_vals.mean(axis=1) + bot_vals.mean(axis=1)
    cache = (fm.data.shape, top_idx, bot_idx, k_pos, k_neg)
    return signature, cache


def weldon_backward(cache, d_sig: np.ndarray) -> np.ndarray:
    shape, top_idx, bot_idx, k_pos, k_neg = cache
    c = shape[0]
    d_flat = np.zeros((c, shape[1] * shape[2]))
    rows = np.arange(c)[:, None]
    np.add.at(d_flat, (rows, top_idx), (d_sig / k_pos)[:, None])
    np.add.at(d_flat, (rows, bot_idx), (d_sig / k_neg)[:, None])
    return d_flat.reshape(shape)


def weldon_pool(fm: FeatureMap, k_pos: int, k_neg: int) -> np.ndarray:
    sig, _ = weldon_forward(fm, k_pos, k_neg)
    return sig


def encode_signature_forward(signature: np.ndarray, params: ImageEncoderParams):
    """Projection + normalization on an already-pooled signature."""
    if signature.shape != (params.channels,):
        raise FeatureMapError(
            f"signature has {signature.shape[0]} channels, projection expects {params.channels}"
        )
    pre = params.proj_w @ signature + params.proj_b
    out, norm = l2_normalize(pre)
    return out, {"signature": signature, "pre": pre, "norm": norm, "params": params}


def encode_signature_backward(cache, d_out: np.ndarray):
    params: ImageEncoderParams = cache["params"]
    d_pre = l2_normalize_backward(cache["pre"], cache["norm"], d_out)
    grads = {
        "proj_w": np.outer(d_pre, cache["signature"]),
        "proj_b": d_pre.copy(),
    }
    d_sig = params.proj_w.T @ d_pre
    return grads, d_sig


def encode_image_forward(fm: FeatureMap, params: ImageEncoderParams):
    if fm.channels != params.channels:
        raise FeatureMapError(
            f"feature map has {fm.channels} channels, projection expects {params.channels}"
        )
    signature, pool_cache = weldon_forward(fm, params.k_pos, params.k_neg)
    out, proj_cache = encode_signature_forward(signature, params)
    return out, {"pool": pool_cache, "proj": proj_cache}


def encode_image_backward(cache, d_out: np.ndarray):
    """Returns (param grads, d_feature_map)."""
    grads, d_sig = encode_signature_backward(cache["proj"], d_out)
    d_fm = weldon_backward(cache["pool"], d_sig)
    return grads, d_fm


def encode_image(fm: FeatureMap, params: ImageEncoderParams) -> np.ndarray:
    """Weldon pooling -> affine projection -> L2 normalization; unit-norm output."""
    out, _ = encode_image_forward(fm, params)
    return out


def heatmap(
    word: str,
    lang: str,
    fm: FeatureMap,
    space: WordSpace,
    text_params: TextEncoderParams,
    image_params: ImageEncoderParams,
) -> np.ndarray:
    """Score each spatial location's channel column against one word's embedding.

    The location's C-vector goes through the image projection (pooling
    bypassed) and is normalized, so every value is a cosine in [-1, 1].
    """
    if fm.channels != image_params.channels:
        raise FeatureMapError(
            f"feature map has {fm.channels} channels, projection expects {image_params.channels}"
        )
    seq = TokenSequence(lang=lang, tokens=(word,))
    vectors = resolve_tokens(seq, space)  # raises on OOV
    t, _ = encode_forward(vectors, text_params, train=False)
    c, h, w = fm.data.shape
    cols = fm.data.reshape(c, h * w).T  # (HW, C)
    pre = cols @ image_params.proj_w.T + image_params.proj_b
    norms = np.linalg.norm(pre, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    scores = (pre / norms) @ t
    return scores.reshape(h, w)


def heatmap_to_json(hm: np.ndarray) -> str:
    return json.dumps([[float(v) for v in row] for row in hm])


def write_heatmap_pgm(path, hm: np.ndarray) -> None:
    """Export as plain PGM (P2), mapping [-1, 1] linearly onto 0..255."""
    levels = np.clip(np.rint((hm + 1.0) * 127.5), 0, 255).astype(int)
    h, w = levels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
