"""Sentence encoder: aligned word lookups -> 4 stacked SRU layers -> projection -> L2 norm.

The recurrence is element-wise, so forward and backward passes are written
out by hand in numpy; finite-difference checks in the test suite guard the
derivations.
"""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass, field

import numpy as np

from .embeddings import WordSpace
from .errors import TokenizeError

logger = logging.getLogger(__name__)

NUM_LAYERS = 4
NORM_EPS = 0.0  # unit norm is a hard contract; a zero pre-norm vector is an error


@dataclass(frozen=True)
class TokenSequence:
    lang: str
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(text: str, lang: str) -> TokenSequence:
    """Lowercase, split on Unicode whitespace, strip edge punctuation per token."""
    tokens = []
    for raw in text.lower().split():
        tok = _strip_punct(raw)
        if tok:
            tokens.append(tok)
    return TokenSequence(lang=lang, tokens=tuple(tokens))


@dataclass
class SruLayerParams:
    """One recurrent layer: input transform plus forget and reset gates."""

    w_in: np.ndarray  # (hidden, in_dim)
    w_f: np.ndarray   # (hidden, in_dim)
    b_f: np.ndarray   # (hidden,)
    w_r: np.ndarray   # (hidden, in_dim)
    b_r: np.ndarray   # (hidden,)

    @property
    def hidden_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w_in.shape[1]


@dataclass
class TextEncoderParams:
    layers: list[SruLayerParams]
    proj_w: np.ndarray  # (joint_dim, hidden)
    proj_b: np.ndarray  # (joint_dim,)
    dropout: float = 0.25

    def __post_init__(self):
        if len(self.layers) != NUM_LAYERS:
            raise ValueError(f"expected {NUM_LAYERS} recurrent layers, got {len(self.layers)}")

    @property
    def embed_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def hidden_dim(self) -> int:
        return self.layers[0].hidden_dim

    @property
    def joint_dim(self) -> int:
        return self.proj_w.shape[0]


def init_text_encoder(
    embed_dim: int,
    hidden_dim: int,
    joint_dim: int,
    rng: np.random.Generator,
    dropout: float = 0.25,
) -> TextEncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, biases at zero."""
    layers = []
    in_dim = embed_dim
    for _ in range(NUM_LAYERS):
        bound = 1.0 / np.sqrt(in_dim)
        layers.append(
            SruLayerParams(
                w_in=rng.uniform(-bound, bound, size=(hidden_dim, in_dim)),
                w_f=rng.uniform(-bound, bound, size=(hidden_dim, in_dim)),
                b_f=np.zeros(hidden_dim),
                w_r=rng.uniform(-bound, bound, size=(hidden_dim, in_dim)),
                b_r=np.zeros(hidden_dim),
            )
        )
        in_dim = hidden_dim
    bound = 1.0 / np.sqrt(hidden_dim)
    return TextEncoderParams(
        layers=layers,
        proj_w=rng.uniform(-bound, bound, size=(joint_dim, hidden_dim)),
        proj_b=np.zeros(joint_dim),
        dropout=dropout,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sru_forward(xs: np.ndarray, p: SruLayerParams):
    """Run one SRU layer over a (T, in_dim) sequence; returns (hs, cache).

    Recurrence, with sigma the logistic gate and * element-wise:

        x~_t = W x_t
        f_t  = sigma(W_f x_t + b_f)
        r_t  = sigma(W_r x_t + b_r)
        c_t  = f_t * c_{t-1} + (1 - f_t) * x~_t        (c_0 = 0)
        h_t  = r_t * tanh(c_t) + (1 - r_t) * x_t

    When in_dim differs from hidden_dim the skip term uses x~_t, the
    transformed input, so the highway connection stays shape-consistent.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise TokenizeError("recurrent layer needs a non-empty (T, in_dim) sequence")
    x_tilde = xs @ p.w_in.T
    f = _sigmoid(xs @ p.w_f.T + p.b_f)
    r = _sigmoid(xs @ p.w_r.T + p.b_r)
    cs = np.empty_like(x_tilde)
    c_prev = np.zeros(p.hidden_dim)
    for t in range(xs.shape[0]):
        c_prev = f[t] * c_prev + (1.0 - f[t]) * x_tilde[t]
        cs[t] = c_prev
    tanh_c = np.tanh(cs)
    raw_skip = p.in_dim == p.hidden_dim
    skip = xs if raw_skip else x_tilde
    hs = r * tanh_c + (1.0 - r) * skip
    cache = (xs, x_tilde, f, r, cs, tanh_c, raw_skip, p)
    return hs, cache


def sru_backward(cache, d_hs: np.ndarray):
    """Backprop one SRU layer; returns (d_xs, grads dict keyed like the params)."""
    xs, x_tilde, f, r, cs, tanh_c, raw_skip, p = cache
    skip = xs if raw_skip else x_tilde

    d_r = d_hs * (tanh_c - skip)
    d_tanh = d_hs * r
    d_skip = d_hs * (1.0 - r)

    d_c = d_tanh * (1.0 - tanh_c**2)
    d_f = np.empty_like(f)
    d_xt = np.empty_like(x_tilde)
    carry = np.zeros(p.hidden_dim)
    for t in range(xs.shape[0] - 1, -1, -1):
        dc_t = d_c[t] + carry
        c_prev = cs[t - 1] if t > 0 else np.zeros(p.hidden_dim)
        d_f[t] = dc_t * (c_prev - x_tilde[t])
        d_xt[t] = dc_t * (1.0 - f[t])
        carry = dc_t * f[t]

    if raw_skip:
        d_xs_extra = d_skip
    else:
        d_xt = d_xt + d_skip
        d_xs_extra = 0.0

    d_zf = d_f * f * (1.0 - f)
    d_zr = d_r * r * (1.0 - r)

    grads = {
        "w_in": d_xt.T @ xs,
        "w_f": d_zf.T @ xs,
        "b_f": d_zf.sum(axis=0),
        "w_r": d_zr.T @ xs,
        "b_r": d_zr.sum(axis=0),
    }
    d_xs = d_xt @ p.w_in + d_zf @ p.w_f + d_zr @ p.w_r + d_xs_extra
    return d_xs, grads


def sru_layer(xs: np.ndarray, p: SruLayerParams) -> np.ndarray:
    """Eval-mode pass over one layer."""
    hs, _ = sru_forward(xs, p)
    return hs


def l2_normalize(v: np.ndarray):
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm, norm


def l2_normalize_backward(v: np.ndarray, norm: float, d_out: np.ndarray) -> np.ndarray:
    # d/dv (v / |v|) applied to d_out
    return d_out / norm - v * (v @ d_out) / norm**3


def resolve_tokens(seq: TokenSequence, space: WordSpace) -> np.ndarray:
    """Look up every token in the shared word space, dropping OOV tokens.

    Raises TokenizeError when nothing survives: the encoder has no input.
    """
    vectors = []
    dropped = []
    for tok in seq.tokens:
        vec = space.lookup(seq.lang, tok)
        if vec is None:
            dropped.append(tok)
        else:
            vectors.append(vec)
    if dropped:
        logger.warning("dropping %d OOV token(s) [%s]: %s", len(dropped), seq.lang, dropped)
    if not vectors:
        raise TokenizeError(
            f"no in-vocabulary tokens in {seq.lang!r} sentence {' '.join(seq.tokens)!r}"
        )
    return np.array(vectors, dtype=np.float64)


def encode_forward(
    vectors: np.ndarray,
    params: TextEncoderParams,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Full text path from resolved word vectors; returns (unit vector, cache).

    Inverted dropout runs between layers in train mode only; eval mode is
    deterministic and pure.
    """
    caches = []
    masks = []
    xs = vectors
    for idx, layer in enumerate(params.layers):
        hs, cache = sru_forward(xs, layer)
        caches.append(cache)
        if train and idx < NUM_LAYERS - 1 and params.dropout > 0.0:
            if rng is None:
                raise ValueError("train-mode encoding needs an RNG for dropout")
            keep = 1.0 - params.dropout
            mask = (rng.random(hs.shape) < keep) / keep
            hs = hs * mask
            masks.append(mask)
        else:
            masks.append(None)
        xs = hs
    last = xs[-1]
    pre = params.proj_w @ last + params.proj_b
    out, norm = l2_normalize(pre)
    cache = {
        "layer_caches": caches,
        "masks": masks,
        "last_hidden": last,
        "seq_len": vectors.shape[0],
        "pre": pre,
        "norm": norm,
        "params": params,
    }
    return out, cache


def encode_backward(cache, d_out: np.ndarray):
    """Gradients of the full text path w.r.t. every encoder parameter.

    Returns (grads, d_vectors) where grads maps layer index -> param grads
    plus the projection entries, and d_vectors is the gradient on the
    resolved input word vectors.
    """
    params: TextEncoderParams = cache["params"]
    d_pre = l2_normalize_backward(cache["pre"], cache["norm"], d_out)
    grads: dict = {
        "proj_w": np.outer(d_pre, cache["last_hidden"]),
        "proj_b": d_pre.copy(),
    }
    d_hs_last = params.proj_w.T @ d_pre
    d_hs = np.zeros((cache["seq_len"], params.hidden_dim))
    d_hs[-1] = d_hs_last
    for idx in range(NUM_LAYERS - 1, -1, -1):
        mask = cache["masks"][idx]
        if mask is not None:
            d_hs = d_hs * mask
        d_hs, layer_grads = sru_backward(cache["layer_caches"][idx], d_hs)
        grads[idx] = layer_grads
    return grads, d_hs


def encode_sentence(
    seq: TokenSequence,
    space: WordSpace,
    params: TextEncoderParams,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Encode one sentence into the shared space; output has unit L2 norm."""
    vectors = resolve_tokens(seq, space)
    out, _ = encode_forward(vectors, params, train=train, rng=rng)
    return out
