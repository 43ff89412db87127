"""Pre-norm transformer encoder layers with tree-routed feedforward blocks.

A batch of token activations (rows) flows through each layer as

    h1  = hidden + attention(layernorm(hidden; ln1))
    out = h1 + fff(layernorm(h1; ln2))

Attention is standard multi-head scaled dot product over the whole batch as
one unmasked sequence; projections use the x @ W + b convention with W laid
out (in_features, out_features).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .fff import FFFConfig, FFFLayerWeights, fff_forward, random_weights

_FLOAT_DTYPES = (np.float32, np.float64)

DEFAULT_LAYERNORM_EPS = 1e-12


@dataclass(frozen=True)
class AttentionWeights:
    """Multi-head self-attention parameters, x @ W convention, all (H, H)/(H,)."""

    num_heads: int
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        h = self.w_q.shape[0]
        if self.num_heads < 1:
            raise DimensionError(f"num_heads must be >= 1, got {self.num_heads}")
        if h % self.num_heads != 0:
            raise DimensionError(f"hidden_dim {h} not divisible by num_heads {self.num_heads}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = getattr(self, name)
            if m.shape != (h, h):
                raise DimensionError(f"{name} shape {m.shape} != ({h}, {h})")
            if m.dtype != self.w_q.dtype:
                raise DimensionError(f"{name} dtype differs from w_q")
        for name in ("b_q", "b_k", "b_v", "b_o"):
            v = getattr(self, name)
            if v.shape != (h,):
                raise DimensionError(f"{name} shape {v.shape} != ({h},)")
            if v.dtype != self.w_q.dtype:
                raise DimensionError(f"{name} dtype differs from w_q")
        if self.w_q.dtype.type not in _FLOAT_DTYPES:
            raise DimensionError(f"attention weights must be float32 or float64, got {self.w_q.dtype}")

    @property
    def hidden_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def dtype(self):
        return self.w_q.dtype


@dataclass(frozen=True)
class EncoderLayer:
    """One pre-norm block: attention sublayer, then tree-routed feedforward."""

    attention: AttentionWeights
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    fff: FFFLayerWeights

    def __post_init__(self):
        h = self.attention.hidden_dim
        for name in ("ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift"):
            v = getattr(self, name)
            if v.shape != (h,):
                raise DimensionError(f"{name} shape {v.shape} != ({h},)")
            if v.dtype != self.attention.dtype:
                raise DimensionError(f"{name} dtype differs from attention weights")
        if self.fff.config.hidden_dim != h:
            raise DimensionError(
                f"feedforward hidden_dim {self.fff.config.hidden_dim} != attention hidden_dim {h}"
            )
        if self.fff.dtype != self.attention.dtype:
            raise DimensionError("feedforward dtype differs from attention weights")

    @property
    def hidden_dim(self) -> int:
        return self.attention.hidden_dim


@dataclass(frozen=True)
class EncoderModel:
    """A stack of encoder layers sharing one width and layernorm epsilon."""

    layers: tuple[EncoderLayer, ...]
    hidden_dim: int
    layernorm_epsilon: float = DEFAULT_LAYERNORM_EPS

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, layer in enumerate(self.layers):
            if layer.hidden_dim != self.hidden_dim:
                raise DimensionError(
                    f"layer {i} hidden_dim {layer.hidden_dim} != model hidden_dim {self.hidden_dim}"
                )
        if self.layernorm_epsilon <= 0.0:
            raise DimensionError("layernorm_epsilon must be positive")

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def layernorm(x, scale, shift, eps=DEFAULT_LAYERNORM_EPS):
    """Per-row layer normalization with biased variance, then scale and shift."""
    x = np.asarray(x)
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * scale + shift


def attention_forward(hidden, w: AttentionWeights) -> np.ndarray:
    """Multi-head self-attention over the rows of `hidden` as one sequence."""
    hidden = np.asarray(hidden)
    if hidden.ndim != 2 or hidden.shape[1] != w.hidden_dim:
        raise DimensionError(
            f"hidden shape {hidden.shape} incompatible with attention width {w.hidden_dim}"
        )
    batch, width = hidden.shape
    heads = w.num_heads
    head_dim = width // heads
    q = hidden @ w.w_q + w.b_q
    k = hidden @ w.w_k + w.b_k
    v = hidden @ w.w_v + w.b_v
    # (heads, batch, head_dim); feature axis splits contiguously per head
    qh = q.reshape(batch, heads, head_dim).transpose(1, 0, 2)
    kh = k.reshape(batch, heads, head_dim).transpose(1, 2, 0)
    vh = v.reshape(batch, heads, head_dim).transpose(1, 0, 2)
    scores = (qh @ kh) / math.sqrt(head_dim)
    scores = scores - scores.max(axis=2, keepdims=True)
    probs = np.exp(scores)
    probs = probs / probs.sum(axis=2, keepdims=True)
    ctx = (probs @ vh).transpose(1, 0, 2).reshape(batch, width)
    return ctx @ w.w_o + w.b_o


def layer_forward(hidden, layer: EncoderLayer, level: str = "batched",
                  eps: float = DEFAULT_LAYERNORM_EPS, threads: int = 1) -> np.ndarray:
    """One pre-norm encoder block over a batch of row activations."""
    hidden = np.asarray(hidden)
    normed1 = layernorm(hidden, layer.ln1_scale, layer.ln1_shift, eps)
    h1 = hidden + attention_forward(normed1, layer.attention)
    normed2 = layernorm(h1, layer.ln2_scale, layer.ln2_shift, eps)
    return h1 + fff_forward(np.ascontiguousarray(normed2), layer.fff,
                            level=level, threads=threads)


def model_forward(hidden, model: EncoderModel, level: str = "batched",
                  threads: int = 1) -> np.ndarray:
    """Run the full layer stack; (batch, hidden_dim) in and out."""
    h = np.asarray(hidden)
    if h.ndim != 2 or h.shape[1] != model.hidden_dim:
        raise DimensionError(
            f"hidden shape {h.shape} incompatible with model width {model.hidden_dim}"
        )
    for layer in model.layers:
        h = layer_forward(h, layer, level=level, eps=model.layernorm_epsilon,
                          threads=threads)
    return h


def random_attention(hidden: int, num_heads: int, seed, dtype=np.float32) -> AttentionWeights:
    """Seeded attention weights: normals scaled by 1/sqrt(hidden)."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    scale = 1.0 / math.sqrt(hidden)

    def mat():
        return (rng.standard_normal((hidden, hidden)) * scale).astype(np.float32).astype(dt)

    def vec():
        return (rng.standard_normal(hidden) * scale).astype(np.float32).astype(dt)

    return AttentionWeights(num_heads, mat(), vec(), mat(), vec(), mat(), vec(), mat(), vec())


def random_layer(hidden: int, num_heads: int, fff_config: FFFConfig, seed,
                 dtype=np.float32) -> EncoderLayer:
    """Seeded encoder layer; layernorm scales hover near 1, shifts near 0."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    attention = random_attention(hidden, num_heads, rng, dt)

    def ln(center):
        return (center + 0.02 * rng.standard_normal(hidden)).astype(np.float32).astype(dt)

    ln1_scale, ln1_shift = ln(1.0), ln(0.0)
    ln2_scale, ln2_shift = ln(1.0), ln(0.0)
    fff = random_weights(fff_config, rng, dt)
    return EncoderLayer(attention, ln1_scale, ln1_shift, ln2_scale, ln2_shift, fff)


def random_model(num_layers: int, hidden: int, num_heads: int, fff_config: FFFConfig,
                 seed, dtype=np.float32,
                 layernorm_epsilon: float = DEFAULT_LAYERNORM_EPS) -> EncoderModel:
    """Seeded encoder stack for tests and benchmarks."""
    rng = np.random.default_rng(seed)
    layers = tuple(
        random_layer(hidden, num_heads, fff_config, rng, dtype) for _ in range(num_layers)
    )
    return EncoderModel(layers, hidden, layernorm_epsilon)
