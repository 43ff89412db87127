"""Writers and readers for the engine's binary interchange files.

All three formats are little-endian: a 4-byte magic, a u32 version, header
integers, then float32 payload tensors copied verbatim (NaN and infinity
round-trip bit for bit).

FFFW (tree-layer weights)
    "FFFW" | u32 version | u32 flags | u32 num_trees | u32 path_len | u32 hidden
    then per tree: w_in[nodes][hidden], b_in[nodes] if flag bit 0, w_out[nodes][hidden]
    where nodes = 2^path_len - 1, derived, never stored

ACTS (activation matrix)
    "ACTS" | u32 version | u32 batch | u32 hidden
    then row-major float32[batch][hidden]

UFBM (encoder model)
    "UFBM" | u32 version | u32 num_layers | u32 hidden | u32 num_heads
    | f32 layernorm_epsilon
    then per layer: w_q, w_k, w_v, w_o as [hidden][hidden]; b_q, b_k, b_v, b_o;
    ln1 scale, ln1 shift, ln2 scale, ln2 shift; one embedded FFFW block

Attention matrices are stored in the x @ W convention: W[row] is the weight
column feeding input feature `row`, so W has shape (in_features, out_features).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

FORMAT_VERSION = 1

_FFFW_HEADER = struct.Struct("<4sIIIII")
_ACTS_HEADER = struct.Struct("<4sIII")
_UFBM_HEADER = struct.Struct("<4sIIIIf")

_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class LayerTensors:
    """One encoder layer's parameters as float32 arrays, x @ W convention.

    w_in and w_out are (num_trees, nodes, hidden); b_in is (num_trees, nodes)
    or None when the tree layer carries no input biases.
    """

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    w_in: np.ndarray
    b_in: np.ndarray | None
    w_out: np.ndarray


@dataclass(frozen=True)
class ModelTensors:
    """A whole encoder model as plain arrays plus its header scalars."""

    layers: tuple[LayerTensors, ...]
    hidden: int
    num_heads: int
    layernorm_epsilon: float


def _as_f32(arr, what):
    arr = np.asarray(arr)
    if arr.dtype != np.float32:
        raise FormatError(f"{what} must be float32, got {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=_F32)


def _tree_shape(w_in, b_in, w_out):
    """Validate the (trees, nodes, hidden) family and return (trees, path_len, hidden)."""
    if w_in.ndim != 3:
        raise DimensionError(f"w_in must be (trees, nodes, hidden), got {w_in.shape}")
    trees, nodes, hidden = w_in.shape
    if trees < 1 or nodes < 1 or hidden < 1:
        raise DimensionError(f"degenerate tree weight shape {w_in.shape}")
    path_len = (nodes + 1).bit_length() - 1
    if (1 << path_len) - 1 != nodes:
        raise DimensionError(f"{nodes} nodes per tree is not a full binary tree (2^P - 1)")
    if w_out.shape != w_in.shape:
        raise DimensionError(f"w_out shape {w_out.shape} != w_in shape {w_in.shape}")
    if b_in is not None and b_in.shape != (trees, nodes):
        raise DimensionError(f"b_in shape {b_in.shape} != ({trees}, {nodes})")
    return trees, path_len, hidden


def fffw_bytes(w_in, b_in, w_out) -> bytes:
    """Serialize one tree layer from float32 arrays."""
    w_in = _as_f32(w_in, "w_in")
    w_out = _as_f32(w_out, "w_out")
    b_in = None if b_in is None else _as_f32(b_in, "b_in")
    trees, path_len, hidden = _tree_shape(w_in, b_in, w_out)
    parts = [_FFFW_HEADER.pack(b"FFFW", FORMAT_VERSION, 1 if b_in is not None else 0,
                               trees, path_len, hidden)]
    for k in range(trees):
        parts.append(w_in[k].tobytes())
        if b_in is not None:
            parts.append(b_in[k].tobytes())
        parts.append(w_out[k].tobytes())
    return b"".join(parts)


def acts_bytes(matrix) -> bytes:
    """Serialize a float32 activation matrix; zero rows are legal."""
    matrix = _as_f32(matrix, "activations")
    if matrix.ndim != 2 or matrix.shape[1] < 1:
        raise DimensionError(f"activations must be (batch, hidden) with hidden >= 1, got {matrix.shape}")
    return _ACTS_HEADER.pack(b"ACTS", FORMAT_VERSION, *matrix.shape) + matrix.tobytes()


def ufbm_bytes(layers, hidden: int, num_heads: int, layernorm_epsilon: float) -> bytes:
    """Serialize an encoder model from LayerTensors."""
    if hidden < 1 or num_heads < 1 or hidden % num_heads != 0:
        raise DimensionError(f"hidden {hidden} not divisible into {num_heads} heads")
    parts = [_UFBM_HEADER.pack(b"UFBM", FORMAT_VERSION, len(layers), hidden,
                               num_heads, layernorm_epsilon)]
    for i, layer in enumerate(layers):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            mat = _as_f32(getattr(layer, name), name)
            if mat.shape != (hidden, hidden):
                raise DimensionError(f"layer {i} {name} shape {mat.shape} != ({hidden}, {hidden})")
            parts.append(mat.tobytes())
        for name in ("b_q", "b_k", "b_v", "b_o", "ln1_scale", "ln1_shift",
                     "ln2_scale", "ln2_shift"):
            vec = _as_f32(getattr(layer, name), name)
            if vec.shape != (hidden,):
                raise DimensionError(f"layer {i} {name} shape {vec.shape} != ({hidden},)")
            parts.append(vec.tobytes())
        tree_blob = fffw_bytes(layer.w_in, layer.b_in, layer.w_out)
        if layer.w_in.shape[2] != hidden:
            raise DimensionError(
                f"layer {i} tree width {layer.w_in.shape[2]} != model width {hidden}"
            )
        parts.append(tree_blob)
    return b"".join(parts)


def _take(buf, offset, count, what):
    end = offset + count
    if end > len(buf):
        raise FormatError(f"truncated {what}: need {end} bytes, have {len(buf)}")
    return buf[offset:end], end


def _read_f32(buf, offset, shape, what):
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw, end = _take(buf, offset, count * 4, what)
    return np.frombuffer(raw, dtype=_F32, count=count).reshape(shape).copy(), end


def _header(buf, offset, magic, header, what):
    raw, _ = _take(buf, offset, header.size, f"{what} header")
    fields = header.unpack(raw)
    if fields[0] != magic:
        raise FormatError(f"bad magic {fields[0]!r} for {what}")
    if fields[1] != FORMAT_VERSION:
        raise FormatError(f"unsupported {what} version {fields[1]}")
    return fields, offset + header.size


def _fffw_from(buf, offset):
    fields, pos = _header(buf, offset, b"FFFW", _FFFW_HEADER, "tree layer")
    _, _, flags, trees, path_len, hidden = fields
    if flags not in (0, 1):
        raise FormatError(f"unknown tree-layer flags 0x{flags:x}")
    nodes = (1 << path_len) - 1
    w_in = np.empty((trees, nodes, hidden), dtype=_F32)
    w_out = np.empty((trees, nodes, hidden), dtype=_F32)
    b_in = np.empty((trees, nodes), dtype=_F32) if flags & 1 else None
    for k in range(trees):
        w_in[k], pos = _read_f32(buf, pos, (nodes, hidden), "tree w_in")
        if b_in is not None:
            b_in[k], pos = _read_f32(buf, pos, (nodes,), "tree b_in")
        w_out[k], pos = _read_f32(buf, pos, (nodes, hidden), "tree w_out")
    return w_in, b_in, w_out, pos


def read_fffw(path):
    """Load a tree-layer file; returns (w_in, b_in, w_out)."""
    buf = Path(path).read_bytes()
    w_in, b_in, w_out, end = _fffw_from(buf, 0)
    if end != len(buf):
        raise FormatError(f"tree-layer file has {len(buf) - end} trailing bytes")
    return w_in, b_in, w_out


def read_acts(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields, pos = _header(buf, 0, b"ACTS", _ACTS_HEADER, "activation dump")
    _, _, batch, hidden = fields
    matrix, end = _read_f32(buf, pos, (batch, hidden), "activation payload")
    if end != len(buf):
        raise FormatError(f"activation file has {len(buf) - end} trailing bytes")
    return matrix


def read_ufbm(path) -> ModelTensors:
    buf = Path(path).read_bytes()
    fields, pos = _header(buf, 0, b"UFBM", _UFBM_HEADER, "encoder model")
    _, _, num_layers, hidden, num_heads, eps = fields
    layers = []
    for _ in range(num_layers):
        mats = []
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m, pos = _read_f32(buf, pos, (hidden, hidden), name)
            mats.append(m)
        vecs = []
        for name in ("b_q", "b_k", "b_v", "b_o", "ln1", "ln1", "ln2", "ln2"):
            v, pos = _read_f32(buf, pos, (hidden,), name)
            vecs.append(v)
        w_in, b_in, w_out, pos = _fffw_from(buf, pos)
        layers.append(LayerTensors(mats[0], vecs[0], mats[1], vecs[1], mats[2], vecs[2],
                                   mats[3], vecs[3], vecs[4], vecs[5], vecs[6], vecs[7],
                                   w_in, b_in, w_out))
    if pos != len(buf):
        raise FormatError(f"model file has {len(buf) - pos} trailing bytes")
    return ModelTensors(tuple(layers), hidden, num_heads, float(eps))
