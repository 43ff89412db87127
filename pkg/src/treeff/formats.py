"""Binary file formats: tree-layer weights, activation dumps, encoder models.

All three formats are little-endian with a fixed magic and a u32 version.
Payload tensors are float32 and are copied verbatim, so NaN and infinity
payloads round-trip bit for bit. Loaders compute the expected byte length
from the header before touching the payload and never read past it; a
standalone file must match its computed length exactly.

FFFW (tree-layer weights)
    "FFFW" | u32 version | u32 flags | u32 num_trees | u32 path_len | u32 hidden_dim
    then per tree: w_in[nodes][hidden], b_in[nodes] if flag bit 0, w_out[nodes][hidden]

ACTS (activation matrix)
    "ACTS" | u32 version | u32 batch | u32 hidden_dim
    then row-major float32[batch][hidden]

UFBM (encoder model)
    "UFBM" | u32 version | u32 num_layers | u32 hidden_dim | u32 num_heads
    | f32 layernorm_epsilon
    then per layer: w_q, w_k, w_v, w_o as [hidden][hidden]; b_q, b_k, b_v, b_o;
    ln1 scale, ln1 shift, ln2 scale, ln2 shift; one embedded FFFW block
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoder import AttentionWeights, EncoderLayer, EncoderModel
from .errors import FormatError, LengthError, VersionError
from .fff import FFFConfig, FFFLayerWeights

FORMAT_VERSION = 1

MAGIC_FFFW = b"FFFW"
MAGIC_ACTS = b"ACTS"
MAGIC_UFBM = b"UFBM"

_FLAG_INPUT_BIAS = 1
_KNOWN_FFFW_FLAGS = _FLAG_INPUT_BIAS

_FFFW_HEADER = struct.Struct("<4sIIIII")
_ACTS_HEADER = struct.Struct("<4sIII")
_UFBM_HEADER = struct.Struct("<4sIIIIf")

_F32 = np.dtype("<f4")


def _require_f32(arr, what):
    if arr.dtype != np.float32:
        raise FormatError(f"{what} must be float32 for serialization, got {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=_F32)


def _take(buf, offset, count, what):
    """Slice `count` bytes or raise LengthError; never reads past the buffer."""
    end = offset + count
    if end > len(buf):
        raise LengthError(
            f"truncated {what}: need {end} bytes, have {len(buf)}"
        )
    return buf[offset:end], end


def _read_f32(buf, offset, shape, what):
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw, end = _take(buf, offset, count * 4, what)
    arr = np.frombuffer(raw, dtype=_F32, count=count).reshape(shape)
    return arr, end


def _check_magic_version(buf, offset, magic, header, what):
    raw, _ = _take(buf, offset, header.size, f"{what} header")
    fields = header.unpack(raw)
    if fields[0] != magic:
        raise FormatError(f"bad magic {fields[0]!r} for {what}, expected {magic!r}")
    if fields[1] != FORMAT_VERSION:
        raise VersionError(
            f"unsupported {what} version {fields[1]}, this reader handles {FORMAT_VERSION}"
        )
    return fields, offset + header.size


def fffw_byte_size(config: FFFConfig) -> int:
    """Exact serialized size of a tree-layer weight block."""
    nodes = config.nodes_per_tree
    per_tree = 2 * nodes * config.hidden_dim + (nodes if config.has_input_bias else 0)
    return _FFFW_HEADER.size + 4 * config.num_trees * per_tree


def fffw_to_bytes(weights: FFFLayerWeights) -> bytes:
    """Serialize one tree layer; weights must already be float32."""
    cfg = weights.config
    w_in = _require_f32(weights.w_in, "w_in")
    w_out = _require_f32(weights.w_out, "w_out")
    b_in = _require_f32(weights.b_in, "b_in") if cfg.has_input_bias else None
    flags = _FLAG_INPUT_BIAS if cfg.has_input_bias else 0
    parts = [
        _FFFW_HEADER.pack(MAGIC_FFFW, FORMAT_VERSION, flags,
                          cfg.num_trees, cfg.path_len, cfg.hidden_dim)
    ]
    for k in range(cfg.num_trees):
        parts.append(w_in[k].tobytes())
        if b_in is not None:
            parts.append(b_in[k].tobytes())
        parts.append(w_out[k].tobytes())
    blob = b"".join(parts)
    assert len(blob) == fffw_byte_size(cfg)
    return blob


def _fffw_from_prefix(buf, offset):
    """Parse one FFFW block starting at `offset`; returns (weights, end offset)."""
    fields, pos = _check_magic_version(buf, offset, MAGIC_FFFW, _FFFW_HEADER, "weight block")
    _, _, flags, num_trees, path_len, hidden = fields
    if flags & ~_KNOWN_FFFW_FLAGS:
        raise FormatError(f"unknown weight-block flag bits 0x{flags & ~_KNOWN_FFFW_FLAGS:x}")
    if num_trees < 1 or path_len < 1 or hidden < 1:
        raise FormatError(
            f"weight block declares degenerate shape: trees={num_trees}, "
            f"path_len={path_len}, hidden={hidden}"
        )
    has_bias = bool(flags & _FLAG_INPUT_BIAS)
    config = FFFConfig(hidden, num_trees, path_len - 1, has_input_bias=has_bias)
    nodes = config.nodes_per_tree
    w_in = np.empty((num_trees, nodes, hidden), dtype=_F32)
    w_out = np.empty((num_trees, nodes, hidden), dtype=_F32)
    b_in = np.empty((num_trees, nodes), dtype=_F32) if has_bias else None
    for k in range(num_trees):
        w_in[k], pos = _read_f32(buf, pos, (nodes, hidden), "weight block w_in")
        if has_bias:
            b_in[k], pos = _read_f32(buf, pos, (nodes,), "weight block b_in")
        w_out[k], pos = _read_f32(buf, pos, (nodes, hidden), "weight block w_out")
    return FFFLayerWeights(config, w_in, b_in, w_out), pos


def fffw_from_bytes(buf) -> FFFLayerWeights:
    """Deserialize a standalone tree-layer blob; length must match exactly."""
    weights, end = _fffw_from_prefix(bytes(buf), 0)
    if end != len(buf):
        raise LengthError(f"weight file has {len(buf) - end} trailing bytes")
    return weights


def save_fffw(weights: FFFLayerWeights, path) -> int:
    """Write a tree-layer weight file; returns the byte count written."""
    blob = fffw_to_bytes(weights)
    Path(path).write_bytes(blob)
    return len(blob)


def load_fffw(path) -> FFFLayerWeights:
    return fffw_from_bytes(Path(path).read_bytes())


def acts_to_bytes(matrix) -> bytes:
    """Serialize a float32 activation matrix; zero rows are legal."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise FormatError(f"activation dump must be 2-D, got shape {matrix.shape}")
    if matrix.shape[1] < 1:
        raise FormatError("activation dump must have at least one column")
    matrix = _require_f32(matrix, "activations")
    header = _ACTS_HEADER.pack(MAGIC_ACTS, FORMAT_VERSION, matrix.shape[0], matrix.shape[1])
    return header + matrix.tobytes()


def acts_from_bytes(buf) -> np.ndarray:
    buf = bytes(buf)
    fields, pos = _check_magic_version(buf, 0, MAGIC_ACTS, _ACTS_HEADER, "activation dump")
    _, _, batch, hidden = fields
    if hidden < 1:
        raise FormatError("activation dump declares zero columns")
    matrix, end = _read_f32(buf, pos, (batch, hidden), "activation payload")
    if end != len(buf):
        raise LengthError(f"activation file has {len(buf) - end} trailing bytes")
    return matrix


def save_acts(matrix, path) -> int:
    blob = acts_to_bytes(matrix)
    Path(path).write_bytes(blob)
    return len(blob)


def load_acts(path) -> np.ndarray:
    return acts_from_bytes(Path(path).read_bytes())


def ufbm_to_bytes(model: EncoderModel) -> bytes:
    """Serialize an encoder model; all parameters must be float32."""
    heads = model.layers[0].attention.num_heads if model.layers else 1
    for i, layer in enumerate(model.layers):
        if layer.attention.num_heads != heads:
            raise FormatError(
                f"layer {i} has {layer.attention.num_heads} heads, layer 0 has {heads}; "
                "the model format stores one head count"
            )
    parts = [
        _UFBM_HEADER.pack(MAGIC_UFBM, FORMAT_VERSION, model.num_layers,
                          model.hidden_dim, heads, model.layernorm_epsilon)
    ]
    for layer in model.layers:
        a = layer.attention
        for mat in (a.w_q, a.w_k, a.w_v, a.w_o):
            parts.append(_require_f32(mat, "attention matrix").tobytes())
        for vec in (a.b_q, a.b_k, a.b_v, a.b_o):
            parts.append(_require_f32(vec, "attention bias").tobytes())
        for vec in (layer.ln1_scale, layer.ln1_shift, layer.ln2_scale, layer.ln2_shift):
            parts.append(_require_f32(vec, "layernorm vector").tobytes())
        parts.append(fffw_to_bytes(layer.fff))
    return b"".join(parts)


def ufbm_from_bytes(buf) -> EncoderModel:
    buf = bytes(buf)
    fields, pos = _check_magic_version(buf, 0, MAGIC_UFBM, _UFBM_HEADER, "encoder model")
    _, _, num_layers, hidden, heads, eps = fields
    if hidden < 1:
        raise FormatError("encoder model declares zero hidden width")
    if heads < 1 or hidden % heads != 0:
        raise FormatError(f"hidden width {hidden} not divisible by {heads} heads")
    eps = float(np.float32(eps))
    if not eps > 0.0:
        raise FormatError(f"layernorm epsilon must be positive, got {eps}")
    layers = []
    for _ in range(num_layers):
        mats = []
        for _ in range(4):
            m, pos = _read_f32(buf, pos, (hidden, hidden), "attention matrix")
            mats.append(m)
        vecs = []
        for _ in range(8):
            v, pos = _read_f32(buf, pos, (hidden,), "per-feature vector")
            vecs.append(v)
        fff, pos = _fffw_from_prefix(buf, pos)
        if fff.config.hidden_dim != hidden:
            raise FormatError(
                f"embedded weight block width {fff.config.hidden_dim} != model width {hidden}"
            )
        attention = AttentionWeights(heads, mats[0], vecs[0], mats[1], vecs[1],
                                     mats[2], vecs[2], mats[3], vecs[3])
        layers.append(EncoderLayer(attention, vecs[4], vecs[5], vecs[6], vecs[7], fff))
    if pos != len(buf):
        raise LengthError(f"model file has {len(buf) - pos} trailing bytes")
    return EncoderModel(tuple(layers), hidden, eps)


def save_ufbm(model: EncoderModel, path) -> int:
    blob = ufbm_to_bytes(model)
    Path(path).write_bytes(blob)
    return len(blob)


def load_ufbm(path) -> EncoderModel:
    return ufbm_from_bytes(Path(path).read_bytes())
