"""Framework-side forward pass over an exported model file.

The tree feedforward is evaluated with the masking construction: every
node's activation is computed densely, then all off-path activations are
zeroed before the output projection. Routing starts at the root, and a
strictly positive node logit selects the right child. One layer is

    h1  = hidden + attention(layernorm(hidden; ln1))
    out = h1 + tree_ff(layernorm(h1; ln2))

with unmasked multi-head attention treating the batch rows as one sequence.
Everything runs in torch float32; outputs land in ACTS files.
"""

from __future__ import annotations

import math
from pathlib import Path
from types import SimpleNamespace

import torch
import torch.nn.functional as F

from . import formats
from .formats import ModelTensors

_INV_SQRT2 = 0.7071067811865476


def _gelu(x):
    return 0.5 * x * (1.0 + torch.erf(x * _INV_SQRT2))


def _tree_ff(x, w_in, b_in, w_out):
    """Masked tree feedforward; returns (output, on-path entries per row)."""
    batch = x.shape[0]
    trees, nodes = w_in.shape[:2]
    path_len = (nodes + 1).bit_length() - 1
    out = torch.zeros(batch, x.shape[1], dtype=x.dtype)
    engaged = torch.zeros(batch, dtype=torch.long)
    rows = torch.arange(batch)
    for k in range(trees):
        logits = x @ w_in[k].T
        if b_in is not None:
            logits = logits + b_in[k]
        mask = torch.zeros_like(logits)
        node = torch.zeros(batch, dtype=torch.long)
        for _ in range(path_len):
            mask[rows, node] = 1.0
            node = 2 * node + 1 + (logits[rows, node] > 0).long()
        out = out + (_gelu(logits) * mask) @ w_out[k]
        engaged = engaged + (mask != 0).sum(dim=1)
    return out, engaged


def _attention(x, layer, num_heads):
    batch, width = x.shape
    head_dim = width // num_heads
    q = x @ layer.w_q + layer.b_q
    k = x @ layer.w_k + layer.b_k
    v = x @ layer.w_v + layer.b_v
    qh = q.reshape(batch, num_heads, head_dim).transpose(0, 1)
    kh = k.reshape(batch, num_heads, head_dim).permute(1, 2, 0)
    vh = v.reshape(batch, num_heads, head_dim).transpose(0, 1)
    probs = F.softmax((qh @ kh) / math.sqrt(head_dim), dim=2)
    ctx = (probs @ vh).transpose(0, 1).reshape(batch, width)
    return ctx @ layer.w_o + layer.b_o


def forward_masked(model: ModelTensors, hidden):
    """Run the full stack; returns (output, per-layer on-path entry counts).

    `hidden` is a (batch, width) float32 array or tensor; each count tensor
    holds, per row, how many mask entries were set in that layer, which must
    equal trees times path length.
    """
    x = torch.as_tensor(hidden, dtype=torch.float32)
    tensors = [_torch_layer(layer) for layer in model.layers]
    counts = []
    for layer in tensors:
        normed1 = F.layer_norm(x, x.shape[-1:], layer.ln1_scale, layer.ln1_shift,
                               model.layernorm_epsilon)
        h1 = x + _attention(normed1, layer, model.num_heads)
        normed2 = F.layer_norm(h1, x.shape[-1:], layer.ln2_scale, layer.ln2_shift,
                               model.layernorm_epsilon)
        ff, engaged = _tree_ff(normed2, layer.w_in, layer.b_in, layer.w_out)
        x = h1 + ff
        counts.append(engaged)
    return x, counts


def _torch_layer(layer: formats.LayerTensors) -> SimpleNamespace:
    fields = {}
    for name in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
                 "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift",
                 "w_in", "w_out"):
        fields[name] = torch.from_numpy(getattr(layer, name))
    fields["b_in"] = None if layer.b_in is None else torch.from_numpy(layer.b_in)
    return SimpleNamespace(**fields)


def emit_reference(model_path, seed: int, batch: int, out_prefix):
    """Write seeded input activations and the model's output for them.

    Returns (input path, output path). The input is standard normal float32
    drawn from a torch generator seeded with `seed`.
    """
    model = formats.read_ufbm(model_path)
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(batch, model.hidden, generator=gen, dtype=torch.float32)
    out, _ = forward_masked(model, x)
    prefix = Path(out_prefix)
    input_path = prefix.with_name(prefix.name + ".input.acts")
    output_path = prefix.with_name(prefix.name + ".output.acts")
    input_path.write_bytes(formats.acts_bytes(x.numpy()))
    output_path.write_bytes(formats.acts_bytes(out.numpy()))
    return input_path, output_path


def emit_reference_for(manifest, seed=None, batch=None, out_prefix=None):
    """Manifest-level wrapper: the exported file plus manifest defaults."""
    if manifest.out is None:
        raise ValueError("manifest has no output path, so there is no model to read")
    prefix = out_prefix if out_prefix is not None else Path(manifest.out).with_suffix("")
    return emit_reference(
        manifest.out,
        manifest.reference_seed if seed is None else seed,
        manifest.reference_batch if batch is None else batch,
        prefix,
    )
