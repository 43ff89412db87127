"""Shared builders: seeded torch checkpoints and matching manifests."""

import math
from types import SimpleNamespace

import pytest
import torch

TENSOR_TABLE = """
[tensors]
w_q = "encoder.layer.{layer}.attention.query.weight"
b_q = "encoder.layer.{layer}.attention.query.bias"
w_k = "encoder.layer.{layer}.attention.key.weight"
b_k = "encoder.layer.{layer}.attention.key.bias"
w_v = "encoder.layer.{layer}.attention.value.weight"
b_v = "encoder.layer.{layer}.attention.value.bias"
w_o = "encoder.layer.{layer}.attention.output.weight"
b_o = "encoder.layer.{layer}.attention.output.bias"
ln1_scale = "encoder.layer.{layer}.ln1.weight"
ln1_shift = "encoder.layer.{layer}.ln1.bias"
ln2_scale = "encoder.layer.{layer}.ln2.weight"
ln2_shift = "encoder.layer.{layer}.ln2.bias"
w_in = "encoder.layer.{layer}.fff.w_in"
w_out = "encoder.layer.{layer}.fff.w_out"
"""

BIAS_LINE = 'b_in = "encoder.layer.{layer}.fff.b_in"\n'


def build_state(hidden, layers, trees, depth, bias, seed, flat_tree=False):
    """Seeded tensors in source conventions: attention (out, in), trees (K, nodes, H)."""
    gen = torch.Generator().manual_seed(seed)
    nodes = 2 ** (depth + 1) - 1

    def t(*shape):
        return torch.randn(*shape, generator=gen) / math.sqrt(shape[-1])

    state = {}
    for i in range(layers):
        pre = f"encoder.layer.{i}"
        for part in ("query", "key", "value", "output"):
            state[f"{pre}.attention.{part}.weight"] = t(hidden, hidden)
            state[f"{pre}.attention.{part}.bias"] = t(hidden)
        for ln in ("ln1", "ln2"):
            state[f"{pre}.{ln}.weight"] = 1.0 + 0.02 * t(hidden)
            state[f"{pre}.{ln}.bias"] = 0.02 * t(hidden)
        # flat_tree stores single-tree tensors 2-D, the shorthand the exporter
        # must normalize to one tree
        tree_w = (t(nodes, hidden) if flat_tree else t(trees, nodes, hidden))
        state[f"{pre}.fff.w_in"] = tree_w
        state[f"{pre}.fff.w_out"] = (t(nodes, hidden) if flat_tree
                                     else t(trees, nodes, hidden))
        if bias:
            state[f"{pre}.fff.b_in"] = 0.1 * (t(nodes) if flat_tree else t(trees, nodes))
    return state


def manifest_text(ckpt="checkpoint.pt", out="model.ufbm", bias=True,
                  seed=7, batch=3, extra=""):
    table = TENSOR_TABLE + (BIAS_LINE if bias else "")
    return (f'checkpoint = "{ckpt}"\nout = "{out}"\n{extra}\n{table}\n'
            f"[reference]\nseed = {seed}\nbatch = {batch}\n")


@pytest.fixture
def make_checkpoint(tmp_path):
    """Write a seeded checkpoint plus manifest; returns paths and the source state."""

    def build(hidden=8, layers=2, heads=2, trees=2, depth=2, bias=True, seed=11,
              flat_tree=False, nested=True, config=None, edit=None, extra=""):
        state = build_state(hidden, layers, trees, depth, bias, seed, flat_tree)
        if edit is not None:
            edit(state)
        if config is None:
            config = {"num_attention_heads": heads, "layer_norm_eps": 1e-12}
        ckpt = tmp_path / "checkpoint.pt"
        torch.save({"config": config, "state_dict": state} if nested else state, ckpt)
        manifest = tmp_path / "map.toml"
        out = tmp_path / "model.ufbm"
        manifest.write_text(manifest_text(ckpt, out, bias=bias, extra=extra))
        return SimpleNamespace(ckpt=ckpt, manifest=manifest, out=out, state=state,
                               config=config, hidden=hidden, layers=layers,
                               heads=heads, trees=trees, depth=depth, bias=bias)

    return build
