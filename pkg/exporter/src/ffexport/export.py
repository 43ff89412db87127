"""Converts torch encoder checkpoints to the engine's model file format.

The checkpoint is either a flat tensor dict or a dict holding one under a
"state_dict" key; scalar settings (head count, layernorm epsilon) come from a
"config" dict next to it, or from a config.json sitting beside the checkpoint
file. Geometry is derived, not declared: layer count by probing mapped names,
width from the query projection, trees and depth from the tree tensor shapes.

Source attention projections use the torch nn.Linear (out_features,
in_features) layout and are transposed to the file format's x @ W convention.
Per-node tree tensors are (nodes, hidden) on both sides and pass through
unchanged; 2-D tree tensors mean a single tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import formats
from .errors import DimensionError, MappingError
from .manifest import ExportManifest

_ATTENTION_MATS = ("w_q", "w_k", "w_v", "w_o")
_PER_FEATURE_VECS = ("b_q", "b_k", "b_v", "b_o", "ln1_scale", "ln1_shift",
                     "ln2_scale", "ln2_shift")

DEFAULT_LAYERNORM_EPS = 1e-12


@dataclass(frozen=True)
class ExportSummary:
    """What an export produced, for logs and assertions."""

    path: str
    bytes_written: int
    hidden: int
    num_layers: int
    num_heads: int
    num_trees: int
    depth_param: int
    has_input_bias: bool


def _load_checkpoint(path):
    """Return (tensors, config) from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise MappingError(f"checkpoint {path} does not exist")
    data = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(data, dict):
        raise MappingError(f"checkpoint {path} is not a tensor dict")
    config = data.get("config", {})
    tensors = data.get("state_dict", data)
    if not isinstance(config, dict):
        raise MappingError(f"checkpoint {path} has a non-dict config entry")
    if not config:
        sidecar = path.with_name("config.json")
        if sidecar.exists():
            config = json.loads(sidecar.read_text())
    return tensors, config


def _fetch(tensors, name, dtype=torch.float32) -> np.ndarray:
    if name not in tensors:
        raise MappingError(f"checkpoint has no tensor named {name}")
    value = tensors[name]
    if not isinstance(value, torch.Tensor):
        raise MappingError(f"checkpoint entry {name} is not a tensor")
    return value.detach().cpu().to(dtype).numpy()


def _probe_layers(manifest: ExportManifest, tensors) -> int:
    layer = 0
    while manifest.source_name("w_q", layer) in tensors:
        layer += 1
    return layer


def _tree_arrays(manifest, tensors, layer, hidden):
    """Fetch one layer's tree tensors, normalized to (trees, nodes, hidden)."""
    w_in = _fetch(tensors, manifest.source_name("w_in", layer))
    w_out = _fetch(tensors, manifest.source_name("w_out", layer))
    if w_in.ndim == 2:
        w_in = w_in[None]
    if w_out.ndim == 2:
        w_out = w_out[None]
    if w_in.ndim != 3 or w_in.shape[2] != hidden:
        raise DimensionError(
            f"layer {layer} w_in shape {w_in.shape} does not end in hidden width {hidden}"
        )
    if w_out.shape != w_in.shape:
        raise DimensionError(
            f"layer {layer} w_out shape {w_out.shape} != w_in shape {w_in.shape}"
        )
    trees, nodes = w_in.shape[:2]
    if (1 << (nodes + 1).bit_length() - 1) - 1 != nodes:
        raise DimensionError(
            f"layer {layer} has {nodes} nodes per tree, not a full binary tree (2^P - 1)"
        )
    b_in = None
    if manifest.has_input_bias:
        b_in = _fetch(tensors, manifest.source_name("b_in", layer))
        if b_in.ndim == 1:
            b_in = b_in[None]
        if b_in.shape != (trees, nodes):
            raise DimensionError(
                f"layer {layer} b_in shape {b_in.shape} != ({trees}, {nodes})"
            )
    return w_in, b_in, w_out


def _layer_tensors(manifest, tensors, layer, hidden) -> formats.LayerTensors:
    fields = {}
    for name in _ATTENTION_MATS:
        mat = _fetch(tensors, manifest.source_name(name, layer))
        if mat.shape != (hidden, hidden):
            raise DimensionError(
                f"layer {layer} {name} shape {mat.shape} != ({hidden}, {hidden})"
            )
        # nn.Linear stores (out, in); the file format wants x @ W
        fields[name] = np.ascontiguousarray(mat.T)
    for name in _PER_FEATURE_VECS:
        vec = _fetch(tensors, manifest.source_name(name, layer))
        if vec.shape != (hidden,):
            raise DimensionError(
                f"layer {layer} {name} shape {vec.shape} != ({hidden},)"
            )
        fields[name] = vec
    w_in, b_in, w_out = _tree_arrays(manifest, tensors, layer, hidden)
    return formats.LayerTensors(w_in=w_in, b_in=b_in, w_out=w_out, **fields)


def export_model(manifest: ExportManifest) -> ExportSummary:
    """Convert the manifest's checkpoint to a model file; re-runs are bitwise identical."""
    if manifest.checkpoint is None:
        raise MappingError("no checkpoint path: give one in the manifest or on the command line")
    if manifest.out is None:
        raise MappingError("no output path: give one in the manifest or on the command line")
    tensors, config = _load_checkpoint(manifest.checkpoint)

    if manifest.num_heads_key not in config:
        raise MappingError(
            f"checkpoint config lacks {manifest.num_heads_key}; the head count "
            "is not recoverable from tensor shapes"
        )
    num_heads = int(config[manifest.num_heads_key])
    eps = float(config.get(manifest.eps_key, DEFAULT_LAYERNORM_EPS))

    num_layers = _probe_layers(manifest, tensors)
    if num_layers == 0:
        if "hidden_size" not in config:
            raise MappingError(
                f"checkpoint has no tensor named {manifest.source_name('w_q', 0)} "
                "and no hidden_size config entry to define an empty model"
            )
        hidden = int(config["hidden_size"])
        layers = []
    else:
        hidden = _fetch(tensors, manifest.source_name("w_q", 0)).shape[0]
        layers = [_layer_tensors(manifest, tensors, i, hidden)
                  for i in range(num_layers)]

    blob = formats.ufbm_bytes(layers, hidden, num_heads, eps)
    Path(manifest.out).write_bytes(blob)
    trees, nodes = (layers[0].w_in.shape[:2]) if layers else (0, 1)
    return ExportSummary(
        path=str(manifest.out), bytes_written=len(blob), hidden=hidden,
        num_layers=num_layers, num_heads=num_heads, num_trees=trees,
        depth_param=(nodes + 1).bit_length() - 2, has_input_bias=manifest.has_input_bias,
    )
