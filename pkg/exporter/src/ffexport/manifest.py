"""Export manifests: where the checkpoint lives and what its tensors are called.

A manifest is a TOML file. The [tensors] table maps every model field to the
source tensor's name, with "{layer}" standing for the layer index:

    checkpoint = "checkpoint.pt"
    out = "model.ufbm"

    [tensors]
    w_q = "encoder.layer.{layer}.attention.query.weight"
    ...

    [reference]
    seed = 7
    batch = 3

Model geometry (hidden width, layer count, head count, trees, depth) is read
from the checkpoint itself, never from the manifest; the mapping table exists
only to absorb naming differences between checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from .errors import MappingError

# every field a model file stores, in no particular order; b_in is optional
# because tree layers may carry no input biases
REQUIRED_FIELDS = (
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
    "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift",
    "w_in", "w_out",
)
OPTIONAL_FIELDS = ("b_in",)

DEFAULT_NUM_HEADS_KEY = "num_attention_heads"
DEFAULT_EPS_KEY = "layer_norm_eps"


@dataclass(frozen=True)
class ExportManifest:
    """Everything export needs: source, destination, and the name mapping.

    `tensors` maps model fields to source names; geometry (H, L, heads, K,
    depth) is derived from the checkpoint when the export runs. `num_heads_key`
    and `eps_key` name the checkpoint config entries holding the head count
    and the layernorm epsilon.
    """

    tensors: dict[str, str]
    checkpoint: str | None = None
    out: str | None = None
    reference_seed: int = 7
    reference_batch: int = 3
    num_heads_key: str = DEFAULT_NUM_HEADS_KEY
    eps_key: str = DEFAULT_EPS_KEY

    def __post_init__(self):
        known = set(REQUIRED_FIELDS) | set(OPTIONAL_FIELDS)
        unknown = sorted(set(self.tensors) - known)
        if unknown:
            raise MappingError(f"unknown tensor fields in manifest: {', '.join(unknown)}")
        missing = sorted(set(REQUIRED_FIELDS) - set(self.tensors))
        if missing:
            raise MappingError(f"manifest leaves fields unmapped: {', '.join(missing)}")
        if self.reference_batch < 0:
            raise MappingError(f"reference batch must be >= 0, got {self.reference_batch}")

    @property
    def has_input_bias(self) -> bool:
        return "b_in" in self.tensors

    def source_name(self, fld: str, layer: int) -> str:
        return self.tensors[fld].format(layer=layer)

    def with_overrides(self, checkpoint=None, out=None) -> "ExportManifest":
        """Command-line flags win over manifest entries."""
        updates = {}
        if checkpoint is not None:
            updates["checkpoint"] = str(checkpoint)
        if out is not None:
            updates["out"] = str(out)
        return replace(self, **updates) if updates else self


def load_manifest(path) -> ExportManifest:
    """Parse and validate a manifest file."""
    path = Path(path)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    tensors = data.get("tensors")
    if not isinstance(tensors, dict) or not tensors:
        raise MappingError(f"{path}: manifest has no [tensors] table")
    for fld, name in tensors.items():
        if not isinstance(name, str) or not name:
            raise MappingError(f"{path}: tensor field {fld} must name a source tensor")
    ref = data.get("reference", {})
    return ExportManifest(
        tensors=dict(tensors),
        checkpoint=data.get("checkpoint"),
        out=data.get("out"),
        reference_seed=int(ref.get("seed", 7)),
        reference_batch=int(ref.get("batch", 3)),
        num_heads_key=data.get("num_heads_key", DEFAULT_NUM_HEADS_KEY),
        eps_key=data.get("eps_key", DEFAULT_EPS_KEY),
    )
