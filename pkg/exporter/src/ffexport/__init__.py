"""Checkpoint exporter: torch encoder weights out, engine interchange files in.

The package converts framework-native checkpoints of encoders with binary-tree
feedforward layers into the engine's UFBM model files, and emits paired
input/output ACTS activation files from a framework-side forward pass so the
two implementations can be compared on identical bytes.
"""

from .errors import DimensionError, FormatError, MappingError
from .export import ExportSummary, export_model
from .formats import LayerTensors, ModelTensors, acts_bytes, fffw_bytes, read_acts, read_fffw, read_ufbm, ufbm_bytes
from .manifest import ExportManifest, load_manifest
from .reference import emit_reference, emit_reference_for, forward_masked

__all__ = [
    "DimensionError",
    "ExportManifest",
    "ExportSummary",
    "FormatError",
    "LayerTensors",
    "MappingError",
    "ModelTensors",
    "acts_bytes",
    "emit_reference",
    "emit_reference_for",
    "export_model",
    "fffw_bytes",
    "forward_masked",
    "load_manifest",
    "read_acts",
    "read_fffw",
    "read_ufbm",
    "ufbm_bytes",
]
