"""Inference engine and benchmark harness for tree-routed feedforward layers.

Rows of a batch descend balanced binary trees; only the visited nodes
contribute to the output, so a layer with thousands of neurons touches a
handful per row. Three kernel levels (naive, dot, batched) produce
bitwise-identical results in matched precision, and an independent float64
dense recomputation serves as the correctness oracle.
"""

from .bench import (
    BenchConfig,
    BenchReport,
    CompareReport,
    compare_reports,
    run_bench,
    run_compare,
)
from .checks import CheckOutcome, run_checks
from .encoder import (
    AttentionWeights,
    EncoderLayer,
    EncoderModel,
    attention_forward,
    layer_forward,
    layernorm,
    model_forward,
    random_model,
)
from .errors import (
    BoundsError,
    DimensionError,
    FormatError,
    LengthError,
    ResourceError,
    UnfairComparisonError,
    VersionError,
)
from .fff import (
    LEVELS,
    FFFConfig,
    FFFLayerWeights,
    MacCount,
    NeuronUsage,
    PathTrace,
    cmm_descend,
    dense_mac_count,
    ff_forward,
    fff_forward,
    fff_forward_traced,
    fff_mac_count,
    mac_ratio,
    masked_dense_oracle,
    max_scaled_deviation,
    neuron_usage,
    node_coverage,
    random_input,
    random_weights,
    usage_percent_string,
)
from .formats import (
    load_acts,
    load_fffw,
    load_ufbm,
    save_acts,
    save_fffw,
    save_ufbm,
)
from .tensor import gather_rows, gelu, matmul

__version__ = "0.1.0"

__all__ = [
    "AttentionWeights", "BenchConfig", "BenchReport", "BoundsError", "CheckOutcome",
    "CompareReport", "DimensionError", "EncoderLayer", "EncoderModel", "FFFConfig",
    "FFFLayerWeights", "FormatError", "LengthError", "LEVELS", "MacCount",
    "NeuronUsage", "PathTrace", "ResourceError", "UnfairComparisonError",
    "VersionError", "attention_forward", "cmm_descend", "compare_reports",
    "dense_mac_count", "ff_forward", "fff_forward", "fff_forward_traced",
    "fff_mac_count", "gather_rows", "gelu", "layer_forward", "layernorm",
    "load_acts", "load_fffw", "load_ufbm", "mac_ratio", "masked_dense_oracle",
    "matmul", "max_scaled_deviation", "model_forward", "neuron_usage",
    "node_coverage", "random_input", "random_model", "random_weights",
    "run_bench", "run_checks", "run_compare", "save_acts", "save_fffw",
    "save_ufbm", "usage_percent_string",
]
