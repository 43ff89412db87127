"""Tree-routed feedforward layers.

A layer holds `num_trees` balanced binary trees of depth `depth_param`; each
input row descends one root-to-leaf path per tree and only the visited nodes
contribute to the output:

    node(b, 0)   = 0
    logit(b, d)  = dot(input[b], w_in[node]) (+ b_in[node])
    node(b, d+1) = 2 * node(b, d) + 1 + (1 if logit(b, d) > 0 else 0)
    out[b]      += gelu(logit(b, d)) * w_out[node]      (trees, then depths)

Three kernel levels run this with identical arithmetic order and therefore
bitwise-identical results in matched precision:

    naive    pure-Python scalar loops (reference, small shapes only)
    dot      one compiled dot product per visited node, vector updates
    batched  whole-batch compiled kernels

`masked_dense_oracle` recomputes the layer by an independent dense route in
float64 for toleranced verification.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from scipy.special import erf as _erf_dense

from . import kernels
from .errors import BoundsError, DimensionError

LEVELS = ("naive", "dot", "batched")

_FLOAT_DTYPES = (np.float32, np.float64)


def _check_level(level):
    if level not in LEVELS:
        raise ValueError(f"unknown kernel level {level!r}; expected one of {LEVELS}")


@dataclass(frozen=True)
class FFFConfig:
    """Static shape of a tree-routed layer.

    depth_param counts edges below the root, so each row engages
    depth_param + 1 nodes per tree.
    """

    hidden_dim: int
    num_trees: int
    depth_param: int
    has_input_bias: bool = True

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise DimensionError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.num_trees < 1:
            raise DimensionError(f"num_trees must be >= 1, got {self.num_trees}")
        if self.depth_param < 0:
            raise DimensionError(f"depth_param must be >= 0, got {self.depth_param}")

    @property
    def path_len(self) -> int:
        return self.depth_param + 1

    @property
    def nodes_per_tree(self) -> int:
        return 2 ** self.path_len - 1

    @property
    def total_neurons(self) -> int:
        return self.num_trees * self.nodes_per_tree

    @property
    def neurons_per_token(self) -> int:
        return self.num_trees * self.path_len


@dataclass(frozen=True)
class FFFLayerWeights:
    """Layer parameters; treat as immutable after construction.

    w_in, w_out: (num_trees, nodes_per_tree, hidden_dim)
    b_in: (num_trees, nodes_per_tree) or None, present iff has_input_bias
    """

    config: FFFConfig
    w_in: np.ndarray
    b_in: np.ndarray | None
    w_out: np.ndarray

    def __post_init__(self):
        cfg = self.config
        shape = (cfg.num_trees, cfg.nodes_per_tree, cfg.hidden_dim)
        object.__setattr__(self, "w_in", np.ascontiguousarray(self.w_in))
        object.__setattr__(self, "w_out", np.ascontiguousarray(self.w_out))
        if self.w_in.shape != shape:
            raise DimensionError(f"w_in shape {self.w_in.shape} != {shape}")
        if self.w_out.shape != shape:
            raise DimensionError(f"w_out shape {self.w_out.shape} != {shape}")
        if self.w_in.dtype.type not in _FLOAT_DTYPES:
            raise DimensionError(f"weights must be float32 or float64, got {self.w_in.dtype}")
        if self.w_out.dtype != self.w_in.dtype:
            raise DimensionError("w_in and w_out dtypes differ")
        if cfg.has_input_bias:
            if self.b_in is None:
                raise DimensionError("config declares an input bias but b_in is None")
            object.__setattr__(self, "b_in", np.ascontiguousarray(self.b_in))
            if self.b_in.shape != shape[:2]:
                raise DimensionError(f"b_in shape {self.b_in.shape} != {shape[:2]}")
            if self.b_in.dtype != self.w_in.dtype:
                raise DimensionError("b_in dtype differs from w_in")
        elif self.b_in is not None:
            raise DimensionError("config declares no input bias but b_in is present")

    @property
    def dtype(self):
        return self.w_in.dtype

    def astype(self, dtype) -> "FFFLayerWeights":
        """Same weights in another precision; float32 -> float64 is exact."""
        dt = np.dtype(dtype)
        if dt == self.dtype:
            return self
        b_in = None if self.b_in is None else self.b_in.astype(dt)
        return FFFLayerWeights(self.config, self.w_in.astype(dt), b_in, self.w_out.astype(dt))


@dataclass(frozen=True)
class PathTrace:
    """Per-row descent record for one tree: visited nodes and their logits."""

    node_index: np.ndarray  # (batch, path_len) int64
    logits: np.ndarray      # (batch, path_len) in the forward dtype


@dataclass(frozen=True)
class NeuronUsage:
    """Tree-layer width accounting for one forward pass of a single row."""

    total_neurons: int
    neurons_per_token: int
    usage_fraction: float


@dataclass(frozen=True)
class MacCount:
    """Closed-form work accounting for one batched forward pass."""

    multiply_accumulates: int
    weight_row_loads: int


def random_weights(config: FFFConfig, seed, dtype=np.float32) -> FFFLayerWeights:
    """Seeded standard-normal weights scaled by 1/sqrt(hidden_dim).

    Draw order is fixed (w_in block, bias block, w_out block) so a seed fully
    determines the layer. Values are drawn in float64, scaled, stored in
    float32; float64 output promotes those float32 values exactly, keeping
    the two precisions comparable.

    `seed` may be an int or a numpy Generator (consumed in place).
    """
    dt = np.dtype(dtype)
    if dt.type not in _FLOAT_DTYPES:
        raise DimensionError(f"dtype must be float32 or float64, got {dt}")
    rng = np.random.default_rng(seed)
    cfg = config
    scale = 1.0 / np.sqrt(cfg.hidden_dim)
    shape = (cfg.num_trees, cfg.nodes_per_tree, cfg.hidden_dim)
    w_in = (rng.standard_normal(shape) * scale).astype(np.float32)
    b_in = None
    if cfg.has_input_bias:
        b_in = (rng.standard_normal(shape[:2]) * scale).astype(np.float32)
    w_out = (rng.standard_normal(shape) * scale).astype(np.float32)
    weights = FFFLayerWeights(cfg, w_in, b_in, w_out)
    return weights.astype(dt)


def random_input(batch: int, hidden: int, seed, dtype=np.float32) -> np.ndarray:
    """Seeded standard-normal input matrix (batch, hidden)."""
    rng = np.random.default_rng(seed)
    out = rng.standard_normal((batch, hidden)).astype(np.float32)
    return out.astype(np.dtype(dtype), copy=False)


def _check_forward_input(inp, hidden, dtype):
    arr = np.asarray(inp)
    if arr.ndim != 2:
        raise DimensionError(f"input must be 2-D, got shape {arr.shape}")
    if arr.shape[1] != hidden:
        raise DimensionError(f"input width {arr.shape[1]} != hidden_dim {hidden}")
    if arr.dtype != dtype:
        raise TypeError(f"input dtype {arr.dtype} does not match weight dtype {dtype}")
    return np.ascontiguousarray(arr)


def _prepare_out(out, batch, hidden, dtype):
    """Validate or allocate the output accumulator; always starts zeroed.

    Callers timing repeated passes hand in one buffer to keep allocator
    traffic out of the measurement; results are identical either way.
    """
    if out is None:
        return np.zeros((batch, hidden), dtype=dtype)
    if not isinstance(out, np.ndarray) or out.shape != (batch, hidden):
        shape = getattr(out, "shape", type(out).__name__)
        raise DimensionError(f"out must be a ({batch}, {hidden}) array, got {shape}")
    if out.dtype != dtype:
        raise TypeError(f"out dtype {out.dtype} does not match weight dtype {dtype}")
    if not out.flags.c_contiguous:
        raise DimensionError("out must be C-contiguous")
    out.fill(0)
    return out


def _row_spans(batch, threads):
    """Contiguous (lo, hi) spans covering [0, batch), at most `threads` of them."""
    threads = max(1, min(threads, batch)) if batch else 1
    base, rem = divmod(batch, threads)
    spans = []
    lo = 0
    for i in range(threads):
        hi = lo + base + (1 if i < rem else 0)
        if hi > lo:
            spans.append((lo, hi))
        lo = hi
    return spans


def _run_sliced(fn, batch, threads):
    """Run fn(lo, hi) over disjoint row spans, in parallel when threads > 1.

    Row results are independent, so any partitioning yields identical bits.
    """
    spans = _row_spans(batch, threads)
    if len(spans) <= 1:
        for lo, hi in spans:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        # list() propagates worker exceptions
        list(pool.map(lambda span: fn(span[0], span[1]), spans))


def _descend_rows(inp, w_in, b_in, use_bias, path_len, n_idx, logits, zero, level):
    """Fill n_idx/logits for every row of `inp` against one tree."""
    if level == "batched":
        bias = b_in if use_bias else np.zeros(1, dtype=inp.dtype)
        kernels.descend_tree(inp, w_in, bias, use_bias, path_len, n_idx, logits, zero)
        return
    dot = kernels.dot if level == "dot" else kernels.dot_py
    for bi in range(inp.shape[0]):
        row = inp[bi]
        node = 0
        for d in range(path_len):
            acc = dot(row, w_in[node], zero)
            if use_bias:
                acc = acc + b_in[node]
            n_idx[bi, d] = node
            logits[bi, d] = acc
            node = 2 * node + 2 if acc > zero else 2 * node + 1


def _activate(logits, g, level, dtype):
    """Exact GeLU into g (same shape); one rounding on store, all levels."""
    if level == "batched":
        kernels.act(logits, g)
        return
    cast = dtype.type
    rows, cols = logits.shape
    for i in range(rows):
        for j in range(cols):
            g[i, j] = cast(kernels.gelu_py(float(logits[i, j])))


def _accumulate(g, n_idx, w_out, out, level):
    """out[b] += sum_d g[b, d] * w_out[n_idx[b, d]], depth ascending."""
    if level == "batched":
        kernels.accumulate_paths(g, n_idx, w_out, out)
        return
    rows, path_len = g.shape
    if level == "dot":
        for bi in range(rows):
            for d in range(path_len):
                out[bi] += g[bi, d] * w_out[n_idx[bi, d]]
        return
    width = out.shape[1]
    for bi in range(rows):
        for d in range(path_len):
            gv = g[bi, d]
            wrow = w_out[n_idx[bi, d]]
            for h in range(width):
                out[bi, h] = out[bi, h] + gv * wrow[h]


def cmm_descend(inp, weights: FFFLayerWeights, tree: int = 0, level: str = "batched",
                threads: int = 1) -> PathTrace:
    """Descend one tree for every input row; returns the visited paths."""
    _check_level(level)
    cfg = weights.config
    if not 0 <= tree < cfg.num_trees:
        raise BoundsError(f"tree index {tree} out of range for {cfg.num_trees} trees")
    inp = _check_forward_input(inp, cfg.hidden_dim, weights.dtype)
    batch = inp.shape[0]
    path_len = cfg.path_len
    n_idx = np.zeros((batch, path_len), dtype=np.int64)
    logits = np.zeros((batch, path_len), dtype=weights.dtype)
    zero = weights.dtype.type(0.0)
    w_in = weights.w_in[tree]
    b_in = weights.b_in[tree] if cfg.has_input_bias else None

    def run(lo, hi):
        _descend_rows(inp[lo:hi], w_in, b_in, cfg.has_input_bias, path_len,
                      n_idx[lo:hi], logits[lo:hi], zero, level)

    _run_sliced(run, batch, threads)
    return PathTrace(n_idx, logits)


def fff_forward_traced(inp, weights: FFFLayerWeights, level: str = "batched",
                       threads: int = 1, out=None):
    """Forward pass plus the per-tree descent traces.

    Returns (out, traces) where out is (batch, hidden_dim) in the weight
    dtype and traces is one PathTrace per tree. A preallocated `out` buffer
    is zeroed and reused.
    """
    _check_level(level)
    cfg = weights.config
    inp = _check_forward_input(inp, cfg.hidden_dim, weights.dtype)
    batch = inp.shape[0]
    path_len = cfg.path_len
    dtype = weights.dtype
    zero = dtype.type(0.0)
    out = _prepare_out(out, batch, cfg.hidden_dim, dtype)
    n_idx = [np.zeros((batch, path_len), dtype=np.int64) for _ in range(cfg.num_trees)]
    logits = [np.zeros((batch, path_len), dtype=dtype) for _ in range(cfg.num_trees)]

    def run(lo, hi):
        g = np.zeros((hi - lo, path_len), dtype=dtype)
        for k in range(cfg.num_trees):
            w_in = weights.w_in[k]
            b_in = weights.b_in[k] if cfg.has_input_bias else None
            _descend_rows(inp[lo:hi], w_in, b_in, cfg.has_input_bias, path_len,
                          n_idx[k][lo:hi], logits[k][lo:hi], zero, level)
            _activate(logits[k][lo:hi], g, level, dtype)
            _accumulate(g, n_idx[k][lo:hi], weights.w_out[k], out[lo:hi], level)

    _run_sliced(run, batch, threads)
    traces = [PathTrace(n, l) for n, l in zip(n_idx, logits)]
    return out, traces


def fff_forward(inp, weights: FFFLayerWeights, level: str = "batched",
                threads: int = 1, out=None) -> np.ndarray:
    """Tree-routed forward pass: (batch, hidden_dim) -> (batch, hidden_dim)."""
    out, _ = fff_forward_traced(inp, weights, level=level, threads=threads, out=out)
    return out


def ff_forward(inp, w_in, b_in, w_out, level: str = "batched",
               threads: int = 1, out=None) -> np.ndarray:
    """Classic dense feedforward with the same arithmetic building blocks.

    w_in, w_out: (neurons, hidden_dim); b_in: (neurons,) or None.
    Every neuron fires for every row: logits = inp . w_in^T (+ b_in),
    out = gelu(logits) . w_out. A preallocated `out` buffer is zeroed and
    reused.
    """
    _check_level(level)
    w_in = np.ascontiguousarray(w_in)
    w_out = np.ascontiguousarray(w_out)
    if w_in.ndim != 2 or w_out.shape != w_in.shape:
        raise DimensionError(
            f"w_in {w_in.shape} and w_out {w_out.shape} must be matching 2-D matrices"
        )
    neurons, hidden = w_in.shape
    use_bias = b_in is not None
    if use_bias:
        b_in = np.ascontiguousarray(b_in)
        if b_in.shape != (neurons,):
            raise DimensionError(f"b_in shape {b_in.shape} != ({neurons},)")
    inp = _check_forward_input(inp, hidden, w_in.dtype)
    batch = inp.shape[0]
    dtype = w_in.dtype
    zero = dtype.type(0.0)
    out = _prepare_out(out, batch, hidden, dtype)

    def run_batched(lo, hi):
        logits = np.zeros((hi - lo, neurons), dtype=dtype)
        bias = b_in if use_bias else np.zeros(1, dtype=dtype)
        kernels.dense_logits(inp[lo:hi], w_in, bias, use_bias, logits, zero)
        # activation in place: halves peak memory at benchmark scale
        kernels.act(logits, logits)
        kernels.dense_accumulate(logits, w_out, out[lo:hi])

    def run_scalar(lo, hi):
        dot = kernels.dot if level == "dot" else kernels.dot_py
        cast = dtype.type
        for bi in range(lo, hi):
            row = inp[bi]
            for j in range(neurons):
                acc = dot(row, w_in[j], zero)
                if use_bias:
                    acc = acc + b_in[j]
                gv = cast(kernels.gelu_py(float(acc)))
                if level == "dot":
                    out[bi] += gv * w_out[j]
                else:
                    orow = out[bi]
                    wrow = w_out[j]
                    for h in range(hidden):
                        orow[h] = orow[h] + gv * wrow[h]

    _run_sliced(run_batched if level == "batched" else run_scalar, batch, threads)
    return out


def masked_dense_oracle(inp, weights: FFFLayerWeights) -> np.ndarray:
    """Independent float64 recomputation of the tree-routed forward pass.

    Computes every node's logit densely (numpy matmul), walks the trees over
    that dense table, zeroes off-path activations, and multiplies by the full
    output weights. Shares no reduction code or erf implementation with the
    kernels, so agreement is numerical, not circular.
    """
    cfg = weights.config
    inp64 = _check_forward_input(inp, cfg.hidden_dim, weights.dtype).astype(np.float64)
    batch = inp64.shape[0]
    nodes = cfg.nodes_per_tree
    out = np.zeros((batch, cfg.hidden_dim), dtype=np.float64)
    rows = np.arange(batch)
    for k in range(cfg.num_trees):
        w_in = weights.w_in[k].astype(np.float64)
        logits = inp64 @ w_in.T
        if cfg.has_input_bias:
            logits = logits + weights.b_in[k].astype(np.float64)[None, :]
        on_path = np.zeros((batch, nodes), dtype=bool)
        node = np.zeros(batch, dtype=np.int64)
        for _ in range(cfg.path_len):
            on_path[rows, node] = True
            taken = logits[rows, node]
            node = 2 * node + 1 + (taken > 0.0)
        acts = 0.5 * logits * (1.0 + _erf_dense(logits * kernels.INV_SQRT2))
        acts = np.where(on_path, acts, 0.0)
        out += acts @ weights.w_out[k].astype(np.float64)
    return out


def max_scaled_deviation(actual, expected) -> float:
    """max|actual - expected| scaled by max|expected|.

    The scaled form reads "relative to the matrix magnitude", which stays
    meaningful where individual output elements cancel toward zero. An
    all-zero expected matrix demands an all-zero actual one.
    """
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if actual.shape != expected.shape:
        raise DimensionError(f"shape mismatch: {actual.shape} vs {expected.shape}")
    if actual.size == 0:
        return 0.0
    diff = float(np.max(np.abs(actual - expected)))
    scale = float(np.max(np.abs(expected)))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale


def neuron_usage(config: FFFConfig) -> NeuronUsage:
    """How many neurons exist vs how many any single row touches."""
    return NeuronUsage(
        total_neurons=config.total_neurons,
        neurons_per_token=config.neurons_per_token,
        usage_fraction=config.neurons_per_token / config.total_neurons,
    )


def usage_percent_string(fraction: float) -> str:
    """Format a usage fraction as a percent with one decimal, round half up."""
    pct = Decimal(repr(fraction * 100.0)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{pct}%"


def dense_mac_count(batch: int, hidden: int, neurons: int) -> MacCount:
    """Dense feedforward work: both projections visit every neuron."""
    return MacCount(
        multiply_accumulates=2 * batch * neurons * hidden,
        weight_row_loads=2 * batch * neurons,
    )


def fff_mac_count(batch: int, hidden: int, num_trees: int, path_len: int) -> MacCount:
    """Tree-routed work: both projections visit only the visited nodes."""
    return MacCount(
        multiply_accumulates=2 * batch * num_trees * path_len * hidden,
        weight_row_loads=2 * batch * num_trees * path_len,
    )


def mac_ratio(baseline: MacCount, subject: MacCount) -> float:
    """Exact closed-form ratio of multiply-accumulate counts."""
    return baseline.multiply_accumulates / subject.multiply_accumulates


def node_coverage(traces, config: FFFConfig) -> np.ndarray:
    """Visit counts per node index, summed over traces.

    Accepts one PathTrace or a sequence of them; all trees share one index
    space of size nodes_per_tree.
    """
    if isinstance(traces, PathTrace):
        traces = [traces]
    counts = np.zeros(config.nodes_per_tree, dtype=np.int64)
    for trace in traces:
        idx = trace.node_index.ravel()
        if idx.size:
            lo = int(idx.min())
            hi = int(idx.max())
            if lo < 0 or hi >= config.nodes_per_tree:
                bad = lo if lo < 0 else hi
                raise BoundsError(
                    f"node index {bad} out of range for {config.nodes_per_tree} nodes"
                )
            counts += np.bincount(idx, minlength=config.nodes_per_tree)
    return counts
