"""Self-contained verification suites, runnable from the CLI.

Four suites:

    oracle       randomized configurations, every kernel level against the
                 independent float64 dense recomputation
    levels       bitwise output equality across the three kernel levels
    usage        path-structure invariants: exactly path_len nodes per tree
                 per row, depth windows, leftmost chain on zero weights,
                 full node coverage under a wide random batch
    determinism  seeded reruns and thread counts reproduce identical bits

Each suite returns a CheckOutcome; `failures` lists one line per violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fff import (
    LEVELS,
    FFFConfig,
    FFFLayerWeights,
    cmm_descend,
    fff_forward,
    fff_forward_traced,
    masked_dense_oracle,
    max_scaled_deviation,
    neuron_usage,
    node_coverage,
    random_input,
    random_weights,
)

SUITES = ("oracle", "levels", "usage", "determinism")

TOL_SINGLE = 1e-6
TOL_DOUBLE = 1e-12


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str
    failures: list[str] = field(default_factory=list)


def _random_config(rng, max_hidden=16, max_depth=4, max_trees=4):
    return FFFConfig(
        hidden_dim=int(rng.integers(1, max_hidden + 1)),
        num_trees=int(rng.integers(1, max_trees + 1)),
        depth_param=int(rng.integers(0, max_depth + 1)),
        has_input_bias=bool(rng.integers(0, 2)),
    )


def check_oracle(num_configs: int = 1000, seed: int = 20240817) -> CheckOutcome:
    """Random configurations, all levels and precisions, against the oracle."""
    rng = np.random.default_rng(seed)
    failures = []
    worst = {"f32": 0.0, "f64": 0.0}
    for i in range(num_configs):
        cfg = _random_config(rng)
        batch = int(rng.integers(0, 9))
        weights32 = random_weights(cfg, rng)
        inp32 = random_input(batch, cfg.hidden_dim, rng)
        weights64 = weights32.astype(np.float64)
        inp64 = inp32.astype(np.float64)
        expected = masked_dense_oracle(inp32, weights32)
        for level in LEVELS:
            for tag, tol, w, x in (
                ("f32", TOL_SINGLE, weights32, inp32),
                ("f64", TOL_DOUBLE, weights64, inp64),
            ):
                dev = max_scaled_deviation(fff_forward(x, w, level=level), expected)
                worst[tag] = max(worst[tag], dev)
                if not dev <= tol:
                    failures.append(
                        f"config {i} ({cfg}) level {level} {tag}: deviation {dev:.3e} > {tol:g}"
                    )
    detail = (
        f"{num_configs} configurations; worst scaled deviation "
        f"f32 {worst['f32']:.3e} (tol {TOL_SINGLE:g}), f64 {worst['f64']:.3e} (tol {TOL_DOUBLE:g})"
    )
    return CheckOutcome("oracle", not failures, detail, failures)


def _bits_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def check_levels(num_configs: int = 120, seed: int = 20240818) -> CheckOutcome:
    """Bitwise agreement of naive, dot and batched outputs and traces."""
    rng = np.random.default_rng(seed)
    failures = []
    checked = 0
    for i in range(num_configs):
        cfg = _random_config(rng, max_hidden=48, max_depth=6, max_trees=3)
        batch = int(rng.integers(0, 33))
        for dtype in (np.float32, np.float64):
            weights = random_weights(cfg, rng, dtype)
            inp = random_input(batch, cfg.hidden_dim, rng, dtype)
            ref_out, ref_traces = fff_forward_traced(inp, weights, level="naive")
            for level in ("dot", "batched"):
                out, traces = fff_forward_traced(inp, weights, level=level)
                checked += 1
                if not _bits_equal(out, ref_out):
                    failures.append(f"config {i} {np.dtype(dtype)} {level}: outputs differ from naive")
                for t, (a, b) in enumerate(zip(traces, ref_traces)):
                    if not _bits_equal(a.node_index, b.node_index):
                        failures.append(f"config {i} {np.dtype(dtype)} {level}: tree {t} paths differ")
                    if not _bits_equal(a.logits, b.logits):
                        failures.append(f"config {i} {np.dtype(dtype)} {level}: tree {t} logits differ")
    detail = f"{checked} level pairings compared bitwise against naive"
    return CheckOutcome("levels", not failures, detail, failures)


def check_usage(seed: int = 20240819) -> CheckOutcome:
    """Structural path invariants and node coverage."""
    rng = np.random.default_rng(seed)
    failures = []

    # each row engages exactly path_len nodes per tree, one per depth window
    cfg = FFFConfig(hidden_dim=8, num_trees=3, depth_param=4)
    weights = random_weights(cfg, rng)
    inp = random_input(64, cfg.hidden_dim, rng)
    _, traces = fff_forward_traced(inp, weights)
    for t, trace in enumerate(traces):
        for b in range(inp.shape[0]):
            path = trace.node_index[b]
            if len(set(path.tolist())) != cfg.path_len:
                failures.append(f"tree {t} row {b}: path revisits a node: {path}")
            for d, node in enumerate(path.tolist()):
                lo, hi = 2 ** d - 1, 2 ** (d + 1) - 2
                if not lo <= node <= hi:
                    failures.append(
                        f"tree {t} row {b} depth {d}: node {node} outside [{lo}, {hi}]"
                    )
    usage = neuron_usage(cfg)
    if usage.neurons_per_token != cfg.num_trees * cfg.path_len:
        failures.append(f"usage accounting wrong: {usage}")

    # zero weights give zero logits, which route left at every step
    zcfg = FFFConfig(hidden_dim=4, num_trees=1, depth_param=5, has_input_bias=False)
    shape = (zcfg.num_trees, zcfg.nodes_per_tree, zcfg.hidden_dim)
    zweights = FFFLayerWeights(zcfg, np.zeros(shape, np.float32), None,
                               np.zeros(shape, np.float32))
    ztrace = cmm_descend(random_input(16, zcfg.hidden_dim, rng), zweights)
    leftmost = np.array([2 ** d - 1 for d in range(zcfg.path_len)], dtype=np.int64)
    if not np.array_equal(ztrace.node_index, np.tile(leftmost, (16, 1))):
        failures.append("zero weights did not route every row down the leftmost chain")
    if ztrace.logits.any():
        failures.append("zero weights produced nonzero logits")

    # a wide random batch visits every node of a shallow tree
    ccfg = FFFConfig(hidden_dim=8, num_trees=1, depth_param=3, has_input_bias=False)
    cweights = random_weights(ccfg, rng)
    ctrace = cmm_descend(random_input(4096, ccfg.hidden_dim, rng), cweights)
    counts = node_coverage(ctrace, ccfg)
    if not (counts > 0).all():
        cold = np.flatnonzero(counts == 0).tolist()
        failures.append(f"nodes never visited by a 4096-row batch: {cold}")
    if counts.sum() != 4096 * ccfg.path_len:
        failures.append(f"coverage counts sum to {counts.sum()}, expected {4096 * ccfg.path_len}")

    # the usage fraction depends only on depth, not on tree count
    for depth in (0, 2, 5):
        fractions = {
            neuron_usage(FFFConfig(8, trees, depth)).usage_fraction for trees in (1, 2, 8)
        }
        if len(fractions) != 1:
            failures.append(f"usage fraction varies with tree count at depth {depth}: {fractions}")

    detail = "path windows, leftmost-chain routing, node coverage, fraction invariance"
    return CheckOutcome("usage", not failures, detail, failures)


def check_determinism(repeats: int = 5, seed: int = 20240820) -> CheckOutcome:
    """Seeded reruns, fresh weights and varying thread counts match bitwise."""
    failures = []
    cfg = FFFConfig(hidden_dim=24, num_trees=2, depth_param=5)
    for r in range(repeats):
        weights = random_weights(cfg, seed + r)
        inp = random_input(40, cfg.hidden_dim, seed + 1000 + r)
        base = fff_forward(inp, weights)
        again = fff_forward(random_input(40, cfg.hidden_dim, seed + 1000 + r),
                            random_weights(cfg, seed + r))
        if not _bits_equal(base, again):
            failures.append(f"repeat {r}: fresh seeded rerun produced different bits")
        for threads in (2, 3, 5):
            if not _bits_equal(base, fff_forward(inp, weights, threads=threads)):
                failures.append(f"repeat {r}: {threads} threads changed the output bits")
        for level in ("naive", "dot"):
            if not _bits_equal(base, fff_forward(inp, weights, level=level)):
                failures.append(f"repeat {r}: level {level} changed the output bits")
    detail = f"{repeats} seeded repeats, thread counts 1/2/3/5, all levels"
    return CheckOutcome("determinism", not failures, detail, failures)


def run_checks(suites=SUITES, oracle_configs: int = 1000, seed: int | None = None,
               determinism_repeats: int = 5) -> list[CheckOutcome]:
    """Run the named suites in order; seeds default per suite when not given."""
    outcomes = []
    for suite in suites:
        if suite == "oracle":
            kwargs = {"num_configs": oracle_configs}
            if seed is not None:
                kwargs["seed"] = seed
            outcomes.append(check_oracle(**kwargs))
        elif suite == "levels":
            outcomes.append(check_levels(**({"seed": seed} if seed is not None else {})))
        elif suite == "usage":
            outcomes.append(check_usage(**({"seed": seed} if seed is not None else {})))
        elif suite == "determinism":
            kwargs = {"repeats": determinism_repeats}
            if seed is not None:
                kwargs["seed"] = seed
            outcomes.append(check_determinism(**kwargs))
        else:
            raise ValueError(f"unknown check suite {suite!r}; expected one of {SUITES}")
    return outcomes
