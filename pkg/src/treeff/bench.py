"""Wall-clock benchmark harness for the dense and tree-routed forward passes.

Each run builds seeded weights and one input batch, performs untimed warmup
passes (which also absorb kernel compilation), then times `passes` forward
calls with time.perf_counter_ns. A timer window may cover several
consecutive forwards (passes_per_sample, as in timeit), so sub-100 ms
passes can be sampled above the timescale of host scheduling wobble; the
reported statistics are always per forward pass. The output buffer is
allocated once and reused, and the garbage collector is suspended while
timing, so neither contributes per-pass variance. Reports carry mean,
sample standard deviation, a noise flag at std/mean >= 2%, the derived
per-row time, and closed-form multiply-accumulate counts.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ResourceError, UnfairComparisonError
from .fff import (
    LEVELS,
    FFFConfig,
    MacCount,
    dense_mac_count,
    ff_forward,
    fff_forward,
    fff_mac_count,
    mac_ratio,
    random_input,
    random_weights,
)

IMPLEMENTATIONS = ("dense", "fff")
PRECISIONS = ("f32", "f64")

NOISE_THRESHOLD = 0.02

# benchmark weights carry no input bias so the closed-form MAC counts are exact
_BENCH_BIAS = False


@dataclass(frozen=True)
class BenchConfig:
    """One timed configuration; defaults mirror the flagship desk setup."""

    implementation: str = "fff"
    level: str = "batched"
    batch: int = 16384
    hidden: int = 768
    num_trees: int = 1
    depth_param: int = 11
    neurons: int = 4095
    passes: int = 250
    warmup: int = 10
    seed: int = 42
    precision: str = "f32"
    threads: int = 1
    passes_per_sample: int = 1

    def __post_init__(self):
        if self.implementation not in IMPLEMENTATIONS:
            raise ValueError(
                f"unknown implementation {self.implementation!r}; expected one of {IMPLEMENTATIONS}"
            )
        if self.level not in LEVELS:
            raise ValueError(f"unknown kernel level {self.level!r}; expected one of {LEVELS}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}; expected one of {PRECISIONS}")
        if self.batch < 1:
            raise DimensionError(f"batch must be >= 1, got {self.batch}")
        if self.hidden < 1:
            raise DimensionError(f"hidden must be >= 1, got {self.hidden}")
        if self.neurons < 1:
            raise DimensionError(f"neurons must be >= 1, got {self.neurons}")
        if self.num_trees < 1:
            raise DimensionError(f"num_trees must be >= 1, got {self.num_trees}")
        if self.depth_param < 0:
            raise DimensionError(f"depth_param must be >= 0, got {self.depth_param}")
        if self.passes < 2:
            raise ValueError(f"passes must be >= 2 for a sample deviation, got {self.passes}")
        if self.warmup < 0:
            raise ValueError(f"warmup must be >= 0, got {self.warmup}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.passes_per_sample < 1:
            raise ValueError(
                f"passes_per_sample must be >= 1, got {self.passes_per_sample}")
        if self.passes % self.passes_per_sample != 0:
            raise ValueError(
                f"passes ({self.passes}) must be a multiple of "
                f"passes_per_sample ({self.passes_per_sample})")
        if self.passes // self.passes_per_sample < 2:
            raise ValueError(
                "need at least two timer samples for a deviation; "
                "lower passes_per_sample or raise passes")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def describe(self) -> str:
        if self.implementation == "fff":
            return f"fff {self.num_trees}x{self.depth_param}"
        return f"dense {self.neurons}"

    def mac(self) -> MacCount:
        if self.implementation == "fff":
            return fff_mac_count(self.batch, self.hidden, self.num_trees, self.depth_param + 1)
        return dense_mac_count(self.batch, self.hidden, self.neurons)


@dataclass(frozen=True)
class BenchReport:
    """Timing summary for one configuration."""

    config: BenchConfig
    mean_ns: float
    std_ns: float
    std_over_mean: float
    noise_flagged: bool
    per_token_ns: float
    mac: MacCount
    samples_ns: tuple[int, ...]


@dataclass(frozen=True)
class CompareReport:
    """Two runs side by side; speedup is baseline mean over subject mean."""

    subject: BenchReport
    baseline: BenchReport
    speedup: float
    mac_ratio: float
    cross_level: bool


def summarize(config: BenchConfig, samples_ns) -> BenchReport:
    """Fold raw timer readings into a report; exposed for testing.

    Each reading covers passes_per_sample consecutive forwards; statistics
    are reported per forward pass.
    """
    raw = np.asarray(samples_ns, dtype=np.float64)
    if raw.size < 2:
        raise ValueError("need at least two samples")
    samples = raw / config.passes_per_sample
    mean = float(samples.mean())
    std = float(samples.std(ddof=1))
    som = std / mean
    return BenchReport(
        config=config,
        mean_ns=mean,
        std_ns=std,
        std_over_mean=som,
        noise_flagged=som >= NOISE_THRESHOLD,
        per_token_ns=mean / config.batch,
        mac=config.mac(),
        samples_ns=tuple(int(s) for s in samples_ns),
    )


def _build_run(config: BenchConfig):
    """Materialize weights, input and a reused output buffer; return the forward."""
    dtype = config.dtype
    rng = np.random.default_rng(config.seed)
    out = np.zeros((config.batch, config.hidden), dtype=dtype)
    if config.implementation == "fff":
        fcfg = FFFConfig(config.hidden, config.num_trees, config.depth_param,
                         has_input_bias=_BENCH_BIAS)
        weights = random_weights(fcfg, rng, dtype)
        inp = random_input(config.batch, config.hidden, rng, dtype)
        return lambda: fff_forward(inp, weights, level=config.level,
                                   threads=config.threads, out=out)
    scale = 1.0 / np.sqrt(config.hidden)
    w_in = (rng.standard_normal((config.neurons, config.hidden)) * scale).astype(np.float32)
    w_out = (rng.standard_normal((config.neurons, config.hidden)) * scale).astype(np.float32)
    w_in = w_in.astype(dtype, copy=False)
    w_out = w_out.astype(dtype, copy=False)
    inp = random_input(config.batch, config.hidden, rng, dtype)
    return lambda: ff_forward(inp, w_in, None, w_out, level=config.level,
                              threads=config.threads, out=out)


def run_bench(config: BenchConfig) -> BenchReport:
    """Benchmark one configuration; warmup passes are untimed."""
    collector_was_on = gc.isenabled()
    gc.disable()
    try:
        forward = _build_run(config)
        for _ in range(config.warmup):
            forward()
        window = config.passes_per_sample
        samples = []
        for _ in range(config.passes // window):
            t0 = time.perf_counter_ns()
            for _ in range(window):
                forward()
            samples.append(time.perf_counter_ns() - t0)
    except MemoryError as exc:
        raise ResourceError(
            f"configuration {config.describe()} at batch {config.batch} does not fit in memory"
        ) from exc
    finally:
        if collector_was_on:
            gc.enable()
    return summarize(config, samples)


def check_fairness(subject: BenchConfig, baseline: BenchConfig, allow_unfair: bool) -> bool:
    """Validate that a ratio of the two runs is meaningful.

    batch, hidden, precision and threads must always match; differing kernel
    levels are allowed only with allow_unfair, and the comparison is then
    labeled cross-level. Returns the cross-level flag.
    """
    mismatched = [
        name for name in ("batch", "hidden", "precision", "threads")
        if getattr(subject, name) != getattr(baseline, name)
    ]
    if mismatched:
        detail = ", ".join(
            f"{name}: subject={getattr(subject, name)!r} baseline={getattr(baseline, name)!r}"
            for name in mismatched
        )
        raise UnfairComparisonError(f"runs are not comparable ({detail})")
    if subject.level != baseline.level:
        if not allow_unfair:
            raise UnfairComparisonError(
                f"kernel levels differ (subject={subject.level!r}, baseline={baseline.level!r}); "
                "pass allow_unfair to compare anyway"
            )
        return True
    return False


def compare_reports(subject: BenchReport, baseline: BenchReport,
                    allow_unfair: bool = False) -> CompareReport:
    """Pair two finished runs; speedup from timings, MAC ratio in closed form."""
    cross = check_fairness(subject.config, baseline.config, allow_unfair)
    return CompareReport(
        subject=subject,
        baseline=baseline,
        speedup=baseline.mean_ns / subject.mean_ns,
        mac_ratio=mac_ratio(baseline.mac, subject.mac),
        cross_level=cross,
    )


def run_compare(subject: BenchConfig, baseline: BenchConfig,
                allow_unfair: bool = False) -> CompareReport:
    """Run subject and baseline back to back and pair the reports."""
    check_fairness(subject, baseline, allow_unfair)
    return compare_reports(run_bench(subject), run_bench(baseline), allow_unfair)
