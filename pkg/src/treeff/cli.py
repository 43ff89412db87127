"""Command-line interface.

Subcommands:

    bench        time one configuration
    compare      time a subject and a baseline, report speedup and MAC ratio
    check        run the verification suites; nonzero exit on any failure
    gen-weights  write a seeded tree-layer weight file
    forward      run an encoder model file over an activation file

Every bench/compare/check invocation also writes a JSON report file (default
treeff_report.json, see --json-out) regardless of the stdout format.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time

import numpy as np

from . import bench as bench_mod
from . import checks as checks_mod
from . import formats
from .encoder import model_forward
from .errors import ResourceError, UnfairComparisonError
from .fff import LEVELS, FFFConfig, random_weights

FORMATS = ("table", "csv", "json")


def _fmt_ns(ns: float) -> str:
    if ns >= 1e9:
        return f"{ns / 1e9:.3f} s"
    if ns >= 1e6:
        return f"{ns / 1e6:.3f} ms"
    if ns >= 1e3:
        return f"{ns / 1e3:.3f} us"
    return f"{ns:.0f} ns"


def _render_table(headers, rows) -> str:
    widths = [len(h) for h in headers]
    rows = [[str(c) for c in row] for row in rows]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(cells):
        return "  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(row) for row in rows)
    return "\n".join(out)


def _render_csv(headers, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue().rstrip("\n")


def _report_row(report: bench_mod.BenchReport):
    cfg = report.config
    return [
        cfg.describe(), cfg.level, cfg.batch, cfg.hidden, cfg.precision, cfg.threads,
        f"{report.mean_ns / 1e6:.3f}", f"{100 * report.std_over_mean:.2f}",
        "yes" if report.noise_flagged else "no",
        f"{report.per_token_ns / 1e3:.3f}",
        report.mac.multiply_accumulates,
    ]


_REPORT_HEADERS = [
    "config", "level", "batch", "hidden", "precision", "threads",
    "mean_ms_per_pass", "std_pct", "noisy", "us_per_row", "mac_per_pass",
]


def _write_json_report(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(payload, headers, rows, extra_lines, args) -> None:
    _write_json_report(payload, args.json_out)
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    elif args.format == "csv":
        print(_render_csv(headers, rows))
    else:
        print(_render_table(headers, rows))
        for line in extra_lines:
            print(line)
        print(f"json report written to {args.json_out}")


def _bench_config(args, implementation=None, level=None) -> bench_mod.BenchConfig:
    return bench_mod.BenchConfig(
        implementation=implementation or args.impl,
        level=level or args.level,
        batch=args.batch,
        hidden=args.hidden,
        num_trees=args.trees,
        depth_param=args.depth,
        neurons=args.neurons,
        passes=args.passes,
        warmup=args.warmup,
        seed=args.seed,
        precision=args.precision,
        threads=args.threads,
        passes_per_sample=args.passes_per_sample,
    )


def _cmd_bench(args) -> int:
    report = bench_mod.run_bench(_bench_config(args))
    payload = {
        "command": "bench",
        "generated_unix_ns": time.time_ns(),
        "reports": [dataclasses.asdict(report)],
    }
    extra = [f"mean {_fmt_ns(report.mean_ns)} per pass, {_fmt_ns(report.per_token_ns)} per row"]
    _emit(payload, _REPORT_HEADERS, [_report_row(report)], extra, args)
    return 0


def _cmd_compare(args) -> int:
    subject = _bench_config(args)
    baseline = _bench_config(args, implementation=args.baseline_impl,
                             level=args.baseline_level or args.level)
    if args.baseline_neurons is not None or args.baseline_impl == "dense":
        baseline = dataclasses.replace(
            baseline,
            neurons=args.baseline_neurons if args.baseline_neurons is not None else args.neurons,
        )
    result = bench_mod.run_compare(subject, baseline, allow_unfair=args.allow_unfair)
    payload = {
        "command": "compare",
        "generated_unix_ns": time.time_ns(),
        "speedup": result.speedup,
        "mac_ratio": result.mac_ratio,
        "cross_level": result.cross_level,
        "reports": [dataclasses.asdict(result.baseline), dataclasses.asdict(result.subject)],
    }
    rows = [_report_row(result.baseline), _report_row(result.subject)]
    extra = [
        f"speedup: {result.speedup:.2f}x (baseline mean / subject mean)",
        f"mac ratio: {result.mac_ratio:g}x (closed form)",
    ]
    if result.cross_level:
        extra.append("label: cross-level comparison (kernel levels differ)")
    _emit(payload, _REPORT_HEADERS, rows, extra, args)
    return 0


def _cmd_check(args) -> int:
    suites = checks_mod.SUITES if "all" in args.suite else tuple(dict.fromkeys(args.suite))
    outcomes = checks_mod.run_checks(suites, oracle_configs=args.configs, seed=args.seed_override)
    headers = ["suite", "result", "detail"]
    rows = [[o.name, "pass" if o.passed else "FAIL", o.detail] for o in outcomes]
    payload = {
        "command": "check",
        "generated_unix_ns": time.time_ns(),
        "outcomes": [dataclasses.asdict(o) for o in outcomes],
        "passed": all(o.passed for o in outcomes),
    }
    extra = []
    for o in outcomes:
        extra.extend(f"  {o.name}: {f}" for f in o.failures[:20])
    _emit(payload, headers, rows, extra, args)
    return 0 if payload["passed"] else 1


def _cmd_gen_weights(args) -> int:
    cfg = FFFConfig(args.hidden, args.trees, args.depth, has_input_bias=args.bias)
    weights = random_weights(cfg, args.seed)
    written = formats.save_fffw(weights, args.out)
    print(f"wrote {written} bytes: {cfg.num_trees} trees, depth {cfg.depth_param}, "
          f"hidden {cfg.hidden_dim}, bias {'on' if args.bias else 'off'} -> {args.out}")
    return 0


def _cmd_forward(args) -> int:
    model = formats.load_ufbm(args.model)
    acts = formats.load_acts(args.input)
    if args.precision == "f64":
        from .encoder import EncoderLayer, EncoderModel
        layers = []
        for layer in model.layers:
            att = layer.attention
            att64 = dataclasses.replace(
                att,
                **{f: getattr(att, f).astype(np.float64)
                   for f in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o")},
            )
            layers.append(EncoderLayer(
                att64,
                layer.ln1_scale.astype(np.float64), layer.ln1_shift.astype(np.float64),
                layer.ln2_scale.astype(np.float64), layer.ln2_shift.astype(np.float64),
                layer.fff.astype(np.float64),
            ))
        model = EncoderModel(tuple(layers), model.hidden_dim, model.layernorm_epsilon)
        acts = acts.astype(np.float64)
    out = model_forward(acts, model, level=args.level, threads=args.threads)
    written = formats.save_acts(np.ascontiguousarray(out.astype(np.float32)), args.output)
    print(f"wrote {written} bytes: {out.shape[0]} rows x {out.shape[1]} -> {args.output}")
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--impl", choices=bench_mod.IMPLEMENTATIONS, default="fff",
                   help="forward pass to time")
    p.add_argument("--level", choices=LEVELS, default="batched", help="kernel level")
    p.add_argument("--batch", type=int, default=16384, help="rows per pass")
    p.add_argument("--hidden", type=int, default=768, help="model width")
    p.add_argument("--trees", type=int, default=1, help="trees per layer (fff)")
    p.add_argument("--depth", type=int, default=11, help="edges below the root (fff)")
    p.add_argument("--neurons", type=int, default=4095, help="layer width (dense)")
    p.add_argument("--passes", type=int, default=250, help="timed passes")
    p.add_argument("--passes-per-sample", type=int, default=1,
                   help="forwards per timer window; raise for sub-100ms passes")
    p.add_argument("--warmup", type=int, default=10, help="untimed warmup passes")
    p.add_argument("--seed", type=int, default=42, help="weight and input seed")
    p.add_argument("--precision", choices=bench_mod.PRECISIONS, default="f32")
    p.add_argument("--threads", type=int, default=1, help="row-partition worker threads")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=FORMATS, default="table", help="stdout rendering")
    p.add_argument("--json-out", default="treeff_report.json",
                   help="path of the JSON report written on every run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeff",
        description="Benchmark and verify tree-routed feedforward inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time one configuration")
    _add_run_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("compare", help="time a subject against a baseline")
    _add_run_flags(p)
    _add_output_flags(p)
    p.add_argument("--baseline-impl", choices=bench_mod.IMPLEMENTATIONS, default="dense",
                   help="baseline forward pass (default dense)")
    p.add_argument("--baseline-level", choices=LEVELS, default=None,
                   help="baseline kernel level (default: same as subject)")
    p.add_argument("--baseline-neurons", type=int, default=None,
                   help="baseline dense width (default: --neurons)")
    p.add_argument("--allow-unfair", action="store_true",
                   help="permit differing kernel levels; result is labeled cross-level")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("check", help="run verification suites")
    p.add_argument("suite", nargs="*", default=["all"],
                   choices=[*checks_mod.SUITES, "all"], help="suites to run")
    p.add_argument("--configs", type=int, default=1000,
                   help="configurations for the oracle suite")
    p.add_argument("--seed-override", type=int, default=None,
                   help="replace every suite's built-in seed")
    _add_output_flags(p)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("gen-weights", help="write a seeded tree-layer weight file")
    p.add_argument("--trees", type=int, default=1)
    p.add_argument("--depth", type=int, default=11, help="edges below the root")
    p.add_argument("--hidden", type=int, default=768)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--bias", action="store_true",
                   help="include per-node input biases (default off)")
    p.add_argument("--out", required=True, help="output file path")
    p.set_defaults(func=_cmd_gen_weights)

    p = sub.add_parser("forward", help="run a model file over an activation file")
    p.add_argument("--model", required=True, help="encoder model file")
    p.add_argument("--input", required=True, help="input activation file")
    p.add_argument("--output", required=True, help="output activation file")
    p.add_argument("--level", choices=LEVELS, default="batched")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--precision", choices=bench_mod.PRECISIONS, default="f32",
                   help="compute precision; output files are always float32")
    p.set_defaults(func=_cmd_forward)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, UnfairComparisonError, ResourceError, OSError) as exc:
        # ValueError covers FormatError and config validation failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
