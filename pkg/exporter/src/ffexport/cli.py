"""Command-line entry points: export a checkpoint, emit reference activations.

    ffexport export --manifest map.toml [--checkpoint ckpt.pt] [--out model.ufbm]
    ffexport reference --model model.ufbm --seed 7 --batch 3 --out-prefix ref
"""

from __future__ import annotations

import argparse
import sys

from .errors import DimensionError, FormatError, MappingError
from .export import export_model
from .manifest import load_manifest
from .reference import emit_reference


def _cmd_export(args) -> int:
    manifest = load_manifest(args.manifest)
    manifest = manifest.with_overrides(checkpoint=args.checkpoint, out=args.out)
    summary = export_model(manifest)
    bias = "with" if summary.has_input_bias else "without"
    print(f"wrote {summary.bytes_written} bytes: {summary.num_layers} layers, "
          f"hidden {summary.hidden}, {summary.num_heads} heads, "
          f"{summary.num_trees}x{summary.depth_param} trees {bias} input biases "
          f"-> {summary.path}")
    return 0


def _cmd_reference(args) -> int:
    input_path, output_path = emit_reference(args.model, args.seed, args.batch,
                                             args.out_prefix)
    print(f"wrote {input_path} and {output_path} "
          f"(seed {args.seed}, batch {args.batch})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ffexport",
        description="Convert torch encoder checkpoints to engine model files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert a checkpoint to a model file")
    p.add_argument("--manifest", required=True, help="TOML tensor-name manifest")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint path (overrides the manifest entry)")
    p.add_argument("--out", default=None,
                   help="model file path (overrides the manifest entry)")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("reference", help="write paired input/output activation files")
    p.add_argument("--model", required=True, help="exported model file")
    p.add_argument("--seed", type=int, default=7, help="input activation seed")
    p.add_argument("--batch", type=int, default=3, help="input rows")
    p.add_argument("--out-prefix", required=True,
                   help="files land at PREFIX.input.acts and PREFIX.output.acts")
    p.set_defaults(func=_cmd_reference)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MappingError, DimensionError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
