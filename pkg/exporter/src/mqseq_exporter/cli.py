"""Command line for the encoder exporter.

  mqseq-export export <model-id> --out <dir> [--expect-dim 384]
  mqseq-export verify --out <dir> --source <model-id> --samples <file>
"""

from __future__ import annotations

import argparse
import sys

from .errors import DimCheckFailed, ExporterError, SourceUnavailable
from .export import export_model, verify_manifest
from .parity import verify_parity


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqseq-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="serialize an encoder into the artifact format")
    p.add_argument("model_id", help="local directory or hub identifier")
    p.add_argument("--out", required=True)
    p.add_argument("--expect-dim", type=int, default=None)

    p = sub.add_parser("verify", help="check artifact embeddings against the source model")
    p.add_argument("--out", required=True, help="exported artifact directory")
    p.add_argument("--source", required=True, help="source model identifier")
    p.add_argument("--samples", required=True, help="file with one sample text per line")
    p.add_argument("--pipeline-cmd", default=None,
                   help="command used to invoke the consuming pipeline "
                        "(default: current interpreter, -m mqseq)")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            manifest = export_model(args.model_id, args.out, expect_dim=args.expect_dim)
            print(f"exported {manifest.source_model} (dim {manifest.dim}, "
                  f"max_len {manifest.max_len}) -> {args.out}")
            if not verify_manifest(args.out):
                print("digest verification failed after export", file=sys.stderr)
                return 1
        else:
            with open(args.samples, encoding="utf-8") as f:
                texts = [line.strip() for line in f if line.strip()]
            cmd = args.pipeline_cmd.split() if args.pipeline_cmd else None
            report = verify_parity(texts, args.out, args.source, pipeline_cmd=cmd)
            print(f"parity ok: {report.summary()}")
    except (SourceUnavailable, DimCheckFailed, ExporterError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
