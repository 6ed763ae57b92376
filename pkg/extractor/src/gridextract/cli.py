"""`gridextract` command line: model-to-grid extraction."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionJob, embeddings_to_probes, extract


def _shard(text: str) -> tuple[int, int]:
    try:
        index, count = text.split("/", 1)
        index, count = int(index), int(count)
    except ValueError:
        raise argparse.ArgumentTypeError(f"shard must look like i/n, got {text!r}") from None
    if count < 1 or not 0 <= index < count:
        raise argparse.ArgumentTypeError(f"shard index must satisfy 0 <= i < n, got {text!r}")
    return index, count


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridextract",
        description="Extract per-layer sentence-embedding grids from a causal LM "
                    "(input TSV: label<TAB>text)",
    )
    parser.add_argument("--model", required=True, help="model id or local path")
    parser.add_argument("--in", dest="infile", required=True, help="label<TAB>text TSV")
    parser.add_argument("--out", required=True, help="embedding grid JSONL")
    parser.add_argument("--max-sentences", dest="max_sentences", type=int)
    parser.add_argument("--shard", type=_shard, help="i/n: process samples with index %% n == i")
    parser.add_argument("--num-classes", dest="num_classes", type=int)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--adapters", help="adapter JSONL; also writes class-probability grids")
    parser.add_argument("--probe-out", dest="probe_out", help="probe JSONL path (with --adapters)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if bool(args.adapters) != bool(args.probe_out):
        print("error: --adapters and --probe-out must be given together", file=sys.stderr)
        return 2
    job = ExtractionJob(
        model_id=args.model,
        input_path=args.infile,
        output_path=args.out,
        max_sentences=args.max_sentences,
        shard=args.shard,
        device=args.device,
        num_classes=args.num_classes,
    )
    try:
        summary = extract(job)
        print(f"wrote {summary['written']} grids "
              f"(L={summary['num_layers']}, D={summary['embed_dim']}) to {summary['output']}")
        if args.adapters:
            count = embeddings_to_probes(args.out, args.adapters, args.probe_out)
            print(f"wrote {count} probe grids to {args.probe_out}")
        return 0
    except (OSError, ValueError, KeyError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
