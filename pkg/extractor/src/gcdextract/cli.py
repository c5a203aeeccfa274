"""CLI for the extraction adapter."""

from __future__ import annotations

import argparse
import sys

from .encoders import EncoderError
from .extract import CorpusError, ExtractionConfig, extract


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gcdextract",
        description="Encode a labeled text corpus into the category-discovery feature-file format",
    )
    p.add_argument("--corpus", required=True, help="TSV corpus: <text>\\t<label> per line")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--encoder", default="hash",
                   help="'hash', 'hash:<dim>', or 'st:<sentence-transformers model>'")
    p.add_argument("--novel-fraction", dest="novel_fraction", type=float, default=0.25)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=0.10)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pooling", choices=["mean", "cls"], default="mean",
                   help="pooling for transformer encoders")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExtractionConfig(
            corpus=args.corpus,
            out=args.out,
            encoder=args.encoder,
            novel_fraction=args.novel_fraction,
            labeled_fraction=args.labeled_fraction,
            test_fraction=args.test_fraction,
            seed=args.seed,
            pooling=args.pooling,
        )
        out = extract(cfg)
    except (CorpusError, EncoderError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
