#!/usr/bin/env python3
"""Regenerate the bundled 10-pair toy corpus (data/toy_corpus.jsonl)."""

import argparse
from pathlib import Path

from outline2report.corpus import write_dataset
from outline2report.harness import make_toy_corpus, pairs_to_records


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/toy_corpus.jsonl",
                        help="where to write the dataset")
    args = parser.parse_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pairs = make_toy_corpus()
    write_dataset(args.out, pairs_to_records(pairs))
    lengths = [len(p.report) for p in pairs]
    print(f"wrote {len(pairs)} pairs to {args.out} "
          f"(report lengths {min(lengths)}..{max(lengths)} tokens)")


if __name__ == "__main__":
    main()
