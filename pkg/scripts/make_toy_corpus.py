#!/usr/bin/env python3
"""Write the bundled English -> pseudo-Irish toy corpus (data/toy/toy.en, data/toy/toy.ga)."""

import argparse
from pathlib import Path

from lowres_mt.synthetic import write_corpus

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("--pairs", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=str(ROOT / "data" / "toy"))
    args = ap.parse_args()
    src, tgt = write_corpus(args.out, args.pairs, args.seed)
    print(f"wrote {args.pairs} pairs to {src} and {tgt}")
