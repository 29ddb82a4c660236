#!/usr/bin/env python3
"""Query-encoding time against block count.

Times a 12-block encoder and every prefix of it on the same tokenized
queries (single thread). Random weights suffice since cost depends only on
shape.
"""
import argparse

from spencer.config import parse_config
from spencer.encoder import compress, tokenize
from spencer.evaluation import compare_query_encoders
from spencer.pipeline import make_corpus, new_dual_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--queries", type=int, default=10_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    cfg = parse_config(preset="desk")
    _, _, test = make_corpus(cfg)
    q, _ = new_dual_pair(cfg)
    texts = [r.query for r in test]
    seqs = [tokenize(texts[i % len(texts)], q.vocab) for i in range(args.queries)]
    print(f"{'blocks':>6}  {'ms':>8}  {'reduction':>9}  {'layer-proportional':>18}")
    for keep in range(q.num_layers - 1, 0, -1):
        t = compare_query_encoders(q, compress(q, q.num_layers - keep), seqs, repeats=args.repeats)
        if keep == q.num_layers - 1:
            print(f"{q.num_layers:>6}  {t['original']['mean_ms']:>8.0f}")
        print(f"{keep:>6}  {t['distilled']['mean_ms']:>8.0f}  {100 * t['reduction']:>8.1f}%  "
              f"{100 * (1 - keep / q.num_layers):>17.1f}%")


if __name__ == "__main__":
    main()
