#!/usr/bin/env python3
"""Desk-scale end-to-end run on the synthetic corpus.

Trains the 12-block dual encoder and the cross encoder with the ``desk``
preset, compares recall-only search with two-stage search on the test split,
distils the query encoder 12 -> 3 blocks over several seeds and times both
query encoders. Writes ``desk_experiment.json`` and a text table to ``--out``.

    python3 scripts/desk_experiment.py --seeds 3 --out runs/experiments
"""
import argparse
import json
import logging
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from spencer import checkpoint as ckpt
from spencer.config import parse_config
from spencer.distill import distill
from spencer.encoder import compress, tokenize
from spencer.evaluation import (compare_query_encoders, dual_searcher, paired_t_test, pooled_eval,
                                render_table, spencer_searcher)
from spencer.pipeline import make_corpus, new_cross, new_dual_pair
from spencer.training import train_cross, train_dual

log = logging.getLogger("desk")


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", help="JSON overrides on top of the desk preset")
    ap.add_argument("--seeds", type=int, default=3, help="distillation seeds")
    ap.add_argument("--student-layers", type=int, default=3)
    ap.add_argument("--queries", type=int, default=10_000, help="queries for the timing comparison")
    ap.add_argument("--out", default="runs/experiments")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = parse_config(args.config, preset="desk")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, valid, test = make_corpus(cfg)
    log.info("corpus: train %d, valid %d, test %d", len(train), len(valid), len(test))

    t0 = time.perf_counter()
    q0, c0 = new_dual_pair(cfg)
    dual = train_dual(train, q0, c0, cfg.train_config(), valid)
    q, c = dual.models
    log.info("dual encoder: %.0f s, val MRR %s", time.perf_counter() - t0,
             [round(h["val_metric"], 3) for h in dual.history])
    t0 = time.perf_counter()
    cross = train_cross(train, new_cross(cfg), cfg.cross_config(), valid).models[0]
    log.info("cross encoder: %.0f s", time.perf_counter() - t0)
    for name, model in (("query", q), ("code", c), ("cross", cross)):
        ckpt.save(model, out / f"{name}.spnc")

    ev = cfg.eval_config()
    K = cfg.recall_k
    rows, reports = [], {}
    reports["dual"] = pooled_eval(test, dual_searcher(q, c), ev)
    reports["two-stage"] = pooled_eval(test, spencer_searcher(q, cross, K, c), ev)
    rows += [("dual (12)", reports["dual"].aggregate), (f"two-stage (12, K={K})", reports["two-stage"].aggregate)]

    drop = q.num_layers - args.student_layers
    ratios, students = [], []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        student = distill(q, c, compress(q, drop), train, replace(cfg.distill_config(), seed=seed), valid).models[0]
        ckpt.save(student, out / f"query-distilled-{seed}.spnc")
        two = pooled_eval(test, spencer_searcher(student, cross, K, c), ev)
        one = pooled_eval(test, dual_searcher(student, c), ev)
        ratios.append(two.mrr / reports["two-stage"].mrr)
        students.append({"seed": seed, "two_stage": two.aggregate, "dual": one.aggregate,
                         "wall_s": time.perf_counter() - t0})
        rows += [(f"dual ({args.student_layers}, seed {seed})", one.aggregate),
                 (f"two-stage ({args.student_layers}, seed {seed})", two.aggregate)]
        log.info("seed %d: two-stage MRR ratio %.3f", seed, ratios[-1])

    # per-pool MRR pairs: two-stage against recall-only
    ttest = None
    if len(reports["dual"].pools) >= 2:
        ttest = paired_t_test([p["MRR"] for p in reports["two-stage"].pools],
                              [p["MRR"] for p in reports["dual"].pools])

    texts = [r.query for r in test]
    seqs = [tokenize(texts[i % len(texts)], q.vocab, cfg.max_len) for i in range(args.queries)]
    timing = compare_query_encoders(q, compress(q, drop), seqs, repeats=max(3, cfg.repeats))

    table = render_table(rows, ev.k_values)
    summary = (f"retention (two-stage MRR, distilled / teacher): {', '.join(f'{r:.3f}' for r in ratios)}; "
               f"mean {np.mean(ratios):.3f}\n"
               f"query encoding of {args.queries} queries: {timing['original']['mean_ms']:.0f} ms -> "
               f"{timing['distilled']['mean_ms']:.0f} ms ({100 * timing['reduction']:.1f}% less)")
    print(table)
    print(summary)
    (out / "desk_experiment.txt").write_text(table + "\n" + summary + "\n")
    body = {"config": cfg.to_dict(), "history": dual.history, "dual": asdict(reports["dual"]),
            "two_stage": asdict(reports["two-stage"]), "students": students, "ratios": ratios,
            "ttest_two_stage_vs_dual": None if ttest is None else asdict(ttest), "timing": timing}
    (out / "desk_experiment.json").write_text(json.dumps(body, indent=2, default=float))


if __name__ == "__main__":
    main()
