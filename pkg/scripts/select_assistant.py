#!/usr/bin/env python3
"""Run teaching-assistant selection on a trained desk-scale query encoder.

Loads ``query.spnc`` and ``code.spnc`` from ``--checkpoints`` (for example the
output of ``desk_experiment.py``), shrinks the query encoder by ``--drop``
blocks per round until the validation MRR falls more than ``--threshold``
below the teacher's, and writes the selection trace as JSON.
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from spencer import checkpoint as ckpt
from spencer.config import parse_config
from spencer.distill import select_teaching_assistant
from spencer.pipeline import make_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--checkpoints", default="runs/experiments")
    ap.add_argument("--drop", type=int, default=3)
    ap.add_argument("--threshold", type=float, default=0.01)
    ap.add_argument("--min-layers", type=int, default=1)
    ap.add_argument("--out", default="runs/experiments/selection.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = parse_config(preset="desk")
    train, valid, _ = make_corpus(cfg)
    src = Path(args.checkpoints)
    teacher, code = ckpt.load(src / "query.spnc"), ckpt.load(src / "code.spnc")
    dcfg = replace(cfg.distill_config(), layer_drop=args.drop, threshold=args.threshold, min_layers=args.min_layers)
    student, trace = select_teaching_assistant(teacher, code, train, dcfg, valid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trace.to_json())
    ckpt.save(student, out.with_suffix(".spnc"))
    print(f"teacher {teacher.num_layers} blocks, MRR {trace.initial['score_t']:.3f}")
    for it in trace.iterations:
        print(f"  round {it['iteration']}: A1 {it['a1_layers']} / A2 {it['a2_layers']} -> {it['candidate_layers']} "
              f"blocks, from A1 {it['score_a1']:.3f}, from A2 {it['score_a2']:.3f} ({it['branch']})")
    print(f"kept {trace.final['layers']} blocks, MRR {trace.final['score']:.3f}"
          + (" (threshold violated)" if trace.final["threshold_violated"] else ""))


if __name__ == "__main__":
    main()
