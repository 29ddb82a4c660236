"""Command-line entry point: ``spencer <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import checkpoint as ckpt
from .config import PRESETS, RunConfig, parse_config
from .data import load_jsonl, save_jsonl
from .distill import distill, select_teaching_assistant
from .encoder import compress, tokenize
from .errors import ConfigError, SpencerError
from .evaluation import (compare_query_encoders, dual_searcher, paired_t_test, pooled_eval, render_table,
                         spencer_searcher)
from .pipeline import make_corpus, new_cross, new_dual_pair
from .retrieval import build_index, load_index, model_hash, save_index, spencer_search
from .training import train_cross, train_dual, write_history

log = logging.getLogger("spencer")

COMMANDS = ("gen-data", "train-dual", "train-cross", "distill", "select-ta", "index", "search", "eval", "bench")


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        rev = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


# ----------------------------------------------------------------- paths


def _data(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.data) / f"{name}.jsonl"


def _ckpt(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.checkpoints) / f"{name}.spnc"


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing file {path}: {hint}")
    return path


def _load_split(cfg, name):
    return load_jsonl(_need(_data(cfg, name), "run `spencer gen-data` first or point --config at your data"))


def _load_model(cfg, name, hint):
    return ckpt.load(_need(_ckpt(cfg, name), hint))


def _write_report(cfg: RunConfig, name: str, body: dict, table: str | None = None) -> Path:
    out = Path(cfg.reports) / f"{name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    report = {"command": name, "build": build_id(), "config": cfg.to_dict(), **body}
    out.write_text(json.dumps(report, indent=2, sort_keys=True, default=float))
    if table is not None:
        out.with_suffix(".txt").write_text(table + "\n")
    return out


# -------------------------------------------------------------- commands


def cmd_gen_data(cfg, args):
    parts = make_corpus(cfg)
    for name, part in zip(("train", "valid", "test"), parts):
        save_jsonl(part, _data(cfg, name))
    print(f"wrote {sum(map(len, parts))} pairs to {cfg.data} "
          f"(train {len(parts[0])}, valid {len(parts[1])}, test {len(parts[2])})")


def cmd_train_dual(cfg, args):
    train, valid = _load_split(cfg, "train"), _load_split(cfg, "valid")
    q, c = new_dual_pair(cfg)
    res = train_dual(train, q, c, cfg.train_config(), valid or None)
    ckpt.save(res.models[0], _ckpt(cfg, "query"))
    ckpt.save(res.models[1], _ckpt(cfg, "code"))
    write_history(res.history, Path(cfg.reports) / "train-dual.history.jsonl")
    out = _write_report(cfg, "train-dual", {"history": res.history, "best_epoch": res.best_epoch})
    print(f"best epoch {res.best_epoch}; checkpoints in {cfg.checkpoints}; report {out}")


def cmd_train_cross(cfg, args):
    train, valid = _load_split(cfg, "train"), _load_split(cfg, "valid")
    res = train_cross(train, new_cross(cfg), cfg.cross_config(), valid or None)
    ckpt.save(res.models[0], _ckpt(cfg, "cross"))
    write_history(res.history, Path(cfg.reports) / "train-cross.history.jsonl")
    out = _write_report(cfg, "train-cross", {"history": res.history, "best_epoch": res.best_epoch})
    print(f"best epoch {res.best_epoch}; report {out}")


def _student_layers(cfg, args, source):
    target = args.layers if args.layers is not None else source.num_layers - cfg.layer_drop
    if not 1 <= target < source.num_layers:
        raise ConfigError(f"--layers must be between 1 and {source.num_layers - 1}, got {target}")
    return target


def cmd_distill(cfg, args):
    hint = "run `spencer train-dual` first"
    teacher, code = _load_model(cfg, "query", hint), _load_model(cfg, "code", hint)
    train, valid = _load_split(cfg, "train"), _load_split(cfg, "valid")
    target = _student_layers(cfg, args, teacher)
    res = distill(teacher, code, compress(teacher, teacher.num_layers - target), train, cfg.distill_config(),
                  valid or None)
    ckpt.save(res.models[0], _ckpt(cfg, "query-distilled"))
    out = _write_report(cfg, "distill", {"student_layers": target, "history": res.history})
    print(f"distilled {teacher.num_layers} -> {target} blocks; report {out}")


def cmd_select_ta(cfg, args):
    hint = "run `spencer train-dual` first"
    teacher, code = _load_model(cfg, "query", hint), _load_model(cfg, "code", hint)
    train, valid = _load_split(cfg, "train"), _load_split(cfg, "valid")
    student, trace = select_teaching_assistant(teacher, code, train, cfg.distill_config(), valid)
    ckpt.save(student, _ckpt(cfg, "query-distilled"))
    out = _write_report(cfg, "select-ta", {"trace": trace.to_dict()})
    print(f"visited sizes {trace.visited_sizes}; kept {trace.final['layers']} blocks; report {out}")


def _index_corpus_path(cfg, args):
    return Path(args.corpus) if args.corpus else _data(cfg, "test")


def cmd_index(cfg, args):
    code = _load_model(cfg, "code", "run `spencer train-dual` first")
    corpus_path = _need(_index_corpus_path(cfg, args), "pass --corpus or run `spencer gen-data`")
    corpus = load_jsonl(corpus_path)
    index = build_index(corpus, code, cfg.max_len)
    save_index(index, cfg.index)
    meta = {"corpus": str(corpus_path), "count": len(index), "dim": index.dim,
            "code_encoder": model_hash(code), "build": build_id()}
    Path(str(cfg.index) + ".json").write_text(json.dumps(meta, indent=2))
    print(f"indexed {len(index)} codes into {cfg.index}")


def _index_and_corpus(cfg):
    idx_path = _need(Path(cfg.index), "run `spencer index` first")
    index = load_index(idx_path)
    meta_path = Path(str(idx_path) + ".json")
    corpus_path = Path(json.loads(meta_path.read_text())["corpus"]) if meta_path.exists() else _data(cfg, "test")
    corpus = {r.id: r for r in load_jsonl(_need(corpus_path, "the index was built from this corpus"))}
    return index, corpus


def _query_encoder(cfg, args):
    name = "query-distilled" if args.distilled else "query"
    return _load_model(cfg, name, "train (or distill) the query encoder first")


def cmd_search(cfg, args):
    if not args.query:
        raise ConfigError("search needs --query TEXT")
    index, corpus = _index_and_corpus(cfg)
    q = _query_encoder(cfg, args)
    cross = _load_model(cfg, "cross", "run `spencer train-cross` first")
    codes = {k: r.code for k, r in corpus.items()}
    ranked = spencer_search(args.query, index, q, cross, cfg.recall_k, codes, cfg.max_len)
    shown = min(len(ranked), args.top or cfg.recall_k)
    for pos, hit in enumerate(ranked.entries[:shown], 1):
        print(f"{pos:>3}  {hit.score:+.4f}  [{hit.stage}]  {hit.id}  {codes[hit.id]}")


def cmd_eval(cfg, args):
    index, _ = _index_and_corpus(cfg)
    test = _load_split(cfg, "test")
    q = _query_encoder(cfg, args)
    cross = _load_model(cfg, "cross", "run `spencer train-cross` first")
    ev = cfg.eval_config()
    dual = pooled_eval(test, dual_searcher(q, index=index, max_len=cfg.max_len), ev, cfg.threads)
    full = pooled_eval(test, spencer_searcher(q, cross, cfg.recall_k, index=index, max_len=cfg.max_len),
                       ev, cfg.threads)
    per_pool = ([p["MRR"] for p in full.pools], [p["MRR"] for p in dual.pools])
    ttest = paired_t_test(*per_pool) if len(per_pool[0]) >= 2 else None
    table = render_table([("dual encoder", dual.aggregate), (f"two-stage (K={cfg.recall_k})", full.aggregate)],
                         ev.k_values)
    out = _write_report(cfg, "eval", {"dual": asdict(dual), "two_stage": asdict(full),
                                      "ttest_per_pool_mrr": None if ttest is None else asdict(ttest)}, table)
    print(table)
    print(f"report {out}")


def cmd_bench(cfg, args):
    original = _load_model(cfg, "query", "run `spencer train-dual` first")
    path = _ckpt(cfg, "query-distilled")
    if path.exists():
        small = ckpt.load(path)
    else:
        small = compress(original, original.num_layers - _student_layers(cfg, args, original))
    n = args.queries
    test = load_jsonl(_data(cfg, "test")) if _data(cfg, "test").exists() else []
    texts = [r.query for r in test] or ["x"]
    seqs = [tokenize(texts[i % len(texts)], original.vocab, cfg.max_len) for i in range(n)]
    timing = compare_query_encoders(original, small, seqs, repeats=max(3, cfg.repeats))
    body = {"queries": n, "threads": 1, "original_layers": original.num_layers,
            "distilled_layers": small.num_layers, "timing": timing}
    out = _write_report(cfg, "bench", body)
    print(f"{original.num_layers} blocks {timing['original']['mean_ms']:.1f} ms, "
          f"{small.num_layers} blocks {timing['distilled']['mean_ms']:.1f} ms, "
          f"reduction {100 * timing['reduction']:.1f}%; report {out}")


HANDLERS = {
    "gen-data": cmd_gen_data, "train-dual": cmd_train_dual, "train-cross": cmd_train_cross,
    "distill": cmd_distill, "select-ta": cmd_select_ta, "index": cmd_index, "search": cmd_search,
    "eval": cmd_eval, "bench": cmd_bench,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--preset", choices=sorted(PRESETS), default="full")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--recall-k", type=int, dest="recall_k")
    common.add_argument("--pool-size", type=int, dest="pool_size")
    common.add_argument("--layers", type=int, help="student size for distill/bench")
    common.add_argument("--out", help="root directory for data, checkpoints, index and reports")

    parser = argparse.ArgumentParser(prog="spencer", description="Two-stage code search with distilled query encoders.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "search":
            p.add_argument("--query", required=True)
            p.add_argument("--top", type=int, help="results to print (default: recall K)")
        if name in ("search", "eval"):
            p.add_argument("--distilled", action="store_true", help="use the distilled query encoder")
        if name == "index":
            p.add_argument("--corpus", help="JSONL corpus to index (default: the test split)")
        if name == "bench":
            p.add_argument("--queries", type=int, default=10_000)
    return parser


def resolve(args) -> RunConfig:
    overrides = {"seed": args.seed, "threads": args.threads, "recall_k": args.recall_k, "pool_size": args.pool_size}
    if args.out:
        root = Path(args.out)
        overrides.update(data=str(root / "data"), checkpoints=str(root / "checkpoints"),
                         index=str(root / "index.spix"), reports=str(root / "reports"))
    cfg = parse_config(args.config, overrides, args.preset)
    if args.command == "bench":
        cfg.threads = 1
    return cfg


def main(argv=None) -> int:
    level = os.environ.get("SPENCER_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        HANDLERS[args.command](cfg, args)
    except SpencerError as exc:
        print(f"spencer {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
