"""Pooled R@k / MRR evaluation, stage timing and a paired t-test."""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import betainc

from .encoder import MAX_LEN, encode_batch, tokenize
from .errors import MissingTruthError, ParameterError
from .retrieval import VectorIndex, build_index, merge, recall_topk
from .seeding import rng


def frank(ranked, truth: str) -> int:
    """1-based position of ``truth`` in a ranked list (or sequence of ids)."""
    ids = ranked.ids if hasattr(ranked, "ids") else list(ranked)
    try:
        return ids.index(truth) + 1
    except ValueError:
        raise MissingTruthError(f"ground truth {truth!r} is not in the ranked list") from None


def recall_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ParameterError(f"k must be at least 1, got {k}")
    ranks = list(ranks)
    if not ranks:
        raise ParameterError("no ranks given")
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mrr(ranks) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ParameterError("no ranks given")
    if any(r < 1 for r in ranks):
        raise ParameterError("ranks are 1-based")
    return sum(1.0 / r for r in ranks) / len(ranks)


@dataclass
class EvalConfig:
    pool_size: int = 1000
    k_values: tuple = (1, 3, 5, 10)
    repeats: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.pool_size < 2:
            raise ParameterError("pool size must be at least 2")
        if any(k < 1 for k in self.k_values):
            raise ParameterError("k values must be positive")


@dataclass
class EvalReport:
    pools: list
    aggregate: dict
    timing: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def mrr(self) -> float:
        return self.aggregate["MRR"]

    def recall(self, k: int) -> float:
        return self.aggregate[f"R@{k}"]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def render(self, title="") -> str:
        return render_table([(title or "model", self.aggregate)], self.config.get("k_values", (1, 3, 5)))


def render_table(rows, k_values=(1, 3, 5)) -> str:
    """Aligned text table with one R@k column per k and a trailing MRR column."""
    cols = [f"R@{k}" for k in k_values] + ["MRR"]
    width = max([len("Model")] + [len(name) for name, _ in rows])
    lines = [f"{'Model':<{width}}  " + "  ".join(f"{c:>6}" for c in cols)]
    lines.append("-" * len(lines[0]))
    for name, agg in rows:
        lines.append(f"{name:<{width}}  " + "  ".join(f"{agg.get(c, float('nan')):>6.3f}" for c in cols))
    return "\n".join(lines)


def partition_pools(records, pool_size: int, seed: int = 0):
    """Seeded shuffle, then consecutive pools; a trailing pool of one record is dropped."""
    order = rng(seed, 0x9001).permutation(len(records))
    shuffled = [records[i] for i in order]
    pools = [shuffled[lo: lo + pool_size] for lo in range(0, len(shuffled), pool_size)]
    return [p for p in pools if len(p) >= 2]


def pooled_eval(test, searcher, cfg: EvalConfig | None = None, threads: int = 1) -> EvalReport:
    """Rank every query against the codes of its own pool and average per-pool metrics.

    ``searcher(pool)`` gets a list of records and returns one ranked list (or
    id sequence) per record, in the same order, ranking that record's query.
    """
    cfg = cfg or EvalConfig()
    if len(test) < 2:
        raise ParameterError("pooled evaluation needs at least 2 pairs")
    pools = partition_pools(test, cfg.pool_size, cfg.seed)

    def run(pool):
        ranked = searcher(pool)
        ranks = [frank(rl, rec.id) for rl, rec in zip(ranked, pool)]
        out = {"n": len(pool), "partial": len(pool) < cfg.pool_size, "MRR": mrr(ranks)}
        for k in cfg.k_values:
            out[f"R@{k}"] = recall_at_k(ranks, k)
        return out

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            per_pool = list(ex.map(run, pools))
    else:
        per_pool = [run(p) for p in pools]
    keys = ["MRR"] + [f"R@{k}" for k in cfg.k_values]
    aggregate = {k: float(np.mean([p[k] for p in per_pool])) for k in keys}
    aggregate["pools"] = len(per_pool)
    aggregate["dropped"] = len(test) - sum(p["n"] for p in per_pool)
    return EvalReport(per_pool, aggregate, config=asdict(cfg))


# ------------------------------------------------------------- searchers


def _pool_index(pool, code_encoder, index: VectorIndex | None, max_len):
    if index is not None:
        return index.subset([r.id for r in pool])
    return build_index(pool, code_encoder, max_len)


def dual_searcher(query_encoder, code_encoder=None, index=None, max_len=MAX_LEN):
    """Recall-only searcher; code vectors come from ``index`` when given."""

    def search(pool):
        idx = _pool_index(pool, code_encoder, index, max_len)
        qv = encode_batch(query_encoder, [tokenize(r.query, query_encoder.vocab, max_len) for r in pool])
        return [recall_topk(idx, v, len(idx)) for v in qv]

    return search


def spencer_searcher(query_encoder, cross, k=5, code_encoder=None, index=None, max_len=MAX_LEN):
    """Recall then re-rank the top ``k`` with ``cross`` (model or scorer callable)."""
    recall = dual_searcher(query_encoder, code_encoder, index, max_len)

    def search(pool):
        corpus = {r.id: r.code for r in pool}
        return [merge(rl, r.query, cross, corpus, k) for rl, r in zip(recall(pool), pool)]

    return search


# ----------------------------------------------------------------- timing


def _timed(fn, inputs, repeats):
    fn(inputs)  # warm-up
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(inputs)
        out.append((time.perf_counter() - t0) * 1000.0)
    return {"mean_ms": float(np.mean(out)), "std_ms": float(np.std(out)), "runs_ms": out}


def timing_benchmark(stages, inputs, repeats: int = 3) -> dict:
    """Wall-clock mean/std (ms) per named stage, after one warm-up call each."""
    if repeats < 3:
        raise ParameterError(f"timing needs at least 3 repeats, got {repeats}")
    return {name: _timed(fn, inputs, repeats) for name, fn in stages.items()}


def time_reduction(t_orig: float, t_new: float) -> float:
    return (t_orig - t_new) / t_orig


def compare_query_encoders(original, distilled, seqs, repeats=3, batch_size=512) -> dict:
    """Time two query encoders on the same tokenized queries."""
    stages = {
        "original": lambda s: encode_batch(original, s, batch_size=batch_size),
        "distilled": lambda s: encode_batch(distilled, s, batch_size=batch_size),
    }
    timing = timing_benchmark(stages, seqs, repeats)
    timing["reduction"] = time_reduction(timing["original"]["mean_ms"], timing["distilled"]["mean_ms"])
    return timing


# ------------------------------------------------------------------ t-test


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    df: int
    flag: str | None = None  # "degenerate" (no differences) or "zero-variance"


def paired_t_test(a, b) -> TTest:
    """Two-sided paired-difference t-test."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError("paired samples must be equal-length sequences")
    n = a.size
    if n < 2:
        raise ParameterError("paired t-test needs at least 2 pairs")
    d = a - b
    df = n - 1
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TTest(0.0, 1.0, df, "degenerate")
        return TTest(math.copysign(math.inf, mean), 0.0, df, "zero-variance")
    t = mean / (sd / math.sqrt(n))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTest(float(t), p, df)
