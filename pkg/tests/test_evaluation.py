import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from spencer.data import PairRecord
from spencer.encoder import init_encoder, tokenize
from spencer.errors import MissingTruthError, ParameterError
from spencer.evaluation import (EvalConfig, compare_query_encoders, frank, mrr, paired_t_test, partition_pools,
                                pooled_eval, recall_at_k, render_table, time_reduction, timing_benchmark)

from oracles import textbook_t

RECORDS = [PairRecord(f"p{i:03d}", f"q{i}", f"c{i}") for i in range(200)]


def perfect_searcher(pool):
    return [[r.id] + [o.id for o in pool if o.id != r.id] for r in pool]


def random_searcher(seed):
    gen = np.random.default_rng(seed)

    def search(pool):
        return [[pool[j].id for j in gen.permutation(len(pool))] for _ in pool]
    return search


# ---------------------------------------------------------------- metrics


def test_frank():
    assert frank(["a", "b", "c"], "a") == 1
    assert frank(["a", "b", "c"], "c") == 3
    with pytest.raises(MissingTruthError):
        frank(["a", "b"], "z")


def test_recall_at_k_examples():
    assert recall_at_k([1, 2, 3], 5) == 1.0
    assert recall_at_k([6], 5) == 0.0
    assert abs(recall_at_k([1, 4, 7], 5) - 2 / 3) <= 1e-9
    with pytest.raises(ParameterError):
        recall_at_k([1], 0)


def test_mrr_examples():
    assert mrr([1]) == 1.0
    assert abs(mrr([3]) - 1 / 3) <= 1e-9
    assert abs(mrr([1, 4]) - 0.625) <= 1e-9
    with pytest.raises(ParameterError):
        mrr([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40))
def test_metric_invariants(ranks):
    m = mrr(ranks)
    assert 0 < m <= 1
    recalls = [recall_at_k(ranks, k) for k in range(1, 52)]
    assert all(0 <= r <= 1 for r in recalls)
    assert recalls == sorted(recalls) and recalls[-1] == 1.0
    assert abs(m - math.fsum(1 / r for r in ranks) / len(ranks)) <= 1e-12


# -------------------------------------------------------------- pooling


def test_two_hundred_pairs_make_two_full_pools():
    seen = []

    def search(pool):
        seen.append(len(pool))
        return perfect_searcher(pool)

    report = pooled_eval(RECORDS, search, EvalConfig(pool_size=100))
    assert seen == [100, 100] and report.aggregate["pools"] == 2
    assert report.mrr == 1.0 and all(report.recall(k) == 1.0 for k in (1, 3, 5, 10))
    assert not any(p["partial"] for p in report.pools)


def test_partial_pools():
    recs = RECORDS + [PairRecord(f"x{i}", "q", "c") for i in range(5)]
    pools = partition_pools(recs, 100)
    assert [len(p) for p in pools] == [100, 100, 5]
    report = pooled_eval(recs, perfect_searcher, EvalConfig(pool_size=100))
    assert [p["partial"] for p in report.pools] == [False, False, True]
    # a lone trailing record cannot be ranked against anything
    report = pooled_eval(recs[:201], perfect_searcher, EvalConfig(pool_size=100))
    assert report.aggregate["pools"] == 2 and report.aggregate["dropped"] == 1
    with pytest.raises(ParameterError):
        pooled_eval(RECORDS[:1], perfect_searcher)


def test_pools_are_seeded_and_disjoint():
    a = partition_pools(RECORDS, 30, seed=1)
    assert a == partition_pools(RECORDS, 30, seed=1)
    assert a != partition_pools(RECORDS, 30, seed=2)
    ids = [r.id for p in a for r in p]
    assert sorted(ids) == sorted(r.id for r in RECORDS)


def test_single_pool_when_pool_covers_test():
    report = pooled_eval(RECORDS[:50], random_searcher(0), EvalConfig(pool_size=50))
    assert report.aggregate["pools"] == 1 and report.pools[0]["n"] == 50


def test_random_searcher_matches_harmonic_expectation():
    expected = sum(1 / i for i in range(1, 101)) / 100
    assert abs(expected - 0.0519) < 1e-4
    recs = [PairRecord(f"r{i}", "q", "c") for i in range(4000)]
    report = pooled_eval(recs, random_searcher(7), EvalConfig(pool_size=100, k_values=(1,)))
    # per-query reciprocal ranks have sd about 0.13, so 4000 draws give a standard error near 0.002
    assert abs(report.mrr - expected) < 0.008


def test_threads_do_not_change_results():
    one = pooled_eval(RECORDS, perfect_searcher, EvalConfig(pool_size=40))
    four = pooled_eval(RECORDS, perfect_searcher, EvalConfig(pool_size=40), threads=4)
    assert one.aggregate == four.aggregate


def test_report_json_and_table():
    report = pooled_eval(RECORDS, perfect_searcher, EvalConfig(pool_size=100, k_values=(1, 5)))
    data = json.loads(report.to_json())
    assert data["aggregate"]["MRR"] == 1.0 and len(data["pools"]) == 2
    table = render_table([("dual", report.aggregate), ("two-stage", {"R@1": 0.5, "R@5": 0.75, "MRR": 0.6})], (1, 5))
    lines = table.splitlines()
    assert lines[0].split() == ["Model", "R@1", "R@5", "MRR"]
    assert lines[3].split() == ["two-stage", "0.500", "0.750", "0.600"]
    assert len({len(l) for l in lines}) == 1


def test_bad_eval_config():
    with pytest.raises(ParameterError):
        EvalConfig(pool_size=1)
    with pytest.raises(ParameterError):
        EvalConfig(k_values=(0,))


# ---------------------------------------------------------------- timing


def test_timing_needs_three_repeats():
    with pytest.raises(ParameterError):
        timing_benchmark({"x": lambda s: None}, [], repeats=2)
    out = timing_benchmark({"x": lambda s: sum(s)}, list(range(100)), repeats=3)
    assert len(out["x"]["runs_ms"]) == 3 and out["x"]["mean_ms"] >= 0


def test_self_comparison_reduction_is_near_zero():
    m = init_encoder(vocab_size=128, dim=16, layers=2, seed=0)
    seqs = [tokenize(f"w{i} w{i + 1} w{i + 2}", m.vocab) for i in range(300)]
    out = compare_query_encoders(m, m, seqs, repeats=5)
    assert abs(out["reduction"]) < 0.35
    assert time_reduction(52.2, 15.0) == pytest.approx(0.7126, abs=1e-4)


# ---------------------------------------------------------------- t-test


def test_t_test_against_textbook_formula():
    a, b = [1, 2, 3, 4, 5], [2, 2, 4, 4, 6]
    res = paired_t_test(a, b)
    t, p = textbook_t(a, b)
    assert abs(res.t - t) <= 1e-9 and abs(res.p - p) <= 1e-9
    assert abs(res.t - (-math.sqrt(6))) <= 1e-9 and res.df == 4 and res.flag is None
    ref = stats.ttest_rel(a, b)
    assert abs(res.p - ref.pvalue) <= 1e-9


def test_t_test_edges():
    same = paired_t_test([0.3, 0.4, 0.5], [0.3, 0.4, 0.5])
    assert (same.p, same.flag) == (1.0, "degenerate")
    shifted = paired_t_test([2, 3, 4, 5], [1, 2, 3, 4])
    assert shifted.p == 0.0 and shifted.flag == "zero-variance" and shifted.t == math.inf
    with pytest.raises(ParameterError):
        paired_t_test([1], [2])
    with pytest.raises(ParameterError):
        paired_t_test([1, 2], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=30))
def test_t_test_matches_scipy(pairs):
    a, b = zip(*pairs)
    d = np.subtract(a, b)
    if np.std(d) < 1e-6:
        return
    res, ref = paired_t_test(a, b), stats.ttest_rel(a, b)
    assert res.t == pytest.approx(ref.statistic, rel=1e-7, abs=1e-9)
    assert res.p == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-9)
