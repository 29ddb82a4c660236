import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spencer.data import (PairRecord, SyntheticSpec, batches, code_token, lexical_scores, load_jsonl, query_word,
                          save_jsonl, split, synthesize, translation_table)
from spencer.errors import DataError, ParameterError, ParseError
from spencer.evaluation import EvalConfig, pooled_eval

RECORDS = [PairRecord(f"id{i}", f"query {i}", f"def f{i}(): pass") for i in range(33)]


# --------------------------------------------------------------- jsonl


def test_empty_file_gives_empty_corpus(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_jsonl(path) == []


def test_round_trip(tmp_path):
    path = tmp_path / "c.jsonl"
    recs = RECORDS + [PairRecord("u", "naïve ünïcode", "x = '\\n'")]
    save_jsonl(recs, path)
    assert load_jsonl(path) == recs


def test_missing_field_names_field_and_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"id": "a", "query": "q", "code": "c"}) + "\n"
                    + json.dumps({"id": "b", "query": "q"}) + "\n")
    with pytest.raises(ParseError, match=r"line 2.*'code'"):
        load_jsonl(path)


def test_malformed_line_and_duplicate_id(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "query": "q", "code": "c"}\n{oops\n')
    with pytest.raises(ParseError, match="line 2"):
        load_jsonl(path)
    path.write_text('{"id": "a", "query": "q", "code": "c"}\n{"id": "a", "query": "r", "code": "d"}\n')
    with pytest.raises(DataError, match="duplicate"):
        load_jsonl(path)


# --------------------------------------------------------------- split


def test_split_everything_to_train():
    train, valid, test = split(RECORDS, (1, 0, 0), seed=3)
    assert sorted(r.id for r in train) == sorted(r.id for r in RECORDS) and not valid and not test


def test_split_rejects_bad_fractions():
    with pytest.raises(ParameterError):
        split(RECORDS, (0.5, 0.2, 0.2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 60), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_split_is_disjoint_exhaustive_and_seeded(n, a, b, seed):
    lo, hi = sorted((a, b))
    fractions = (lo, hi - lo, 1 - hi)
    recs = RECORDS[:0] + [PairRecord(f"r{i}", "q", "c") for i in range(n)]
    parts = split(recs, fractions, seed)
    ids = [r.id for p in parts for r in p]
    assert sorted(ids) == sorted(r.id for r in recs)
    assert sum(len(p) for p in parts) == n
    assert parts == split(recs, fractions, seed)


# ------------------------------------------------------------- batches


def test_batches_drop_lonely_remainder():
    assert [len(b) for b in batches(RECORDS, 16, seed=0)] == [16, 16]
    assert [len(b) for b in batches(RECORDS[:34], 16, seed=0)] == [16, 16]
    assert [len(b) for b in batches(RECORDS[:18], 16, seed=0)] == [16, 2]


def test_batches_are_seeded_and_unique():
    first = [[r.id for r in b] for b in batches(RECORDS, 8, seed=5)]
    assert first == [[r.id for r in b] for b in batches(RECORDS, 8, seed=5)]
    flat = [i for b in first for i in b]
    assert len(flat) == len(set(flat)) and set(flat) <= {r.id for r in RECORDS}


def test_batch_size_below_two_is_rejected():
    with pytest.raises(ParameterError):
        list(batches(RECORDS, 1))


# ------------------------------------------------------------ synthesis


def test_noiseless_queries_translate_their_code():
    spec = SyntheticSpec(n=300, noise=0.0, seed=4)
    table = translation_table(spec)
    for rec in synthesize(spec):
        allowed = {query_word(int(table[int(t[1:])])) for t in rec.code.split()}
        assert set(rec.query.split()) <= allowed


def test_synthesis_is_seeded():
    spec = SyntheticSpec(n=50, seed=9)
    assert synthesize(spec) == synthesize(spec)
    assert synthesize(spec) != synthesize(SyntheticSpec(n=50, seed=10))


def test_synthetic_records_are_valid():
    recs = synthesize(SyntheticSpec(n=200, seed=1))
    assert len({r.id for r in recs}) == 200
    for r in recs:
        assert 5 <= len(r.code.split()) <= 12
        assert 1 <= len(r.query.split()) <= 8
        assert all(t.startswith("c") for t in r.code.split())


def test_bad_synthetic_specs():
    for kwargs in ({"n": 1}, {"noise": 1.0}, {"code_len": (0, 3)}, {"query_len": (5, 4)}):
        with pytest.raises(ParameterError):
            SyntheticSpec(**kwargs)


def _lexical_searcher(table):
    def search(pool):
        codes = [r.code for r in pool]
        out = []
        for r in pool:
            s = lexical_scores(r.query, codes, table)
            out.append([pool[j].id for j in np.lexsort((np.arange(len(pool)), -s))])
        return out
    return search


def test_lexical_oracle_finds_noiseless_pairs():
    spec = SyntheticSpec(n=1000, noise=0.0, seed=0)
    recs = synthesize(spec)
    table = translation_table(spec)
    codes = [r.code for r in recs]
    hits = 0
    for i, r in enumerate(recs):
        s = lexical_scores(r.query, codes, table)
        # count a hit only when the true code is the unique best
        hits += s[i] == s.max() and np.sum(s == s.max()) == 1
    assert hits / len(recs) >= 0.95


def test_difficulty_grows_with_noise():
    means = []
    for noise in (0.0, 0.2, 0.4):
        runs = []
        for seed in range(5):
            spec = SyntheticSpec(n=1000, noise=noise, seed=seed)
            report = pooled_eval(synthesize(spec), _lexical_searcher(translation_table(spec)),
                                 EvalConfig(pool_size=100, k_values=(1,), seed=seed))
            runs.append(report.mrr)
        means.append(np.mean(runs))
    assert means[0] >= means[1] >= means[2]


def test_token_spelling():
    assert code_token(7) == "c0007" and query_word(12) == "w0012"
