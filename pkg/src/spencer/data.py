"""Paired query/code corpora: JSONL I/O, splits, batching, synthetic generation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError, ParseError
from .seeding import rng


@dataclass(frozen=True)
class PairRecord:
    id: str
    query: str
    code: str


FIELDS = ("id", "query", "code")


def _check_unique(records):
    seen = set()
    for r in records:
        if r.id in seen:
            raise DataError(f"duplicate id {r.id!r}")
        seen.add(r.id)


def load_jsonl(path) -> list[PairRecord]:
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            for name in FIELDS:
                if name not in obj:
                    raise ParseError(f"missing field {name!r}", lineno)
                if not isinstance(obj[name], str):
                    raise ParseError(f"field {name!r} must be a string", lineno)
            if not obj["query"].strip() or not obj["code"].strip():
                raise ParseError("query and code must be nonempty", lineno)
            if obj["id"] in seen:
                raise DataError(f"line {lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            records.append(PairRecord(obj["id"], obj["query"], obj["code"]))
    return records


def save_jsonl(records, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")


def split(records, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded shuffle then contiguous cut into train/valid/test."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ParameterError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    order = rng(seed, 0x5917).permutation(len(records))
    shuffled = [records[i] for i in order]
    n_train = int(round(fr[0] * len(records)))
    n_valid = int(round(fr[1] * len(records)))
    n_valid = min(n_valid, len(records) - n_train)
    return (shuffled[:n_train], shuffled[n_train: n_train + n_valid], shuffled[n_train + n_valid:])


def batches(records, n=16, seed=0):
    """Shuffled batches of ``n`` aligned pairs; a final batch smaller than 2 is dropped."""
    if n < 2:
        raise ParameterError(f"batch size must be at least 2, got {n}")
    order = rng(seed, 0xBA7C).permutation(len(records))
    for lo in range(0, len(order), n):
        chunk = order[lo: lo + n]
        if len(chunk) < 2:
            return
        yield [records[i] for i in chunk]


# --------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 2000
    vocab: int = 1000
    code_len: tuple = (5, 12)
    query_len: tuple = (4, 8)
    noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError("synthetic corpus needs at least 2 records")
        if self.vocab < 2:
            raise ParameterError("synthetic vocabulary needs at least 2 tokens")
        for lo, hi in (self.code_len, self.query_len):
            if lo < 1 or hi < lo:
                raise ParameterError(f"bad length range ({lo}, {hi})")
        if not 0.0 <= self.noise < 1.0:
            raise ParameterError(f"noise must lie in [0, 1), got {self.noise}")


def code_token(i: int) -> str:
    return f"c{i:04d}"


def query_word(i: int) -> str:
    return f"w{i:04d}"


def translation_table(spec: SyntheticSpec) -> np.ndarray:
    """``table[code_index] = query_index``; a fixed permutation per seed."""
    return rng(spec.seed, 0x7AB1E).permutation(spec.vocab)


def synthesize(spec: SyntheticSpec) -> list[PairRecord]:
    """Random code token strings with queries that translate a subset of them.

    Each query token is the translation of a distinct token of its code,
    replaced by a uniformly random word with probability ``spec.noise``.
    """
    table = translation_table(spec)
    r = rng(spec.seed, 0xC0DE)
    width = len(str(spec.n - 1))
    out = []
    for i in range(spec.n):
        code_idx = r.integers(0, spec.vocab, r.integers(spec.code_len[0], spec.code_len[1] + 1))
        distinct = np.unique(code_idx)
        k = min(int(r.integers(spec.query_len[0], spec.query_len[1] + 1)), distinct.size)
        picked = r.permutation(distinct)[:k]
        words = table[picked]
        flip = r.random(k) < spec.noise
        words = np.where(flip, r.integers(0, spec.vocab, k), words)
        out.append(PairRecord(
            id=f"s{i:0{width}d}",
            query=" ".join(query_word(w) for w in words),
            code=" ".join(code_token(c) for c in code_idx),
        ))
    return out


def lexical_scores(query: str, codes, table: np.ndarray) -> np.ndarray:
    """How many query words are translations of tokens present in each code."""
    inverse = {query_word(int(q)): code_token(c) for c, q in enumerate(table)}
    wanted = [inverse.get(w) for w in query.split()]
    scores = np.zeros(len(codes))
    for j, code in enumerate(codes):
        toks = set(code.split())
        scores[j] = sum(1 for w in wanted if w is not None and w in toks)
    return scores
