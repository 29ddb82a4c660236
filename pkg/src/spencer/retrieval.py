"""Two-stage search: exact cosine recall over a vector index, then cross-encoder re-ranking."""
from __future__ import annotations

import hashlib
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .checkpoint import Reader, close_payload, open_payload
from .encoder import MAX_LEN, EncoderModel, encode_batch, score_pairs, tokenize
from .errors import ContractError, DataError, DimensionError, ParameterError

INDEX_MAGIC = b"SPIX"
INDEX_VERSION = 1
DEFAULT_K = 5


@dataclass(frozen=True)
class Hit:
    id: str
    score: float
    stage: str  # "recall" or "rerank"


@dataclass(frozen=True)
class RankedList:
    entries: tuple

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


@dataclass(eq=False)
class VectorIndex:
    ids: tuple
    vectors: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.ids):
            vecs = vecs.reshape(len(self.ids), -1)
        self.vectors = vecs
        if len(set(self.ids)) != len(self.ids):
            raise DataError("index ids must be unique")
        self.vectors.flags.writeable = False
        # rank of each id in ascending string order, used to break score ties
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self.id_rank = np.empty(len(self.ids), dtype=np.int64)
        self.id_rank[order] = np.arange(len(self.ids))
        self._pos = {k: i for i, k in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def subset(self, ids) -> "VectorIndex":
        rows = [self._pos[i] for i in ids]
        return VectorIndex(tuple(ids), self.vectors[rows], dict(self.meta))

    def same_as(self, other: "VectorIndex") -> bool:
        return self.ids == other.ids and np.array_equal(self.vectors, other.vectors)


def model_hash(model: EncoderModel) -> str:
    return hashlib.sha256(checkpoint.dumps(model)).hexdigest()[:16]


def build_index(corpus, code_encoder: EncoderModel, max_len=MAX_LEN) -> VectorIndex:
    """Encode every ``(id, code)`` of ``corpus`` (records or pairs) in inference mode."""
    items = [(r.id, r.code) if hasattr(r, "code") else tuple(r) for r in corpus]
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DataError(f"duplicate id {dup!r} in corpus")
    vocab = code_encoder.vocab
    vecs = encode_batch(code_encoder, [tokenize(c, vocab, max_len) for _, c in items])
    if not items:
        vecs = np.zeros((0, code_encoder.dim))
    meta = {"encoder": model_hash(code_encoder), "built": time.strftime("%Y-%m-%dT%H:%M:%S")}
    return VectorIndex(tuple(ids), vecs, meta)


def _scores(index: VectorIndex, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionError(f"query has shape {list(q.shape)}, index dimension is {index.dim}")
    if abs(np.sqrt(np.sum(q * q)) - 1.0) > 1e-6:
        raise ContractError("query vector must be unit-norm")
    # row-wise product-sum: identical rows always give identical scores
    return np.sum(index.vectors * q, axis=1)


def recall_topk(index: VectorIndex, query_vec, k: int) -> RankedList:
    """Top ``min(k, |index|)`` entries by descending cosine, ties by ascending id."""
    if k < 1:
        raise ParameterError(f"recall number must be at least 1, got {k}")
    if len(index) == 0:
        return RankedList(())
    s = _scores(index, query_vec)
    neg = -s
    if k >= len(index):
        order = np.lexsort((index.id_rank, neg))
    else:
        kth = np.partition(neg, k - 1)[k - 1]
        cand = np.flatnonzero(neg <= kth)
        order = cand[np.lexsort((index.id_rank[cand], neg[cand]))][:k]
    return RankedList(tuple(Hit(index.ids[i], float(s[i]), "recall") for i in order))


def brute_force_search(index: VectorIndex, query_vec) -> RankedList:
    """Full ranking by a plain sort over every entry; the reference for :func:`recall_topk`."""
    if len(index) == 0:
        return RankedList(())
    s = _scores(index, query_vec).tolist()
    order = sorted(range(len(s)), key=lambda i: (-s[i], index.ids[i]))
    return RankedList(tuple(Hit(index.ids[i], s[i], "recall") for i in order))


class CrossScorer:
    """Adapter turning a cross-encoder model into ``scorer(query, codes) -> scores``."""

    def __init__(self, model: EncoderModel, max_len=MAX_LEN):
        self.model = model
        self.max_len = max_len
        self.vocab = model.vocab

    def __call__(self, query: str, codes) -> np.ndarray:
        qs = tokenize(query, self.vocab, self.max_len)
        cs = [tokenize(c, self.vocab, self.max_len) for c in codes]
        return score_pairs(self.model, cs, [qs] * len(cs), max_len=self.max_len)


def _as_scorer(cross):
    return CrossScorer(cross) if isinstance(cross, EncoderModel) else cross


def rerank(query: str, candidates: RankedList, cross, corpus) -> RankedList:
    """Stable descending sort of ``candidates`` by cross-encoder match score.

    ``corpus`` maps id -> code text. ``cross`` is a cross-encoder model or any
    callable ``(query, codes) -> scores``.
    """
    missing = [h.id for h in candidates if h.id not in corpus]
    if missing:
        raise DataError(f"candidate id {missing[0]!r} not found in corpus")
    if len(candidates) == 0:
        return candidates
    scores = np.asarray(_as_scorer(cross)(query, [corpus[h.id] for h in candidates]), dtype=np.float64)
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return RankedList(tuple(Hit(candidates[i].id, float(scores[i]), "rerank") for i in order))


def encode_query(query_encoder: EncoderModel, text: str, max_len=MAX_LEN) -> np.ndarray:
    return encode_batch(query_encoder, [tokenize(text, query_encoder.vocab, max_len)])[0]


def dual_search(query: str, index: VectorIndex, query_encoder: EncoderModel, max_len=MAX_LEN) -> RankedList:
    """Recall-only ranking of the whole index."""
    return recall_topk(index, encode_query(query_encoder, query, max_len), max(len(index), 1))


def merge(recalled: RankedList, query: str, cross, corpus, k: int) -> RankedList:
    """Re-rank the first ``k`` of a full recall list and append the rest unchanged."""
    if k < 1:
        raise ParameterError(f"recall number must be at least 1, got {k}")
    head = rerank(query, RankedList(recalled.entries[:k]), cross, corpus)
    return RankedList(head.entries + recalled.entries[k:])


def spencer_search(query: str, index: VectorIndex, query_encoder: EncoderModel, cross, k: int = DEFAULT_K,
                   corpus=None, max_len=MAX_LEN) -> RankedList:
    """Full two-stage ranking; length equals the index size."""
    if k < 1:
        raise ParameterError(f"recall number must be at least 1, got {k}")
    if corpus is None:
        raise DataError("re-ranking needs a corpus mapping id -> code text")
    return merge(dual_search(query, index, query_encoder, max_len), query, cross, corpus, k)


# ------------------------------------------------------------ index file


def dumps_index(index: VectorIndex) -> bytes:
    payload = bytearray(struct.pack("<III", INDEX_VERSION, index.dim if len(index) else 0, len(index)))
    for i, vec in zip(index.ids, index.vectors):
        raw = i.encode("utf-8")
        payload += struct.pack("<I", len(raw)) + raw
        payload += np.ascontiguousarray(vec, dtype="<f8").tobytes()
    return INDEX_MAGIC + bytes(payload) + struct.pack("<I", zlib.crc32(payload))


def loads_index(raw: bytes) -> VectorIndex:
    r: Reader = open_payload(raw, INDEX_MAGIC, INDEX_VERSION)
    d, count = r.unpack("<II")
    ids, vecs = [], []
    for _ in range(count):
        (n,) = r.unpack("<I")
        ids.append(r.take(n).decode("utf-8"))
        vecs.append(np.frombuffer(r.take(8 * d), dtype="<f8").astype(np.float64))
    close_payload(r)
    return VectorIndex(tuple(ids), np.array(vecs).reshape(count, d))


def save_index(index: VectorIndex, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps_index(index))


def load_index(path) -> VectorIndex:
    return loads_index(Path(path).read_bytes())
