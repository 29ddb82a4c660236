"""Hash tokenizer and the layered residual encoder family.

Each block mixes every position with the mean of its own sequence::

    m       = mean over positions of x
    x_next  = x + dropout(tanh([x | m] @ W1 + b1) @ W2 + b2)

The representation of a sequence is the L2-normalised hidden state of its
leading CLS position after the last block. A cross encoder adds a logistic
score head on top of that vector.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import CannotCompressError, ParameterError, WrongModelKindError
from .seeding import derive_seed, rng

CLS, SEP, PAD = 0, 1, 2
RESERVED = 3
MAX_LEN = 512


@lru_cache(maxsize=1 << 18)
def _hash64(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class Vocabulary:
    size: int = 8192

    def __post_init__(self):
        if self.size <= RESERVED:
            raise ParameterError(f"vocabulary needs more than {RESERVED} buckets")

    def token_id(self, token: str) -> int:
        return RESERVED + _hash64(token) % (self.size - RESERVED)

    def ids(self, text: str) -> list[int]:
        return [self.token_id(t) for t in text.split()]


def tokenize(text: str, vocab: Vocabulary, max_len: int = MAX_LEN) -> np.ndarray:
    """``[CLS] tok1 tok2 ...`` truncated to ``max_len`` ids."""
    if max_len < 1:
        raise ParameterError("max_len must be at least 1")
    ids = [CLS] + vocab.ids(text)[: max_len - 1]
    return np.asarray(ids, dtype=np.int64)


def pair_sequence(code: np.ndarray, query: np.ndarray, max_len: int = MAX_LEN) -> np.ndarray:
    """``[CLS] code [SEP] query`` from two tokenized sequences.

    A leading CLS on either input is dropped. When the pair would not fit,
    each side is cut to ``(max_len - 2) // 2`` tokens.
    """
    c = np.asarray(code, dtype=np.int64)
    q = np.asarray(query, dtype=np.int64)
    if c.size and c[0] == CLS:
        c = c[1:]
    if q.size and q[0] == CLS:
        q = q[1:]
    if 2 + c.size + q.size > max_len:
        side = (max_len - 2) // 2
        c, q = c[:side], q[:side]
    return np.concatenate([[CLS], c, [SEP], q]).astype(np.int64)


@dataclass(frozen=True)
class Block:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class ScoreHead:
    w: np.ndarray
    b: np.ndarray  # shape ()


@dataclass(frozen=True, eq=False)
class EncoderModel:
    embedding: np.ndarray
    blocks: tuple
    dropout: float = 0.2
    head: ScoreHead | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ParameterError("an encoder needs at least one block")
        for arr in self.parameters().values():
            arr.flags.writeable = False

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden(self) -> int:
        return self.blocks[0].W1.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.blocks)

    @property
    def is_cross(self) -> bool:
        return self.head is not None

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.vocab_size)

    def parameters(self) -> dict[str, np.ndarray]:
        """Parameters in declaration order (the checkpoint order)."""
        out = {"embedding": self.embedding}
        for i, blk in enumerate(self.blocks):
            out[f"blocks.{i}.W1"] = blk.W1
            out[f"blocks.{i}.b1"] = blk.b1
            out[f"blocks.{i}.W2"] = blk.W2
            out[f"blocks.{i}.b2"] = blk.b2
        if self.head is not None:
            out["head.w"] = self.head.w
            out["head.b"] = self.head.b
        return out

    def with_parameters(self, params: dict[str, np.ndarray]) -> "EncoderModel":
        p = {**self.parameters(), **params}
        blocks = tuple(
            Block(*(np.array(p[f"blocks.{i}.{k}"]) for k in ("W1", "b1", "W2", "b2")))
            for i in range(self.num_layers)
        )
        head = None
        if self.head is not None:
            head = ScoreHead(np.array(p["head.w"]), np.array(p["head.b"]))
        return EncoderModel(np.array(p["embedding"]), blocks, self.dropout, head, dict(self.meta))

    def same_as(self, other: "EncoderModel") -> bool:
        """Bitwise parameter equality plus matching structure."""
        a, b = self.parameters(), other.parameters()
        return (
            self.dropout == other.dropout
            and a.keys() == b.keys()
            and all(a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a)
        )


def init_encoder(vocab_size=8192, dim=64, hidden=None, layers=12, dropout=0.2, seed=0,
                 score_head=False, embed_scale=0.03, residual_scale=None) -> EncoderModel:
    """Random encoder. Residual branches start at ``residual_scale`` (default 1/sqrt(L)) of unit gain."""
    hidden = 4 * dim if hidden is None else hidden
    residual_scale = 1.0 / np.sqrt(layers) if residual_scale is None else residual_scale
    r = rng(seed, 0xE1C0DE)
    emb = r.normal(0.0, embed_scale, (vocab_size, dim))
    blocks = []
    for _ in range(layers):
        blocks.append(Block(
            W1=r.normal(0.0, 1.0 / np.sqrt(2 * dim), (2 * dim, hidden)),
            b1=np.zeros(hidden),
            W2=r.normal(0.0, residual_scale / np.sqrt(hidden), (hidden, dim)),
            b2=np.zeros(dim),
        ))
    head = ScoreHead(r.normal(0.0, 1.0 / np.sqrt(dim), dim), np.array(0.0)) if score_head else None
    return EncoderModel(emb, tuple(blocks), float(dropout), head)


def compress(model: EncoderModel, drop: int) -> EncoderModel:
    """Keep the bottom ``L - drop`` blocks (and embedding and head) unchanged."""
    if drop < 1:
        raise ParameterError(f"layer drop must be at least 1, got {drop}")
    if drop >= model.num_layers:
        raise CannotCompressError(f"cannot drop {drop} of {model.num_layers} layers")
    return EncoderModel(
        np.array(model.embedding),
        tuple(Block(*(np.array(a) for a in (b.W1, b.b1, b.W2, b.b2))) for b in model.blocks[: model.num_layers - drop]),
        model.dropout,
        None if model.head is None else ScoreHead(np.array(model.head.w), np.array(model.head.b)),
        dict(model.meta),
    )


# ------------------------------------------------------------------ forward


def _hidden(graph: ad.Graph, model: EncoderModel, seqs, seed=None, keep_all=False):
    params = graph.params_of(model)
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if np.any(lengths < 1):
        raise ParameterError("empty token sequence")
    ids = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
    x = ad.take_rows(params["embedding"], ids)
    states = [x] if keep_all else None
    for i in range(model.num_layers):
        m = ad.segment_mean(x, lengths)
        z = ad.tanh(ad.add(ad.matmul(ad.concat([x, m]), params[f"blocks.{i}.W1"]), params[f"blocks.{i}.b1"]))
        u = ad.add(ad.matmul(z, params[f"blocks.{i}.W2"]), params[f"blocks.{i}.b2"])
        u = ad.dropout(u, model.dropout, None if seed is None else derive_seed(seed, i))
        x = ad.add(x, u)
        if keep_all:
            states.append(x)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return x, starts, states


def forward(graph: ad.Graph, model: EncoderModel, seqs, seed=None) -> ad.Node:
    """Unit-norm CLS representations ``[len(seqs) x d]``; ``seed=None`` is inference mode."""
    x, starts, _ = _hidden(graph, model, seqs, seed)
    return ad.l2_normalize(ad.take_rows(x, starts))


def forward_scores(graph: ad.Graph, model: EncoderModel, pair_seqs, seed=None) -> ad.Node:
    """Match probabilities ``[len(pair_seqs)]`` from a cross encoder."""
    if model.head is None:
        raise WrongModelKindError("score head missing: this is not a cross encoder")
    params = graph.params_of(model)
    cls = forward(graph, model, pair_seqs, seed)
    logits = ad.matmul(cls, ad.reshape(params["head.w"], (model.dim, 1)))
    logits = ad.add(logits, ad.reshape(params["head.b"], (1,)))
    return ad.reshape(ad.sigmoid(logits), (len(pair_seqs),))


def hidden_states(model: EncoderModel, seqs) -> list[np.ndarray]:
    """Per-layer hidden states (inference mode); entry 0 is the embedding lookup."""
    _, _, states = _hidden(ad.Graph(record=False), model, seqs, keep_all=True)
    return [s.value for s in states]


def encode_batch(model: EncoderModel, seqs, seed=None, batch_size=512) -> np.ndarray:
    if model.head is not None:
        raise WrongModelKindError("encode needs a dual encoder, got a model with a score head")
    if len(seqs) == 0:
        return np.zeros((0, model.dim))
    out = []
    for lo in range(0, len(seqs), batch_size):
        g = ad.Graph(record=False)
        out.append(forward(g, model, seqs[lo: lo + batch_size], seed).value)
    return np.concatenate(out)


def encode(model: EncoderModel, seq, seed=None) -> np.ndarray:
    return encode_batch(model, [seq], seed)[0]


def score_pairs(model: EncoderModel, codes, queries, seed=None, max_len=MAX_LEN) -> np.ndarray:
    if model.head is None:
        raise WrongModelKindError("score head missing: this is not a cross encoder")
    pairs = [pair_sequence(c, q, max_len) for c, q in zip(codes, queries)]
    if not pairs:
        return np.zeros(0)
    return forward_scores(ad.Graph(record=False), model, pairs, seed).value


def score_pair(model: EncoderModel, code, query, seed=None, max_len=MAX_LEN) -> float:
    return float(score_pairs(model, [code], [query], seed, max_len)[0])
