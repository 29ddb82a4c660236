"""Corpus and model construction shared by the command line and the experiment scripts."""
from __future__ import annotations

from .config import RunConfig
from .data import SyntheticSpec, split, synthesize
from .encoder import EncoderModel, init_encoder


def make_corpus(cfg: RunConfig):
    """Synthetic corpus split into ``(train, valid, test)``."""
    spec = SyntheticSpec(n=cfg.n, vocab=cfg.data_vocab, code_len=tuple(cfg.code_len),
                         query_len=tuple(cfg.query_len), noise=cfg.noise, seed=cfg.seed)
    return split(synthesize(spec), tuple(cfg.split), cfg.seed)


def new_dual_pair(cfg: RunConfig) -> tuple[EncoderModel, EncoderModel]:
    """Freshly initialised (query, code) encoders."""
    return tuple(
        init_encoder(cfg.vocab_size, cfg.dim, layers=cfg.layers, dropout=cfg.dropout, seed=cfg.seed * 2 + k,
                     embed_scale=cfg.embed_scale)
        for k in (1, 2)
    )


def new_cross(cfg: RunConfig) -> EncoderModel:
    return init_encoder(cfg.vocab_size, cfg.dim, layers=cfg.cross_layers, dropout=cfg.dropout,
                        seed=cfg.seed * 2 + 3, score_head=True, embed_scale=cfg.cross_embed_scale)
