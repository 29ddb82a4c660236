"""Dual-encoder and cross-encoder training loops (AdamW, early stopping)."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import batches
from .encoder import MAX_LEN, EncoderModel, forward_scores, pair_sequence, score_pairs, tokenize
from .errors import DataError, DimensionError, ParameterError, WrongModelKindError
from .evaluation import EvalConfig, dual_searcher, pooled_eval
from .losses import LOSS_FORMS, PAPER_EXCLUSIVE, loss_cross_encoder, loss_dual_total
from .optim import OptimizerState, optimizer_step
from .seeding import derive_seed, rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    temperature: float = 0.05
    lr: float = 1e-5
    epochs: int = 8
    dropout: float = 0.2
    patience: int = 2
    seed: int = 0
    loss_form: str = PAPER_EXCLUSIVE
    weight_decay: float = 0.01
    pool_size: int = 100
    max_len: int = MAX_LEN
    block_lr_scale: float = 1.0  # learning-rate multiplier for block weights

    def __post_init__(self):
        if self.batch_size < 2:
            raise ParameterError("batch size must be at least 2 (in-batch negatives)")
        if self.lr < 0 or self.block_lr_scale < 0:
            raise ParameterError("learning rate and block learning-rate scale must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ParameterError("dropout must lie in [0, 1)")
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")
        if self.loss_form not in LOSS_FORMS:
            raise ParameterError(f"loss form must be one of {LOSS_FORMS}")
        if self.epochs < 0 or self.patience < 1:
            raise ParameterError("epochs must be >= 0 and patience >= 1")


@dataclass
class TrainResult:
    models: tuple
    history: list = field(default_factory=list)
    best_epoch: int = 0


def write_history(history, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def validate_dual(query_encoder, code_encoder, records, pool_size=100, seed=0, max_len=MAX_LEN) -> float:
    """Pooled recall-only MRR over ``records``."""
    cfg = EvalConfig(pool_size=max(2, min(pool_size, len(records))), k_values=(1,), seed=seed)
    return pooled_eval(records, dual_searcher(query_encoder, code_encoder, max_len=max_len), cfg).mrr


def _with_dropout(model: EncoderModel, p: float) -> EncoderModel:
    return model if model.dropout == p else replace(model, dropout=p)


def block_lr_scales(params, scale: float):
    """Per-name multipliers slowing (or speeding) the residual blocks relative to the embedding."""
    if scale == 1.0:
        return None
    return {k: scale for k in params if "blocks." in k}


def _split_grads(graph, grads, **models):
    out = {}
    for prefix, m in models.items():
        out.update({f"{prefix}.{k}": v for k, v in graph.grads_for(m, grads).items()})
    return out


def _unprefix(params, prefix):
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def _early_stop_loop(cfg, train, valid, models, step_fn, metric_fn, tag):
    """Shared epoch loop: step_fn(models, batch, epoch, b) -> (models, loss)."""
    history = []
    best_score, best_models, best_epoch, stale = -np.inf, models, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for b, batch in enumerate(batches(train, cfg.batch_size, derive_seed(cfg.seed, epoch))):
            models, loss = step_fn(models, batch, epoch, b)
            losses.append(loss)
        score = metric_fn(models) if valid else None
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else None,
               "val_metric": score, "wall_ms": (time.perf_counter() - t0) * 1000.0}
        history.append(rec)
        log.info("%s epoch %d loss %.4f val %s", tag, epoch, rec["train_loss"] or 0.0, score)
        if not valid:
            best_models, best_epoch = models, epoch
            continue
        if score > best_score:
            best_score, best_models, best_epoch, stale = score, models, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best_models, history, best_epoch)


def train_dual(train, query_encoder: EncoderModel, code_encoder: EncoderModel, cfg: TrainConfig,
               valid=None) -> TrainResult:
    """Minimise the summed code, query and cross-modality contrastive losses.

    Returns the best pair by validation MRR when ``valid`` is given, the
    final pair otherwise.
    """
    if not train:
        raise DataError("no training data")
    if query_encoder.dim != code_encoder.dim:
        raise DimensionError(f"encoder dimensions differ: {query_encoder.dim} vs {code_encoder.dim}")
    models = (_with_dropout(query_encoder, cfg.dropout), _with_dropout(code_encoder, cfg.dropout))
    state = [OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)]

    def step(models, batch, epoch, b):
        qm, cm = models
        seeds = [derive_seed(cfg.seed, epoch, b, k) for k in range(4)]
        g = ad.Graph(trainable=[qm, cm])
        loss = loss_dual_total(g, batch, qm, cm, cfg.temperature, seeds, cfg.loss_form, cfg.max_len)
        grads = _split_grads(g, g.backward(loss), query=qm, code=cm)
        params = {**{f"query.{k}": v for k, v in qm.parameters().items()},
                  **{f"code.{k}": v for k, v in cm.parameters().items()}}
        params, state[0] = optimizer_step(params, grads, state[0], block_lr_scales(params, cfg.block_lr_scale))
        return (qm.with_parameters(_unprefix(params, "query")),
                cm.with_parameters(_unprefix(params, "code"))), float(loss.value)

    def metric(models):
        return validate_dual(*models, valid, cfg.pool_size, cfg.seed, cfg.max_len)

    return _early_stop_loop(cfg, train, valid, models, step, metric, "dual")


def cross_examples(records, n, seed, max_len=MAX_LEN, vocab=None):
    """Positive pairs plus one in-batch negative per query: ``(pair_seqs, labels)``.

    Records are taken in consecutive groups of ``n``; each query is paired
    with a uniformly drawn non-matching code from its group.
    """
    r = rng(seed, 0xC505)
    seqs, labels = [], []
    for lo in range(0, len(records), n):
        group = records[lo: lo + n]
        if len(group) < 2:
            break
        cs = [tokenize(x.code, vocab, max_len) for x in group]
        qs = [tokenize(x.query, vocab, max_len) for x in group]
        m = len(group)
        for i in range(m):
            j = (i + int(r.integers(1, m))) % m
            seqs.append(pair_sequence(cs[i], qs[i], max_len))
            labels.append(1.0)
            seqs.append(pair_sequence(cs[j], qs[i], max_len))
            labels.append(0.0)
    return seqs, np.asarray(labels)


def pair_accuracy(cross: EncoderModel, records, n=16, seed=0, max_len=MAX_LEN) -> float:
    seqs, labels = cross_examples(records, n, seed, max_len, cross.vocab)
    if not seqs:
        return float("nan")
    preds = np.concatenate([
        forward_scores(ad.Graph(record=False), cross, seqs[lo: lo + 256]).value
        for lo in range(0, len(seqs), 256)
    ])
    return float(np.mean((preds > 0.5) == (labels == 1)))


def train_cross(train, cross: EncoderModel, cfg: TrainConfig, valid=None) -> TrainResult:
    """Binary cross-entropy over positives and synthesized in-batch negatives."""
    if not train:
        raise DataError("no training data")
    model = _with_dropout(cross, cfg.dropout)
    if model.head is None:
        raise WrongModelKindError("cross-encoder training needs a model with a score head")
    state = [OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)]

    def step(models, batch, epoch, b):
        (m,) = models
        seqs, labels = cross_examples(batch, len(batch), derive_seed(cfg.seed, epoch, b), cfg.max_len, m.vocab)
        g = ad.Graph(trainable=[m])
        loss = loss_cross_encoder(forward_scores(g, m, seqs, derive_seed(cfg.seed, epoch, b, 1)), labels)
        grads = g.grads_for(m, g.backward(loss))
        params = m.parameters()
        params, state[0] = optimizer_step(params, grads, state[0], block_lr_scales(params, cfg.block_lr_scale))
        return (m.with_parameters(params),), float(loss.value)

    def metric(models):
        return pair_accuracy(models[0], valid, cfg.batch_size, cfg.seed, cfg.max_len)

    return _early_stop_loop(cfg, train, valid, (model,), step, metric, "cross")


def mean_pair_scores(cross: EncoderModel, records, seed=0, max_len=MAX_LEN):
    """Mean predicted probability on matched and on shuffled (mismatched) pairs."""
    vocab = cross.vocab
    cs = [tokenize(r.code, vocab, max_len) for r in records]
    qs = [tokenize(r.query, vocab, max_len) for r in records]
    shift = rng(seed, 0x5C0E).integers(1, len(records))
    matched = score_pairs(cross, cs, qs, max_len=max_len)
    mismatched = score_pairs(cross, cs[shift:] + cs[:shift], qs, max_len=max_len)
    return float(matched.mean()), float(mismatched.mean())
