"""Training objectives for the dual encoder, the cross encoder and query distillation.

Every function returns a scalar graph node so it can be differentiated; pass
plain arrays instead of nodes to evaluate without building gradients.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoder import MAX_LEN, forward, tokenize
from .errors import ContractError, DataError, ParameterError

PAPER_EXCLUSIVE = "paper-exclusive"
STANDARD_INCLUSIVE = "standard-inclusive"
LOSS_FORMS = (PAPER_EXCLUSIVE, STANDARD_INCLUSIVE)
BCE_EPS = 1e-7


def _nodes(*xs):
    g = next((x.graph for x in xs if isinstance(x, ad.Node)), None) or ad.Graph(record=False)
    return g, [x if isinstance(x, ad.Node) else g.constant(x) for x in xs]


def contrastive_core(pos, sims, tau: float, form: str = PAPER_EXCLUSIVE) -> ad.Node:
    """``-sum_i log(exp(pos_i/tau) / sum_{j != i} exp(sims_ij/tau))``.

    With ``form="standard-inclusive"`` the positive term also enters the
    denominator (ordinary InfoNCE).
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if form not in LOSS_FORMS:
        raise ParameterError(f"unknown loss form {form!r}; expected one of {LOSS_FORMS}")
    g, (pos, sims) = _nodes(pos, sims)
    n = pos.shape[0]
    if n < 2:
        raise ParameterError("contrastive loss needs n >= 2: the negative denominator would be empty")
    if sims.shape != (n, n):
        raise ContractError(f"similarity matrix must be {n}x{n}, got {list(sims.shape)}")
    off = ~np.eye(n, dtype=bool)
    if form == PAPER_EXCLUSIVE:
        lse = ad.logsumexp_rows(ad.scale(sims, 1.0 / tau), off)
    else:
        logits = ad.concat([ad.reshape(pos, (n, 1)), sims], axis=1)
        mask = np.concatenate([np.ones((n, 1), dtype=bool), off], axis=1)
        lse = ad.logsumexp_rows(ad.scale(logits, 1.0 / tau), mask)
    return ad.sub(ad.sum_(lse), ad.scale(ad.sum_(pos), 1.0 / tau))


def pair_loss(a: ad.Node, b: ad.Node, tau: float, form: str = PAPER_EXCLUSIVE) -> ad.Node:
    """Contrastive loss where row i of ``b`` is the positive for row i of ``a``."""
    _, (a, b) = _nodes(a, b)
    return contrastive_core(ad.cosine_rows(a, b), ad.cosine_matrix(a, b), tau, form)


def _seqs(texts, model, max_len):
    return [tokenize(t, model.vocab, max_len) for t in texts]


def _two_seeds(seeds):
    s1, s2 = seeds
    if s1 is None or s2 is None or s1 == s2:
        raise ContractError("single-modality loss needs two distinct dropout seeds")
    return s1, s2


def loss_code_modality(graph, batch, code_encoder, tau, seeds, form=PAPER_EXCLUSIVE, max_len=MAX_LEN):
    """Codes encoded under two dropout masks; the second pass supplies positives and negatives."""
    s1, s2 = _two_seeds(seeds)
    seqs = _seqs([r.code for r in batch], code_encoder, max_len)
    return pair_loss(forward(graph, code_encoder, seqs, s1), forward(graph, code_encoder, seqs, s2), tau, form)


def loss_query_modality(graph, batch, query_encoder, tau, seeds, form=PAPER_EXCLUSIVE, max_len=MAX_LEN):
    s1, s2 = _two_seeds(seeds)
    seqs = _seqs([r.query for r in batch], query_encoder, max_len)
    return pair_loss(forward(graph, query_encoder, seqs, s1), forward(graph, query_encoder, seqs, s2), tau, form)


def loss_cross_modality(graph, batch, query_encoder, code_encoder, tau, form=PAPER_EXCLUSIVE,
                        seeds=(None, None), max_len=MAX_LEN):
    """Code i against every description; the matching one is the positive."""
    c = forward(graph, code_encoder, _seqs([r.code for r in batch], code_encoder, max_len), seeds[0])
    q = forward(graph, query_encoder, _seqs([r.query for r in batch], query_encoder, max_len), seeds[1])
    return pair_loss(c, q, tau, form)


def loss_dual_total(graph, batch, query_encoder, code_encoder, tau, seeds, form=PAPER_EXCLUSIVE, max_len=MAX_LEN):
    """Sum of the code, query and cross-modality losses for one batch.

    ``seeds`` holds four distinct dropout seeds: two code passes, two query
    passes. The cross-modality term reuses the first pass of each.
    """
    sc1, sc2, sq1, sq2 = seeds
    if len({sc1, sc2}) < 2 or len({sq1, sq2}) < 2:
        raise ContractError("each modality needs two distinct dropout seeds")
    cs = _seqs([r.code for r in batch], code_encoder, max_len)
    qs = _seqs([r.query for r in batch], query_encoder, max_len)
    c1, c2 = forward(graph, code_encoder, cs, sc1), forward(graph, code_encoder, cs, sc2)
    q1, q2 = forward(graph, query_encoder, qs, sq1), forward(graph, query_encoder, qs, sq2)
    return ad.add(ad.add(pair_loss(c1, c2, tau, form), pair_loss(q1, q2, tau, form)), pair_loss(c1, q1, tau, form))


def loss_cross_encoder(preds, labels) -> ad.Node:
    """Summed binary cross-entropy with predictions clamped to ``[eps, 1 - eps]``."""
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    g, (p,) = _nodes(preds)
    if p.shape != y.shape:
        raise ContractError(f"{p.shape[0] if p.value.ndim else 1} predictions for {y.size} labels")
    p = ad.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    one_minus = ad.clip(ad.add(ad.scale(p, -1.0), np.ones_like(y)), BCE_EPS, 1.0 - BCE_EPS)
    ll = ad.add(ad.mul(ad.log(p), y), ad.mul(ad.log(one_minus), 1.0 - y))
    return ad.scale(ad.sum_(ll), -1.0)


# ------------------------------------------------------------ distillation


def _aligned(*xs):
    g, nodes = _nodes(*xs)
    shapes = {n.shape for n in nodes}
    if len(shapes) != 1:
        raise ContractError(f"distillation inputs must be aligned, got shapes {[list(s) for s in shapes]}")
    return g, nodes


def loss_distill_query(q, q_hat) -> ad.Node:
    """``sum_i (1 - cos(q_hat_i, q_i))``."""
    g, (q, q_hat) = _aligned(q, q_hat)
    cos = ad.cosine_rows(q_hat, q)
    return ad.sub(g.constant(float(cos.value.size)), ad.sum_(cos))


def loss_distill_dual(c, q, q_hat) -> ad.Node:
    """``sum_i |cos(c_i, q_i) - cos(q_hat_i, c_i)|``."""
    g, (c, q, q_hat) = _aligned(c, q, q_hat)
    return ad.sum_(ad.abs_(ad.sub(ad.cosine_rows(c, q), ad.cosine_rows(q_hat, c))))


def distill_embeddings(graph, batch, teacher, code_encoder, student, seed=None, max_len=MAX_LEN):
    """Frozen teacher queries and codes (inference mode) plus student queries."""
    qs = _seqs([r.query for r in batch], teacher, max_len)
    cs = _seqs([r.code for r in batch], code_encoder, max_len)
    q = forward(graph, teacher, qs, None)
    c = forward(graph, code_encoder, cs, None)
    q_hat = forward(graph, student, qs, seed)
    return c, q, q_hat


def loss_distill_total(graph, batch, teacher, code_encoder, student, seed=None, weights=(1.0, 1.0),
                       max_len=MAX_LEN) -> ad.Node:
    """Query-modality plus dual-modality distillation; never looks at pair labels."""
    c, q, q_hat = distill_embeddings(graph, batch, teacher, code_encoder, student, seed, max_len)
    return _weighted_distill(c, q, q_hat, weights)


def _weighted_distill(c, q, q_hat, weights):
    w_q, w_d = weights
    return ad.add(ad.scale(loss_distill_query(q, q_hat), w_q), ad.scale(loss_distill_dual(c, q, q_hat), w_d))


def loss_distill_contrastive(graph, batch, teacher, code_encoder, student, tau, seeds=(None, None),
                             weights=(1.0, 1.0), contrastive_weight=1.0, form=PAPER_EXCLUSIVE,
                             max_len=MAX_LEN) -> ad.Node:
    """Distillation loss plus student-side query and cross-modality contrastive terms.

    The student's first pass (``seeds[0]``) feeds the distillation and
    cross-modality terms; the second pass is the query-modality positive.
    """
    s1, s2 = seeds
    c, q, q_hat = distill_embeddings(graph, batch, teacher, code_encoder, student, s1, max_len)
    base = _weighted_distill(c, q, q_hat, weights)
    if contrastive_weight == 0:
        return base
    if s1 == s2 and s1 is not None:
        raise ContractError("query-modality term needs two distinct dropout seeds")
    q_hat2 = forward(graph, student, _seqs([r.query for r in batch], student, max_len), s2)
    extra = ad.add(pair_loss(q_hat, q_hat2, tau, form), pair_loss(c, q_hat, tau, form))
    return ad.add(base, ad.scale(extra, contrastive_weight))
