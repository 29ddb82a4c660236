"""Independent scalar oracles and gradient-check cases shared by the unit and acceptance suites."""
import math
import zlib

import numpy as np
from scipy import integrate

from spencer import autodiff as ad
from spencer.data import PairRecord
from spencer.encoder import encode_batch, forward, tokenize
from spencer.losses import (PAPER_EXCLUSIVE, STANDARD_INCLUSIVE, loss_cross_encoder, loss_distill_dual,
                            loss_distill_query, pair_loss)


def stable_seed(name: str) -> int:
    return zlib.crc32(name.encode())


# ------------------------------------------------------------ formulas


def cos(u, v):
    dot = sum(float(a) * float(b) for a, b in zip(u, v))
    return dot / math.sqrt(sum(float(a) ** 2 for a in u) * sum(float(b) ** 2 for b in v))


def contrastive_oracle(a, b, tau, form=PAPER_EXCLUSIVE):
    total = 0.0
    n = len(a)
    for i in range(n):
        pos = cos(a[i], b[i])
        denom = sum(math.exp(cos(a[i], b[j]) / tau) for j in range(n) if j != i)
        if form == STANDARD_INCLUSIVE:
            denom += math.exp(pos / tau)
        total -= math.log(math.exp(pos / tau) / denom)
    return total


def query_distill_oracle(q, q_hat):
    return sum(1.0 - cos(q_hat[i], q[i]) for i in range(len(q)))


def dual_distill_oracle(c, q, q_hat):
    return sum(abs(cos(c[i], q[i]) - cos(q_hat[i], c[i])) for i in range(len(q)))


def close(x, y, tol=1e-9):
    return abs(float(x) - float(y)) <= tol * max(1.0, abs(float(y)))


def textbook_t(a, b):
    """Paired t statistic and two-sided p by integrating the t density."""
    d = [x - y for x, y in zip(a, b)]
    n = len(d)
    mean = sum(d) / n
    sd = math.sqrt(sum((x - mean) ** 2 for x in d) / (n - 1))
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    norm = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    tail, _ = integrate.quad(lambda x: norm * (1 + x * x / df) ** (-(df + 1) / 2), abs(t), math.inf, epsabs=1e-13)
    return t, 2 * tail


# ------------------------------------------------------------- batches


def make_batch(seed, n=4):
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n):
        code = " ".join(f"c{int(t)}" for t in rng.integers(0, 50, rng.integers(3, 9)))
        query = " ".join(f"w{int(t)}" for t in rng.integers(0, 50, rng.integers(2, 6)))
        recs.append(PairRecord(f"r{i}", query, code))
    return recs


def enc(model, texts, seed=None):
    return encode_batch(model, [tokenize(t, model.vocab) for t in texts], seed)


# ------------------------------------------------------ gradient cases


def op_cases():
    """One small scalar function per differentiable op; inputs are four arrays of fixed shapes."""
    def bias_add(g, n):
        return ad.sum_(ad.tanh(ad.add(n[0], n[1])))

    def mm(g, n):
        return ad.sum_(ad.tanh(ad.matmul(n[0], n[2])))

    def tanh_sq(g, n):
        t = ad.tanh(n[0])
        return ad.sum_(ad.mul(t, t))

    def sig_log(g, n):
        return ad.sum_(ad.log(ad.sigmoid(n[0])))

    def drop(g, n):
        return ad.sum_(ad.tanh(ad.dropout(n[0], 0.3, 11)))

    def cat_mean(g, n):
        x = n[0]
        return ad.sum_(ad.tanh(ad.concat([x, ad.segment_mean(x, [1, 2])])))

    def rowmean(g, n):
        return ad.sum_(ad.tanh(ad.row_mean(n[0])))

    def norm_cos(g, n):
        return ad.sum_(ad.tanh(ad.cosine_matrix(n[0], n[3])))

    def lse(g, n):
        mask = np.array([[False, True, True], [True, False, True], [True, True, False]])
        return ad.sum_(ad.logsumexp_rows(ad.matmul(n[0], ad.transpose(n[3])), mask))

    def gather_abs(g, n):
        return ad.sum_(ad.abs_(ad.take_rows(n[0], [0, 2, 2, 1])))

    return [bias_add, mm, tanh_sq, sig_log, drop, cat_mean, rowmean, norm_cos, lse, gather_abs]


def op_inputs(rng):
    arrays = [rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 2)), rng.normal(size=(3, 4))]
    # keep |.| away from its kink
    arrays[0] = np.where(np.abs(arrays[0]) < 1e-3, 0.5, arrays[0])
    return arrays


def abs_safe(rng, n, d):
    """Rows of c, q, q_hat whose dual-distillation differences stay away from the |.| kink."""
    while True:
        c, q, q_hat = (rng.normal(size=(n, d)) for _ in range(3))
        diff = [cos(c[i], q[i]) - cos(q_hat[i], c[i]) for i in range(n)]
        if min(abs(x) for x in diff) > 1e-3:
            return c, q, q_hat


def loss_inputs(rng):
    c, q, q_hat = abs_safe(rng, 4, 3)
    return [q_hat, q, c, rng.normal(size=(4, 3))]


# inputs: n[0] student queries, n[1] teacher queries, n[2] codes, n[3] second dropout pass
LOSS_CASES = {
    "code_or_query_modality": lambda g, n: pair_loss(n[0], n[3], 0.5),
    "inclusive_form": lambda g, n: pair_loss(n[0], n[3], 0.5, STANDARD_INCLUSIVE),
    "cross_modality": lambda g, n: pair_loss(n[2], n[1], 0.5),
    "dual_total": lambda g, n: ad.add(ad.add(pair_loss(n[2], n[3], 0.5), pair_loss(n[1], n[0], 0.5)),
                                      pair_loss(n[2], n[1], 0.5)),
    "cross_entropy": lambda g, n: loss_cross_encoder(
        ad.reshape(ad.sigmoid(ad.matmul(n[0], np.ones((3, 1)))), (4,)), np.array([1.0, 0.0, 1.0, 0.0])),
    "query_distill": lambda g, n: loss_distill_query(n[1], n[0]),
    "dual_distill": lambda g, n: loss_distill_dual(n[2], n[1], n[0]),
    "distill_total": lambda g, n: ad.add(loss_distill_query(n[1], n[0]), loss_distill_dual(n[2], n[1], n[0])),
    "distill_contrastive": lambda g, n: ad.add(
        ad.add(loss_distill_query(n[1], n[0]), loss_distill_dual(n[2], n[1], n[0])),
        ad.add(pair_loss(n[0], n[3], 0.5), pair_loss(n[2], n[0], 0.5))),
}


def encoder_case(model, seqs, seed=7):
    """Scalar function of all encoder parameters, for gradcheck."""
    names = list(model.parameters())

    def fn(g, nodes):
        m = model.with_parameters(dict(zip(names, [n.value for n in nodes])))
        g.bind(m, dict(zip(names, nodes)))
        return ad.sum_(ad.tanh(forward(g, m, seqs, seed=seed)))

    return fn, list(model.parameters().values())
