"""Query-encoder distillation and self-adaptive teaching-assistant selection."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

from . import autodiff as ad
from .encoder import MAX_LEN, EncoderModel, compress, encode_batch, forward, tokenize
from .errors import ConfigError, DataError, ParameterError
from .losses import PAPER_EXCLUSIVE, _weighted_distill, pair_loss
from .optim import OptimizerState, optimizer_step
from .seeding import derive_seed
from .training import TrainResult, block_lr_scales, _early_stop_loop, _with_dropout, validate_dual

BASE, CONTRASTIVE = "base", "contrastive"


@dataclass
class DistillConfig:
    layer_drop: int = 3
    threshold: float = 0.01
    min_layers: int = 1
    epochs: int = 8
    lr: float = 1e-5
    seed: int = 0
    variant: str = BASE
    metric: str = "MRR"
    batch_size: int = 16
    temperature: float = 0.05
    weights: tuple = (1.0, 1.0)
    contrastive_weight: float = 1.0
    loss_form: str = PAPER_EXCLUSIVE
    patience: int = 2
    pool_size: int = 100
    weight_decay: float = 0.01
    dropout: float = 0.2
    max_len: int = MAX_LEN
    block_lr_scale: float = 1.0

    def __post_init__(self):
        if self.layer_drop < 1:
            raise ParameterError("layer drop step must be at least 1")
        if self.threshold < 0:
            raise ParameterError("performance-drop threshold must be non-negative")
        if self.min_layers < 1:
            raise ParameterError("minimum layer count must be at least 1")
        if self.variant not in (BASE, CONTRASTIVE):
            raise ParameterError(f"unknown distillation variant {self.variant!r}")
        if self.metric != "MRR":
            raise ParameterError("only MRR is supported as the validation metric")
        if self.batch_size < 2:
            raise ParameterError("batch size must be at least 2")
        if self.lr < 0 or self.block_lr_scale < 0:
            raise ParameterError("learning rate and block learning-rate scale must be non-negative")


def distill(source: EncoderModel, code_encoder: EncoderModel, student_init: EncoderModel, data,
            cfg: DistillConfig, valid=None) -> TrainResult:
    """Train ``student_init`` to reproduce ``source`` query vectors and their code similarities.

    ``source`` and ``code_encoder`` stay frozen; their outputs are computed
    once in inference mode and reused every epoch.
    """
    if not data:
        raise DataError("no distillation data")
    if student_init.num_layers >= source.num_layers:
        raise ConfigError(f"student ({student_init.num_layers} layers) must be smaller than "
                          f"its source ({source.num_layers} layers)")
    pos = {r.id: i for i, r in enumerate(data)}
    q_seqs = [tokenize(r.query, source.vocab, cfg.max_len) for r in data]
    teacher_q = encode_batch(source, q_seqs)
    codes = encode_batch(code_encoder, [tokenize(r.code, code_encoder.vocab, cfg.max_len) for r in data])
    state = [OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)]

    def step(models, batch, epoch, b):
        (st,) = models
        rows = [pos[r.id] for r in batch]
        seqs = [q_seqs[i] for i in rows]
        g = ad.Graph(trainable=[st])
        c, q = g.constant(codes[rows]), g.constant(teacher_q[rows])
        s1, s2 = derive_seed(cfg.seed, epoch, b, 0), derive_seed(cfg.seed, epoch, b, 1)
        q_hat = forward(g, st, seqs, s1)
        loss = _weighted_distill(c, q, q_hat, cfg.weights)
        if cfg.variant == CONTRASTIVE and cfg.contrastive_weight:
            q_hat2 = forward(g, st, seqs, s2)
            extra = ad.add(pair_loss(q_hat, q_hat2, cfg.temperature, cfg.loss_form),
                           pair_loss(c, q_hat, cfg.temperature, cfg.loss_form))
            loss = ad.add(loss, ad.scale(extra, cfg.contrastive_weight))
        grads = g.grads_for(st, g.backward(loss))
        params = st.parameters()
        params, state[0] = optimizer_step(params, grads, state[0], block_lr_scales(params, cfg.block_lr_scale))
        return (st.with_parameters(params),), float(loss.value)

    def metric(models):
        return validate_dual(models[0], code_encoder, valid, cfg.pool_size, cfg.seed, cfg.max_len)

    student = _with_dropout(student_init, cfg.dropout)
    return _early_stop_loop(cfg, data, valid, (student,), step, metric, "distill")


# --------------------------------------------------- assistant selection


@dataclass
class SelectionTrace:
    initial: dict = field(default_factory=dict)
    iterations: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    interpretation_notes: list = field(default_factory=list)

    @property
    def visited_sizes(self) -> list[int]:
        return [self.initial["student_layers"]] + [it["candidate_layers"] for it in self.iterations]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


NOTES = [
    "else-branch: A1 <- A2 and A2 <- Temp2 (the candidate distilled from the assistant); "
    "assigning Temp1 there would discard Temp2 unconditionally",
    "selection runs on the query encoder; the code encoder is a frozen reference",
    "Score_T stays the original teacher's score for the whole run",
    "candidates are initialised with the bottom layers of the current assistant A2",
]


def max_iterations(teacher_layers: int, min_layers: int, step: int) -> int:
    return math.ceil((teacher_layers - min_layers) / step)


def select_teaching_assistant(teacher: EncoderModel, code_encoder: EncoderModel, data, cfg: DistillConfig,
                              valid=None, validate=None, distill_fn=None):
    """Shrink the query encoder step by step, choosing the better source model each round.

    ``validate(model) -> score`` defaults to pooled validation MRR against
    ``code_encoder``; ``distill_fn(source, init, tag) -> model`` defaults to
    :func:`distill`. Returns ``(student, trace)``.
    """
    P, T, floor = cfg.layer_drop, cfg.threshold, cfg.min_layers
    if teacher.num_layers <= floor or teacher.num_layers - P < floor:
        raise ConfigError(f"nothing to do: a {teacher.num_layers}-layer teacher cannot shrink by {P} "
                          f"and stay at or above {floor} layers")
    if validate is None:
        if not valid:
            raise DataError("validation records are required for the default validator")

        def validate(m):
            return validate_dual(m, code_encoder, valid, cfg.pool_size, cfg.seed, cfg.max_len)

    if distill_fn is None:
        def distill_fn(source, init, tag):
            run_cfg = replace(cfg, seed=derive_seed(cfg.seed, *tag))
            return distill(source, code_encoder, init, data, run_cfg, valid).models[0]

    a1 = teacher
    a2 = distill_fn(a1, compress(teacher, P), (0, 0))
    student = a2
    score_t, score_s = validate(teacher), validate(a2)
    student_score = score_s
    trace = SelectionTrace(interpretation_notes=list(NOTES))
    trace.initial = {"teacher_layers": teacher.num_layers, "student_layers": a2.num_layers,
                     "score_t": score_t, "score_s": score_s}
    it = 0
    while score_t - score_s < T and a2.num_layers - P >= floor:
        it += 1
        init = compress(a2, P)
        temp1 = distill_fn(a1, init, (it, 1))
        temp2 = distill_fn(a2, init, (it, 2))
        s1, s2 = validate(temp1), validate(temp2)
        rec = {"iteration": it, "a1_layers": a1.num_layers, "a2_layers": a2.num_layers,
               "candidate_layers": init.num_layers, "score_a1": s1, "score_a2": s2, "score_t": score_t}
        if s1 > s2:
            a2, score_s = temp1, s1
            rec["branch"] = "from-a1"
        else:
            a1, a2, score_s = a2, temp2, s2
            rec["branch"] = "from-a2"
        rec["score_s"] = score_s
        if score_t - score_s < T:
            student, student_score = a2, score_s
        trace.iterations.append(rec)
    trace.final = {"layers": student.num_layers, "score": student_score,
                   "threshold_violated": bool(score_t - student_score >= T)}
    return student, trace
