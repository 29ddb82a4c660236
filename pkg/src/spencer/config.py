"""Run configuration shared by the command line and the experiment scripts.

Defaults are the full-scale fine-tuning hyperparameters. ``DESK`` holds the overrides
used for from-scratch training of the small encoders on the synthetic corpus.
"""
from __future__ import annotations

import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .distill import DistillConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .losses import LOSS_FORMS, PAPER_EXCLUSIVE
from .training import TrainConfig


@dataclass
class RunConfig:
    # dual-encoder training
    batch_size: int = 16
    temperature: float = 0.05
    lr: float = 1e-5
    epochs: int = 8
    dropout: float = 0.2
    patience: int = 2
    seed: int = 0
    loss_form: str = PAPER_EXCLUSIVE
    weight_decay: float = 0.01
    max_len: int = 512
    block_lr_scale: float = 1.0
    # model shape
    vocab_size: int = 8192
    dim: int = 64
    layers: int = 12
    embed_scale: float = 0.03
    # cross encoder
    cross_layers: int = 12
    cross_lr: float = 1e-5
    cross_epochs: int = 8
    cross_block_lr_scale: float = 1.0
    cross_embed_scale: float = 0.03
    # distillation and assistant selection
    layer_drop: int = 3
    threshold: float = 0.01
    min_layers: int = 1
    distill_epochs: int = 8
    distill_lr: float = 1e-5
    distill_variant: str = "base"
    distill_weights: list = field(default_factory=lambda: [1.0, 1.0])
    contrastive_weight: float = 1.0
    # evaluation
    pool_size: int = 1000
    k_values: list = field(default_factory=lambda: [1, 3, 5, 10])
    repeats: int = 3
    recall_k: int = 5
    valid_pool_size: int = 100
    # synthetic data
    n: int = 2000
    data_vocab: int = 1000
    noise: float = 0.2
    code_len: list = field(default_factory=lambda: [5, 12])
    query_len: list = field(default_factory=lambda: [4, 8])
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    # paths and runtime
    data: str = "runs/data"
    checkpoints: str = "runs/checkpoints"
    index: str = "runs/index.spix"
    reports: str = "runs/reports"
    threads: int = 1

    def validate(self) -> "RunConfig":
        if self.recall_k < 1:
            raise ConfigError("recall_k must be at least 1")
        if self.pool_size < 2 or self.valid_pool_size < 2:
            raise ConfigError("pool sizes must be at least 2")
        if self.loss_form not in LOSS_FORMS:
            raise ConfigError(f"loss_form must be one of {LOSS_FORMS}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.layers < 1 or self.cross_layers < 1:
            raise ConfigError("layer counts must be at least 1")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split must be three fractions summing to 1")
        for name in ("data", "checkpoints", "index", "reports"):
            if not str(getattr(self, name)).strip():
                raise ConfigError(f"path {name!r} is empty")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, temperature=self.temperature, lr=self.lr,
                           epochs=self.epochs, dropout=self.dropout, patience=self.patience, seed=self.seed,
                           loss_form=self.loss_form, weight_decay=self.weight_decay,
                           pool_size=self.valid_pool_size, max_len=self.max_len,
                           block_lr_scale=self.block_lr_scale)

    def cross_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, lr=self.cross_lr, epochs=self.cross_epochs,
                           dropout=self.dropout, patience=self.patience, seed=self.seed,
                           weight_decay=self.weight_decay, max_len=self.max_len,
                           block_lr_scale=self.cross_block_lr_scale)

    def distill_config(self) -> DistillConfig:
        return DistillConfig(layer_drop=self.layer_drop, threshold=self.threshold, min_layers=self.min_layers,
                             epochs=self.distill_epochs, lr=self.distill_lr, seed=self.seed,
                             variant=self.distill_variant, batch_size=self.batch_size,
                             temperature=self.temperature, weights=tuple(self.distill_weights),
                             contrastive_weight=self.contrastive_weight, loss_form=self.loss_form,
                             patience=self.patience, pool_size=self.valid_pool_size,
                             weight_decay=self.weight_decay, dropout=self.dropout, max_len=self.max_len,
                             block_lr_scale=self.block_lr_scale)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(pool_size=self.pool_size, k_values=tuple(self.k_values), repeats=self.repeats,
                          seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


# From-scratch training of 64-d encoders on the synthetic corpus. The
# default learning rate assumes pre-trained weights; here the embedding
# table must be learned, and the residual blocks move 100x slower than it.
DESK = {
    "lr": 3e-3,
    "block_lr_scale": 0.01,
    "epochs": 5,
    "cross_lr": 3e-2,
    "cross_block_lr_scale": 0.03,
    "cross_embed_scale": 0.3,
    "cross_epochs": 6,
    "distill_lr": 3e-3,
    "distill_epochs": 5,
    "pool_size": 100,
}

PRESETS = {"full": {}, "desk": DESK}

_TYPES = typing.get_type_hints(RunConfig)


def _coerce(name, value):
    if name not in _TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    want = _TYPES[name]
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is list and isinstance(value, tuple):
        value = list(value)
    ok = isinstance(value, want) and not (want in (int, float) and isinstance(value, bool))
    if not ok:
        raise ConfigError(f"config key {name!r} expects {want.__name__}, got {type(value).__name__}")
    return value


def parse_config(path=None, overrides: dict | None = None, preset: str = "full") -> RunConfig:
    """Defaults, then the preset, then the JSON file at ``path``, then ``overrides``.

    ``None`` values in ``overrides`` mean "not given" and are skipped.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[preset])
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
        try:
            loaded = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: expected a JSON object")
        values.update(loaded)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()}).validate()
