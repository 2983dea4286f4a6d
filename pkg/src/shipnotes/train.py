"""Supervised optimisation: Adam, global-norm clipping, early stopping on validation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import compute as C
from .dropout import RecurrentDropout, apply_dropout  # noqa: F401  (re-exported)
from .errors import ConfigError, NumericError, UsageError
from .evaluate import SELECTION_METRIC, task_metrics
from .featurize import EncodedExample
from .record_model import RecordModel, Regularization, probabilities

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 16
    grad_clip_norm: float = 1.0
    max_steps: int = 2000
    seed: int = 0
    eval_every: int = 50
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: str = "float32"
    regularization: Regularization = field(default_factory=Regularization)
    eval_batch_size: int = 64
    desk_scale: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise ConfigError("batch_size >= 1, max_steps >= 0 and eval_every >= 1 required")
        if not self.grad_clip_norm > 0:
            raise ConfigError("grad_clip_norm must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")

    def to_json(self) -> dict:
        d = asdict(self)
        d["regularization"] = self.regularization.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "regularization" in d:
            d["regularization"] = Regularization.from_json(d["regularization"])
        return cls(**d)


# Published hyperparameters per task: values for the bag-of-words family
# (shared by every non-hierarchical model) and the hierarchical family.
REFERENCE_HPARAMS = {
    "mortality": {
        "bow": {"learning_rate": 0.00015, "batch_size": 128, "grad_clip_norm": 37.5, "vocabulary_dropout": 0.001},
        "ship": {"learning_rate": 0.00011, "batch_size": 16, "grad_clip_norm": 37.5, "vocabulary_dropout": 0.229,
                 "pretrain_steps": 30000},
        "bag_hours": {"notes_only": 1, "all_features": 1},
        "max_timesteps": {"notes_only": 1000, "all_features": 1000},
        "max_tokens": 1000,
        "record": {"hidden": 379, "input": 0.466, "hidden_dropout": 0.045, "variational_input": 0.034,
                   "variational_hidden": 0.090, "zoneout": 0.268},
        "notes": {"bidirectional": True, "hidden": 350, "input": 0.052, "hidden_dropout": 0.175,
                  "variational_input": 0.176, "variational_hidden": 0.061, "zoneout": 0.312},
    },
    "ccs": {
        "bow": {"learning_rate": 0.00369, "batch_size": 128, "grad_clip_norm": 0.125, "vocabulary_dropout": 0.273},
        "ship": {"learning_rate": 0.00067, "batch_size": 16, "grad_clip_norm": 0.125, "vocabulary_dropout": 0.396,
                 "pretrain_steps": 30000},
        "bag_hours": {"notes_only": 1, "all_features": 8},
        "max_timesteps": {"notes_only": 1000, "all_features": 200},
        "max_tokens": 2500,
        "record": {"hidden": 518, "input": 0.246, "hidden_dropout": 0.136, "variational_input": 0.071,
                   "variational_hidden": 0.122, "zoneout": 0.437},
        "notes": {"bidirectional": True, "hidden": 325, "input": 0.019, "hidden_dropout": 0.391,
                  "variational_input": 0.291, "variational_hidden": 0.085, "zoneout": 0.336},
    },
    "icd9": {
        "bow": {"learning_rate": 0.00369, "batch_size": 128, "grad_clip_norm": 0.125, "vocabulary_dropout": 0.273},
        "ship": {"learning_rate": 0.00048, "batch_size": 16, "grad_clip_norm": 0.125, "vocabulary_dropout": 0.273,
                 "pretrain_steps": 40000},
        "bag_hours": {"notes_only": 1, "all_features": 8},
        "max_timesteps": {"notes_only": 1000, "all_features": 200},
        "max_tokens": 2500,
        "record": {"hidden": 518, "input": 0.246, "hidden_dropout": 0.136, "variational_input": 0.071,
                   "variational_hidden": 0.122, "zoneout": 0.437},
        "notes": {"bidirectional": False, "hidden": 780, "input": 0.340, "hidden_dropout": 0.238,
                  "variational_input": 0.156, "variational_hidden": 0.103, "zoneout": 0.387},
    },
}
BIGRAM_NOTES_VOCAB_DROPOUT = 0.75
ADAM_DEFAULTS = {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
DESK_HIDDEN_DIVISOR = 8


def _recurrent(d: Mapping) -> RecurrentDropout:
    return RecurrentDropout(d["input"], d["hidden_dropout"], d["variational_input"], d["variational_hidden"],
                            d["zoneout"])


def reference_hparams(task: str, variant_name: str, full_scale: bool = False) -> dict:
    """Hyperparameters for a task/variant pair.

    With ``full_scale=True`` the published values are returned verbatim; otherwise
    hidden sizes are divided by 8, batch size is 16 and pretraining steps are
    capped for CPU runs.
    """
    if task not in REFERENCE_HPARAMS:
        raise ConfigError(f"unknown task {task!r}")
    from .record_model import ModelVariant
    variant = ModelVariant.from_name(variant_name)
    t = REFERENCE_HPARAMS[task]
    family = "ship" if variant.hierarchical else "bow"
    fam = t[family]
    vocab = fam["vocabulary_dropout"]
    notes_vocab = BIGRAM_NOTES_VOCAB_DROPOUT if variant.notes_mode == "bow_bigram" else None
    reg = Regularization(_recurrent(t["record"]), _recurrent(t["notes"]) if variant.hierarchical else RecurrentDropout(),
                         vocab, notes_vocab)
    div = 1 if full_scale else DESK_HIDDEN_DIVISOR
    out = {
        "train": TrainConfig(learning_rate=fam["learning_rate"], batch_size=fam["batch_size"] if full_scale else 16,
                             grad_clip_norm=fam["grad_clip_norm"], max_steps=100000 if full_scale else 5000,
                             regularization=reg, desk_scale=not full_scale, **ADAM_DEFAULTS),
        "bag_hours": t["bag_hours"][variant.features_mode],
        "max_timesteps": t["max_timesteps"][variant.features_mode],
        "max_tokens": t["max_tokens"],
        "record_hidden": max(1, round(t["record"]["hidden"] / div)),
        "notes_hidden": max(1, round(t["notes"]["hidden"] / div)),
        "bidirectional": t["notes"]["bidirectional"],
        "pretrain_steps": (fam.get("pretrain_steps", 0) if full_scale else min(fam.get("pretrain_steps", 0), 5000))
        if variant.pretrained else 0,
    }
    return out


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_update(params: Mapping[str, C.Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState,
                cfg: TrainConfig) -> Mapping[str, C.Tensor]:
    """One bias-corrected Adam step, in place. Aborts before touching anything on a non-finite gradient."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype, copy=False)
    return params


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_global_norm(grads: Mapping[str, np.ndarray], c: float) -> dict[str, np.ndarray]:
    if not c > 0:
        raise ConfigError("clip norm must be > 0")
    norm = global_norm(grads)
    if norm <= c:
        return dict(grads)
    s = c / norm
    return {k: g * s for k, g in grads.items()}


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    model: RecordModel
    trace: list[tuple[int, str, str, float]]
    best_step: int
    best_metrics: dict[str, float]
    steps_run: int
    seconds: float

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "split", "metric", "value"])
        for row in trace:
            w.writerow(row)


def selection_key(task: str, metrics: Mapping[str, float]) -> tuple:
    primary = metrics.get(SELECTION_METRIC[task], float("nan"))
    primary = -math.inf if math.isnan(primary) else primary
    if task == "ccs":
        return (primary, metrics.get("top1_recall", 0.0))
    return (primary,)


def predict_examples(model: RecordModel, items: Sequence[EncodedExample], batch_size: int = 64) -> np.ndarray:
    outs = []
    for i in range(0, len(items), batch_size):
        batch = model.featurizer.collate(items[i:i + batch_size])
        outs.append(model.forward(batch).data)
    if not outs:
        return np.zeros((0, model.n_outputs))
    return probabilities(np.concatenate(outs), model.cfg.task)


def labels_of(model: RecordModel, items: Sequence[EncodedExample]) -> np.ndarray:
    return model.featurizer.collate(items).labels if items else np.zeros(0)


def evaluate_model(model: RecordModel, items: Sequence[EncodedExample], batch_size: int = 64) -> dict[str, float]:
    probs = predict_examples(model, items, batch_size)
    return task_metrics(model.cfg.task, probs, labels_of(model, items))


def _guard_split(items: Sequence[EncodedExample], expected: str) -> None:
    bad = [it.example_id for it in items if getattr(it, "split", None) != expected]
    if bad:
        raise UsageError(f"{len(bad)} examples are not from the {expected} split (e.g. {bad[0]})")


def train_loop(model: RecordModel, train: Sequence[EncodedExample], valid: Sequence[EncodedExample],
               cfg: TrainConfig, progress: bool = False) -> TrainResult:
    """Minibatch Adam with periodic validation; returns the best-validation model."""
    _guard_split(train, "train")
    _guard_split(valid, "validation")
    if not train:
        raise ConfigError("no training examples")
    t0 = time.time()
    task = model.cfg.task
    with C.precision(cfg.precision):
        dtype = C.get_dtype()
        for p in model.params.values():
            p.data = p.data.astype(dtype)
        rng = np.random.default_rng(cfg.seed)
        state = OptimizerState()
        trace: list[tuple[int, str, str, float]] = []
        best = model.copy()
        best_key, best_step, best_metrics = None, 0, {}
        stale = 0
        order = rng.permutation(len(train))
        cursor = 0
        step = 0
        train_items = list(train)
        for step in range(1, cfg.max_steps + 1):
            if cursor + cfg.batch_size > len(order):
                order = rng.permutation(len(train))
                cursor = 0
            idx = order[cursor:cursor + cfg.batch_size]
            cursor += cfg.batch_size
            batch = model.featurizer.collate([train_items[i] for i in idx])
            logits = model.forward(batch, training=True, rng=rng, reg=cfg.regularization)
            loss = model.loss(logits, batch.labels)
            value = float(loss.data)
            if not math.isfinite(value):
                model.params = best.params
                raise NumericError(f"training loss diverged at step {step}; restored best checkpoint (step {best_step})")
            grads = clip_global_norm(C.backward(loss, model.params), cfg.grad_clip_norm)
            adam_update(model.params, grads, state, cfg)
            trace.append((step, "train", "loss", value))
            if step % cfg.eval_every == 0 or step == cfg.max_steps:
                metrics = evaluate_model(model, valid, cfg.eval_batch_size) if valid else {}
                for k, v in metrics.items():
                    trace.append((step, "validation", k, float(v)))
                key = selection_key(task, metrics) if valid else (step,)
                if best_key is None or key > best_key:
                    best_key, best_step, best_metrics = key, step, metrics
                    best = model.copy()
                    stale = 0
                else:
                    stale += 1
                if progress:
                    log.info("step %d loss %.4f val %s", step, value, metrics)
                if stale >= cfg.patience:
                    break
        if best_key is None:
            best = model.copy()
        return TrainResult(best, trace, best_step, best_metrics, step, time.time() - t0)


def save_config(path, **parts) -> None:
    Path(path).write_text(json.dumps(parts, indent=2, sort_keys=True, default=lambda o: o.to_json()))
