"""Language-model pretraining of the notes encoder (next word, and previous word when bidirectional)."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import compute as C
from .dropout import RecurrentDropout, vocabulary_mask
from .errors import ConfigError, UsageError
from .notes_encoder import PRETRAINED_SUFFIXES, NotesEncoderConfig, TokenSequence, encode_batch, truncate_tokens
from .records import MORTALITY_HORIZON_HOURS, PatientRecord, Vocabulary, tokenize

log = logging.getLogger(__name__)

HORIZONS = ("24h", "discharge")


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 1000
    horizon: str = "discharge"
    batch_size: int = 16
    learning_rate: float = 3e-3
    grad_clip_norm: float = 1.0
    max_tokens: int = 2500
    vocabulary_dropout: float = 0.0
    dropout: RecurrentDropout = field(default_factory=RecurrentDropout)
    precision: str = "float32"

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("pretraining steps must be >= 0")
        if self.horizon not in HORIZONS:
            raise ConfigError(f"horizon must be one of {HORIZONS}, got {self.horizon!r}")
        if self.batch_size < 1 or self.max_tokens < 1:
            raise ConfigError("batch_size and max_tokens must be >= 1")


@dataclass
class LMSequence:
    """One pretraining stream (an admission's notes) tagged with its split."""

    ids: np.ndarray
    note_start: np.ndarray
    split: str = "train"


def build_corpus(records: Sequence[PatientRecord], vocab: Vocabulary, horizon: str = "discharge",
                 max_tokens: int = 2500, split: str = "train") -> list[LMSequence]:
    """Token streams per admission, notes up to the horizon, newest ``max_tokens`` kept."""
    if horizon not in HORIZONS:
        raise ConfigError(f"horizon must be one of {HORIZONS}, got {horizon!r}")
    out = []
    for rec in records:
        notes = sorted((e for e in rec.events if e.text is not None), key=lambda e: e.t)
        for adm in rec.admissions:
            end = adm.admit + MORTALITY_HORIZON_HOURS if horizon == "24h" else adm.discharge
            chosen = [e for e in notes if adm.admit <= e.t <= end]
            if not chosen:
                continue
            seq = truncate_tokens([(k, e.t, toks, vocab.ids(toks)) for k, e in enumerate(chosen)
                                   for toks in [tokenize(e.text)]], max_tokens)
            if len(seq) == 0:
                continue
            nid = np.asarray(seq.note_ids)
            starts = np.concatenate([[False], nid[1:] != nid[:-1]])
            out.append(LMSequence(np.asarray(seq.ids, dtype=np.int64), starts, split))
    return out


def init_lm_heads(cfg: NotesEncoderConfig, rng: np.random.Generator, prefix: str = "lm") -> dict[str, np.ndarray]:
    p = {f"{prefix}/fw/W": C.xavier_uniform(rng, cfg.hidden, cfg.vocab_size),
         f"{prefix}/fw/b": np.zeros(cfg.vocab_size, dtype=C.get_dtype())}
    if cfg.bidirectional:
        p[f"{prefix}/bw/W"] = C.xavier_uniform(rng, cfg.hidden, cfg.vocab_size)
        p[f"{prefix}/bw/b"] = np.zeros(cfg.vocab_size, dtype=C.get_dtype())
    return p


def _collate(seqs: Sequence[LMSequence]):
    L = max(len(s.ids) for s in seqs)
    B = len(seqs)
    ids = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=C.get_dtype())
    start = np.zeros((B, L), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s.ids)
        ids[b, :n], mask[b, :n], start[b, :n] = s.ids, 1, s.note_start
    return ids, mask, start


def lm_logits(ids, mask, params, cfg: NotesEncoderConfig, note_start=None, dropout=None, rng=None,
              training=False, vocabulary_dropout: float = 0.0, prefix: str = "notes", head: str = "lm"):
    """Per-position vocabulary logits ``(fw, bw)``; ``bw`` is None for a unidirectional encoder.

    The heads read each direction's states separately, so the forward logits at
    position i depend only on tokens <= i and the backward logits only on tokens >= i.
    """
    table = params[f"{prefix}/word_emb"]
    if training and rng is not None and vocabulary_dropout > 0:
        table = C.mul(table, vocabulary_mask(table.shape[0], vocabulary_dropout, rng))
    emb = C.embedding_lookup(table, ids)
    Hf, Hb = encode_batch(emb, mask, params, cfg, prefix, dropout, rng, training, note_start,
                          return_directions=True)
    fw = C.add(C.matmul(Hf, params[f"{head}/fw/W"]), params[f"{head}/fw/b"])
    bw = None
    if Hb is not None:
        bw = C.add(C.matmul(Hb, params[f"{head}/bw/W"]), params[f"{head}/bw/b"])
    return fw, bw


def _masked_mean_ce(logits, targets, weights):
    ce = C.softmax_cross_entropy(logits, targets)
    n = float(weights.sum())
    return C.scale(C.sum(C.mul(ce, weights)), 1.0 / n)


def lm_batch_loss(ids, mask, params, cfg: NotesEncoderConfig, note_start=None, **kw):
    """Mean next-word (and previous-word) cross-entropy, directions averaged."""
    if ids.shape[1] < 2 or not (mask[:, 1:] > 0).any():
        raise ConfigError("language-model loss needs a sequence of length >= 2")
    fw, bw = lm_logits(ids, mask, params, cfg, note_start, **kw)
    L = ids.shape[1]
    w = (mask[:, 1:] * mask[:, :-1]).astype(C.get_dtype())
    loss = _masked_mean_ce(C.getitem(fw, (slice(None), slice(0, L - 1))), ids[:, 1:], w)
    if bw is not None:
        back = _masked_mean_ce(C.getitem(bw, (slice(None), slice(1, L))), ids[:, :-1], w)
        loss = C.scale(C.add(loss, back), 0.5)
    return loss


def lm_loss(seq: TokenSequence, params, cfg: NotesEncoderConfig, counters: Counter | None = None):
    """LM loss of one token sequence in inference mode; returns None (and counts) if shorter than 2."""
    if len(seq) < 2:
        if counters is not None:
            counters["too_short"] += 1
        return None
    P = {k: v if isinstance(v, C.Tensor) else C.Tensor(v, name=k) for k, v in params.items()}
    ids = np.asarray(seq.ids, dtype=np.int64)[None]
    return lm_batch_loss(ids, np.ones(ids.shape, dtype=C.get_dtype()), P, cfg)


@dataclass
class PretrainResult:
    params: dict[str, np.ndarray]      # notes encoder only; LM heads discarded
    loss_curve: list[float]
    steps: int
    skipped: int = 0


def pretrain(corpus: Sequence[LMSequence], cfg: PretrainConfig, params: Mapping[str, np.ndarray],
             notes_cfg: NotesEncoderConfig, seed: int = 0, prefix: str = "notes") -> PretrainResult:
    """Train the notes encoder as a language model on training-split text.

    ``params`` holds the encoder arrays under ``prefix``; the returned arrays
    have the same names. With ``cfg.steps == 0`` the inputs come back untouched.
    """
    from .train import OptimizerState, TrainConfig, adam_update, clip_global_norm

    if cfg.steps == 0:
        return PretrainResult(dict(params), [], 0)
    usable = [s for s in corpus if len(s.ids) >= 2]
    skipped = len(corpus) - len(usable)
    if not usable:
        raise ConfigError("pretraining corpus is empty")
    rng = np.random.default_rng(seed)
    with C.precision(cfg.precision):
        heads = init_lm_heads(notes_cfg, np.random.default_rng([seed, 1]))
        P = {k: C.Tensor(np.array(v), name=k) for k, v in params.items()}
        P.update({k: C.Tensor(v, name=k) for k, v in heads.items()})
        opt_cfg = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                              grad_clip_norm=cfg.grad_clip_norm)
        state = OptimizerState()
        curve = []
        order = rng.permutation(len(usable))
        cursor = 0
        for _ in range(cfg.steps):
            if cursor + cfg.batch_size > len(order):
                order = rng.permutation(len(usable))
                cursor = 0
            chunk = [usable[i] for i in order[cursor:cursor + cfg.batch_size]]
            cursor += cfg.batch_size
            if any(s.split != "train" for s in chunk):
                raise UsageError("pretraining batch contains text outside the training split")
            ids, mask, start = _collate(chunk)
            loss = lm_batch_loss(ids, mask, P, notes_cfg, start, dropout=cfg.dropout, rng=rng, training=True,
                                 vocabulary_dropout=cfg.vocabulary_dropout, prefix=prefix)
            curve.append(float(loss.data))
            grads = clip_global_norm(C.backward(loss, P), cfg.grad_clip_norm)
            adam_update(P, grads, state, opt_cfg)
    out = {k: P[k].data for k in params}
    return PretrainResult(out, curve, cfg.steps, skipped)


def pretrained_names(params: Mapping, prefix: str = "notes") -> list[str]:
    return [f"{prefix}/{s}" for s in PRETRAINED_SUFFIXES if f"{prefix}/{s}" in params]


def transfer(pretrained: Mapping[str, np.ndarray], model, prefix: str = "notes"):
    """Copy the word embeddings and notes-LSTM weights into ``model`` (in place; returns it).

    Attention, record LSTM and heads keep the model's own initialisation and
    every copied weight stays trainable.
    """
    names = pretrained_names(model.params, prefix)
    for n in names:
        if n not in pretrained:
            raise ConfigError(f"pretrained checkpoint lacks {n}")
        src = np.asarray(pretrained[n])
        if src.shape != model.params[n].shape:
            raise ConfigError(f"pretrained {n} has shape {src.shape}, model expects {model.params[n].shape}")
    for n in names:
        model.params[n] = C.Tensor(np.array(pretrained[n]), name=n)
    return model
