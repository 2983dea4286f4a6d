"""Hierarchical notes path: token truncation, word-level LSTM and per-note attention."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import compute as C
from .dropout import RecurrentDropout
from .errors import ConfigError, VocabularyError
from .recurrent import run_lstm

DEFAULT_MAX_TOKENS = {"mortality": 1000, "ccs": 2500, "icd9": 2500}


@dataclass
class TokenSequence:
    """Chronological token stream across a record's notes, newest ``N`` kept."""

    ids: list[int]
    note_ids: list[int]
    timestamps: list[float]
    tokens: list[str] = field(default_factory=list)
    positions: list[int] = field(default_factory=list)
    max_tokens: int | None = None

    def __len__(self):
        return len(self.ids)


def truncate_tokens(notes: Sequence[tuple], max_tokens: int) -> TokenSequence:
    """Keep the most recent ``max_tokens`` tokens across all notes.

    ``notes`` is a chronological sequence of ``(note_id, timestamp, tokens, ids)``;
    leading (oldest) tokens are discarded.
    """
    if max_tokens < 1:
        raise ConfigError(f"max_tokens must be >= 1, got {max_tokens}")
    ids, nids, ts, toks, pos = [], [], [], [], []
    for note_id, t, tokens, token_ids in notes:
        for p, (tok, i) in enumerate(zip(tokens, token_ids)):
            ids.append(int(i))
            nids.append(note_id)
            ts.append(t)
            toks.append(tok)
            pos.append(p)
    cut = max(0, len(ids) - max_tokens)
    return TokenSequence(ids[cut:], nids[cut:], ts[cut:], toks[cut:], pos[cut:], max_tokens)


@dataclass(frozen=True)
class NotesEncoderConfig:
    vocab_size: int
    word_dim: int = 64
    hidden: int = 40
    bidirectional: bool = True
    attention: str = "projected"     # or "dot": scores are u . h_i directly
    attention_dim: int | None = None
    carry_state: bool = True         # False resets the LSTM state at each note boundary

    def __post_init__(self):
        if self.attention not in ("projected", "dot"):
            raise ConfigError(f"attention must be 'projected' or 'dot', got {self.attention!r}")

    @property
    def out_dim(self) -> int:
        return self.hidden * (2 if self.bidirectional else 1)


def init_notes_params(cfg: NotesEncoderConfig, rng: np.random.Generator, prefix: str = "notes") -> dict[str, np.ndarray]:
    p = {f"{prefix}/word_emb": C.xavier_uniform(rng, cfg.vocab_size, cfg.word_dim)}
    p[f"{prefix}/word_emb"][0] = 0.0
    dirs = ("fw", "bw") if cfg.bidirectional else ("fw",)
    for d in dirs:
        W, U, b = C.lstm_init(rng, cfg.word_dim, cfg.hidden)
        p[f"{prefix}/lstm_{d}/W"], p[f"{prefix}/lstm_{d}/U"], p[f"{prefix}/lstm_{d}/b"] = W, U, b
    d_out = cfg.out_dim
    if cfg.attention == "projected":
        d_a = cfg.attention_dim or d_out
        p[f"{prefix}/attn/W"] = C.xavier_uniform(rng, d_out, d_a)
        p[f"{prefix}/attn/b"] = np.zeros(d_a, dtype=C.get_dtype())
        p[f"{prefix}/attn/u"] = C.xavier_uniform(rng, d_a, 1)
    else:
        p[f"{prefix}/attn/u"] = C.xavier_uniform(rng, d_out, 1)
    return p


PRETRAINED_SUFFIXES = ("word_emb", "lstm_fw/W", "lstm_fw/U", "lstm_fw/b", "lstm_bw/W", "lstm_bw/U", "lstm_bw/b")


def encode_batch(emb, mask, params, cfg: NotesEncoderConfig, prefix: str = "notes",
                 dropout: RecurrentDropout | None = None, rng=None, training: bool = False,
                 note_start=None, return_directions: bool = False):
    """Per-token hidden states (B, L, out_dim) from token embeddings (B, L, word_dim)."""
    reset = None if cfg.carry_state or note_start is None else note_start
    Hf, _ = run_lstm(emb, params[f"{prefix}/lstm_fw/W"], params[f"{prefix}/lstm_fw/U"],
                     params[f"{prefix}/lstm_fw/b"], mask, False, dropout, rng, training, reset)
    if not cfg.bidirectional:
        return (Hf, None) if return_directions else Hf
    bw_reset = None
    if reset is not None:
        # in reverse the state restarts at each note's last token
        nxt = np.zeros_like(reset)
        nxt[:, :-1] = reset[:, 1:]
        bw_reset = nxt
    Hb, _ = run_lstm(emb, params[f"{prefix}/lstm_bw/W"], params[f"{prefix}/lstm_bw/U"],
                     params[f"{prefix}/lstm_bw/b"], mask, True, dropout, rng, training, bw_reset)
    if return_directions:
        return Hf, Hb
    return C.concat([Hf, Hb], axis=-1)


def attention_scores(H, params, cfg: NotesEncoderConfig, prefix: str = "notes"):
    """Unnormalised scores (B, L): ``u . tanh(W h + b)`` or ``u . h``."""
    if cfg.attention == "projected":
        proj = C.tanh(C.add(C.matmul(H, params[f"{prefix}/attn/W"]), params[f"{prefix}/attn/b"]))
    else:
        proj = H
    s = C.matmul(proj, params[f"{prefix}/attn/u"])      # (B, L, 1)
    return C.reshape(s, s.shape[:-1])


def attend_batch(H, membership, params, cfg: NotesEncoderConfig, prefix: str = "notes"):
    """Note vectors (B, K, d) and weights (B, K, L) from token states and note membership (B, K, L)."""
    s = attention_scores(H, params, cfg, prefix)
    B, L = s.shape
    alpha = C.masked_softmax(C.reshape(s, (B, 1, L)), membership, axis=-1)
    return C.matmul(alpha, H), alpha


def notes_for_timesteps(note_vectors, note_to_bag):
    """Average note vectors into bags: ``note_to_bag`` (B, S, K) holds 1/count weights."""
    return C.matmul(C.constant(note_to_bag), note_vectors)


# single-example conveniences -------------------------------------------------


def _as_tensors(params):
    return {k: v if isinstance(v, C.Tensor) else C.Tensor(v, name=k) for k, v in params.items()}


def encode_tokens(seq: TokenSequence, params, cfg: NotesEncoderConfig, prefix: str = "notes") -> np.ndarray:
    """Hidden states (L, out_dim) for one token sequence, inference mode."""
    P = _as_tensors(params)
    table = P[f"{prefix}/word_emb"]
    ids = np.asarray(seq.ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise VocabularyError(f"token id outside vocabulary of size {table.shape[0]}")
    emb = C.embedding_lookup(table, ids[None, :])
    starts = None
    if not cfg.carry_state:
        nid = np.asarray(seq.note_ids)
        starts = np.concatenate([[False], nid[1:] != nid[:-1]])[None, :]
    return encode_batch(emb, None, P, cfg, prefix, note_start=starts).data[0]


def attend(H: np.ndarray, params, cfg: NotesEncoderConfig, prefix: str = "notes") -> tuple[np.ndarray, np.ndarray]:
    """Attention over one note's states (L, d): returns ``(v, alpha)``; empty note gives zeros."""
    H = np.asarray(H, dtype=C.get_dtype())
    if H.shape[0] == 0:
        return np.zeros(cfg.out_dim), np.zeros(0)
    P = _as_tensors(params)
    membership = np.ones((1, 1, H.shape[0]), dtype=bool)
    v, alpha = attend_batch(C.constant(H[None]), membership, P, cfg, prefix)
    return v.data[0, 0], alpha.data[0, 0]


def export_attention(alpha_by_note: dict, tokens_by_note: dict, path) -> None:
    """Write per-note attention weights as JSON for the attribution renderer."""
    out = {str(k): {"tokens": list(tokens_by_note[k]), "alpha": [float(a) for a in alpha_by_note[k]]}
           for k in alpha_by_note}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1)
