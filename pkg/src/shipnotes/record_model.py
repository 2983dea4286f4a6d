"""Record-level LSTM over timestep vectors, with the three task heads.

All eight variants are compositions of a notes path (none, bag of
words, hierarchical) and a feature set (notes only, all features).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import compute as C
from .dropout import RecurrentDropout, keep_mask, vocabulary_mask
from .errors import ConfigError, DimensionError, LabelError
from .featurize import Batch, Featurizer
from .notes_encoder import NotesEncoderConfig, attend_batch, encode_batch, init_notes_params, notes_for_timesteps
from .recurrent import run_lstm

# (notes_mode, features_mode, pretrained) for each comparable model row
VARIANTS = {
    "no_notes": ("none", "all_features", False),
    "bow_notes_only": ("bow_unigram", "notes_only", False),
    "bow_unigram": ("bow_unigram", "all_features", False),
    "bow_bigram": ("bow_bigram", "all_features", False),
    "hier_notes_only": ("hierarchical", "notes_only", False),
    "hier": ("hierarchical", "all_features", False),
    "ship_notes_only": ("hierarchical", "notes_only", True),
    "ship": ("hierarchical", "all_features", True),
}


@dataclass(frozen=True)
class ModelVariant:
    notes_mode: str
    features_mode: str
    pretrained: bool = False

    def __post_init__(self):
        if (self.notes_mode, self.features_mode, self.pretrained) not in VARIANTS.values():
            raise ConfigError(f"no model row for notes_mode={self.notes_mode}, "
                              f"features_mode={self.features_mode}, pretrained={self.pretrained}")

    @classmethod
    def from_name(cls, name: str) -> "ModelVariant":
        try:
            return cls(*VARIANTS[name])
        except KeyError:
            raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None

    @property
    def name(self) -> str:
        key = (self.notes_mode, self.features_mode, self.pretrained)
        return next(n for n, v in VARIANTS.items() if v == key)

    @property
    def hierarchical(self) -> bool:
        return self.notes_mode == "hierarchical"

    @property
    def bow(self) -> bool:
        return self.notes_mode.startswith("bow")


TASK_OUTPUT = {"mortality": "sigmoid", "ccs": "softmax", "icd9": "sigmoid"}


@dataclass(frozen=True)
class ModelConfig:
    task: str
    variant: ModelVariant
    cat_dim: int = 8
    word_dim: int = 64
    notes_hidden: int = 40
    record_hidden: int = 64
    bidirectional: bool = True
    attention: str = "projected"
    carry_state: bool = True

    def __post_init__(self):
        if self.task not in TASK_OUTPUT:
            raise ConfigError(f"unknown task {self.task!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.name
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["variant"] = ModelVariant.from_name(d["variant"])
        return cls(**d)


@dataclass(frozen=True)
class Regularization:
    """Dropout settings for one forward pass in training mode."""

    record: RecurrentDropout = field(default_factory=RecurrentDropout)
    notes: RecurrentDropout = field(default_factory=RecurrentDropout)
    vocabulary: float = 0.0
    notes_vocabulary: float | None = None   # overrides ``vocabulary`` for note tables

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "Regularization":
        return cls(RecurrentDropout(**d.get("record", {})), RecurrentDropout(**d.get("notes", {})),
                   d.get("vocabulary", 0.0), d.get("notes_vocabulary"))


class RecordModel:
    """Parameters plus the forward computation for one task and variant."""

    def __init__(self, cfg: ModelConfig, featurizer: Featurizer, seed: int = 0, params=None):
        if featurizer.cfg.notes_mode != cfg.variant.notes_mode or featurizer.cfg.features_mode != cfg.variant.features_mode:
            raise ConfigError(f"featurizer ({featurizer.cfg.notes_mode}/{featurizer.cfg.features_mode}) "
                              f"does not match variant {cfg.variant.name}")
        self.cfg = cfg
        self.featurizer = featurizer
        self.notes_cfg = NotesEncoderConfig(len(featurizer.word_vocab), cfg.word_dim, cfg.notes_hidden,
                                            cfg.bidirectional, cfg.attention, None, cfg.carry_state)
        arrays = self.init_arrays(np.random.default_rng(seed)) if params is None else dict(params)
        self.params = {k: v if isinstance(v, C.Tensor) else C.Tensor(v, name=k) for k, v in arrays.items()}
        self._check_shapes()

    # ------------------------------------------------------------- params

    @property
    def note_dim(self) -> int:
        v = self.cfg.variant
        if v.hierarchical:
            return self.notes_cfg.out_dim
        return self.cfg.word_dim if v.bow else 0

    @property
    def layout(self):
        return self.featurizer.layout(self.cfg.cat_dim, self.note_dim)

    @property
    def input_width(self) -> int:
        lay = self.layout
        return sum(d for _, d in lay) + len(lay)

    @property
    def n_outputs(self) -> int:
        return 1 if self.cfg.task == "mortality" else self.featurizer.n_labels

    def init_arrays(self, rng) -> dict[str, np.ndarray]:
        cfg, fz = self.cfg, self.featurizer
        p: dict[str, np.ndarray] = {}
        for f in fz.cat_features:
            p[f"cat_emb/{f}"] = C.xavier_uniform(rng, len(fz.cat_vocabs[f]), cfg.cat_dim)
        if cfg.variant.hierarchical:
            p.update(init_notes_params(self.notes_cfg, rng))
        elif cfg.variant.bow:
            p["bow/word_emb"] = C.xavier_uniform(rng, len(fz.word_vocab), cfg.word_dim)
            if cfg.variant.notes_mode == "bow_bigram":
                p["bow/bigram_emb"] = C.xavier_uniform(rng, len(fz.bigram_vocab), cfg.word_dim)
        W, U, b = C.lstm_init(rng, self.input_width, cfg.record_hidden)
        p["record/lstm/W"], p["record/lstm/U"], p["record/lstm/b"] = W, U, b
        p["head/W"] = C.xavier_uniform(rng, cfg.record_hidden, self.n_outputs)
        p["head/b"] = np.zeros(self.n_outputs, dtype=C.get_dtype())
        return p

    def _check_shapes(self):
        expected = self.init_arrays(np.random.default_rng(0))
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError(f"parameter set mismatch for {self.cfg.variant.name}: missing {missing}, unexpected {extra}")
        for k, v in expected.items():
            if v.shape != self.params[k].shape:
                raise ConfigError(f"parameter {k} has shape {self.params[k].shape}, expected {v.shape}")

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def copy(self) -> "RecordModel":
        return RecordModel(self.cfg, self.featurizer, params={k: v.data.copy() for k, v in self.params.items()})

    # ------------------------------------------------------------ forward

    def _table(self, name, rate, training, rng):
        t = self.params[name]
        if training and rng is not None and rate > 0:
            return C.mul(t, vocabulary_mask(t.shape[0], rate, rng))
        return t

    def token_embeddings(self, batch: Batch, reg: Regularization | None = None, training=False, rng=None):
        """Embedding lookups for the note token stream(s) of ``batch``."""
        reg = reg or Regularization()
        rate = reg.vocabulary if reg.notes_vocabulary is None else reg.notes_vocabulary
        v = self.cfg.variant
        if v.hierarchical:
            return C.embedding_lookup(self._table("notes/word_emb", rate, training, rng), batch.token_ids), None
        if v.bow:
            uni = C.embedding_lookup(self._table("bow/word_emb", rate, training, rng), batch.uni_ids)
            bi = None
            if v.notes_mode == "bow_bigram":
                bi = C.embedding_lookup(self._table("bow/bigram_emb", rate, training, rng), batch.bi_ids)
            return uni, bi
        return None, None

    def notes_block(self, batch: Batch, emb, bigram_emb=None, reg=None, training=False, rng=None,
                    return_attention=False):
        v = self.cfg.variant
        reg = reg or Regularization()
        if v.hierarchical:
            H = encode_batch(emb, batch.token_mask, self.params, self.notes_cfg, dropout=reg.notes, rng=rng,
                             training=training, note_start=batch.note_start)
            vecs, alpha = attend_batch(H, batch.membership, self.params, self.notes_cfg)
            out = notes_for_timesteps(vecs, batch.note_to_bag)
            return (out, alpha) if return_attention else out
        out = C.matmul(C.constant(batch.uni_pool), emb)
        if bigram_emb is not None:
            out = C.add(out, C.matmul(C.constant(batch.bi_pool), bigram_emb))
        return (out, None) if return_attention else out

    def timestep_inputs(self, batch: Batch, notes=None, reg=None, training=False, rng=None):
        """(B, S, D) record-LSTM inputs: feature blocks in layout order, then presence masks."""
        reg = reg or Regularization()
        blocks, masks = [], []
        fz = self.featurizer
        for f in fz.cat_features:
            table = self._table(f"cat_emb/{f}", reg.vocabulary, training, rng)
            blocks.append(C.matmul(C.constant(batch.cat_weights[f]), table))
            masks.append(batch.cat_present[f][..., None])
        if fz.active_cont_features:
            blocks.append(C.constant(batch.cont_values))
            masks.append(batch.cont_mask)
        if fz.uses_notes:
            if notes is None:
                raise DimensionError("variant uses notes but no notes block was given")
            blocks.append(notes)
            masks.append(batch.bag_note_mask[..., None])
        blocks.append(C.constant(np.concatenate(masks, axis=-1)))
        X = C.concat(blocks, axis=-1)
        if X.shape[-1] != self.input_width:
            raise ConfigError(f"timestep width {X.shape[-1]} does not match parameters ({self.input_width})")
        return X

    def forward(self, batch: Batch, training: bool = False, rng=None, reg: Regularization | None = None,
                token_embeddings=None, bigram_embeddings=None):
        """Logits (B, n_outputs) from the record LSTM's final hidden state.

        ``token_embeddings`` replaces the embedding lookup of the notes stream
        (used for attribution).
        """
        reg = reg or Regularization()
        live = training and rng is not None
        notes = None
        if self.featurizer.uses_notes:
            if token_embeddings is None:
                token_embeddings, bigram_embeddings = self.token_embeddings(batch, reg, training, rng)
            notes = self.notes_block(batch, token_embeddings, bigram_embeddings, reg, training, rng)
        X = self.timestep_inputs(batch, notes, reg, training, rng)
        _, h = run_lstm(X, self.params["record/lstm/W"], self.params["record/lstm/U"],
                        self.params["record/lstm/b"], batch.bag_mask, dropout=reg.record, rng=rng, training=training)
        if live and reg.record.hidden > 0:
            h = C.mul(h, keep_mask(h.shape, reg.record.hidden, rng))
        return C.add(C.matmul(h, self.params["head/W"]), self.params["head/b"])

    # ----------------------------------------------------------- outputs

    def predict(self, batch: Batch) -> np.ndarray:
        return probabilities(self.forward(batch).data, self.cfg.task)

    def loss(self, logits, labels):
        return task_loss(logits, labels, self.cfg.task)


def probabilities(logits: np.ndarray, task: str) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    if task == "ccs":
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    p = 1.0 / (1.0 + np.exp(-logits))
    return p[..., 0] if task == "mortality" else p


def task_loss(logits, labels, task: str):
    """Mean over the batch of the task's negative log-likelihood."""
    labels = np.asarray(labels)
    if task == "ccs":
        C_ = logits.shape[-1]
        if labels.size and (labels.min() < 0 or labels.max() >= C_):
            raise LabelError(f"ccs label outside [0, {C_})")
        return C.mean(C.softmax_cross_entropy(logits, labels))
    if task == "mortality":
        return C.mean(C.sigmoid_cross_entropy(C.reshape(logits, (logits.shape[0],)), labels))
    if labels.shape != logits.shape:
        raise LabelError(f"icd9 labels shape {labels.shape} does not match outputs {logits.shape}")
    return C.mean(C.sum(C.sigmoid_cross_entropy(logits, labels), axis=-1))


def loss(prediction, label, task: str) -> float:
    """Negative log-likelihood of one label under a probability prediction.

    ``prediction`` is a probability (mortality), a class simplex (ccs) or a
    vector of label probabilities (icd9); evaluated in log space.
    """
    p = np.asarray(prediction, dtype=float)
    eps = np.finfo(float).tiny
    if task == "ccs":
        if not 0 <= int(label) < p.shape[-1]:
            raise LabelError(f"ccs label {label} outside [0, {p.shape[-1]})")
        return float(-np.log(max(p[int(label)], eps)))
    y = np.asarray(label, dtype=float)
    ll = y * np.log(np.maximum(p, eps)) + (1 - y) * np.log(np.maximum(1 - p, eps))
    return float(-np.sum(ll))


def predict_topk(probs, k: int) -> list[int]:
    """The ``k`` most probable classes; ties go to the lower class id."""
    probs = np.asarray(probs, dtype=float)
    k = min(k, probs.shape[-1])
    order = np.argsort(-probs, kind="stable")
    return [int(i) for i in order[:k]]
