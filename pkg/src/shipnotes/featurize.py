"""Turn task examples into padded numpy batches for the record model.

A :class:`Featurizer` is fitted on the training split only (vocabularies,
standardisation statistics, label space) and then encodes any example.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import compute as C
from .bagging import BaggingConfig, TimestepBag, bag_timeline, note_ngrams
from .errors import ConfigError, LabelError
from .notes_encoder import truncate_tokens
from .records import (PatientRecord, StandardizationStats, TaskExample, Vocabulary, admission_events,
                      fit_standardization, tokenize)

NOTES_MODES = ("none", "bow_unigram", "bow_bigram", "hierarchical")
FEATURES_MODES = ("notes_only", "all_features")


@dataclass(frozen=True)
class FeatureConfig:
    notes_mode: str = "hierarchical"
    features_mode: str = "all_features"
    bag_hours: float = 1.0
    max_timesteps: int = 1000
    max_tokens: int = 2500
    min_count: int = 5
    bigram_min_count: int = 5
    keep_empty_bags: bool = False

    def __post_init__(self):
        if self.notes_mode not in NOTES_MODES:
            raise ConfigError(f"notes_mode must be one of {NOTES_MODES}, got {self.notes_mode!r}")
        if self.features_mode not in FEATURES_MODES:
            raise ConfigError(f"features_mode must be one of {FEATURES_MODES}, got {self.features_mode!r}")
        if self.features_mode == "notes_only" and self.notes_mode == "none":
            raise ConfigError("notes_only requires a notes mode other than 'none'")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")

    @property
    def bagging(self) -> BaggingConfig:
        return BaggingConfig(self.bag_hours, self.max_timesteps, keep_empty_bags=self.keep_empty_bags)


@dataclass
class EncodedExample:
    example_id: str
    n_bags: int
    label: object
    cat_counts: dict[str, np.ndarray] = field(default_factory=dict)   # feature -> (S, V_f)
    cont_values: np.ndarray | None = None                             # (S, Fc)
    cont_mask: np.ndarray | None = None
    # hierarchical stream
    token_ids: np.ndarray | None = None       # (L,)
    token_note: np.ndarray | None = None      # (L,) local note index
    note_bag: np.ndarray | None = None        # (K,) bag of each note
    note_ids: list[int] = field(default_factory=list)
    # bag-of-words streams, canonical order (bag, id)
    uni_ids: np.ndarray | None = None
    uni_bag: np.ndarray | None = None
    uni_src: np.ndarray | None = None         # index into token_meta
    bi_ids: np.ndarray | None = None
    bi_bag: np.ndarray | None = None
    bi_src: np.ndarray | None = None          # (n, 2) indices into token_meta
    bag_has_note: np.ndarray | None = None    # (S,)
    token_meta: list[tuple] = field(default_factory=list)   # (token, note_id, position, timestamp)
    split: str | None = None                  # cohort split the example came from


@dataclass
class Batch:
    example_ids: list[str]
    bag_mask: np.ndarray
    cat_weights: dict[str, np.ndarray]
    cat_present: dict[str, np.ndarray]
    cont_values: np.ndarray
    cont_mask: np.ndarray
    bag_note_mask: np.ndarray
    labels: np.ndarray
    token_ids: np.ndarray | None = None
    token_mask: np.ndarray | None = None
    note_start: np.ndarray | None = None
    membership: np.ndarray | None = None
    note_mask: np.ndarray | None = None
    note_to_bag: np.ndarray | None = None
    uni_ids: np.ndarray | None = None
    uni_pool: np.ndarray | None = None
    bi_ids: np.ndarray | None = None
    bi_pool: np.ndarray | None = None

    def __len__(self):
        return len(self.example_ids)


class Featurizer:
    def __init__(self, cfg: FeatureConfig, task: str, cat_vocabs: dict[str, Vocabulary],
                 cont_features: list[str], stats: StandardizationStats, word_vocab: Vocabulary,
                 bigram_vocab: Vocabulary | None, n_labels: int):
        self.cfg = cfg
        self.task = task
        self.cat_vocabs = cat_vocabs
        self.cont_features = cont_features
        self.stats = stats
        self.word_vocab = word_vocab
        self.bigram_vocab = bigram_vocab
        self.n_labels = n_labels
        self._cont_index = {f: i for i, f in enumerate(cont_features)}

    # ------------------------------------------------------------------ fit

    @classmethod
    def fit(cls, train: Sequence[PatientRecord], task: str, cfg: FeatureConfig,
            n_labels: int | None = None) -> "Featurizer":
        cat_counts: dict[str, Counter] = {}
        cont: set[str] = set()
        words: Counter = Counter()
        bigrams: Counter = Counter()
        labels = []
        for rec in train:
            events = list(rec.events) + [e for a in rec.admissions for e in admission_events(a)]
            for e in events:
                if e.text is not None:
                    toks = tokenize(e.text)
                    words.update(toks)
                    if cfg.notes_mode == "bow_bigram":
                        bigrams.update(note_ngrams(toks, 2)[len(toks):])
                elif e.value is not None:
                    cont.add(e.feature)
                else:
                    cat_counts.setdefault(e.feature, Counter())[e.token] += 1
            for a in rec.admissions:
                lab = a.labels
                if task == "ccs" and lab.ccs is not None:
                    labels.append(lab.ccs)
                elif task == "icd9" and lab.icd9:
                    labels.extend(lab.icd9)
        if n_labels is None:
            n_labels = 1 if task == "mortality" else (max(labels) + 1 if labels else 1)
        cat_vocabs = {f: Vocabulary.fit(c, 1) for f, c in sorted(cat_counts.items())}
        word_vocab = Vocabulary.fit(words, cfg.min_count)
        bigram_vocab = Vocabulary.fit(bigrams, cfg.bigram_min_count) if cfg.notes_mode == "bow_bigram" else None
        return cls(cfg, task, cat_vocabs, sorted(cont), fit_standardization(train), word_vocab,
                   bigram_vocab, n_labels)

    # ------------------------------------------------------------- layout

    @property
    def uses_structured(self) -> bool:
        return self.cfg.features_mode == "all_features"

    @property
    def uses_notes(self) -> bool:
        return self.cfg.notes_mode != "none"

    @property
    def cat_features(self) -> list[str]:
        return list(self.cat_vocabs) if self.uses_structured else []

    @property
    def active_cont_features(self) -> list[str]:
        return self.cont_features if self.uses_structured else []

    def layout(self, cat_dim: int, note_dim: int) -> tuple[tuple[str, int], ...]:
        out = [(f, cat_dim) for f in self.cat_features]
        out += [(f, 1) for f in self.active_cont_features]
        if self.uses_notes:
            out.append(("notes", note_dim))
        return tuple(out)

    # ------------------------------------------------------------- encode

    def _filter(self, example: TaskExample) -> TaskExample:
        if self.cfg.features_mode == "notes_only":
            evs = tuple(e for e in example.events if e.text is not None)
        elif self.cfg.notes_mode == "none":
            evs = tuple(e for e in example.events if e.text is None)
        else:
            return example
        return TaskExample(example.example_id, example.patient_id, example.task, example.prediction_time,
                           example.admit_time, example.label, example.admissions, evs)

    def encode_label(self, label):
        if self.task == "mortality":
            return float(bool(label))
        if self.task == "ccs":
            if label is None or not 0 <= int(label) < self.n_labels:
                raise LabelError(f"ccs label {label} outside [0, {self.n_labels})")
            return int(label)
        y = np.zeros(self.n_labels)
        for j in label or ():
            if 0 <= j < self.n_labels:
                y[j] = 1.0
        return y

    def encode(self, example: TaskExample, note_id_offset: int = 0, split: str | None = None) -> EncodedExample:
        ex = self._filter(example)
        bags = bag_timeline(ex, self.cfg.bagging, self.stats)
        S = len(bags)
        enc = EncodedExample(example.example_id, S, self.encode_label(example.label), split=split)
        if self.uses_structured:
            for f, vocab in self.cat_vocabs.items():
                m = np.zeros((S, len(vocab)))
                for s, bag in enumerate(bags):
                    for tok in bag.tokens.get(f, ()):
                        m[s, vocab.id(tok)] += 1
                enc.cat_counts[f] = m
            Fc = len(self.cont_features)
            vals, mask = np.zeros((S, Fc)), np.zeros((S, Fc))
            for s, bag in enumerate(bags):
                for f, vs in bag.values.items():
                    j = self._cont_index.get(f)
                    if j is not None and vs:
                        vals[s, j] = float(np.mean(vs))
                        mask[s, j] = 1.0
            enc.cont_values, enc.cont_mask = vals, mask
        if self.uses_notes:
            self._encode_notes(enc, bags, note_id_offset)
        return enc

    def _encode_notes(self, enc: EncodedExample, bags: list[TimestepBag], note_id_offset: int):
        notes = []   # (note_id, timestamp, tokens, bag)
        for s, bag in enumerate(bags):
            for e in bag.notes:
                notes.append((e, s))
        notes.sort(key=lambda x: x[0].t)   # stable: ties keep timeline order
        tokenised = [(note_id_offset + k, e.t, tokenize(e.text), s) for k, (e, s) in enumerate(notes)]
        enc.bag_has_note = np.zeros(len(bags))
        for _, _, toks, s in tokenised:
            enc.bag_has_note[s] = 1.0
        if self.cfg.notes_mode == "hierarchical":
            seq = truncate_tokens([(nid, t, toks, self.word_vocab.ids(toks)) for nid, t, toks, _ in tokenised],
                                  self.cfg.max_tokens)
            surviving = sorted(set(seq.note_ids), key=seq.note_ids.index)
            local = {nid: k for k, nid in enumerate(surviving)}
            bag_of = {nid: s for nid, _, _, s in tokenised}
            enc.token_ids = np.asarray(seq.ids, dtype=np.int64)
            enc.token_note = np.asarray([local[n] for n in seq.note_ids], dtype=np.int64)
            enc.note_bag = np.asarray([bag_of[n] for n in surviving], dtype=np.int64)
            enc.note_ids = surviving
            enc.token_meta = list(zip(seq.tokens, seq.note_ids, seq.positions, seq.timestamps))
            has = np.zeros(len(bags))
            has[enc.note_bag] = 1.0
            enc.bag_has_note = has
            return
        meta, uni, bi = [], [], []
        for nid, t, toks, s in tokenised:
            base = len(meta)
            meta.extend((tok, nid, p, t) for p, tok in enumerate(toks))
            for p, tok in enumerate(toks):
                uni.append((s, self.word_vocab.id(tok), base + p))
            if self.cfg.notes_mode == "bow_bigram":
                for p in range(len(toks) - 1):
                    bi.append((s, self.bigram_vocab.id(f"{toks[p]}_{toks[p + 1]}"), base + p, base + p + 1))
        uni.sort(key=lambda x: (x[0], x[1], x[2]))
        bi.sort(key=lambda x: (x[0], x[1], x[2]))
        enc.token_meta = meta
        enc.note_ids = sorted({nid for nid, _, _, _ in tokenised})
        enc.uni_bag = np.asarray([u[0] for u in uni], dtype=np.int64)
        enc.uni_ids = np.asarray([u[1] for u in uni], dtype=np.int64)
        enc.uni_src = np.asarray([u[2] for u in uni], dtype=np.int64)
        enc.bi_bag = np.asarray([b[0] for b in bi], dtype=np.int64)
        enc.bi_ids = np.asarray([b[1] for b in bi], dtype=np.int64)
        enc.bi_src = np.asarray([(b[2], b[3]) for b in bi], dtype=np.int64).reshape(-1, 2)

    # ------------------------------------------------------------ collate

    def collate(self, items: Sequence[EncodedExample]) -> Batch:
        dt = C.get_dtype()
        B = len(items)
        S = max(1, max((it.n_bags for it in items), default=1))
        bag_mask = np.zeros((B, S), dtype=dt)
        for b, it in enumerate(items):
            bag_mask[b, :it.n_bags] = 1
        cat_w, cat_p = {}, {}
        for f in self.cat_features:
            V = len(self.cat_vocabs[f])
            w = np.zeros((B, S, V), dtype=dt)
            for b, it in enumerate(items):
                m = it.cat_counts[f]
                w[b, :m.shape[0]] = m
            tot = w.sum(-1, keepdims=True)
            cat_p[f] = (tot[..., 0] > 0).astype(dt)
            cat_w[f] = w / np.where(tot > 0, tot, 1)
        Fc = len(self.active_cont_features)
        cv, cm = np.zeros((B, S, Fc), dtype=dt), np.zeros((B, S, Fc), dtype=dt)
        note_mask_bag = np.zeros((B, S), dtype=dt)
        for b, it in enumerate(items):
            if Fc:
                cv[b, :it.n_bags] = it.cont_values
                cm[b, :it.n_bags] = it.cont_mask
            if it.bag_has_note is not None:
                note_mask_bag[b, :it.n_bags] = it.bag_has_note
        if self.task == "icd9":
            labels = np.stack([np.asarray(it.label, dtype=dt) for it in items]) if items else np.zeros((0, self.n_labels))
        elif self.task == "ccs":
            labels = np.asarray([it.label for it in items], dtype=np.int64)
        else:
            labels = np.asarray([it.label for it in items], dtype=dt)
        batch = Batch([it.example_id for it in items], bag_mask, cat_w, cat_p, cv, cm, note_mask_bag, labels)
        if self.cfg.notes_mode == "hierarchical":
            L = max(1, max(len(it.token_ids) for it in items))
            K = max(1, max(len(it.note_bag) for it in items))
            ids = np.zeros((B, L), dtype=np.int64)
            tmask = np.zeros((B, L), dtype=dt)
            start = np.zeros((B, L), dtype=bool)
            memb = np.zeros((B, K, L), dtype=bool)
            nmask = np.zeros((B, K), dtype=dt)
            n2b = np.zeros((B, S, K), dtype=dt)
            for b, it in enumerate(items):
                n = len(it.token_ids)
                ids[b, :n] = it.token_ids
                tmask[b, :n] = 1
                if n:
                    start[b, 1:n] = it.token_note[1:] != it.token_note[:-1]
                    memb[b, it.token_note, np.arange(n)] = True
                nmask[b, :len(it.note_bag)] = 1
                for k, s in enumerate(it.note_bag):
                    n2b[b, s, k] = 1
            cnt = n2b.sum(-1, keepdims=True)
            n2b = n2b / np.where(cnt > 0, cnt, 1)
            batch.token_ids, batch.token_mask, batch.note_start = ids, tmask, start
            batch.membership, batch.note_mask, batch.note_to_bag = memb, nmask, n2b
        elif self.cfg.notes_mode in ("bow_unigram", "bow_bigram"):
            Lu = max(1, max(len(it.uni_ids) for it in items))
            Lb = max(1, max(len(it.bi_ids) for it in items)) if self.cfg.notes_mode == "bow_bigram" else 0
            uid = np.zeros((B, Lu), dtype=np.int64)
            upool = np.zeros((B, S, Lu), dtype=dt)
            bid = np.zeros((B, Lb), dtype=np.int64)
            bpool = np.zeros((B, S, Lb), dtype=dt)
            for b, it in enumerate(items):
                counts = np.bincount(it.uni_bag, minlength=S)[:S].astype(float)
                if Lb:
                    counts = counts + np.bincount(it.bi_bag, minlength=S)[:S]
                inv = 1.0 / np.where(counts > 0, counts, 1)
                n = len(it.uni_ids)
                uid[b, :n] = it.uni_ids
                upool[b, it.uni_bag, np.arange(n)] = inv[it.uni_bag]
                if Lb:
                    m = len(it.bi_ids)
                    bid[b, :m] = it.bi_ids
                    bpool[b, it.bi_bag, np.arange(m)] = inv[it.bi_bag]
            batch.uni_ids, batch.uni_pool = uid, upool
            if Lb:
                batch.bi_ids, batch.bi_pool = bid, bpool
        return batch

    # ------------------------------------------------------- persistence

    def to_json(self) -> dict:
        return {
            "config": asdict(self.cfg), "task": self.task,
            "cat_vocabs": {f: v.to_json() for f, v in self.cat_vocabs.items()},
            "cont_features": self.cont_features,
            "stats": {"mean": self.stats.mean, "std": self.stats.std},
            "word_vocab": self.word_vocab.to_json(),
            "bigram_vocab": self.bigram_vocab.to_json() if self.bigram_vocab else None,
            "n_labels": self.n_labels,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Featurizer":
        return cls(FeatureConfig(**d["config"]), d["task"],
                   {f: Vocabulary.from_json(v) for f, v in d["cat_vocabs"].items()},
                   list(d["cont_features"]), StandardizationStats(d["stats"]["mean"], d["stats"]["std"]),
                   Vocabulary.from_json(d["word_vocab"]),
                   Vocabulary.from_json(d["bigram_vocab"]) if d.get("bigram_vocab") is not None else None,
                   int(d["n_labels"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Featurizer":
        with open(path) as fh:
            return cls.from_json(json.load(fh))
