"""Synthetic cohort with planted, context-dependent diagnosis signal.

Every discharge note states the admission's class right after the trigger
phrase ``discharge diagnoses :``. With probability ``decoy_rate`` the note
also names a *different* class after ``no family history of``, so a word
count alone cannot tell the two apart. Nursing notes mention random class
terms followed by class-specific continuation words (useful to a language
model, useless to a classifier). Structured codes carry a weak class signal
and mortality follows a separate vital-sign pattern.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .records import Admission, Event, Labels, PatientRecord, split_cohort, validate_record, write_records

TRIGGER = ("discharge", "diagnoses", ":")
DECOY = ("no", "family", "history", "of")
MENTION = ("pt", "c", "/", "o")

_SYLLABLES = ["ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne", "pi", "ro", "sa", "te",
              "vu", "xo", "ze", "tra", "pla", "dro", "sti", "mer", "lan", "tok", "rin", "bel"]


@dataclass
class GeneratorConfig:
    n_patients: int = 2000
    vocab_size: int = 300
    n_classes: int = 10
    synonyms_per_class: int = 3
    continuation_words: int = 3
    n_icd9: int = 20
    decoy_rate: float = 0.5
    note_sentences_mean: float = 4.0
    sentence_length_mean: float = 6.0
    nursing_notes_per_day: float = 1.0
    mention_rate: float = 0.5
    structured_signal: float = 0.3
    mortality_rate: float = 0.15
    readmission_rate: float = 0.15
    non_billable_rate: float = 0.013
    mean_stay_hours: float = 60.0

    def validate(self) -> "GeneratorConfig":
        if self.n_patients < 0:
            raise ConfigError("n_patients must be >= 0")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if self.n_classes * self.synonyms_per_class > self.vocab_size:
            raise ConfigError(
                f"{self.n_classes} classes x {self.synonyms_per_class} synonyms exceed vocab_size {self.vocab_size}")
        for name in ("decoy_rate", "mention_rate", "structured_signal", "mortality_rate",
                     "readmission_rate", "non_billable_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if self.synonyms_per_class < 1 or self.n_icd9 < 2 or self.note_sentences_mean < 0:
            raise ConfigError("synonyms_per_class >= 1, n_icd9 >= 2 and note_sentences_mean >= 0 required")
        return self

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**data).validate()

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Lexicon:
    filler: list[str]
    terms: list[list[str]]          # per class synonyms
    continuations: list[list[str]]  # per class continuation words

    def class_of(self, token: str) -> int | None:
        for c, syns in enumerate(self.terms):
            if token in syns:
                return c
        return None


def build_lexicon(cfg: GeneratorConfig) -> Lexicon:
    """Pseudo-words; fixed across seeds so corpora with different seeds share a vocabulary."""
    rng = np.random.default_rng(20190612)
    need = cfg.vocab_size + cfg.n_classes * (cfg.synonyms_per_class + cfg.continuation_words)
    reserved = set(TRIGGER + DECOY + MENTION)
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < need:
        n = int(rng.integers(2, 4))
        w = "".join(rng.choice(_SYLLABLES, size=n))
        if w not in seen and w not in reserved:
            seen.add(w)
            words.append(w)
    filler = words[:cfg.vocab_size]
    rest = words[cfg.vocab_size:]
    k = cfg.synonyms_per_class
    terms = [rest[c * k:(c + 1) * k] for c in range(cfg.n_classes)]
    rest = rest[cfg.n_classes * k:]
    j = cfg.continuation_words
    conts = [rest[c * j:(c + 1) * j] for c in range(cfg.n_classes)]
    return Lexicon(filler, terms, conts)


class _PatientGen:
    def __init__(self, cfg: GeneratorConfig, lex: Lexicon, rng: np.random.Generator):
        self.cfg, self.lex, self.rng = cfg, lex, rng
        ranks = np.arange(1, len(lex.filler) + 1)
        self.filler_p = (1.0 / ranks) / (1.0 / ranks).sum()

    def sentence(self) -> list[str]:
        n = 2 + int(self.rng.poisson(max(self.cfg.sentence_length_mean - 2, 0)))
        idx = self.rng.choice(len(self.lex.filler), size=n, p=self.filler_p)
        return [self.lex.filler[i] for i in idx] + ["."]

    def term(self, c: int) -> str:
        syns = self.lex.terms[c]
        return syns[int(self.rng.integers(len(syns)))]

    def mention(self, c: int) -> list[str]:
        cont = self.lex.continuations[c]
        picks = self.rng.choice(len(cont), size=2)
        return list(MENTION) + [self.term(c)] + [cont[i] for i in picks] + ["."]

    def other_class(self, c: int) -> int:
        o = int(self.rng.integers(self.cfg.n_classes - 1))
        return o + (o >= c)

    def filler_block(self, mean: float) -> list[list[str]]:
        return [self.sentence() for _ in range(int(self.rng.poisson(mean)))]

    def discharge_note(self, c: int) -> str:
        sents = self.filler_block(self.cfg.note_sentences_mean)
        planted = [list(TRIGGER) + [self.term(c), "."]]
        if self.rng.random() < self.cfg.decoy_rate:
            planted.append(list(DECOY) + [self.term(self.other_class(c)), "."])
        for s in planted:
            sents.insert(int(self.rng.integers(len(sents) + 1)), s)
        return " ".join(w for s in sents for w in s)

    def nursing_note(self) -> str:
        sents = self.filler_block(self.cfg.note_sentences_mean / 2)
        if self.rng.random() < self.cfg.mention_rate:
            c = int(self.rng.integers(self.cfg.n_classes))
            sents.insert(int(self.rng.integers(len(sents) + 1)), self.mention(c))
        if not sents:
            sents = [self.sentence()]
        return " ".join(w for s in sents for w in s)

    def admission(self, admit: float) -> tuple[Admission, list[Event]]:
        cfg, rng = self.cfg, self.rng
        stay = 24.0 + float(rng.exponential(cfg.mean_stay_hours - 24.0))
        stay = round(min(stay, 240.0), 2)
        discharge = round(admit + stay, 2)
        stay = discharge - admit
        c = int(rng.integers(cfg.n_classes))
        dies = bool(rng.random() < cfg.mortality_rate)
        primary = [(2 * c) % cfg.n_icd9, (2 * c + 1) % cfg.n_icd9]
        extra = rng.choice(cfg.n_icd9, size=int(rng.integers(0, 3)), replace=False).tolist()
        icd9 = tuple(sorted(set(primary) | set(int(e) for e in extra)))
        billable = bool(rng.random() >= cfg.non_billable_rate)
        adm = Admission(admit, discharge,
                        type=str(rng.choice(["emergency", "elective", "urgent"])),
                        status=str(rng.choice(["inpatient", "observation"])),
                        source=str(rng.choice(["ed", "referral", "transfer"])),
                        labels=Labels(mortality=dies, ccs=c, icd9=icd9, ccs_billable=billable))
        events: list[Event] = []

        def when():
            return round(admit + float(rng.uniform(0, stay)), 2)

        for _ in range(1 + int(rng.poisson(3))):
            code = int(rng.choice(icd9)) if rng.random() < cfg.structured_signal else int(rng.integers(cfg.n_icd9))
            events.append(Event(when(), "code:dx", token=f"dx{code:03d}"))
        for _ in range(int(rng.poisson(3))):
            med = c if rng.random() < cfg.structured_signal else int(rng.integers(cfg.n_classes))
            events.append(Event(when(), "med:order", token=f"med{med:02d}_{int(rng.integers(3))}"))
        shows_pattern = dies and rng.random() < 0.8
        h = 0.0
        while h <= stay:
            t = round(admit + h, 2)
            drift = min(h, 48.0)
            if shows_pattern:
                lac, sbp = 3.0 + 0.06 * drift, 105.0 - 0.4 * drift
            else:
                lac, sbp = 1.5, 120.0
            events.append(Event(t, "obs:lactate", value=round(float(lac + rng.normal(0, 0.8)), 3)))
            events.append(Event(t, "obs:sbp", value=round(float(sbp + rng.normal(0, 12.0)), 3)))
            events.append(Event(t, "obs:heart_rate", value=round(float(rng.normal(85, 15)), 3)))
            h += 4.0 + float(rng.exponential(2.0))
        if cfg.nursing_notes_per_day > 0:
            h = float(rng.exponential(24.0 / cfg.nursing_notes_per_day))
            while h < stay:
                events.append(Event(round(admit + h, 2), "note:nursing", text=self.nursing_note()))
                h += float(rng.exponential(24.0 / cfg.nursing_notes_per_day))
        events.append(Event(discharge, "note:discharge", text=self.discharge_note(c)))
        return adm, events

    def patient(self, pid: str) -> PatientRecord:
        admit = round(float(self.rng.uniform(0, 1000)), 2)
        adms, events = [], []
        while True:
            adm, evs = self.admission(admit)
            adms.append(adm)
            events.extend(evs)
            if adm.labels.mortality or self.rng.random() >= self.cfg.readmission_rate or len(adms) >= 3:
                break
            admit = round(adm.discharge + 48.0 + float(self.rng.exponential(500.0)), 2)
        return validate_record(PatientRecord(pid, tuple(adms), tuple(events)))


def generate_synthetic_cohort(cfg: GeneratorConfig, seed: int = 0) -> list[PatientRecord]:
    cfg.validate()
    lex = build_lexicon(cfg)
    out = []
    for i in range(cfg.n_patients):
        rng = np.random.default_rng([seed, i])
        out.append(_PatientGen(cfg, lex, rng).patient(f"p{seed:03d}_{i:06d}"))
    return out


SPLIT_FILES = {"train": "train.jsonl", "validation": "valid.jsonl", "test": "test.jsonl"}


def write_corpus(records, out_dir, seed: int = 0) -> dict[str, Path]:
    """Split by patient and write ``train/valid/test.jsonl`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, recs in split_cohort(records, seed).items():
        paths[split] = out_dir / SPLIT_FILES[split]
        write_records(paths[split], recs)
    return paths
