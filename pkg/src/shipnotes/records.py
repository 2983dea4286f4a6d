"""Patient record schema, JSONL ingestion and task-example construction."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataValidationError, ParseError

log = logging.getLogger(__name__)

TASKS = ("mortality", "ccs", "icd9")
MORTALITY_HORIZON_HOURS = 24.0
Z_CAP = 10.0
MIN_ADMISSION_HOURS = 24.0


@dataclass(frozen=True)
class Event:
    """One timeline observation. Exactly one of ``token``/``value``/``text`` is set."""

    t: float
    feature: str
    token: str | None = None
    value: float | None = None
    text: str | None = None

    @property
    def kind(self) -> str:
        if self.text is not None:
            return "note"
        if self.value is not None:
            return "real"
        return "categorical"

    def to_json(self) -> dict:
        out = {"t": self.t, "f": self.feature}
        if self.text is not None:
            out["note"] = self.text
        else:
            out["v"] = self.value if self.value is not None else self.token
        return out


@dataclass(frozen=True)
class Labels:
    mortality: bool | None = None
    ccs: int | None = None
    icd9: tuple[int, ...] | None = None
    ccs_billable: bool = True


@dataclass(frozen=True)
class Admission:
    admit: float
    discharge: float
    type: str = "unknown"
    status: str = "unknown"
    source: str = "unknown"
    labels: Labels = field(default_factory=Labels)

    def to_json(self) -> dict:
        labels = {}
        if self.labels.mortality is not None:
            labels["mortality"] = self.labels.mortality
        if self.labels.ccs is not None:
            labels["ccs"] = self.labels.ccs
        if self.labels.icd9 is not None:
            labels["icd9"] = list(self.labels.icd9)
        if not self.labels.ccs_billable:
            labels["ccs_billable"] = False
        return {"admit": self.admit, "discharge": self.discharge, "type": self.type,
                "status": self.status, "source": self.source, "labels": labels}


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    admissions: tuple[Admission, ...]
    events: tuple[Event, ...]

    def to_json(self) -> dict:
        return {"patient_id": self.patient_id,
                "admissions": [a.to_json() for a in self.admissions],
                "events": [e.to_json() for e in self.events]}


def validate_record(rec: PatientRecord) -> PatientRecord:
    """Sort events and enforce the timeline invariants; raises on violation."""
    pid = rec.patient_id
    adms = sorted(rec.admissions, key=lambda a: a.admit)
    for a in adms:
        if not (math.isfinite(a.admit) and math.isfinite(a.discharge)):
            raise DataValidationError(f"patient {pid}: non-finite admission time")
        if a.discharge - a.admit < MIN_ADMISSION_HOURS:
            raise DataValidationError(
                f"patient {pid}: admission at {a.admit} shorter than {MIN_ADMISSION_HOURS:g}h")
    for prev, nxt in zip(adms, adms[1:]):
        if nxt.admit < prev.discharge:
            raise DataValidationError(f"patient {pid}: overlapping admissions at {nxt.admit}")
    events = sorted(rec.events, key=lambda e: e.t)
    for e in events:
        if not math.isfinite(e.t):
            raise DataValidationError(f"patient {pid}: non-finite event time")
        if e.value is not None and not math.isfinite(e.value):
            raise DataValidationError(f"patient {pid}: non-finite value for {e.feature}")
        if not any(a.admit <= e.t <= a.discharge for a in adms):
            raise DataValidationError(
                f"patient {pid}: event {e.feature} at t={e.t} lies outside every admission "
                f"(after discharge or before admit)")
    return PatientRecord(pid, tuple(adms), tuple(events))


def _parse_event(obj: dict) -> Event:
    t = float(obj["t"])
    f = str(obj["f"])
    has_note = obj.get("note") is not None
    has_v = obj.get("v") is not None
    if has_note == has_v:
        raise ValueError(f"event {f} must carry exactly one of 'v' or 'note'")
    if has_note:
        return Event(t, f, text=str(obj["note"]))
    v = obj["v"]
    if isinstance(v, bool):
        return Event(t, f, token=str(v).lower())
    if isinstance(v, (int, float)):
        return Event(t, f, value=float(v))
    return Event(t, f, token=str(v))


def _parse_admission(obj: dict) -> Admission:
    lab = obj.get("labels") or {}
    icd9 = lab.get("icd9")
    labels = Labels(
        mortality=None if lab.get("mortality") is None else bool(lab["mortality"]),
        ccs=None if lab.get("ccs") is None else int(lab["ccs"]),
        icd9=None if icd9 is None else tuple(sorted(int(i) for i in icd9)),
        ccs_billable=bool(lab.get("ccs_billable", True)),
    )
    return Admission(float(obj["admit"]), float(obj["discharge"]),
                     str(obj.get("type", "unknown")), str(obj.get("status", "unknown")),
                     str(obj.get("source", "unknown")), labels)


def record_from_json(obj: dict) -> PatientRecord:
    rec = PatientRecord(
        patient_id=str(obj["patient_id"]),
        admissions=tuple(_parse_admission(a) for a in obj.get("admissions", [])),
        events=tuple(_parse_event(e) for e in obj.get("events", [])),
    )
    return validate_record(rec)


def parse_records(path) -> list[PatientRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not a JSON object")
                rec = record_from_json(obj)
            except DataValidationError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec)
    return records


def write_records(path, records: Iterable[PatientRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# standardisation


@dataclass(frozen=True)
class StandardizationStats:
    mean: dict[str, float]
    std: dict[str, float]

    def apply(self, value: float, feature: str) -> float:
        return apply_standardization(self, value, feature)


def fit_standardization(train: Sequence[PatientRecord]) -> StandardizationStats:
    """Per-feature mean and population standard deviation over training records."""
    sums: Counter = Counter()
    sq: Counter = Counter()
    counts: Counter = Counter()
    for rec in train:
        for e in rec.events:
            if e.value is not None:
                sums[e.feature] += e.value
                counts[e.feature] += 1
    means = {f: sums[f] / counts[f] for f in counts}
    for rec in train:
        for e in rec.events:
            if e.value is not None:
                sq[e.feature] += (e.value - means[e.feature]) ** 2
    stds = {f: math.sqrt(sq[f] / counts[f]) for f in counts}
    return StandardizationStats(means, stds)


_warned_features: set[str] = set()


def apply_standardization(stats: StandardizationStats, value: float, feature: str) -> float:
    if feature not in stats.mean:
        if feature not in _warned_features:
            log.warning("feature %s not seen in training split; standardising to 0", feature)
            _warned_features.add(feature)
        return 0.0
    sd = stats.std[feature]
    if not sd > 0:
        return 0.0
    z = (value - stats.mean[feature]) / sd
    return max(-Z_CAP, min(Z_CAP, z))


# ---------------------------------------------------------------------------
# splitting


def _split_key(patient_id: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{patient_id}".encode()).hexdigest()


def split_cohort(records: Sequence[PatientRecord], seed: int = 0,
                 fractions=(0.8, 0.1, 0.1)) -> dict[str, list[PatientRecord]]:
    """Partition patients 80/10/10 by a seeded hash of the patient id."""
    by_patient: dict[str, list[PatientRecord]] = {}
    for rec in records:
        by_patient.setdefault(rec.patient_id, []).append(rec)
    ids = sorted(by_patient, key=lambda p: _split_key(p, seed))
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n_train + n_val > n:
        n_val = n - n_train
    groups = {"train": ids[:n_train], "validation": ids[n_train:n_train + n_val],
              "test": ids[n_train + n_val:]}
    return {k: [r for p in v for r in by_patient[p]] for k, v in groups.items()}


# ---------------------------------------------------------------------------
# task examples


@dataclass(frozen=True)
class TaskExample:
    example_id: str
    patient_id: str
    task: str
    prediction_time: float
    admit_time: float
    label: object
    admissions: tuple[Admission, ...]
    events: tuple[Event, ...]

    def notes(self) -> list[Event]:
        return [e for e in self.events if e.text is not None]


def prediction_time(adm: Admission, task: str) -> float:
    if task == "mortality":
        return adm.admit + MORTALITY_HORIZON_HOURS
    if task in ("ccs", "icd9"):
        return adm.discharge
    raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


def admission_events(adm: Admission) -> list[Event]:
    """Encounter metadata as categorical events at admit time."""
    return [Event(adm.admit, "adm:type", token=adm.type),
            Event(adm.admit, "adm:status", token=adm.status),
            Event(adm.admit, "adm:source", token=adm.source)]


def example_for_admission(rec: PatientRecord, index: int, task: str, cutoff: float | None = None,
                          label=None) -> TaskExample:
    adm = rec.admissions[index]
    t_pred = prediction_time(adm, task) if cutoff is None else cutoff
    meta = [e for a in rec.admissions[:index + 1] for e in admission_events(a)]
    events = sorted([e for e in meta if e.t <= t_pred] + [e for e in rec.events if e.t <= t_pred],
                    key=lambda e: e.t)
    visible = tuple(a if a.discharge <= t_pred else replace(a, labels=Labels())
                    for a in rec.admissions[:index + 1])
    return TaskExample(f"{rec.patient_id}:{index}", rec.patient_id, task, t_pred, adm.admit, label,
                       visible, tuple(events))


def build_task_examples(records: Sequence[PatientRecord], task: str, exclude_non_billable: bool = True,
                        counters: Counter | None = None) -> list[TaskExample]:
    """One example per admission with the task's label, truncated at prediction time."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    counters = Counter() if counters is None else counters
    out = []
    for rec in records:
        for i, adm in enumerate(rec.admissions):
            lab = adm.labels
            if task == "mortality":
                label = lab.mortality
            elif task == "ccs":
                label = lab.ccs
                if label is not None and exclude_non_billable and not lab.ccs_billable:
                    counters["non_billable"] += 1
                    continue
            else:
                label = lab.icd9
            if label is None:
                counters["missing_label"] += 1
                continue
            out.append(example_for_admission(rec, i, task, label=label))
            counters["examples"] += 1
    if counters["missing_label"]:
        log.info("%s: skipped %d admissions without a label", task, counters["missing_label"])
    return out


def restrict_to_note(example: TaskExample, note_id: int) -> TaskExample:
    """Copy of ``example`` whose only note is the ``note_id``-th note (other events kept)."""
    notes = example.notes()
    if not 0 <= note_id < len(notes):
        from .errors import RecordLookupError
        raise RecordLookupError(f"note {note_id} not found in example {example.example_id} "
                                f"({len(notes)} notes)")
    keep = notes[note_id]
    events = tuple(e for e in example.events if e.text is None or e is keep)
    return replace(example, events=events)


# ---------------------------------------------------------------------------
# tokenisation

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
PAD, OOV = "<pad>", "<oov>"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, punctuation marks become their own tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id map with reserved padding (0) and out-of-vocabulary (1) ids."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, OOV]
        self.stoi = {PAD: 0, OOV: 1}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @classmethod
    def fit(cls, counts: Counter, min_count: int = 1) -> "Vocabulary":
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, 1)

    def ids(self, toks: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, 1) for t in toks]

    def to_json(self) -> list[str]:
        return list(self.itos[2:])

    @classmethod
    def from_json(cls, tokens: list[str]) -> "Vocabulary":
        return cls(tokens)
