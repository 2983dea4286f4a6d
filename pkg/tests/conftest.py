import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shipnotes import compute as C  # noqa: E402
from shipnotes.records import Admission, Event, Labels, PatientRecord  # noqa: E402
from shipnotes.synthetic import GeneratorConfig, generate_synthetic_cohort  # noqa: E402


@pytest.fixture(autouse=True)
def float64():
    with C.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(GeneratorConfig(n_patients=60), seed=3)


def make_record(pid="p1", admit=0.0, discharge=48.0, events=(), labels=None, more=()):
    adms = (Admission(admit, discharge, "emergency", "inpatient", "ed",
                      labels or Labels(mortality=False, ccs=1, icd9=(0, 2))),) + tuple(more)
    return PatientRecord(pid, adms, tuple(events))


@pytest.fixture
def record_factory():
    return make_record


def tiny_model(records, task="ccs", variant="hier", seed=0, dims=None, **feature_kw):
    """Featurizer fitted on ``records`` plus a small model for that variant."""
    from shipnotes.featurize import FeatureConfig, Featurizer
    from shipnotes.record_model import ModelConfig, ModelVariant, RecordModel
    v = ModelVariant.from_name(variant)
    kw = dict(bag_hours=8, max_timesteps=20, max_tokens=120, min_count=2, bigram_min_count=2)
    kw.update(feature_kw)
    fz = Featurizer.fit(records, task, FeatureConfig(v.notes_mode, v.features_mode, **kw))
    size = dict(cat_dim=3, word_dim=4, notes_hidden=3, record_hidden=4, bidirectional=True)
    size.update(dims or {})
    cfg = ModelConfig(task, v, **size)
    return RecordModel(cfg, fz, seed=seed)


def trained_toy_model(records, variant="hier_notes_only", steps=150, seed=0):
    """A small model trained in float64 on ``records``; returns ``(model, train_items)``."""
    from shipnotes.records import build_task_examples
    from shipnotes.train import TrainConfig, train_loop
    m = tiny_model(records, "ccs", variant, seed=seed, dims=dict(word_dim=6, notes_hidden=5, record_hidden=6))
    items = [m.featurizer.encode(e, split="train") for e in build_task_examples(records, "ccs")]
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8, max_steps=steps, eval_every=steps, precision="float64",
                      seed=seed)
    return train_loop(m, items, [], cfg).model, items


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def log(number: int, ok: bool, detail: str, seconds: float) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f} s)"
        print(line)
        lines.append((number, line))
        return ok
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
