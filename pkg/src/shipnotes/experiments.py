"""End-to-end runs: corpus -> featurizer -> optional pretraining -> training -> test metrics."""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import compute as C
from .errors import ConfigError, UsageError
from .evaluate import MetricsReport, significance_matrix, write_significance_csv
from .featurize import EncodedExample, FeatureConfig, Featurizer
from .pretrain import PretrainConfig, build_corpus, pretrain, pretrained_names, transfer
from .record_model import ModelConfig, ModelVariant, RecordModel, Regularization
from .records import PatientRecord, build_task_examples, parse_records
from .synthetic import SPLIT_FILES
from .train import TrainConfig, evaluate_model, reference_hparams, train_loop

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one pipeline run needs; serialisable to the JSON config file."""

    task: str = "ccs"
    variant: str = "ship"
    features: FeatureConfig = field(default_factory=FeatureConfig)
    cat_dim: int = 8
    word_dim: int = 64
    notes_hidden: int = 44
    record_hidden: int = 65
    bidirectional: bool = True
    attention: str = "projected"
    carry_state: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=lambda: PretrainConfig(steps=0))
    label_fraction: float = 1.0

    def __post_init__(self):
        v = ModelVariant.from_name(self.variant)
        if (self.features.notes_mode, self.features.features_mode) != (v.notes_mode, v.features_mode):
            raise ConfigError(f"feature config ({self.features.notes_mode}/{self.features.features_mode}) "
                              f"does not match variant {self.variant}")
        if not 0 < self.label_fraction <= 1:
            raise ConfigError("label_fraction must lie in (0, 1]")

    @property
    def model_variant(self) -> ModelVariant:
        return ModelVariant.from_name(self.variant)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.task, self.model_variant, self.cat_dim, self.word_dim, self.notes_hidden,
                           self.record_hidden, self.bidirectional, self.attention, self.carry_state)

    def to_json(self) -> dict:
        return {
            "task": self.task, "variant": self.variant, "features": asdict(self.features),
            "cat_dim": self.cat_dim, "word_dim": self.word_dim, "notes_hidden": self.notes_hidden,
            "record_hidden": self.record_hidden, "bidirectional": self.bidirectional,
            "attention": self.attention, "carry_state": self.carry_state,
            "train": self.train.to_json(), "pretrain": _pretrain_json(self.pretrain),
            "label_fraction": self.label_fraction,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        if "features" in d:
            d["features"] = FeatureConfig(**d["features"])
        if "train" in d:
            d["train"] = TrainConfig.from_json(d["train"])
        if "pretrain" in d:
            d["pretrain"] = _pretrain_from_json(d["pretrain"])
        return cls(**d)


def _pretrain_json(p: PretrainConfig) -> dict:
    return asdict(p)


def _pretrain_from_json(d: Mapping) -> PretrainConfig:
    from .dropout import RecurrentDropout
    d = dict(d)
    if "dropout" in d:
        d["dropout"] = RecurrentDropout(**d["dropout"])
    return PretrainConfig(**d)


def default_experiment(task: str, variant: str, full_scale: bool = False, **overrides) -> ExperimentConfig:
    """Reference hyperparameter defaults (desk-scaled unless ``full_scale``), with keyword overrides."""
    hp = reference_hparams(task, variant, full_scale)
    v = ModelVariant.from_name(variant)
    feats = FeatureConfig(v.notes_mode, v.features_mode, hp["bag_hours"], hp["max_timesteps"], hp["max_tokens"])
    tr = hp["train"]
    reg = tr.regularization
    exp = ExperimentConfig(
        task=task, variant=variant, features=feats, notes_hidden=hp["notes_hidden"],
        record_hidden=hp["record_hidden"], bidirectional=hp["bidirectional"], train=tr,
        pretrain=PretrainConfig(steps=hp["pretrain_steps"], max_tokens=hp["max_tokens"],
                                batch_size=tr.batch_size, learning_rate=tr.learning_rate,
                                grad_clip_norm=tr.grad_clip_norm, vocabulary_dropout=reg.vocabulary,
                                dropout=reg.notes),
        word_dim=64 if not full_scale else 256,
    )
    return replace(exp, **overrides) if overrides else exp


# ---------------------------------------------------------------------------
# data


def load_corpus(corpus_dir) -> dict[str, list[PatientRecord]]:
    corpus_dir = Path(corpus_dir)
    out = {}
    for split, name in SPLIT_FILES.items():
        p = corpus_dir / name
        if not p.exists():
            raise UsageError(f"corpus file {p} not found")
        out[split] = parse_records(p)
    return out


@dataclass
class PreparedData:
    featurizer: Featurizer
    encoded: dict[str, list[EncodedExample]]
    examples: dict[str, list]


def prepare(splits: Mapping[str, Sequence[PatientRecord]], exp: ExperimentConfig,
            featurizer: Featurizer | None = None) -> PreparedData:
    """Fit the featurizer on the training split and encode every split."""
    fz = featurizer or Featurizer.fit(splits["train"], exp.task, exp.features,
                                      n_labels=None)
    examples = {k: build_task_examples(v, exp.task) for k, v in splits.items()}
    encoded = {k: [fz.encode(e, split=k) for e in v] for k, v in examples.items()}
    return PreparedData(fz, encoded, examples)


def label_subset(items: Sequence[EncodedExample], fraction: float, seed: int) -> list[EncodedExample]:
    """A seeded random ``fraction`` of the labelled training examples (order preserved)."""
    if fraction >= 1.0:
        return list(items)
    n = max(1, int(round(fraction * len(items))))
    idx = np.sort(np.random.default_rng([seed, 7]).choice(len(items), size=n, replace=False))
    return [items[i] for i in idx]


# ---------------------------------------------------------------------------
# runs


@dataclass
class SeedRun:
    seed: int
    test_metrics: dict[str, float]
    validation_metrics: dict[str, float]
    model: RecordModel
    trace: list
    pretrain_curve: list[float]
    seconds: float


def run_pretraining(splits, data: PreparedData, exp: ExperimentConfig, model: RecordModel, seed: int):
    corpus = build_corpus(splits["train"], data.featurizer.word_vocab, exp.pretrain.horizon,
                          exp.pretrain.max_tokens)
    names = pretrained_names(model.params)
    res = pretrain(corpus, exp.pretrain, {n: model.params[n].data for n in names}, model.notes_cfg, seed=seed)
    transfer(res.params, model)
    return res


def run_seed(splits, data: PreparedData, exp: ExperimentConfig, seed: int) -> SeedRun:
    t0 = time.time()
    model = RecordModel(exp.model_config(), data.featurizer, seed=seed)
    curve: list[float] = []
    if exp.model_variant.pretrained and exp.pretrain.steps > 0:
        curve = run_pretraining(splits, data, exp, model, seed).loss_curve
    train_items = label_subset(data.encoded["train"], exp.label_fraction, seed)
    res = train_loop(model, train_items, data.encoded["validation"], replace(exp.train, seed=seed))
    test = evaluate_model(res.model, data.encoded["test"], exp.train.eval_batch_size)
    return SeedRun(seed, test, res.best_metrics, res.model, res.trace, curve, time.time() - t0)


def save_model(model: RecordModel, path, exp: ExperimentConfig | None = None, extra: Mapping | None = None):
    manifest = {
        "model_config": model.cfg.to_json(),
        "featurizer": model.featurizer.to_json(),
        "config_hash": C.config_hash(exp.to_json()) if exp else None,
        "pretrain_steps": exp.pretrain.steps if exp and exp.model_variant.pretrained else 0,
    }
    manifest.update(extra or {})
    return C.save_checkpoint(path, model.params, manifest)


def load_model(path) -> RecordModel:
    arrays, manifest = C.load_checkpoint(path)
    if "model_config" not in manifest:
        raise UsageError(f"{path} is not a model checkpoint")
    fz = Featurizer.from_json(manifest["featurizer"])
    cfg = ModelConfig.from_json(manifest["model_config"])
    return RecordModel(cfg, fz, params={k: v.astype(C.get_dtype()) for k, v in arrays.items()})


def run_pipeline(splits, exp: ExperimentConfig, seeds: Sequence[int], out_dir=None) -> MetricsReport:
    """Train and test one variant once per seed; writes per-seed artifacts under ``out_dir``."""
    data = prepare(splits, exp)
    report = MetricsReport(exp.task, n_examples=len(data.encoded["test"]))
    out = Path(out_dir) if out_dir else None
    for seed in seeds:
        run = run_seed(splits, data, exp, seed)
        report.add_run(seed, run.test_metrics)
        log.info("%s seed %d: %s (%.0fs)", exp.variant, seed, run.test_metrics, run.seconds)
        if out:
            d = out / f"seed{seed}"
            d.mkdir(parents=True, exist_ok=True)
            save_model(run.model, d / "model", exp, {"seed": seed})
            from .train import write_trace
            write_trace(run.trace, d / "trace.csv")
            (d / "metrics.json").write_text(json.dumps(
                {"test": run.test_metrics, "validation": run.validation_metrics,
                 "pretrain_loss": run.pretrain_curve}, indent=2))
    if out:
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "report.json")
    return report


def compare_reports(run_dirs: Mapping[str, Path], metric: str, out_csv=None) -> list[dict]:
    reports = {name: MetricsReport.load(Path(d) / "report.json") for name, d in run_dirs.items()}
    rows = significance_matrix(reports, metric)
    if out_csv:
        write_significance_csv(rows, out_csv)
    return rows


# ---------------------------------------------------------------------------
# hyperparameter search (grid or random over a config file)


def expand_grid(space: Mapping[str, Sequence]) -> list[dict]:
    keys = sorted(space)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(space[k] for k in keys))]


def sample_space(space: Mapping[str, Sequence], n: int, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    keys = sorted(space)
    return [{k: space[k][int(rng.integers(len(space[k])))] for k in keys} for _ in range(n)]


def apply_overrides(exp: ExperimentConfig, overrides: Mapping) -> ExperimentConfig:
    """Dotted keys such as ``train.learning_rate`` replace nested fields."""
    d = exp.to_json()
    for key, value in overrides.items():
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config path {key}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config path {key}")
        node[parts[-1]] = value
    return ExperimentConfig.from_json(d)


def search(splits, exp: ExperimentConfig, space: Mapping[str, Sequence], mode: str = "grid", n: int = 10,
           seed: int = 0) -> list[tuple[dict, dict]]:
    """Validation metrics for each candidate; sorted best first by the task's selection key."""
    from .train import selection_key
    if mode not in ("grid", "random"):
        raise ConfigError("search mode must be 'grid' or 'random'")
    cands = expand_grid(space) if mode == "grid" else sample_space(space, n, seed)
    results = []
    for cand in cands:
        e = apply_overrides(exp, cand)
        data = prepare(splits, e)
        run = run_seed(splits, data, e, seed)
        results.append((cand, run.validation_metrics))
    results.sort(key=lambda r: selection_key(exp.task, r[1]), reverse=True)
    return results
