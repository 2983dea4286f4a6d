"""Command-line entry point: generate | pretrain | train | evaluate | attribute | compare."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path

from . import compute as C
from .errors import ConfigError, RecordLookupError, ShipError, UsageError

log = logging.getLogger("shipnotes")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: list[int]
    version: str
    inputs: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    seconds: float = 0.0

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _manifest(args, config: dict, seeds, inputs) -> RunManifest:
    return RunManifest(args.command, C.config_hash(config), list(seeds), _version(), inputs, config=config)


def _finish(man: RunManifest, out: Path) -> None:
    man.seconds = round(time.time() - man.started, 3)
    man.outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    man.write(out)


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None


def _seeds(text: str) -> list[int]:
    """``3`` or ``0,1,2`` or ``0..4``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    from .synthetic import GeneratorConfig, generate_synthetic_cohort, write_corpus
    cfg = GeneratorConfig(**_read_json(args.config)) if args.config else GeneratorConfig()
    if args.patients is not None:
        cfg = replace(cfg, n_patients=args.patients)
    cfg.validate()
    out = Path(args.out)
    man = _manifest(args, cfg.to_json(), [args.seed], {})
    records = generate_synthetic_cohort(cfg, seed=args.seed)
    paths = write_corpus(records, out, seed=args.seed)
    print(f"wrote {len(records)} patients to {', '.join(str(p) for p in paths.values())}")
    _finish(man, out)
    return 0


def _experiment(args):
    from .experiments import ExperimentConfig, apply_overrides, default_experiment
    raw = _read_json(args.config)
    task = getattr(args, "task", None) or raw.get("task", "ccs")
    variant = getattr(args, "variant", None) or raw.get("variant", "ship")
    base = default_experiment(task, variant, full_scale=args.full_scale)
    if raw:
        flat = {}
        _flatten(raw, "", flat)
        flat.pop("task", None)
        flat.pop("variant", None)
        base = apply_overrides(base, flat)
    over = {}
    if getattr(args, "pretrain_steps", None) is not None:
        over["pretrain.steps"] = args.pretrain_steps
    if getattr(args, "max_steps", None) is not None:
        over["train.max_steps"] = args.max_steps
    if getattr(args, "label_fraction", None) is not None:
        over["label_fraction"] = args.label_fraction
    return apply_overrides(base, over) if over else base


def _flatten(d, prefix, out):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k in ("features", "train", "pretrain", "regularization", "record", "notes", "dropout"):
            _flatten(v, key + ".", out)
        else:
            out[key] = v


def cmd_train(args) -> int:
    from .experiments import compare_reports, load_corpus, run_pipeline
    exp = _experiment(args)
    seeds = args.seeds if args.seeds is not None else [args.seed]
    splits = load_corpus(args.corpus)
    out = Path(args.out)
    man = _manifest(args, exp.to_json(), seeds, {"corpus": str(args.corpus)})
    report = run_pipeline(splits, exp, seeds, out)
    print(json.dumps({"variant": exp.variant, "task": exp.task, **report.formatted()}, indent=2))
    if args.baseline_run:
        from .evaluate import SELECTION_METRIC
        runs = {exp.variant: out}
        for d in args.baseline_run:
            runs[Path(d).name] = Path(d)
        metric = "top1_recall" if exp.task == "ccs" else SELECTION_METRIC[exp.task]
        compare_reports(runs, metric, out / "significance.csv")
    _finish(man, out)
    return 0


def cmd_pretrain(args) -> int:
    from .experiments import load_corpus, prepare, run_pretraining, save_model
    from .record_model import RecordModel
    exp = _experiment(args)
    if not exp.model_variant.hierarchical:
        raise ConfigError(f"variant {exp.variant} has no notes LSTM to pretrain")
    if args.steps is not None:
        exp = replace(exp, pretrain=replace(exp.pretrain, steps=args.steps))
    if args.horizon:
        exp = replace(exp, pretrain=replace(exp.pretrain, horizon=args.horizon))
    splits = load_corpus(args.corpus)
    out = Path(args.out)
    man = _manifest(args, exp.to_json(), [args.seed], {"corpus": str(args.corpus)})
    data = prepare({"train": splits["train"], "validation": [], "test": []}, exp)
    model = RecordModel(exp.model_config(), data.featurizer, seed=args.seed)
    res = None
    if exp.pretrain.steps > 0:
        res = run_pretraining(splits, data, exp, model, args.seed)
    save_model(model, out / "pretrained", exp, {"pretrain_steps": exp.pretrain.steps, "seed": args.seed})
    (out / "loss_curve.json").write_text(json.dumps(res.loss_curve if res else []))
    print(f"pretrained {exp.pretrain.steps} steps; checkpoint at {out / 'pretrained.npz'}")
    _finish(man, out)
    return 0


def cmd_evaluate(args) -> int:
    from .experiments import load_model
    from .records import build_task_examples, parse_records
    from .synthetic import SPLIT_FILES
    from .train import evaluate_model
    model = load_model(args.checkpoint)
    path = Path(args.corpus) / SPLIT_FILES[args.split]
    if not path.exists():
        raise UsageError(f"corpus file {path} not found")
    examples = build_task_examples(parse_records(path), model.cfg.task)
    items = [model.featurizer.encode(e, split=args.split) for e in examples]
    metrics = evaluate_model(model, items)
    out = Path(args.out)
    man = _manifest(args, {"checkpoint": str(args.checkpoint), "split": args.split}, [args.seed],
                    {"checkpoint": str(args.checkpoint), "corpus": str(args.corpus)})
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    print(json.dumps(metrics, indent=2, sort_keys=True))
    _finish(man, out)
    return 0


def _find_example(corpus, task, example_id):
    from .records import build_task_examples, parse_records
    from .synthetic import SPLIT_FILES
    for name in SPLIT_FILES.values():
        p = Path(corpus) / name
        if not p.exists():
            continue
        for ex in build_task_examples(parse_records(p), task):
            if ex.example_id == example_id:
                return ex
    raise RecordLookupError(f"example {example_id} not found in {corpus}")


def cmd_attribute(args) -> int:
    from .attribution import notes_only_attribution, render_heatmap
    from .experiments import load_model
    models = [load_model(p) for p in args.checkpoint]
    for m in models:
        if m.featurizer.cfg.features_mode != "notes_only":
            raise UsageError(f"attribution needs a notes-only checkpoint, got {m.cfg.variant.name}")
    example = _find_example(args.corpus, models[0].cfg.task, args.example_id)
    note_id = args.note_id if args.note_id is not None else len(example.notes()) - 1
    reports = [notes_only_attribution(m, example, note_id, m=args.steps) for m in models]
    out = Path(args.out)
    man = _manifest(args, {"checkpoints": [str(p) for p in args.checkpoint], "example_id": args.example_id,
                           "note_id": note_id, "steps": args.steps}, [args.seed], {"corpus": str(args.corpus)})
    out.mkdir(parents=True, exist_ok=True)
    render_heatmap(reports, out / "report")
    print(f"attribution written to {out / 'report.html'}")
    _finish(man, out)
    return 0


def cmd_compare(args) -> int:
    from .experiments import compare_reports
    from .evaluate import MetricsReport
    runs = {Path(d).name: Path(d) for d in args.runs}
    for d in runs.values():
        if not (d / "report.json").exists():
            raise UsageError(f"{d} has no report.json")
    out = Path(args.out)
    man = _manifest(args, {"runs": [str(d) for d in args.runs], "metric": args.metric}, [], {})
    out.mkdir(parents=True, exist_ok=True)
    rows = compare_reports(runs, args.metric, out / "significance.csv")
    table = {name: MetricsReport.load(d / "report.json").formatted() for name, d in runs.items()}
    (out / "table.json").write_text(json.dumps(table, indent=2))
    for name, metrics in table.items():
        print(name.ljust(24), "  ".join(f"{k}={v}" for k, v in sorted(metrics.items())))
    for r in rows:
        print(f"{r['model_a']} vs {r['model_b']}: t={r['t']:.3f} p={r['p']:.4g}")
    _finish(man, out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    from .attribution import DEFAULT_STEPS
    from .record_model import VARIANTS
    from .records import TASKS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("runs/out"))
    common.add_argument("--full-scale", action="store_true", help="use full-size published hyperparameters")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="shipnotes", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic JSONL corpus")
    g.add_argument("--patients", type=int)
    g.set_defaults(func=cmd_generate)

    def model_args(sp):
        sp.add_argument("--corpus", type=Path, required=True)
        sp.add_argument("--task", choices=TASKS)
        sp.add_argument("--variant", choices=sorted(VARIANTS))

    pt = sub.add_parser("pretrain", parents=[common], help="language-model pretraining of the notes encoder")
    model_args(pt)
    pt.add_argument("--steps", type=int)
    pt.add_argument("--horizon", choices=("24h", "discharge"))
    pt.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", parents=[common], help="pretrain (if configured), train and test per seed")
    model_args(t)
    t.add_argument("--seeds", type=_seeds, help="e.g. 0..4")
    t.add_argument("--pretrain-steps", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--label-fraction", type=float)
    t.add_argument("--baseline-run", type=Path, nargs="*", default=[])
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="metrics of a checkpoint on one split")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--corpus", type=Path, required=True)
    e.add_argument("--split", choices=("train", "validation", "test"), default="test")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("attribute", parents=[common], help="integrated gradients heatmap for one note")
    a.add_argument("--checkpoint", type=Path, nargs=1)
    a.add_argument("--compare", type=Path, nargs=2, metavar=("CKPT_A", "CKPT_B"))
    a.add_argument("--corpus", type=Path, required=True)
    a.add_argument("--example-id", required=True)
    a.add_argument("--note-id", type=int)
    a.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    a.set_defaults(func=cmd_attribute)

    c = sub.add_parser("compare", parents=[common], help="Welch tests between finished runs")
    c.add_argument("--runs", type=Path, nargs="+", required=True)
    c.add_argument("--metric", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "attribute":
        if bool(args.checkpoint) == bool(args.compare):
            parser.error("attribute needs exactly one of --checkpoint or --compare")
        args.checkpoint = list(args.compare or args.checkpoint)
    try:
        return args.func(args)
    except ShipError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
