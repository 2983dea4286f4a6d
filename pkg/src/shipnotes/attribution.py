"""Integrated gradients over note-token embeddings, plus heatmap rendering."""

from __future__ import annotations

import html
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import compute as C
from .errors import ConfigError, UsageError
from .featurize import EncodedExample
from .records import TaskExample, restrict_to_note

DEFAULT_STEPS = 20


def path_alphas(m: int) -> np.ndarray:
    """Midpoint-rule interpolation coefficients (j - 1/2) / m for j = 1..m."""
    if m < 1:
        raise ConfigError(f"integrated gradients needs m >= 1, got {m}")
    return (np.arange(1, m + 1) - 0.5) / m


def integrated_gradients_fn(grad_fn: Callable[[np.ndarray], np.ndarray], x, baseline=None, m: int = DEFAULT_STEPS,
                            chunk: int = 64) -> np.ndarray:
    """Elementwise IG of any function given its gradient.

    ``grad_fn`` maps a stack of path points (k, *x.shape) to the stacked
    gradients of the scalar target at those points.
    """
    x = np.asarray(x, dtype=float)
    x0 = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=float)
    alphas = path_alphas(m)
    total = np.zeros_like(x)
    delta = x - x0
    for lo in range(0, m, chunk):
        a = alphas[lo:lo + chunk].reshape((-1,) + (1,) * x.ndim)
        total += np.asarray(grad_fn(x0 + a * delta)).sum(axis=0)
    return delta * total / m


@dataclass
class AttributionReport:
    example_id: str
    variant: str
    target: int
    m: int
    tokens: list[tuple]                 # (token, note_id, position, timestamp)
    scores: np.ndarray                  # per token, signed
    logit: float                        # F(x)
    baseline_logit: float               # F(baseline)
    residual: float                     # sum(scores) - (F(x) - F(baseline))
    extras: dict = field(default_factory=dict)

    @property
    def relative_residual(self) -> float:
        gap = abs(self.logit - self.baseline_logit)
        return abs(self.residual) / gap if gap > 0 else float("inf") if self.residual else 0.0

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id, "variant": self.variant, "target": self.target, "m": self.m,
            "logit": self.logit, "baseline_logit": self.baseline_logit, "residual": self.residual,
            "tokens": [{"token": t[0], "note_id": int(t[1]), "position": int(t[2]), "timestamp": float(t[3]),
                        "score": float(s)} for t, s in zip(self.tokens, self.scores)],
            **self.extras,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _pick_target(model, logits: np.ndarray, target) -> int:
    if target is not None:
        if not 0 <= int(target) < logits.shape[-1]:
            raise ConfigError(f"target output {target} outside [0, {logits.shape[-1]})")
        return int(target)
    return 0 if model.cfg.task == "mortality" else int(np.argmax(logits[0]))


def integrated_gradients(model, item: EncodedExample, target: int | None = None, m: int = DEFAULT_STEPS,
                         baseline: float | np.ndarray = 0.0, chunk: int = 32) -> AttributionReport:
    """Attribute the target logit to each note token of ``item``.

    The path runs over the token embeddings only (structured inputs stay at
    their observed values), in inference mode. Per-token scores sum the IG of
    that token's embedding coordinates; a bigram's attribution is split
    equally between its two tokens.
    """
    path_alphas(m)
    if not model.featurizer.uses_notes:
        raise UsageError(f"variant {model.cfg.variant.name} has no notes to attribute")
    batch = model.featurizer.collate([item])
    uni, bi = model.token_embeddings(batch)
    xs = [uni.data] + ([bi.data] if bi is not None else [])
    x0s = [np.broadcast_to(np.asarray(baseline, dtype=x.dtype), x.shape) for x in xs]

    def logits_at(points):
        k = points[0].shape[0]
        b = model.featurizer.collate([item] * k)
        emb = [C.Tensor(p, name=f"path{j}") for j, p in enumerate(points)]
        out = model.forward(b, token_embeddings=emb[0], bigram_embeddings=emb[1] if len(emb) > 1 else None)
        return out, emb

    full, _ = logits_at(xs)
    tgt = _pick_target(model, full.data, target)
    base, _ = logits_at([x0.copy() for x0 in x0s])
    alphas = path_alphas(m)
    sums = [np.zeros(x.shape[1:], dtype=float) for x in xs]
    for lo in range(0, m, chunk):
        a = alphas[lo:lo + chunk]
        pts = [x0 + a.reshape(-1, 1, 1) * (x - x0) for x, x0 in zip(xs, x0s)]
        out, emb = logits_at(pts)
        F = C.sum(C.getitem(out, (slice(None), tgt)))
        for s, g in zip(sums, C.gradients(F, emb)):
            s += g.sum(axis=0)
    ig = [((x[0] - x0[0]) * s / m).sum(axis=-1) for x, x0, s in zip(xs, x0s, sums)]
    tokens = list(item.token_meta)
    scores = np.zeros(len(tokens))
    if model.cfg.variant.hierarchical:
        scores[:] = ig[0][:len(tokens)]
    else:
        n = len(item.uni_ids)
        np.add.at(scores, item.uni_src, ig[0][:n])
        if len(ig) > 1 and len(item.bi_ids):
            k = len(item.bi_ids)
            np.add.at(scores, item.bi_src[:, 0], 0.5 * ig[1][:k])
            np.add.at(scores, item.bi_src[:, 1], 0.5 * ig[1][:k])
    fx, fb = float(full.data[0, tgt]), float(base.data[0, tgt])
    extras = {}
    if not model.cfg.variant.hierarchical:
        extras["occurrence_scores"] = [float(v) for v in ig[0][:len(item.uni_ids)]]
    return AttributionReport(item.example_id, model.cfg.variant.name, tgt, m, tokens, scores, fx, fb,
                             float(scores.sum() - (fx - fb)), extras)


def notes_only_attribution(model, example: TaskExample, note_id: int, m: int = DEFAULT_STEPS,
                           target: int | None = None) -> AttributionReport:
    """IG for a notes-only model run on ``example`` reduced to its ``note_id``-th note."""
    if model.featurizer.cfg.features_mode != "notes_only":
        raise UsageError(f"notes-only attribution needs a notes-only variant, got {model.cfg.variant.name}")
    single = restrict_to_note(example, note_id)
    item = model.featurizer.encode(single, note_id_offset=note_id)
    report = integrated_gradients(model, item, target=target, m=m)
    report.extras["note_id"] = note_id
    return report


# ---------------------------------------------------------------------------
# rendering

_NEUTRAL = "rgb(255,255,255)"


def cell_color(score: float, scale: float) -> str:
    """Red for positive, blue for negative, opacity |score| / scale."""
    if scale <= 0 or score == 0:
        return _NEUTRAL
    a = min(1.0, abs(score) / scale)
    r, g, b = (214, 39, 40) if score > 0 else (31, 119, 180)
    mix = lambda ch: int(round(255 + a * (ch - 255)))  # noqa: E731
    return f"rgb({mix(r)},{mix(g)},{mix(b)})"


def _rows(reports: Sequence[AttributionReport]):
    keys: list[tuple] = []
    seen = set()
    lookup = []
    for rep in reports:
        d = {}
        for t, s in zip(rep.tokens, rep.scores):
            k = (int(t[1]), int(t[2]))
            d[k] = (t[0], float(s))
            if k not in seen:
                seen.add(k)
                keys.append((t[3], k[0], k[1]))
        lookup.append(d)
    keys.sort()
    rows = []
    for _, nid, pos in keys:
        k = (nid, pos)
        tok = next(d[k][0] for d in lookup if k in d)
        rows.append({"note_id": nid, "position": pos, "token": tok,
                     "scores": [d[k][1] if k in d else None for d in lookup]})
    return rows


def render_heatmap(reports: AttributionReport | Sequence[AttributionReport], out_stem) -> tuple[Path, Path]:
    """Write ``<stem>.html`` and ``<stem>.json``; several reports render as aligned columns."""
    if isinstance(reports, AttributionReport):
        reports = [reports]
    reports = list(reports)
    out_stem = Path(out_stem)
    out_stem.parent.mkdir(parents=True, exist_ok=True)
    rows = _rows(reports)
    scales = [float(np.max(np.abs(r.scores))) if len(r.scores) else 0.0 for r in reports]
    payload = {"reports": [r.to_json() for r in reports], "scales": scales, "rows": rows}
    json_path = out_stem.with_suffix(".json")
    json_path.write_text(json.dumps(payload, indent=1))
    parts = ["<!doctype html><html><head><meta charset='utf-8'><title>attribution</title>",
             "<style>table{border-collapse:collapse;font-family:monospace}"
             "td,th{border:1px solid #ccc;padding:2px 6px;text-align:center}"
             ".v{font-size:70%;display:block}</style></head><body>"]
    if not rows:
        parts.append("<p>No tokens to display.</p></body></html>")
    else:
        head = "".join(f"<th>{html.escape(r.variant)} (target {r.target}, m={r.m})</th>" for r in reports)
        parts.append(f"<table><tr><th>note</th><th>pos</th>{head}</tr>")
        for row in rows:
            cells = []
            for s, scale in zip(row["scores"], scales):
                if s is None:
                    cells.append("<td class='cell'></td>")
                else:
                    cells.append(f"<td class='cell' style='background:{cell_color(s, scale)}'>"
                                 f"{html.escape(row['token'])}<span class='v'>{s:+.3f}</span></td>")
            parts.append(f"<tr><td>{row['note_id']}</td><td>{row['position']}</td>{''.join(cells)}</tr>")
        parts.append("</table></body></html>")
    html_path = out_stem.with_suffix(".html")
    html_path.write_text("\n".join(parts))
    return html_path, json_path
