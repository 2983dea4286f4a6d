"""Ranking metrics, top-k recall and Welch's unequal-variance t-test."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import UndefinedMetricError

log = logging.getLogger(__name__)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative examples")
    r = _average_ranks(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision over positives ranked by descending score.

    Ties keep input order (stable sort), so the example index breaks them.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive example")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_pos + 1) / ranks
    return float(precision_at_hits.sum() / n_pos)


def weighted_auroc(scores, labels) -> float:
    """Per-label AUROC averaged with weights equal to label prevalence.

    Labels with only one class present are skipped (and drop out of the
    normaliser).
    """
    S = np.asarray(scores, dtype=float)
    Y = np.asarray(labels).astype(bool)
    if S.ndim == 1:
        S, Y = S[:, None], Y[:, None]
    prevs, aucs = [], []
    skipped = []
    for k in range(S.shape[1]):
        prev = Y[:, k].mean() if len(Y) else 0.0
        if prev == 0.0 or prev == 1.0:
            skipped.append(k)
            continue
        prevs.append(prev)
        aucs.append(auroc(S[:, k], Y[:, k]))
    if skipped:
        log.warning("weighted AUROC: skipped %d single-class labels", len(skipped))
    if not prevs:
        raise UndefinedMetricError("weighted AUROC: every label is single-class")
    # normalise first so equal prevalences give exactly equal weights
    w = np.asarray(prevs) / sum(prevs)
    return float(sum(wk * a for wk, a in zip(w, aucs)))


def topk_recall(ranked: Sequence[Sequence[int]], true_class: Sequence[int], k: int) -> float:
    """Fraction of examples whose true class is among the first ``k`` ranked ids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(true_class) == 0:
        return 0.0
    hits = sum(int(t) in list(r)[:k] for r, t in zip(ranked, true_class))
    return hits / len(true_class)


def topk_from_probs(probs: np.ndarray, k: int) -> np.ndarray:
    """Top-k class ids per row, ties to the lower id."""
    order = np.argsort(-np.asarray(probs, dtype=float), axis=-1, kind="stable")
    return order[:, :k]


# ---------------------------------------------------------------------------
# Student t tail via the regularised incomplete beta function


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b) by Lentz's continued fraction."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, dof: float) -> float:
    """Upper tail P(T > t) of Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return tail if t >= 0 else 1.0 - tail


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p: float


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Two-sided Welch test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va + vb == 0.0:
        if ma == mb:
            return WelchResult(0.0, float(len(a) + len(b) - 2), 1.0)
        raise ArithmeticError("Welch test undefined: both samples constant with different means")
    t = (ma - mb) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    p = min(1.0, 2.0 * t_sf(abs(t), dof))
    return WelchResult(float(t), float(dof), float(p))


# ---------------------------------------------------------------------------
# per-task metrics and reports

SELECTION_METRIC = {"mortality": "auroc", "ccs": "top5_recall", "icd9": "weighted_auroc"}


def task_metrics(task: str, probs: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    probs = np.asarray(probs, dtype=float)
    if task == "mortality":
        out = {}
        for name, fn in (("auprc", auprc), ("auroc", auroc)):
            try:
                out[name] = fn(probs, labels)
            except UndefinedMetricError:
                out[name] = float("nan")
        return out
    if task == "ccs":
        top = topk_from_probs(probs, min(5, probs.shape[1]))
        return {"top1_recall": topk_recall(top, labels, 1), "top5_recall": topk_recall(top, labels, 5)}
    Y = np.asarray(labels)
    out = {}
    try:
        out["auprc"] = auprc(probs.ravel(), Y.ravel())
    except UndefinedMetricError:
        out["auprc"] = float("nan")
    try:
        out["weighted_auroc"] = weighted_auroc(probs, Y)
    except UndefinedMetricError:
        out["weighted_auroc"] = float("nan")
    return out


def mean_std(values: Sequence[float]) -> tuple[float, float | None]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), (float(v.std(ddof=1)) if len(v) > 1 else None)


@dataclass
class MetricsReport:
    task: str
    runs: dict[str, list[float]] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    n_examples: int = 0

    def add_run(self, seed: int, metrics: Mapping[str, float]) -> None:
        self.seeds.append(seed)
        for k, v in metrics.items():
            self.runs.setdefault(k, []).append(float(v))

    def summary(self) -> dict[str, dict]:
        out = {}
        for k, vals in self.runs.items():
            m, s = mean_std(vals)
            out[k] = {"mean": m, "std": s, "runs": list(vals)}
        return out

    def formatted(self) -> dict[str, str]:
        out = {}
        for k, d in self.summary().items():
            std = d["std"]
            out[k] = f"{d['mean']:.3f} ({'-' if std is None else f'{std:.3f}'})"
        return out

    def to_json(self) -> dict:
        return {"task": self.task, "seeds": self.seeds, "n_examples": self.n_examples,
                "metrics": self.summary(), "formatted": self.formatted()}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "MetricsReport":
        with open(path) as fh:
            d = json.load(fh)
        rep = cls(d["task"], {k: list(v["runs"]) for k, v in d["metrics"].items()}, list(d["seeds"]),
                  d.get("n_examples", 0))
        return rep


def significance_matrix(reports: Mapping[str, MetricsReport], metric: str) -> list[dict]:
    """Pairwise Welch tests on one metric across named reports."""
    names = list(reports)
    rows = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ra, rb = reports[a].runs.get(metric, []), reports[b].runs.get(metric, [])
            row = {"model_a": a, "model_b": b, "metric": metric,
                   "mean_a": float(np.mean(ra)) if ra else float("nan"),
                   "mean_b": float(np.mean(rb)) if rb else float("nan")}
            try:
                res = welch_t_test(ra, rb)
                row.update(t=res.t, dof=res.dof, p=res.p)
            except (ValueError, ArithmeticError):
                row.update(t=float("nan"), dof=float("nan"), p=float("nan"))
            rows.append(row)
    return rows


def write_significance_csv(rows: list[dict], path) -> None:
    cols = ["model_a", "model_b", "metric", "mean_a", "mean_b", "t", "dof", "p"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c) for c in cols})
