"""Independent brute-force metric oracles shared by the unit and acceptance suites."""

import numpy as np


def auroc_pairs(s, y):
    """Brute force over all positive/negative pairs."""
    pos, neg = s[y == 1], s[y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def ap_sweep(s, y):
    """Threshold sweep over the stable descending order: sum of recall steps times precision."""
    order = sorted(range(len(s)), key=lambda i: (-s[i], i))
    n_pos = int(y.sum())
    tp, prev_recall, ap = 0, 0.0, 0.0
    for k, i in enumerate(order, 1):
        tp += int(y[i])
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / k
        prev_recall = recall
    return ap


def ap_grouped_sweep(s, y):
    """Sweep over distinct score thresholds (only valid without ties)."""
    n_pos = int(y.sum())
    ap, prev = 0.0, 0.0
    for thr in sorted(set(s), reverse=True):
        sel = s >= thr
        tp = int((y[sel] == 1).sum())
        ap += (tp / n_pos - prev) * tp / int(sel.sum())
        prev = tp / n_pos
    return ap


def instances(n_inst=500, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_inst):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        ties = rng.random() < 0.5
        s = rng.integers(0, 5, size=n).astype(float) if ties else rng.random(n)
        yield s, y, ties
