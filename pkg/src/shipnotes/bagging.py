"""Fixed-duration timestep bags over an event timeline."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .records import Event, StandardizationStats, TaskExample, apply_standardization


@dataclass(frozen=True)
class BaggingConfig:
    bag_hours: float = 1.0
    max_timesteps: int = 1000
    layout: tuple[tuple[str, int], ...] = ()
    include_masks: bool = True
    keep_empty_bags: bool = False

    def __post_init__(self):
        if not self.bag_hours > 0:
            raise ConfigError(f"bag_hours must be > 0, got {self.bag_hours}")
        if self.max_timesteps < 1:
            raise ConfigError(f"max_timesteps must be >= 1, got {self.max_timesteps}")

    @property
    def width(self) -> int:
        d = sum(dim for _, dim in self.layout)
        return d + (len(self.layout) if self.include_masks else 0)


@dataclass
class TimestepBag:
    index: int
    start: float
    end: float
    collapsed: bool = False
    values: dict[str, list[float]] = field(default_factory=lambda: defaultdict(list))
    tokens: dict[str, list[str]] = field(default_factory=lambda: defaultdict(list))
    notes: list[Event] = field(default_factory=list)

    def mean_value(self, feature: str) -> float | None:
        vals = self.values.get(feature)
        return float(np.mean(vals)) if vals else None

    def present(self, feature: str) -> bool:
        return bool(self.values.get(feature) or self.tokens.get(feature)) or (
            feature.startswith("note") and bool(self.notes))

    @property
    def n_observations(self) -> int:
        return (sum(len(v) for v in self.values.values()) + sum(len(v) for v in self.tokens.values())
                + len(self.notes))


def bag_offset(t: float, prediction_time: float, bag_hours: float) -> int:
    """How many bags back from prediction time the timestamp falls.

    Bag k covers (P - (k+1)h, P - kh]; an event exactly at P is in bag 0.
    """
    return max(0, math.ceil((prediction_time - t) / bag_hours) - 1)


def bag_timeline(example: TaskExample, cfg: BaggingConfig,
                 stats: StandardizationStats | None = None) -> list[TimestepBag]:
    """Group events into bags ending at prediction time, oldest first.

    Only occupied bags are emitted unless ``keep_empty_bags``. When more than
    ``max_timesteps`` bags would result, everything older than the most recent
    ``max_timesteps - 1`` bags is merged into a collapsed bag at position 0.
    """
    P, h, t_max = example.prediction_time, cfg.bag_hours, cfg.max_timesteps
    by_offset: dict[int, list[Event]] = defaultdict(list)
    for e in example.events:
        if e.t > P:
            continue
        by_offset[bag_offset(e.t, P, h)].append(e)
    if not by_offset:
        return [TimestepBag(0, P - h, P)]
    if cfg.keep_empty_bags:
        offsets = list(range(max(by_offset), -1, -1))
    else:
        offsets = sorted(by_offset, reverse=True)
    if len(offsets) > t_max:
        cut = len(offsets) - (t_max - 1)
        old, recent = offsets[:cut], offsets[cut:]
        groups = [(True, old)] + [(False, [k]) for k in recent]
    else:
        groups = [(False, [k]) for k in offsets]
    bags = []
    for i, (collapsed, ks) in enumerate(groups):
        start = P - (max(ks) + 1) * h
        end = P - min(ks) * h
        bag = TimestepBag(i, start, end, collapsed=collapsed)
        for k in sorted(ks, reverse=True):
            for e in by_offset.get(k, ()):
                if e.text is not None:
                    bag.notes.append(e)
                elif e.value is not None:
                    v = e.value if stats is None else apply_standardization(stats, e.value, e.feature)
                    bag.values[e.feature].append(v)
                else:
                    bag.tokens[e.feature].append(e.token)
        bags.append(bag)
    return bags


def bag_index_for_time(bags: Sequence[TimestepBag], t: float) -> int:
    """Position of the bag whose window contains ``t`` (collapsed bag catches older times)."""
    for i in range(len(bags) - 1, -1, -1):
        b = bags[i]
        if b.collapsed:
            return i
        if b.start < t <= b.end:
            return i
    return 0


def assemble_timestep_vector(bag: TimestepBag, embeddings: Mapping[str, Callable[[list[str]], np.ndarray] | Mapping],
                             cfg: BaggingConfig) -> np.ndarray:
    """Concatenate per-feature blocks in layout order, then presence masks.

    ``embeddings[feature]`` maps a categorical token to its vector (a dict or a
    callable over the bag's token list returning the mean vector). Continuous
    features have dimension 1; absent features contribute zero blocks.
    """
    blocks, masks = [], []
    for feature, dim in cfg.layout:
        block = np.zeros(dim)
        present = False
        if bag.values.get(feature):
            if dim != 1:
                raise DimensionError(f"continuous feature {feature} declared with dimension {dim}")
            block[0] = np.mean(bag.values[feature])
            present = True
        elif bag.tokens.get(feature):
            if feature not in embeddings:
                raise DimensionError(f"no embedding for categorical feature {feature}")
            emb = embeddings[feature]
            toks = bag.tokens[feature]
            vec = emb(toks) if callable(emb) else np.mean([emb[t] for t in toks], axis=0)
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (dim,):
                raise DimensionError(f"embedding for {feature} has shape {vec.shape}, layout says ({dim},)")
            block = vec
            present = True
        blocks.append(block)
        masks.append(1.0 if present else 0.0)
    known = {f for f, _ in cfg.layout}
    stray = [f for f in list(bag.values) + list(bag.tokens) if (bag.values.get(f) or bag.tokens.get(f)) and f not in known]
    if stray:
        raise DimensionError(f"bag carries features missing from layout: {sorted(set(stray))}")
    parts = blocks + ([np.asarray(masks)] if cfg.include_masks else [])
    return np.concatenate(parts) if parts else np.zeros(0)


def note_ngrams(tokens: Sequence[str], order: int) -> list[str]:
    """Unigrams, plus ``a_b`` bigrams when ``order == 2``."""
    if order not in (1, 2):
        raise ConfigError(f"ngram order must be 1 or 2, got {order}")
    grams = list(tokens)
    if order == 2:
        grams += [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]
    return grams


def bow_note_features(tokens: Sequence[str], order: int, table: Mapping[str, np.ndarray],
                      dim: int | None = None) -> tuple[np.ndarray, bool]:
    """Mean embedding over the bag's n-grams; returns ``(vector, present)``.

    Identical multisets of n-grams give bitwise-identical vectors: the terms
    are summed in sorted order.
    """
    grams = sorted(note_ngrams(tokens, order))
    if dim is None:
        dim = len(next(iter(table.values())))
    if not grams:
        return np.zeros(dim), False
    acc = np.zeros(dim)
    for g in grams:
        acc = acc + np.asarray(table[g], dtype=float)
    return acc / len(grams), True
