"""Dropout family used by the recurrent layers.

Four kinds:

* ``standard`` - independent Bernoulli keep-mask per element, scaled by 1/(1-rate).
* ``variational_sequence`` - one mask per sequence (shape ``(B, 1, d)``) reused at every timestep.
* ``zoneout`` - each state component keeps its previous value with probability ``rate``; no rescaling.
* ``variational_vocabulary`` - one keep-mask per vocabulary row per batch, scaled like ``standard``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import compute as C
from .errors import ConfigError, UsageError

KINDS = ("standard", "variational_sequence", "zoneout", "variational_vocabulary")


def check_rate(kind: str, rate: float) -> None:
    if kind not in KINDS:
        raise ConfigError(f"unknown dropout kind {kind!r}")
    hi_ok = kind == "zoneout"
    if not (0.0 <= rate < 1.0 or (hi_ok and rate == 1.0)):
        raise ConfigError(f"{kind} rate {rate} outside [0, 1)")


def keep_mask(shape, rate: float, rng: np.random.Generator, dtype=None) -> np.ndarray:
    """Inverted-dropout multiplier: 0 where dropped, 1/(1-rate) where kept."""
    dtype = dtype or C.get_dtype()
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    return ((rng.random(shape) >= rate) / (1.0 - rate)).astype(dtype)


def sequence_mask(batch: int, width: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """One mask per sequence; broadcasts over the time axis of a (B, T, d) input."""
    return keep_mask((batch, 1, width), rate, rng)


def vocabulary_mask(vocab: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    return keep_mask((vocab, 1), rate, rng)


def zoneout_update(shape, rate: float, rng: np.random.Generator | None, training: bool) -> np.ndarray:
    """Fraction of the new state to take: a 0/1 mask in training, ``1 - rate`` at inference."""
    if not training or rng is None:
        return np.full(shape, 1.0 - rate, dtype=C.get_dtype())
    if rate == 0.0:
        return np.ones(shape, dtype=C.get_dtype())
    return (rng.random(shape) >= rate).astype(C.get_dtype())


def apply_dropout(kind: str, rate: float, target, rng: np.random.Generator, previous=None,
                  training: bool = True):
    """Apply one dropout kind to ``target`` (a Tensor or array); returns a Tensor.

    ``variational_sequence`` expects a (B, T, d) target; ``variational_vocabulary``
    an embedding table (V, d); ``zoneout`` needs ``previous``, the state the
    target would replace.
    """
    check_rate(kind, rate)
    target = target if isinstance(target, C.Tensor) else C.constant(np.asarray(target, dtype=C.get_dtype()))
    shape = target.shape
    if kind == "zoneout":
        if previous is None:
            raise UsageError("zoneout needs the previous state")
        return C.blend(previous, target, zoneout_update(shape, rate, rng, training))
    if not training or rate == 0.0:
        return target
    if kind == "standard":
        mask = keep_mask(shape, rate, rng)
    elif kind == "variational_sequence":
        if len(shape) != 3:
            raise UsageError(f"variational_sequence dropout expects (B, T, d), got {shape}")
        mask = sequence_mask(shape[0], shape[2], rate, rng)
    else:
        mask = vocabulary_mask(shape[0], rate, rng)
    return C.mul(target, mask)


@dataclass(frozen=True)
class RecurrentDropout:
    """Rates for one recurrent layer.

    ``input``/``hidden`` are standard dropout on the layer's inputs and outputs;
    the variational pair act on the inputs and on the recurrent state fed back
    into the cell; ``zoneout`` acts on both hidden and cell state.
    """

    input: float = 0.0
    hidden: float = 0.0
    variational_input: float = 0.0
    variational_hidden: float = 0.0
    zoneout: float = 0.0

    def __post_init__(self):
        for name in ("input", "hidden", "variational_input", "variational_hidden"):
            check_rate("standard", getattr(self, name))
        check_rate("zoneout", self.zoneout)
