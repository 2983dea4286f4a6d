"""LSTM layer built from the compute ops, with padding, zoneout and recurrent dropout."""

from __future__ import annotations

import numpy as np

from . import compute as C
from .dropout import RecurrentDropout, keep_mask, sequence_mask, zoneout_update

_NO_DROPOUT = RecurrentDropout()


def lstm_step(x_proj, h, c, U, n_hidden: int):
    """One cell update given the precomputed input projection ``x W + b``."""
    gates = C.add(x_proj, C.matmul(h, U))
    s = C.sigmoid(gates)
    i = s[:, :n_hidden]
    f = s[:, n_hidden:2 * n_hidden]
    o = s[:, 3 * n_hidden:]
    g = C.tanh(gates[:, 2 * n_hidden:3 * n_hidden])
    c_new = C.add(C.mul(f, c), C.mul(i, g))
    h_new = C.mul(o, C.tanh(c_new))
    return h_new, c_new


def run_lstm(X, W, U, b, mask=None, reverse: bool = False, dropout: RecurrentDropout | None = None,
             rng: np.random.Generator | None = None, training: bool = False, reset=None, fused: bool = True):
    """Run an LSTM over ``X`` (B, T, n_in).

    ``mask`` (B, T) marks real steps; on padded steps the state is carried
    unchanged, so right-padded batches end on each sequence's true last state.
    ``reset`` (B, T) zeroes the incoming state before the flagged steps.
    Returns ``(H, h_final)`` with ``H`` of shape (B, T, n_hidden) in input order.
    ``fused=False`` builds the per-step graph from elementary ops; both paths
    draw the same masks from ``rng`` and agree to rounding.
    """
    X = X if isinstance(X, C.Tensor) else C.constant(X)
    drop = dropout or _NO_DROPOUT
    B, T, n_in = X.shape
    n_hidden = U.shape[0]
    dtype = X.data.dtype
    mask = np.ones((B, T), dtype=dtype) if mask is None else np.asarray(mask, dtype=dtype)
    live = training and rng is not None

    if live and drop.input > 0:
        X = C.mul(X, keep_mask(X.shape, drop.input, rng))
    if live and drop.variational_input > 0:
        X = C.mul(X, sequence_mask(B, n_in, drop.variational_input, rng))
    XW = C.add(C.matmul(X, W), b)

    rec_mask = sequence_mask(B, n_hidden, drop.variational_hidden, rng)[:, 0, :] \
        if live and drop.variational_hidden > 0 else None
    if fused:
        keep_h = np.empty((B, T, n_hidden), dtype=dtype)
        keep_c = np.empty((B, T, n_hidden), dtype=dtype)
        for t in (range(T - 1, -1, -1) if reverse else range(T)):
            step = mask[:, t:t + 1]
            if drop.zoneout > 0:
                keep_h[:, t] = step * zoneout_update((B, n_hidden), drop.zoneout, rng, live)
                keep_c[:, t] = step * zoneout_update((B, n_hidden), drop.zoneout, rng, live)
            else:
                keep_h[:, t] = keep_c[:, t] = step
        H = C.lstm_sequence(XW, U, keep_h, keep_c, rec_mask, reset, reverse)
        h = C.getitem(H, (slice(None), 0 if reverse else T - 1))
        if live and drop.hidden > 0:
            H = C.mul(H, keep_mask(H.shape, drop.hidden, rng))
        return H, h
    h = C.constant(np.zeros((B, n_hidden), dtype=dtype))
    c = C.constant(np.zeros((B, n_hidden), dtype=dtype))
    outs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        if reset is not None and np.any(reset[:, t]):
            r = (1.0 - np.asarray(reset[:, t], dtype=dtype))[:, None]
            h, c = C.mul(h, r), C.mul(c, r)
        h_in = C.mul(h, rec_mask) if rec_mask is not None else h
        h_new, c_new = lstm_step(XW[:, t], h_in, c, U, n_hidden)
        step = mask[:, t:t + 1]
        if drop.zoneout > 0:
            keep_h = step * zoneout_update((B, n_hidden), drop.zoneout, rng, live)
            keep_c = step * zoneout_update((B, n_hidden), drop.zoneout, rng, live)
        else:
            keep_h = keep_c = np.broadcast_to(step, (B, n_hidden))
        c = C.blend(c, c_new, keep_c)
        h = C.blend(h, h_new, keep_h)
        outs[t] = h
    H = C.stack(outs, axis=1)
    if live and drop.hidden > 0:
        H = C.mul(H, keep_mask(H.shape, drop.hidden, rng))
    return H, h
