import numpy as np
import pytest

from shipnotes import compute as C
from shipnotes.errors import ConfigError, VocabularyError
from shipnotes.notes_encoder import (DEFAULT_MAX_TOKENS, NotesEncoderConfig, TokenSequence, attend, attend_batch,
                                     encode_tokens, init_notes_params, notes_for_timesteps, truncate_tokens)


def sig(x):
    return 1 / (1 + np.exp(-x))


def lstm_oracle(x, W, U, b, h, c):
    n = U.shape[0]
    z = x @ W + h @ U + b
    i, f, g, o = sig(z[:n]), sig(z[n:2 * n]), np.tanh(z[2 * n:3 * n]), sig(z[3 * n:])
    c = f * c + i * g
    return o * np.tanh(c), c


def seq(ids, note_ids=None):
    return TokenSequence(list(ids), note_ids or [0] * len(ids), [0.0] * len(ids))


class TestTruncate:
    notes = [(0, 1.0, list("abc"), [2, 3, 4]), (1, 2.0, list("def"), [5, 6, 7])]

    def test_keeps_most_recent(self):
        s = truncate_tokens(self.notes, 4)
        assert s.tokens == list("cdef")
        assert s.note_ids == [0, 1, 1, 1] and s.positions == [2, 0, 1, 2]
        assert s.timestamps == [1.0, 2.0, 2.0, 2.0]

    def test_short_unchanged(self):
        assert truncate_tokens(self.notes, 1000).tokens == list("abcdef")

    def test_identity_at_length(self):
        assert truncate_tokens(self.notes, 6).ids == [2, 3, 4, 5, 6, 7]

    def test_defaults(self):
        assert DEFAULT_MAX_TOKENS == {"mortality": 1000, "ccs": 2500, "icd9": 2500}

    def test_invalid(self):
        with pytest.raises(ConfigError):
            truncate_tokens(self.notes, 0)


class TestEncodeTokens:
    def setup_method(self):
        self.cfg = NotesEncoderConfig(vocab_size=12, word_dim=5, hidden=4, bidirectional=False)
        self.P = init_notes_params(self.cfg, np.random.default_rng(0))
        self.P["notes/lstm_fw/U"] += 0.3 * np.random.default_rng(1).normal(size=self.P["notes/lstm_fw/U"].shape)

    def test_single_token_one_step(self):
        H = encode_tokens(seq([7]), self.P, self.cfg)
        P = self.P
        h, _ = lstm_oracle(P["notes/word_emb"][7], P["notes/lstm_fw/W"], P["notes/lstm_fw/U"],
                           P["notes/lstm_fw/b"], np.zeros(4), np.zeros(4))
        np.testing.assert_allclose(H[0], h, rtol=0, atol=1e-14)

    def test_multi_step_oracle(self):
        ids = [3, 9, 4, 4]
        H = encode_tokens(seq(ids), self.P, self.cfg)
        P = self.P
        h = c = np.zeros(4)
        for k, i in enumerate(ids):
            h, c = lstm_oracle(P["notes/word_emb"][i], P["notes/lstm_fw/W"], P["notes/lstm_fw/U"],
                               P["notes/lstm_fw/b"], h, c)
            np.testing.assert_allclose(H[k], h, rtol=0, atol=1e-13)

    def test_bidirectional_shape(self):
        cfg = NotesEncoderConfig(vocab_size=12, word_dim=5, hidden=4, bidirectional=True)
        P = init_notes_params(cfg, np.random.default_rng(0))
        assert encode_tokens(seq([2, 3, 5]), P, cfg).shape == (3, 8)
        assert cfg.out_dim == 8

    def test_out_of_range(self):
        with pytest.raises(VocabularyError):
            encode_tokens(seq([2, 12]), self.P, self.cfg)

    def test_order_sensitive(self, rng):
        changed = 0
        for _ in range(20):
            ids = list(rng.integers(2, 12, size=6))
            if ids == ids[::-1]:
                continue
            a = encode_tokens(seq(ids), self.P, self.cfg)[-1]
            b = encode_tokens(seq(ids[::-1]), self.P, self.cfg)[-1]
            changed += not np.allclose(a, b, atol=1e-12)
        assert changed >= 19

    def test_note_reset_flag(self):
        cfg = NotesEncoderConfig(12, 5, 4, False, carry_state=False)
        H = encode_tokens(seq([3, 4, 5], [0, 0, 1]), self.P, cfg)
        alone = encode_tokens(seq([5]), self.P, cfg)
        np.testing.assert_allclose(H[2], alone[0], atol=1e-14)
        carried = encode_tokens(seq([3, 4, 5], [0, 0, 1]), self.P, self.cfg)
        assert not np.allclose(carried[2], alone[0])

    def test_gradient_three_tokens(self):
        P = {k: C.Tensor(v, name=k) for k, v in self.P.items()}
        from shipnotes.notes_encoder import encode_batch
        R = np.random.default_rng(3).normal(size=(1, 3, 4))

        def fn():
            emb = C.embedding_lookup(P["notes/word_emb"], np.array([[2, 5, 8]]))
            return C.sum(C.mul(encode_batch(emb, None, P, self.cfg), R))

        rep = C.check_gradients(fn, P)
        assert rep.max_error < 1e-4


class TestAttend:
    def setup_method(self):
        self.cfg = NotesEncoderConfig(vocab_size=5, word_dim=3, hidden=3, bidirectional=False)
        self.P = init_notes_params(self.cfg, np.random.default_rng(4))

    def test_identical_states(self, rng):
        h = rng.normal(size=3)
        v, _ = attend(np.tile(h, (5, 1)), self.P, self.cfg)
        np.testing.assert_allclose(v, h, rtol=0, atol=1e-14)

    def test_single_token(self, rng):
        h = rng.normal(size=(1, 3))
        v, a = attend(h, self.P, self.cfg)
        np.testing.assert_array_equal(a, [1.0])
        np.testing.assert_allclose(v, h[0], atol=1e-15)

    def test_zero_context_is_mean(self, rng):
        P = dict(self.P)
        P["notes/attn/u"] = np.zeros_like(P["notes/attn/u"])
        H = rng.normal(size=(4, 3))
        v, a = attend(H, P, self.cfg)
        np.testing.assert_allclose(a, 0.25, atol=1e-15)
        np.testing.assert_allclose(v, H.mean(0), atol=1e-14)

    def test_empty_note(self):
        v, a = attend(np.zeros((0, 3)), self.P, self.cfg)
        np.testing.assert_array_equal(v, np.zeros(3))
        assert a.size == 0

    def test_scores_formula(self, rng):
        H = rng.normal(size=(4, 3))
        P = self.P
        s = (np.tanh(H @ P["notes/attn/W"] + P["notes/attn/b"]) @ P["notes/attn/u"])[:, 0]
        alpha = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
        v, a = attend(H, P, self.cfg)
        np.testing.assert_allclose(a, alpha, atol=1e-14)
        np.testing.assert_allclose(v, alpha @ H, atol=1e-14)

    def test_dot_variant(self, rng):
        cfg = NotesEncoderConfig(5, 3, 3, False, attention="dot")
        P = init_notes_params(cfg, rng)
        assert "notes/attn/W" not in P
        H = rng.normal(size=(4, 3))
        s = (H @ P["notes/attn/u"])[:, 0]
        _, a = attend(H, P, cfg)
        np.testing.assert_allclose(a, np.exp(s) / np.exp(s).sum(), atol=1e-14)

    def test_distribution_and_convex_hull(self, rng):
        for _ in range(50):
            L = int(rng.integers(1, 9))
            H = rng.normal(scale=3, size=(L, 3))
            v, a = attend(H, self.P, self.cfg)
            assert (a >= 0).all() and abs(a.sum() - 1) <= 1e-12
            assert (v >= H.min(0) - 1e-12).all() and (v <= H.max(0) + 1e-12).all()

    def test_batched_membership(self, rng):
        H = rng.normal(size=(1, 5, 3))
        member = np.zeros((1, 2, 5), dtype=bool)
        member[0, 0, :2] = member[0, 1, 2:] = True
        V, _ = attend_batch(C.constant(H), member, {k: C.Tensor(v) for k, v in self.P.items()}, self.cfg)
        np.testing.assert_allclose(V.data[0, 0], attend(H[0, :2], self.P, self.cfg)[0], atol=1e-14)
        np.testing.assert_allclose(V.data[0, 1], attend(H[0, 2:], self.P, self.cfg)[0], atol=1e-14)


class TestNotesForTimesteps:
    def test_direct_attachment_and_mean(self, rng):
        V = rng.normal(size=(1, 3, 2))
        to_bag = np.array([[[1, 0, 0], [0, 0.5, 0.5], [0, 0, 0]]], dtype=float)
        out = notes_for_timesteps(C.constant(V), to_bag).data[0]
        np.testing.assert_array_equal(out[0], V[0, 0])
        np.testing.assert_allclose(out[1], V[0, 1:].mean(0), atol=1e-15)
        np.testing.assert_array_equal(out[2], 0.0)
