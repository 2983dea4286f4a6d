from collections import Counter

import numpy as np
import pytest

from shipnotes import compute as C
from shipnotes.errors import ConfigError, UsageError
from shipnotes.notes_encoder import NotesEncoderConfig, TokenSequence, init_notes_params
from shipnotes.pretrain import (LMSequence, PretrainConfig, build_corpus, init_lm_heads, lm_logits, lm_loss,
                                pretrain, pretrained_names, transfer)
from shipnotes.records import Admission, Event, Labels, PatientRecord, Vocabulary, validate_record

from conftest import tiny_model


def lm_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    p = init_notes_params(cfg, rng)
    p.update(init_lm_heads(cfg, rng))
    return p


class TestLMLoss:
    def test_uniform_logits(self):
        cfg = NotesEncoderConfig(vocab_size=9, word_dim=3, hidden=4, bidirectional=True)
        p = lm_params(cfg)
        for k in ("lm/fw/W", "lm/bw/W"):
            p[k] = np.zeros_like(p[k])
        seq = TokenSequence([2, 5, 3, 7], [0] * 4, [0.0] * 4)
        assert float(lm_loss(seq, p, cfg).data) == pytest.approx(np.log(9), rel=1e-14)

    def test_short_sequence_counted(self):
        cfg = NotesEncoderConfig(vocab_size=9, word_dim=3, hidden=4)
        counts = Counter()
        assert lm_loss(TokenSequence([2], [0], [0.0]), lm_params(cfg), cfg, counts) is None
        assert counts["too_short"] == 1

    def test_causality_both_directions(self, rng):
        cfg = NotesEncoderConfig(vocab_size=10, word_dim=3, hidden=4, bidirectional=True)
        P = {k: C.Tensor(v, name=k) for k, v in lm_params(cfg).items()}
        ids = np.array([[2, 3, 4, 5, 6, 7]])
        mask = np.ones(ids.shape)
        fw, bw = lm_logits(ids, mask, P, cfg, prefix="notes")
        i = 2
        emb = P["notes/word_emb"].data.copy()
        emb[ids[0, i + 1]] += rng.normal(size=3)
        P2 = dict(P, **{"notes/word_emb": C.Tensor(emb)})
        fw2, bw2 = lm_logits(ids, mask, P2, cfg, prefix="notes")
        np.testing.assert_array_equal(fw2.data[0, :i + 1], fw.data[0, :i + 1])
        assert not np.allclose(bw2.data[0, :i + 2], bw.data[0, :i + 2])
        emb = P["notes/word_emb"].data.copy()
        emb[ids[0, i - 1]] += rng.normal(size=3)
        P3 = dict(P, **{"notes/word_emb": C.Tensor(emb)})
        fw3, bw3 = lm_logits(ids, mask, P3, cfg, prefix="notes")
        np.testing.assert_array_equal(bw3.data[0, i:], bw.data[0, i:])
        assert not np.allclose(fw3.data[0, i - 1:], fw.data[0, i - 1:])

    def test_alternating_corpus_learned(self):
        cfg = NotesEncoderConfig(vocab_size=4, word_dim=4, hidden=8, bidirectional=True)
        params = init_notes_params(cfg, np.random.default_rng(0))
        ab = np.array([2, 3] * 10)
        corpus = [LMSequence(ab, np.zeros(20, dtype=bool))]
        res = pretrain(corpus, PretrainConfig(steps=500, batch_size=1, learning_rate=1e-2, precision="float64"),
                       params, cfg, seed=0)
        assert res.loss_curve[-1] < 0.1
        assert res.loss_curve[0] > 1.0


class TestPretrain:
    def test_zero_steps_bitwise(self):
        cfg = NotesEncoderConfig(vocab_size=6, word_dim=3, hidden=2)
        params = init_notes_params(cfg, np.random.default_rng(0))
        before = {k: v.copy() for k, v in params.items()}
        res = pretrain([], PretrainConfig(steps=0), params, cfg)
        for k in before:
            assert res.params[k].tobytes() == before[k].tobytes()
        assert res.steps == 0 and res.loss_curve == []

    def test_empty_corpus(self):
        cfg = NotesEncoderConfig(vocab_size=6, word_dim=3, hidden=2)
        params = init_notes_params(cfg, np.random.default_rng(0))
        with pytest.raises(ConfigError, match="empty"):
            pretrain([LMSequence(np.array([2]), np.zeros(1, bool))], PretrainConfig(steps=5), params, cfg)

    def test_split_guard(self):
        cfg = NotesEncoderConfig(vocab_size=6, word_dim=3, hidden=2)
        params = init_notes_params(cfg, np.random.default_rng(0))
        corpus = [LMSequence(np.array([2, 3, 4]), np.zeros(3, bool), split="validation")]
        with pytest.raises(UsageError):
            pretrain(corpus, PretrainConfig(steps=2, batch_size=1), params, cfg)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            PretrainConfig(steps=-1)
        with pytest.raises(ConfigError):
            PretrainConfig(horizon="48h")

    def test_heads_discarded(self):
        cfg = NotesEncoderConfig(vocab_size=6, word_dim=3, hidden=2)
        params = init_notes_params(cfg, np.random.default_rng(0))
        corpus = [LMSequence(np.array([2, 3, 4, 5]), np.zeros(4, bool))]
        res = pretrain(corpus, PretrainConfig(steps=3, batch_size=1), params, cfg)
        assert set(res.params) == set(params)

    def test_loss_decreases_by_window(self, small_cohort):
        m = tiny_model(small_cohort, "ccs", "ship_notes_only")
        corpus = build_corpus(small_cohort, m.featurizer.word_vocab, "discharge", 200)
        names = pretrained_names(m.params)
        res = pretrain(corpus, PretrainConfig(steps=600, batch_size=8, learning_rate=1e-2, max_tokens=200),
                       {n: m.params[n].data for n in names}, m.notes_cfg, seed=0)
        win = np.array(res.loss_curve).reshape(-1, 100).mean(1)
        violations = np.sum(np.diff(win) >= 0)
        assert violations <= 0.1 * (len(win) - 1) + 1e-9
        assert win[-1] < win[0]


class TestCorpus:
    def record(self):
        adm = Admission(0.0, 48.0, labels=Labels(False, 1, (1,)))
        evs = (Event(10.0, "note:n", text="alpha beta"), Event(30.0, "note:n", text="gamma delta"))
        return validate_record(PatientRecord("p", (adm,), evs))

    def test_horizon_24h(self):
        vocab = Vocabulary(["alpha", "beta", "gamma", "delta"])
        (s,) = build_corpus([self.record()], vocab, "24h")
        assert list(s.ids) == vocab.ids(["alpha", "beta"])
        (s,) = build_corpus([self.record()], vocab, "discharge")
        assert list(s.ids) == vocab.ids(["alpha", "beta", "gamma", "delta"])
        assert list(s.note_start) == [False, False, True, False]

    def test_truncation(self):
        vocab = Vocabulary(["alpha", "beta", "gamma", "delta"])
        (s,) = build_corpus([self.record()], vocab, "discharge", max_tokens=3)
        assert list(s.ids) == vocab.ids(["beta", "gamma", "delta"])


class TestTransfer:
    def test_copies_encoder_only(self, small_cohort):
        m = tiny_model(small_cohort, "ccs", "ship")
        rng = np.random.default_rng(5)
        pre = {n: rng.normal(size=m.params[n].shape) for n in pretrained_names(m.params)}
        attn = m.params["notes/attn/u"].data.copy()
        transfer(pre, m)
        for n, v in pre.items():
            assert m.params[n].data.tobytes() == v.tobytes()
            assert m.params[n].requires_grad
        assert "notes/attn/u" not in pre
        np.testing.assert_array_equal(m.params["notes/attn/u"].data, attn)

    def test_forward_uses_pretrained_embeddings(self, small_cohort):
        from shipnotes.records import build_task_examples
        m = tiny_model(small_cohort, "ccs", "ship")
        pre = {n: m.params[n].data * 2 for n in pretrained_names(m.params)}
        transfer(pre, m)
        b = m.featurizer.collate([m.featurizer.encode(build_task_examples(small_cohort[:1], "ccs")[0])])
        emb, _ = m.token_embeddings(b)
        assert emb.data.tobytes() == pre["notes/word_emb"][b.token_ids].tobytes()

    def test_zero_step_transfer_is_fresh_init(self, small_cohort):
        m = tiny_model(small_cohort, "ccs", "ship", seed=3)
        fresh = tiny_model(small_cohort, "ccs", "ship", seed=3)
        names = pretrained_names(m.params)
        res = pretrain([], PretrainConfig(steps=0), {n: m.params[n].data for n in names}, m.notes_cfg)
        transfer(res.params, m)
        for k in m.params:
            assert m.params[k].data.tobytes() == fresh.params[k].data.tobytes()

    def test_shape_mismatch(self, small_cohort):
        m = tiny_model(small_cohort, "ccs", "ship")
        pre = {n: m.params[n].data for n in pretrained_names(m.params)}
        pre["notes/word_emb"] = np.zeros((3, 3))
        with pytest.raises(ConfigError, match="shape"):
            transfer(pre, m)
        del pre["notes/word_emb"]
        with pytest.raises(ConfigError, match="lacks"):
            transfer(pre, m)
