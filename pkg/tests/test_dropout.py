import numpy as np
import pytest

from shipnotes import compute as C
from shipnotes.dropout import KINDS, RecurrentDropout, apply_dropout, keep_mask
from shipnotes.errors import ConfigError, UsageError
from shipnotes.recurrent import run_lstm


class TestRates:
    @pytest.mark.parametrize("kind", KINDS)
    def test_rate_zero_identity(self, kind, rng):
        x = rng.normal(size=(2, 3, 4))
        prev = rng.normal(size=(2, 3, 4))
        out = apply_dropout(kind, 0.0, x, rng, previous=prev)
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("kind", ["standard", "variational_sequence", "variational_vocabulary"])
    def test_rate_one_rejected(self, kind, rng):
        with pytest.raises(ConfigError):
            apply_dropout(kind, 1.0, np.ones((2, 2, 2)), rng)

    def test_negative_and_unknown(self, rng):
        with pytest.raises(ConfigError):
            apply_dropout("zoneout", -0.1, np.ones(2), rng, previous=np.ones(2))
        with pytest.raises(ConfigError):
            apply_dropout("alpha", 0.1, np.ones(2), rng)
        with pytest.raises(ConfigError):
            RecurrentDropout(hidden=1.0)

    def test_inference_identity(self, rng):
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(apply_dropout("standard", 0.5, x, rng, training=False).data, x)


class TestStandard:
    def test_unbiased(self):
        rng = np.random.default_rng(0)
        x = np.linspace(0.5, 2.0, 8)
        masks = np.stack([keep_mask(x.shape, 0.3, rng) for _ in range(10_000)])
        mean = (masks * x).mean(0)
        assert np.all(np.abs(mean / x - 1) < 0.02)

    def test_kept_values_scaled(self, rng):
        out = apply_dropout("standard", 0.25, np.ones(1000), rng).data
        assert set(np.unique(out)) <= {0.0, 1 / 0.75}


class TestVariational:
    def test_same_mask_every_timestep(self, rng):
        x = np.ones((4, 7, 5))
        out = apply_dropout("variational_sequence", 0.5, x, rng).data
        for t in range(1, 7):
            np.testing.assert_array_equal(out[:, t], out[:, 0])
        assert (out == 0).any() and (out == 2).any()

    def test_requires_sequence_shape(self, rng):
        with pytest.raises(UsageError):
            apply_dropout("variational_sequence", 0.5, np.ones((3, 4)), rng)

    def test_vocabulary_zeroes_whole_rows(self, rng):
        out = apply_dropout("variational_vocabulary", 0.5, np.ones((50, 6)), rng).data
        rows = out.max(1)
        assert ((out == 0).all(1) | (out == 2).all(1)).all()
        assert (rows == 0).any()

    def test_lstm_recurrent_mask_fixed_across_steps(self, rng):
        # with zero input weights and U = I-ish, a dropped recurrent unit never feeds back
        X = C.constant(rng.normal(size=(2, 6, 3)))
        W, U, b = (C.Tensor(a) for a in C.lstm_init(rng, 3, 4))
        a = run_lstm(X, W, U, b, dropout=RecurrentDropout(variational_hidden=0.5),
                     rng=np.random.default_rng(1), training=True)[0].data
        b2 = run_lstm(X, W, U, b, dropout=RecurrentDropout(variational_hidden=0.5),
                      rng=np.random.default_rng(1), training=True, fused=False)[0].data
        np.testing.assert_allclose(a, b2, atol=1e-14)


class TestZoneout:
    def test_rate_one_freezes_state(self, rng):
        X = C.constant(rng.normal(size=(3, 8, 4)))
        W, U, b = (C.Tensor(a) for a in C.lstm_init(rng, 4, 5))
        H, h = run_lstm(X, W, U, b, dropout=RecurrentDropout(zoneout=1.0), rng=rng, training=True)
        assert np.all(H.data == 0.0) and np.all(h.data == 0.0)

    def test_rate_one_freezes_any_state(self, rng):
        prev = rng.normal(size=(4, 6))
        out = apply_dropout("zoneout", 1.0, rng.normal(size=(4, 6)), rng, previous=prev).data
        assert out.tobytes() == prev.tobytes()

    def test_zoned_components_copied_bitwise(self, rng):
        prev = rng.normal(size=(200, 10))
        new = rng.normal(size=(200, 10))
        out = apply_dropout("zoneout", 0.4, new, rng, previous=prev).data
        kept_prev = out == prev
        assert np.all(kept_prev | (out == new))
        assert 0.35 < kept_prev.mean() < 0.45

    def test_inference_expectation(self, rng):
        prev, new = np.zeros(5), np.ones(5)
        out = apply_dropout("zoneout", 0.3, new, rng, previous=prev, training=False).data
        np.testing.assert_allclose(out, 0.7, rtol=1e-15)

    def test_needs_previous(self, rng):
        with pytest.raises(UsageError):
            apply_dropout("zoneout", 0.3, np.ones(3), rng)
