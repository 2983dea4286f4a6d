import json

import numpy as np
import pytest

from shipnotes import compute as C
from shipnotes.errors import DimensionError, NumericError, UsageError, VocabularyError

import gradcases


def triple_loop(A, B):
    m, k = A.shape
    n = B.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += A[i, p] * B[p, j]
            out[i, j] = s
    return out


class TestTensor:
    def test_rejects_nan_and_inf(self):
        with pytest.raises(NumericError):
            C.Tensor([1.0, np.nan])
        with pytest.raises(NumericError):
            C.Tensor([np.inf])

    def test_precision_context(self):
        with C.precision("float32"):
            assert C.Tensor([1.0]).data.dtype == np.float32
        assert C.Tensor([1.0]).data.dtype == np.float64


class TestMatmul:
    def test_identity(self):
        out = C.matmul(C.Tensor(np.eye(2)), C.Tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_orthogonal_selection(self):
        out = C.matmul(C.Tensor([[1, 0]]), C.Tensor([[0], [5]]))
        np.testing.assert_array_equal(out.data, [[0]])

    def test_against_triple_loop(self, rng):
        A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        out = C.matmul(C.Tensor(A), C.Tensor(B)).data
        assert np.abs(out - triple_loop(A, B)).max() < 1e-12

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            C.matmul(C.Tensor(np.ones((2, 3))), C.Tensor(np.ones((2, 3))))


class TestPointwise:
    def test_sigmoid_at_zero(self):
        x = C.Tensor([0.0])
        assert C.sigmoid(x).data[0] == 0.5
        g = C.gradients(C.sum(C.sigmoid(x)), [x])[0]
        assert g[0] == pytest.approx(0.25, abs=1e-15)

    def test_tanh_odd(self, rng):
        x = rng.normal(size=50)
        np.testing.assert_allclose(C.tanh(C.Tensor(-x)).data, -C.tanh(C.Tensor(x)).data, rtol=0, atol=1e-15)
        assert C.pointwise("tanh", C.Tensor([0.0])).data[0] == 0.0

    def test_sigmoid_complement(self, rng):
        x = rng.normal(scale=5, size=100)
        s = C.sigmoid(C.Tensor(x)).data + C.sigmoid(C.Tensor(-x)).data
        np.testing.assert_allclose(s, 1.0, atol=1e-15)

    def test_sigmoid_extreme_inputs_finite(self):
        out = C.sigmoid(C.Tensor([-800.0, 800.0])).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_unknown_pointwise(self):
        with pytest.raises(Exception):
            C.pointwise("softplus", C.Tensor([0.0]))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(C.softmax(C.Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = C.softmax(C.Tensor([1000.0, 0.0])).data
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-300)

    def test_shift_invariance(self, rng):
        x = rng.normal(size=5)
        a = C.softmax(C.Tensor(x)).data
        b = C.softmax(C.Tensor(x + 37.5)).data
        assert np.abs(a - b).max() < 1e-12
        assert abs(a.sum() - 1) < 1e-12

    def test_empty_is_dimension_error(self):
        with pytest.raises(DimensionError):
            C.softmax(C.Tensor(np.zeros(0)))

    def test_masked_softmax_zero_outside_mask(self, rng):
        x = C.Tensor(rng.normal(size=(1, 1, 4)))
        mask = np.array([[[True, True, False, False], [False, False, False, False]]])
        out = C.masked_softmax(x, mask).data
        np.testing.assert_array_equal(out[0, 0, 2:], 0.0)
        assert abs(out[0, 0].sum() - 1) < 1e-12
        np.testing.assert_array_equal(out[0, 1], 0.0)


class TestEmbedding:
    def test_gather(self):
        table = C.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = C.embedding_lookup(table, [1, 1, 0]).data
        np.testing.assert_array_equal(out, [[3, 4], [3, 4], [1, 2]])

    def test_repeated_ids_accumulate(self):
        table = C.Tensor(np.ones((3, 2)))
        once = C.gradients(C.sum(C.embedding_lookup(table, [2])), [table])[0]
        twice = C.gradients(C.sum(C.embedding_lookup(table, [2, 2])), [table])[0]
        np.testing.assert_array_equal(twice, 2 * once)

    def test_full_vocabulary_recovers_table(self, rng):
        t = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(C.embedding_lookup(C.Tensor(t), np.arange(5)).data, t)

    def test_out_of_range(self):
        with pytest.raises(VocabularyError, match="7"):
            C.embedding_lookup(C.Tensor(np.ones((3, 2))), [0, 7])


class TestLosses:
    def test_softmax_ce_uniform(self):
        out = C.softmax_cross_entropy(C.Tensor(np.zeros((2, 4))), [0, 3]).data
        np.testing.assert_allclose(out, np.log(4), rtol=1e-15)

    def test_sigmoid_ce_stable(self):
        out = C.sigmoid_cross_entropy(C.Tensor([1000.0, -1000.0]), [1, 0]).data
        np.testing.assert_array_equal(out, [0.0, 0.0])


class TestBackward:
    def test_linear(self, rng):
        x = rng.normal(size=4)
        w = C.Tensor(rng.normal(size=4), name="w")
        g = C.backward(C.sum(C.mul(w, x)), {"w": w})["w"]
        np.testing.assert_array_equal(g, x)

    def test_sum_sigmoid_finite_difference(self, rng):
        W = C.Tensor(rng.normal(size=(3, 4)), name="W")
        x = rng.normal(size=(4, 1))
        rep = C.check_gradients(lambda: C.sum(C.sigmoid(C.matmul(W, x))), {"W": W})
        assert rep.max_error < 1e-6

    def test_disconnected_parameter_gets_zero(self, rng):
        a = C.Tensor(rng.normal(size=3), name="a")
        b = C.Tensor(rng.normal(size=(2, 2)), name="b")
        g = C.backward(C.sum(a), {"a": a, "b": b})
        np.testing.assert_array_equal(g["b"], np.zeros((2, 2)))

    def test_non_scalar_output(self):
        with pytest.raises(UsageError):
            C.backward(C.Tensor(np.ones(3)), {})

    def test_linearity(self, rng):
        x = C.Tensor(rng.normal(size=(3, 3)), name="x")
        f = lambda: C.sum(C.tanh(C.matmul(x, x)))  # noqa: E731
        g = lambda: C.sum(C.mul(C.sigmoid(x), x))  # noqa: E731
        both = C.backward(C.add(f(), g()), {"x": x})["x"]
        sep = C.backward(f(), {"x": x})["x"] + C.backward(g(), {"x": x})["x"]
        np.testing.assert_allclose(both, sep, rtol=1e-13, atol=1e-14)

    def test_deterministic_rerun(self, rng):
        fn, params = gradcases.build_attention_graph(np.random.default_rng(5))
        a = C.backward(fn(), params)
        b = C.backward(fn(), params)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_shared_subgraph_accumulates(self):
        x = C.Tensor([2.0], name="x")
        y = C.mul(x, x)
        g = C.gradients(C.sum(C.add(y, y)), [x])[0]
        assert g[0] == 8.0


class TestGradientChecks:
    @pytest.mark.parametrize("op", sorted(gradcases.OP_CASES))
    def test_op_random_cases(self, op):
        worst = gradcases.run_cases({op: gradcases.OP_CASES[op]}, 100)[op]
        assert worst <= 1e-4

    @pytest.mark.parametrize("graph", sorted(gradcases.GRAPH_CASES))
    def test_composed_graphs(self, graph):
        worst = gradcases.run_cases({graph: gradcases.GRAPH_CASES[graph]}, 5)[graph]
        assert worst <= 1e-4

    def test_lstm_cell_all_weight_blocks(self, rng):
        from shipnotes.recurrent import lstm_step
        n_in, n = 3, 2
        W, U, b = (C.Tensor(a + 0.1 * rng.normal(size=a.shape), name=k)
                   for k, a in zip("WUb", C.lstm_init(rng, n_in, n)))
        x = rng.normal(size=(2, n_in))
        h0, c0 = rng.normal(size=(2, n)), rng.normal(size=(2, n))
        R = rng.normal(size=(2, n))

        def fn():
            h, c = lstm_step(C.add(C.matmul(x, W), b), C.constant(h0), C.constant(c0), U, n)
            return C.add(C.sum(C.mul(h, R)), C.sum(c))

        rep = C.check_gradients(fn, {"W": W, "U": U, "b": b})
        assert rep.passed and rep.max_error < 1e-4

    def test_attention_over_three_vectors(self, rng):
        from shipnotes.notes_encoder import NotesEncoderConfig, attend_batch, init_notes_params
        cfg = NotesEncoderConfig(vocab_size=3, word_dim=2, hidden=2, bidirectional=False)
        P = {k: C.Tensor(v, name=k) for k, v in init_notes_params(cfg, rng).items() if "attn" in k}
        H = C.Tensor(rng.normal(size=(1, 3, 2)), name="H")
        P["H"] = H
        member = np.ones((1, 1, 3), dtype=bool)
        rep = C.check_gradients(lambda: C.sum(C.mul(attend_batch(H, member, P, cfg)[0], [[[0.3, -1.2]]])), P)
        assert rep.max_error < 1e-4

    def test_zero_parameter_graph(self):
        rep = C.check_gradients(lambda: C.sum(C.Tensor([1.0])), {})
        assert rep.errors == {} and rep.passed

    def test_requires_float64(self):
        with C.precision("float32"):
            p = C.Tensor([1.0], name="p")
        with pytest.raises(UsageError):
            C.check_gradients(lambda: C.sum(p), {"p": p})


class TestFusedLSTM:
    def test_matches_composed_graph(self, rng):
        from shipnotes.dropout import RecurrentDropout
        from shipnotes.recurrent import run_lstm
        X = C.Tensor(rng.normal(size=(3, 5, 4)), name="X")
        W, U, b = (C.Tensor(a, name=k) for k, a in zip("WUb", C.lstm_init(rng, 4, 3)))
        mask = np.ones((3, 5))
        mask[1, 3:] = 0
        reset = np.zeros((3, 5), dtype=bool)
        reset[0, 2] = True
        G = rng.normal(size=(3, 5, 3))
        for reverse in (False, True):
            outs = []
            for fused in (True, False):
                H, h = run_lstm(X, W, U, b, mask, reverse, RecurrentDropout(0.1, 0.1, 0.1, 0.2, 0.3),
                                np.random.default_rng(9), True, reset, fused=fused)
                grads = C.backward(C.add(C.sum(C.mul(H, G)), C.sum(h)), {"X": X, "W": W, "U": U, "b": b})
                outs.append((H.data, grads))
            np.testing.assert_allclose(outs[0][0], outs[1][0], rtol=0, atol=1e-14)
            for k in outs[0][1]:
                np.testing.assert_allclose(outs[0][1][k], outs[1][1][k], rtol=0, atol=1e-12)


class TestCheckpoint:
    def test_roundtrip_float32_little_endian(self, tmp_path, rng):
        params = {"a/W": rng.normal(size=(2, 3)), "b": C.Tensor(rng.normal(size=4))}
        path = C.save_checkpoint(tmp_path / "ck", params, {"config_hash": "abc", "pretrain_steps": 7})
        arrays, manifest = C.load_checkpoint(path)
        assert arrays["a/W"].dtype == np.dtype("<f4")
        np.testing.assert_allclose(arrays["a/W"], params["a/W"], rtol=1e-6)
        assert manifest["pretrain_steps"] == 7
        assert manifest["parameters"]["a/W"] == [2, 3]
        assert json.loads((tmp_path / "ck.json").read_text())["version"] == C.CHECKPOINT_VERSION

    def test_config_hash_stable(self):
        assert C.config_hash({"a": 1, "b": [1, 2]}) == C.config_hash({"b": [1, 2], "a": 1})
        assert C.config_hash({"a": 1}) != C.config_hash({"a": 2})


class TestInit:
    def test_lstm_forget_bias(self, rng):
        W, U, b = C.lstm_init(rng, 5, 3)
        assert W.shape == (5, 12) and U.shape == (3, 12)
        np.testing.assert_array_equal(b[3:6], 1.0)
        np.testing.assert_array_equal(np.delete(b, np.s_[3:6]), 0.0)

    def test_xavier_bounds(self, rng):
        w = C.xavier_uniform(rng, 10, 20)
        assert np.abs(w).max() <= np.sqrt(6 / 30)
