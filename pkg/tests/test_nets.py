import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halluc_meta import diffgraph as dg
from halluc_meta import nets
from halluc_meta.diffgraph import ParamStore, ShapeError
from halluc_meta.gradcheck import check_params
from halluc_meta.nets import (CheckpointError, HallucinatorParams, LstmCellParams, MlpSpec,
                              attlstm_embed, bilstm_embed, hallucinate, hallucinate_one,
                              init_identity_blocks, init_mlp, load_checkpoint, mlp_forward,
                              save_checkpoint)


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestMlp:
    def _identity_layer(self, final_relu):
        spec = MlpSpec((3, 3), final_relu=final_relu)
        ps = ParamStore()
        ps.add("phi.W0", np.eye(3))
        ps.add("phi.b0", np.zeros(3))
        return spec, ps

    def test_identity_passthrough(self):
        spec, ps = self._identity_layer(False)
        x = np.array([[-1.0, 0.5, 2.0]])
        np.testing.assert_array_equal(mlp_forward(spec, ps, dg.constant(x)).value, x)

    def test_identity_final_relu(self):
        spec, ps = self._identity_layer(True)
        x = np.array([[-1.0, 0.5, 2.0]])
        np.testing.assert_array_equal(mlp_forward(spec, ps, dg.constant(x)).value, [[0.0, 0.5, 2.0]])

    def test_width_mismatch(self):
        spec, ps = self._identity_layer(False)
        with pytest.raises(ShapeError):
            mlp_forward(spec, ps, dg.constant(np.ones((1, 4))))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            MlpSpec((3,), final_relu=False)

    def test_uniform_init_bounds(self):
        w = nets.uniform_init(np.random.default_rng(0), 50, 16)
        assert np.abs(w).max() <= 0.25 and np.abs(w).max() > 0.2

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        spec = MlpSpec((4, 6, 3), final_relu=False)
        ps = ParamStore()
        init_mlp(ps, "phi", spec, rng)
        x = dg.constant(rng.uniform(0.1, 2, (5, 4)))
        w = dg.constant(rng.standard_normal((5, 3)))
        errs = check_params(lambda: dg.sum(dg.mul(mlp_forward(spec, ps, x), w)), ps)
        assert max(errs.values()) < 1e-4


class TestLstm:
    def _zero_cell(self, prefix, dim, rec, cand_bias=0.0):
        cell = LstmCellParams(prefix, dim, dim, rec)
        ps = ParamStore()
        cell.init(ps, np.random.default_rng(0))
        ps[f"{prefix}.Wx"].value = np.zeros((4 * dim, dim))
        ps[f"{prefix}.Wh"].value = np.zeros((4 * dim, rec))
        b = np.zeros(4 * dim)
        b[dim:2 * dim] = 1.0
        b[3 * dim:] = cand_bias
        ps[f"{prefix}.b"].value = b
        return cell, ps

    def test_forget_bias_initialised_to_one(self):
        cell = LstmCellParams("g", 3, 3, 3)
        ps = ParamStore()
        cell.init(ps, np.random.default_rng(0))
        np.testing.assert_array_equal(ps["g.b"].value, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])

    def test_bilstm_zero_weights_is_identity(self):
        fwd, ps = self._zero_cell("g_fwd", 2, 2)
        bwd = LstmCellParams("g_bwd", 2, 2, 2)
        for k in ("Wx", "Wh", "b"):
            ps.add(f"g_bwd.{k}", ps[f"g_fwd.{k}"].value.copy())
        x = np.array([[1.0, 2.0], [0.5, 0.0]])
        np.testing.assert_array_equal(bilstm_embed(fwd, bwd, ps, dg.constant(x)).value, x)

    def test_bilstm_hand_unrolled(self):
        # zero weights, candidate bias 0.5: every step sees the same gates
        # i = o = 1/2, f = sigmoid(1), g = tanh(0.5)
        fwd, ps = self._zero_cell("g_fwd", 2, 2, cand_bias=0.5)
        bwd = LstmCellParams("g_bwd", 2, 2, 2)
        for k in ("Wx", "Wh", "b"):
            ps.add(f"g_bwd.{k}", ps[f"g_fwd.{k}"].value.copy())
        i, f, o, g = 0.5, _sig(1.0), 0.5, np.tanh(0.5)
        c1 = i * g
        c2 = f * c1 + i * g
        h1, h2 = o * np.tanh(c1), o * np.tanh(c2)
        x = np.array([[1.0, 2.0], [0.5, 0.0]])
        out = bilstm_embed(fwd, bwd, ps, dg.constant(x)).value
        np.testing.assert_allclose(out, x + (h1 + h2), atol=1e-15)

    def test_bilstm_single_element(self):
        fwd, ps = self._zero_cell("g_fwd", 2, 2, cand_bias=0.3)
        bwd = LstmCellParams("g_bwd", 2, 2, 2)
        for k in ("Wx", "Wh", "b"):
            ps.add(f"g_bwd.{k}", ps[f"g_fwd.{k}"].value.copy())
        h = 0.5 * np.tanh(0.5 * np.tanh(0.3))
        out = bilstm_embed(fwd, bwd, ps, dg.constant([[1.0, 1.0]])).value
        np.testing.assert_allclose(out, [[1 + 2 * h, 1 + 2 * h]], atol=1e-15)

    def test_bilstm_gradcheck(self):
        rng = np.random.default_rng(2)
        ps = ParamStore()
        fwd, bwd = LstmCellParams("g_fwd", 3, 3, 3), LstmCellParams("g_bwd", 3, 3, 3)
        fwd.init(ps, rng)
        bwd.init(ps, rng)
        x = dg.constant(rng.uniform(0, 2, (4, 3)))
        errs = check_params(lambda: dg.sum(bilstm_embed(fwd, bwd, ps, x)), ps)
        assert max(errs.values()) < 1e-4

    def test_attlstm_attention_is_distribution(self):
        rng = np.random.default_rng(3)
        ps = ParamStore()
        cell = LstmCellParams("f_att", 3, 3, 6)
        cell.init(ps, rng)
        logs = []
        attlstm_embed(cell, ps, dg.constant(rng.standard_normal((4, 3))),
                      dg.constant(rng.standard_normal((5, 3))), steps=3, attention_log=logs)
        assert len(logs) == 3
        for a in logs:
            assert a.shape == (4, 5) and np.all(a >= 0)
            np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_attlstm_zero_cell_returns_query(self):
        cell, ps = self._zero_cell("f_att", 2, 4)
        q = np.array([[0.3, 1.0]])
        out = attlstm_embed(cell, ps, dg.constant(q), dg.constant([[1.0, 0.0], [0.0, 1.0]]), steps=2)
        np.testing.assert_array_equal(out.value, q)

    def test_attlstm_gradcheck(self):
        rng = np.random.default_rng(4)
        ps = ParamStore()
        cell = LstmCellParams("f_att", 3, 3, 6)
        cell.init(ps, rng)
        q = dg.constant(rng.standard_normal((2, 3)))
        m = dg.constant(rng.standard_normal((4, 3)))
        w = dg.constant(rng.standard_normal((2, 3)))
        errs = check_params(lambda: dg.sum(dg.mul(attlstm_embed(cell, ps, q, m, 2), w)), ps)
        assert max(errs.values()) < 1e-4

    def test_attlstm_bad_steps(self):
        cell, ps = self._zero_cell("f_att", 2, 4)
        with pytest.raises(ValueError):
            attlstm_embed(cell, ps, dg.constant(np.ones((1, 2))), dg.constant(np.ones((1, 2))), steps=0)


class TestHallucinator:
    def _make(self, d=5, dz=5, hidden=5, identity=True, seed=0):
        hp = HallucinatorParams(d, dz, hidden)
        ps = ParamStore(seed)
        hp.init(ps, np.random.default_rng(seed), identity=identity)
        return hp, ps

    def test_shapes(self):
        hp, ps = self._make(4, 3, 6)
        assert ps["G.W0"].shape == (6, 7)
        assert ps["G.W2"].shape == (4, 6)
        assert hp.spec.final_relu

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_copy_at_init(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 12))
        hidden = d + int(rng.integers(0, 5))
        hp, ps = self._make(d, int(rng.integers(1, 8)), hidden)
        x = np.abs(rng.standard_normal((20, d))) * 5
        z = rng.standard_normal((20, hp.noise_dim)) * 10
        assert np.abs(hallucinate(hp, ps, x, z).value - x).max() < 1e-12

    def test_identity_block_structure(self):
        hp, ps = self._make(3, 2, 4)
        w0 = ps["G.W0"].value
        np.testing.assert_array_equal(w0[:, 3:], 0.0)
        np.testing.assert_array_equal(w0[:3, :3], np.eye(3))
        for i in range(3):
            np.testing.assert_array_equal(ps[f"G.b{i}"].value, 0.0)

    def test_hidden_too_small(self):
        hp = HallucinatorParams(5, 5, 4)
        ps = ParamStore()
        with pytest.raises(ValueError, match="hidden"):
            hp.init(ps, np.random.default_rng(0))

    def test_random_init_does_not_copy(self):
        hp, ps = self._make(identity=False)
        rng = np.random.default_rng(1)
        x = np.abs(rng.standard_normal((10, 5)))
        z = rng.standard_normal((10, 5))
        assert np.linalg.norm(hallucinate(hp, ps, x, z).value - x) > 1e-3

    def test_output_nonnegative_random(self):
        hp, ps = self._make(identity=False, seed=3)
        rng = np.random.default_rng(2)
        out = hallucinate(hp, ps, np.abs(rng.standard_normal((50, 5))), rng.standard_normal((50, 5))).value
        assert np.all(out >= 0)

    def test_hallucinate_one_matches_batch(self):
        hp, ps = self._make(identity=False, seed=4)
        rng = np.random.default_rng(5)
        x, z = np.abs(rng.standard_normal(5)), rng.standard_normal(5)
        np.testing.assert_array_equal(hallucinate_one(hp, ps, x, z),
                                      hallucinate(hp, ps, x[None], z[None]).value[0])

    def test_gradcheck_norm(self):
        hp, ps = self._make(identity=False, seed=6)
        rng = np.random.default_rng(7)
        x = np.abs(rng.standard_normal((3, 5))) + 0.5
        z = rng.standard_normal((3, 5))

        def loss():
            g = hallucinate(hp, ps, x, z)
            return dg.sum(dg.mul(g, g))

        assert max(check_params(loss, ps).values()) < 1e-4

    def test_noise_shape_checked(self):
        hp, ps = self._make()
        with pytest.raises(ShapeError):
            hallucinate(hp, ps, np.ones((2, 5)), np.ones((2, 4)))


class TestCheckpoint:
    def _store(self):
        ps = ParamStore(rng_seed=42)
        rng = np.random.default_rng(0)
        ps.add("phi.W0", rng.standard_normal((3, 2)))
        ps.add("G.b0", rng.standard_normal(4), trainable=False)
        return ps

    def test_round_trip(self, tmp_path):
        ps = self._store()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, ps, {"learner": "pn"})
        back, meta = load_checkpoint(path)
        assert meta == {"learner": "pn"}
        assert back.names() == ps.names() and back.rng_seed == 42
        for k in ps.names():
            assert np.array_equal(back[k].value, ps[k].value)
            assert back.is_trainable(k) == ps.is_trainable(k)

    def test_layout(self, tmp_path):
        ps = self._store()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, ps)
        raw = path.read_bytes()
        assert raw[:4] == b"HMCK"
        tail = np.frombuffer(raw[-(3 * 2 + 4) * 8:], dtype="<f8")
        # sorted-name order: G.b0 then phi.W0
        np.testing.assert_array_equal(tail[:4], ps["G.b0"].value)
        np.testing.assert_array_equal(tail[4:], ps["phi.W0"].value.ravel())

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, self._store())
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError, match="5 bytes"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"XXXX" + b"\0" * 20)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)
