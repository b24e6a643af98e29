import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import log_softmax as sp_log_softmax
from scipy.special import softmax as sp_softmax

from halluc_meta import diffgraph as dg
from halluc_meta.diffgraph import DomainError, NonFiniteGradientError, ParamStore, ShapeError
from halluc_meta.gradcheck import numeric_grad, relative_error

TOL = 1e-4


def _check_unary(op, x, tol=TOL):
    """Gradient of sum(w * op(x)) against central differences."""
    rng = np.random.default_rng(1)
    w = rng.standard_normal(op(dg.constant(x)).shape)
    xn = dg.Node(x.copy(), requires_grad=True)
    loss = dg.sum(dg.mul(op(xn), dg.constant(w)))
    dg.backward(loss)
    num = numeric_grad(lambda: float(np.sum(op(dg.constant(xn.value)).value * w)), xn.value)
    assert relative_error(xn.grad, num).max() < tol


def _check_binary(op, a, b, tol=TOL):
    rng = np.random.default_rng(2)
    an = dg.Node(a.copy(), requires_grad=True)
    bn = dg.Node(b.copy(), requires_grad=True)
    w = rng.standard_normal(op(an, bn).shape)
    dg.backward(dg.sum(dg.mul(op(an, bn), dg.constant(w))))

    def f():
        return float(np.sum(op(dg.constant(an.value), dg.constant(bn.value)).value * w))

    assert relative_error(an.grad, numeric_grad(f, an.value)).max() < tol
    assert relative_error(bn.grad, numeric_grad(f, bn.value)).max() < tol


class TestMatmul:
    def test_identity(self):
        out = dg.matmul(dg.constant(np.eye(2)), dg.constant([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.value, [[1, 2], [3, 4]])

    def test_projector(self):
        out = dg.matmul(dg.constant([[1.0, 0.0], [0.0, 0.0]]), dg.constant([[5.0], [7.0]]))
        np.testing.assert_array_equal(out.value, [[5], [0]])

    def test_grad_of_sum(self):
        rng = np.random.default_rng(0)
        a = dg.Node(rng.standard_normal((3, 3)), requires_grad=True)
        b = dg.constant(rng.standard_normal((3, 3)))
        dg.backward(dg.sum(dg.matmul(a, b)))
        num = numeric_grad(lambda: float(np.sum(a.value @ b.value)), a.value)
        assert relative_error(a.grad, num).max() < 1e-6

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            dg.matmul(dg.constant(np.ones((2, 3))), dg.constant(np.ones((2, 3))))


class TestElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(dg.relu(dg.constant([-1.0, 0.0, 2.0])).value, [0, 0, 2])

    def test_relu_grad_at_zero_is_zero(self):
        x = dg.Node(np.array([0.0, 1.0, -1.0]), requires_grad=True)
        dg.backward(dg.sum(dg.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_sigmoid_zero(self):
        assert dg.sigmoid(dg.constant([0.0])).value[0] == 0.5

    def test_tanh_derivative(self):
        x = dg.Node(np.array([0.3]), requires_grad=True)
        dg.backward(dg.sum(dg.tanh(x)))
        num = numeric_grad(lambda: float(np.tanh(x.value).sum()), x.value)
        assert relative_error(x.grad, num).max() < 1e-6

    def test_log_domain(self):
        with pytest.raises(DomainError):
            dg.log(dg.constant([1.0, 0.0]))
        with pytest.raises(DomainError):
            dg.log(dg.constant([-2.0]))

    def test_binary_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dg.add(dg.constant(np.ones(3)), dg.constant(np.ones((1, 3))))

    @pytest.mark.parametrize("seed", range(20))
    def test_unary_grads_random(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, size=(3, 4))
        x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
        for op in (dg.relu, dg.tanh, dg.sigmoid, dg.exp, dg.softmax, dg.log_softmax,
                   lambda a: dg.scale(a, -1.7), dg.mean, dg.transpose):
            _check_unary(op, x)
        _check_unary(dg.log, np.abs(x) + 0.1)

    @pytest.mark.parametrize("seed", range(20))
    def test_binary_grads_random(self, seed):
        rng = np.random.default_rng(100 + seed)
        a, b = rng.uniform(-2, 2, size=(2, 3, 4))
        for op in (dg.add, dg.sub, dg.mul, dg.pairwise_sqdist, dg.pairwise_cosine_distance):
            _check_binary(op, a, b)
        _check_binary(dg.matmul, a, b.T)
        _check_binary(lambda x, y: dg.concat([x, y], axis=0), a, b)
        _check_binary(lambda x, y: dg.concat([x, y], axis=1), a, b)
        _check_binary(dg.squared_euclidean, a[0], b[0])
        _check_binary(dg.cosine_distance, a[0], b[0])

    @pytest.mark.parametrize("seed", range(5))
    def test_indexing_grads(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = rng.uniform(-2, 2, size=(5, 4))
        _check_unary(lambda a: dg.select_rows(a, [3, 0, 3, 1]), x)
        _check_unary(lambda a: dg.slice_cols(a, 1, 3), x)
        _check_unary(lambda a: dg.pick(a, [0, 2, 2], [1, 3, 1]), x)
        _check_unary(lambda a: dg.reshape(a, (2, 10)), x)

    def test_linear_grads(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((2, 3))
        bias = rng.standard_normal(2)
        _check_binary(lambda a, b: dg.linear(a, b, dg.constant(bias)), x, w)
        _check_unary(lambda b: dg.linear(dg.constant(x), dg.constant(w), b), bias)


class TestSoftmax:
    def test_uniform(self):
        for c in (-3.0, 0.0, 1e3):
            np.testing.assert_allclose(dg.softmax(dg.constant([c, c, c])).value, [1 / 3] * 3, atol=1e-15)

    def test_stable_large(self):
        p = dg.softmax(dg.constant([1000.0, 0.0])).value
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)

    def test_formula(self):
        # 1 / (1 + e^-4)
        np.testing.assert_allclose(dg.softmax(dg.constant([0.0, -4.0])).value, [0.98201, 0.01799], atol=1e-5)

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_sum_and_shift_invariance(self, s, c):
        p = dg.softmax(dg.constant(s)).value
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p >= 0)
        np.testing.assert_allclose(dg.softmax(dg.constant(s + c)).value, p, atol=1e-10)
        np.testing.assert_allclose(p, sp_softmax(s), atol=1e-12)
        np.testing.assert_allclose(dg.log_softmax(dg.constant(s)).value, sp_log_softmax(s), atol=1e-10)


class TestReductions:
    def test_squared_euclidean(self):
        x = dg.constant([1.5, -2.0])
        assert dg.squared_euclidean(x, x).value == 0.0
        assert dg.squared_euclidean(dg.constant([0.0, 0.0]), dg.constant([2.0, 0.0])).value == 4.0

    def test_cosine(self):
        assert dg.cosine_distance(dg.constant([1.0, 0.0]), dg.constant([0.0, 1.0])).value == pytest.approx(1.0)

    def test_cosine_zero_norm(self):
        with pytest.raises(DomainError):
            dg.cosine_distance(dg.constant([0.0, 0.0]), dg.constant([1.0, 0.0]))
        with pytest.raises(DomainError):
            dg.pairwise_cosine_distance(dg.constant(np.zeros((1, 2))), dg.constant(np.ones((2, 2))))

    def test_pairwise_matches_scipy(self):
        from scipy.spatial.distance import cdist

        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((6, 4)), rng.standard_normal((3, 4))
        np.testing.assert_allclose(dg.pairwise_sqdist(dg.constant(a), dg.constant(b)).value,
                                   cdist(a, b, "sqeuclidean"), atol=1e-12)
        np.testing.assert_allclose(dg.pairwise_cosine_distance(dg.constant(a), dg.constant(b)).value,
                                   cdist(a, b, "cosine"), atol=1e-12)


class TestBackward:
    def test_sum_grad_is_ones(self):
        ps = ParamStore()
        w = ps.add("w", np.random.default_rng(0).standard_normal((2, 3, 2)))
        grads = dg.backward(dg.sum(w), ps)
        np.testing.assert_array_equal(grads["w"], np.ones((2, 3, 2)))

    def test_constant_loss_zero_grad(self):
        ps = ParamStore()
        ps.add("w", np.ones(3))
        u = ps.add("u", np.ones(2))
        grads = dg.backward(dg.sum(u), ps)
        np.testing.assert_array_equal(grads["w"], np.zeros(3))

    def test_loss_node_grad_is_one(self):
        x = dg.Node(np.array([1.0, 2.0]), requires_grad=True)
        loss = dg.sum(dg.mul(x, x))
        dg.backward(loss)
        assert loss.grad == 1.0

    def test_non_scalar_rejected(self):
        with pytest.raises(ShapeError):
            dg.backward(dg.constant(np.ones(2)))

    def test_shared_parameter_accumulates(self):
        rng = np.random.default_rng(7)
        ps = ParamStore()
        w = ps.add("w", rng.standard_normal((3, 3)))
        x = dg.constant(rng.standard_normal((2, 3)))

        def build():
            h = dg.tanh(dg.linear(x, w))
            return dg.sum(dg.mul(dg.linear(h, w), dg.linear(h, w)))

        grads = dg.backward(build(), ps)
        num = numeric_grad(lambda: float(build().value), w.value)
        assert relative_error(grads["w"], num).max() < TOL

    def test_repeated_backward_does_not_leak(self):
        ps = ParamStore()
        w = ps.add("w", np.array([2.0]))
        g1 = dg.backward(dg.sum(dg.mul(w, w)), ps)["w"].copy()
        g2 = dg.backward(dg.sum(dg.mul(w, w)), ps)["w"]
        np.testing.assert_array_equal(g1, g2)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(11)
            ps = ParamStore(11)
            w = ps.add("w", rng.standard_normal((4, 4)))
            x = dg.constant(rng.standard_normal((3, 4)))
            loss = dg.sum(dg.log_softmax(dg.linear(dg.tanh(dg.linear(x, w)), w)))
            return loss.value, dg.backward(loss, ps)["w"]

        (l1, g1), (l2, g2) = run(), run()
        assert l1 == l2
        assert np.array_equal(g1, g2)


class TestParamStore:
    def test_sorted_and_unique(self):
        ps = ParamStore()
        ps.add("b", np.zeros(1))
        ps.add("a", np.zeros(1))
        assert ps.names() == ["a", "b"]
        with pytest.raises(KeyError):
            ps.add("a", np.zeros(1))

    def test_grad_norm_groups(self):
        ps = ParamStore()
        a = ps.add("phi.W0", np.array([1.0, 2.0]))
        b = ps.add("G.W0", np.array([3.0]))
        dg.backward(dg.sum(dg.add(dg.mul(a, a), dg.constant(np.zeros(2)))) + dg.sum(b), ps)
        norms = ps.grad_norms()
        assert norms["phi"] == pytest.approx(np.sqrt(2.0**2 + 4.0**2))
        assert norms["G"] == pytest.approx(1.0)


class TestSgd:
    def _store(self, g):
        ps = ParamStore()
        p = ps.add("p", np.array([1.0, -2.0]))
        p.grad = np.array(g, dtype=float)
        return ps, p

    def test_lr_zero(self):
        ps, p = self._store([3.0, 4.0])
        dg.sgd_step(ps, 0.0, 0.9)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_plain_step(self):
        ps, p = self._store([3.0, 4.0])
        dg.sgd_step(ps, 1.0, 0.0)
        np.testing.assert_array_equal(p.value, [-2.0, -6.0])
        np.testing.assert_array_equal(p.grad, [0.0, 0.0])

    def test_two_momentum_steps(self):
        g = np.array([0.5, -1.5])
        ps, p = self._store(g)
        dg.sgd_step(ps, 0.1, 0.9)
        p.grad = g.copy()
        dg.sgd_step(ps, 0.1, 0.9)
        np.testing.assert_allclose(p.value, np.array([1.0, -2.0]) - 0.1 * (g + 1.9 * g), rtol=1e-15)

    def test_non_finite_refused(self):
        ps, p = self._store([np.nan, 1.0])
        with pytest.raises(NonFiniteGradientError, match="p"):
            dg.sgd_step(ps, 0.1, 0.9)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_frozen_entries_untouched(self):
        ps = ParamStore()
        p = ps.add("G.W", np.ones(2), trainable=False)
        p.grad = np.ones(2)
        dg.sgd_step(ps, 1.0, 0.0)
        np.testing.assert_array_equal(p.value, np.ones(2))

    @pytest.mark.parametrize("lr,mom", [(-0.1, 0.5), (0.1, 1.0), (0.1, -0.2)])
    def test_bad_hyperparameters(self, lr, mom):
        ps, _ = self._store([1.0, 1.0])
        with pytest.raises(ValueError):
            dg.sgd_step(ps, lr, mom)


def test_fd_resolution_scale():
    from halluc_meta.gradcheck import fd_resolution

    base = 2 * np.finfo(np.float64).eps / 1e-5 / 1e-4
    np.testing.assert_allclose(fd_resolution(0.3), base)
    np.testing.assert_allclose(fd_resolution(-8.0), 8 * base)
