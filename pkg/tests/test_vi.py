import numpy as np
import pytest

from vitrain.graphs import erdos_renyi
from vitrain.network import LayerSpec, Network, forward, init_params, param_gradient_sgd
from vitrain.numerics import Activation, RngStream
from vitrain.vi import (
    ModulusEstimate,
    ParamDomain,
    adaptive_step,
    estimate_modulus,
    hidden_layer_operator,
    last_layer_operator,
    layer_operators,
    oe_select_iterate,
    oe_step,
    pack_params,
    project,
    unpack_params,
    vi_step,
)


def sigmoid_net(seed, in_ch=4, out_ch=2):
    return init_params(
        [LayerSpec(in_ch, out_ch, activation=Activation("sigmoid"))],
        "glorot",
        RngStream(seed),
    )


class TestLastLayerOperator:
    def test_zero_at_planted_parameters(self):
        from vitrain.data import gen_gcn_teacher

        g = erdos_renyi(8, 0.4, RngStream(1))
        specs = [LayerSpec(2, 1, filter="gcn", activation=Activation("sigmoid"))]
        ds, teacher = gen_gcn_teacher(g, 50, specs, RngStream(2))
        _, trace = forward(teacher, ds.features, mode="train", update_stats=False)
        op = last_layer_operator(teacher, trace, ds.expectations)
        assert np.max(np.abs(op.weight)) <= 1e-10
        assert np.max(np.abs(op.bias)) <= 1e-10

    def test_equals_ce_gradient_exactly(self):
        net = sigmoid_net(3)
        gen = np.random.default_rng(4)
        x = gen.standard_normal((7, 1, 4))
        y = (gen.random((7, 1, 2)) < 0.5).astype(float)
        _, trace = forward(net, x)
        op = last_layer_operator(net, trace, y)
        grad = param_gradient_sgd(net, trace, "bce", y)[0]
        np.testing.assert_array_equal(op.weight, grad[0])
        np.testing.assert_array_equal(op.bias, grad[1])

    def test_singleton_batches_average_to_full(self):
        net = sigmoid_net(5)
        gen = np.random.default_rng(6)
        x = gen.standard_normal((16, 1, 4))
        y = (gen.random((16, 1, 2)) < 0.5).astype(float)
        _, trace = forward(net, x)
        full = last_layer_operator(net, trace, y)
        acc_w = np.zeros_like(full.weight)
        acc_b = np.zeros_like(full.bias)
        for j in gen.permutation(16):
            _, tj = forward(net, x[j : j + 1])
            opj = last_layer_operator(net, tj, y[j : j + 1])
            acc_w += opj.weight
            acc_b += opj.bias
        np.testing.assert_allclose(acc_w / 16, full.weight, atol=1e-12)
        np.testing.assert_allclose(acc_b / 16, full.bias, atol=1e-12)

    def test_empty_batch_rejected(self):
        net = sigmoid_net(7)
        _, trace = forward(net, np.zeros((1, 1, 4)))
        with pytest.raises(ValueError):
            last_layer_operator(net, trace, np.zeros((2, 1, 2)))


class TestHiddenLayerOperator:
    def test_zero_at_perfect_fit(self):
        specs = (LayerSpec(3, 4, activation=Activation("relu")), LayerSpec(4, 2))
        net = init_params(specs, "glorot", RngStream(8))
        x = np.random.default_rng(9).standard_normal((5, 1, 3))
        pred, trace = forward(net, x)
        op = hidden_layer_operator(net, trace, pred, "mse", 0)
        np.testing.assert_array_equal(op.weight, np.zeros_like(op.weight))

    def test_identity_last_layer_expansion(self):
        # with the last layer fixed to the identity map, the hidden operator
        # collapses to eta^T (f - y) / B
        specs = (
            LayerSpec(2, 2, activation=Activation("sigmoid")),
            LayerSpec(2, 2, bias=False),
        )
        net = init_params(specs, "glorot", RngStream(10))
        net.weights[1] = np.eye(2)
        gen = np.random.default_rng(11)
        x = gen.standard_normal((2, 1, 2))
        y = gen.standard_normal((2, 1, 2))
        pred, trace = forward(net, x)
        op = hidden_layer_operator(net, trace, y, "mse", 0)
        expected = np.einsum("bnc,bnf->cf", trace.filtered[0], pred - y) / 2
        np.testing.assert_allclose(op.weight, expected, atol=1e-14)

    def test_inactive_relu_rows_updated(self):
        specs = (
            LayerSpec(3, 4, activation=Activation("relu")),
            LayerSpec(4, 1, activation=Activation("sigmoid")),
        )
        net = init_params(specs, "glorot", RngStream(12))
        net.weights[0][:, 0] = 0.0
        net.biases[0][0] = -4.0
        gen = np.random.default_rng(13)
        x = gen.standard_normal((8, 1, 3))
        y = (gen.random((8, 1, 1)) < 0.5).astype(float)
        _, trace = forward(net, x)
        sgd = param_gradient_sgd(net, trace, "mse", y)
        op = hidden_layer_operator(net, trace, y, "mse", 0)
        assert np.max(np.abs(sgd[0][0][:, 0])) == 0.0
        assert np.linalg.norm(op.weight[:, 0]) > 0.0

    def test_layer_operators_cover_all_layers(self):
        specs = (
            LayerSpec(3, 4, activation=Activation("relu")),
            LayerSpec(4, 2, activation=Activation("softmax")),
        )
        net = init_params(specs, "glorot", RngStream(14))
        gen = np.random.default_rng(15)
        x = gen.standard_normal((4, 1, 3))
        y = np.eye(2)[gen.integers(0, 2, 4)][:, None, :]
        _, trace = forward(net, x)
        ops = layer_operators(net, trace, y, "cce")
        assert [op.layer for op in ops] == [0, 1]
        assert ops[0].weight.shape == net.weights[0].shape
        assert ops[1].weight.shape == net.weights[1].shape


class TestEstimateModulus:
    def test_identity_filter_sigmoid_at_zero(self):
        net = Network(
            specs=(LayerSpec(3, 1, activation=Activation("sigmoid"), bias=False),),
            weights=[np.zeros((3, 1))],
            biases=[None],
        )
        est = estimate_modulus(net, np.eye(3)[None])
        assert est.kappa == pytest.approx(0.25, abs=1e-12)
        assert est.lipschitz == pytest.approx(0.25, abs=1e-12)

    def test_softmax_kappa_exactly_zero(self):
        net = init_params(
            [LayerSpec(3, 3, activation=Activation("softmax"))], "glorot", RngStream(16)
        )
        x = np.random.default_rng(17).standard_normal((20, 1, 3))
        assert estimate_modulus(net, x).kappa == 0.0

    def test_kappa_below_lipschitz(self):
        gen = np.random.default_rng(18)
        for i in range(50):
            net = sigmoid_net(100 + i, in_ch=3, out_ch=1)
            x = gen.standard_normal((10, 1, 3))
            est = estimate_modulus(net, x)
            assert est.kappa <= est.lipschitz + 1e-12

    def test_invariant_enforced(self):
        with pytest.raises(ValueError):
            ModulusEstimate(kappa=2.0, lipschitz=1.0, sample_count=1)


class TestProjection:
    def test_inside_unchanged(self):
        v = np.array([1.0, 1.0])
        np.testing.assert_array_equal(project(v, ParamDomain("ball", 2.0)), v)

    def test_rescaled_to_radius(self):
        v = np.array([3.0, 4.0])  # norm 5
        out = project(v, ParamDomain("ball", 2.5))
        assert np.linalg.norm(out) == pytest.approx(2.5, abs=1e-12)

    def test_idempotent(self):
        gen = np.random.default_rng(19)
        dom = ParamDomain("ball", 1.0)
        for _ in range(20):
            v = gen.standard_normal(5) * 3
            once = project(v, dom)
            np.testing.assert_allclose(project(once, dom), once, atol=1e-12)


class TestViStep:
    def test_zero_operator_fixed_point(self):
        theta = np.array([1.0, -2.0])
        new, _ = vi_step(theta, np.zeros(2), 0.5)
        np.testing.assert_array_equal(new, theta)

    def test_scalar_arithmetic(self):
        new, _ = vi_step(np.array([1.0]), np.array([2.0]), 0.25)
        assert new[0] == pytest.approx(0.5, abs=1e-15)

    def test_huge_step_lands_on_sphere(self):
        dom = ParamDomain("ball", 3.0)
        new, _ = vi_step(np.array([1.0, 0.0]), np.array([-100.0, 0.0]), 10.0, dom)
        assert np.linalg.norm(new) == pytest.approx(3.0, abs=1e-12)

    def test_momentum_accumulates(self):
        theta = np.zeros(1)
        op = np.ones(1)
        theta1, v1 = vi_step(theta, op, 0.1, momentum=0.5)
        theta2, v2 = vi_step(theta1, op, 0.1, momentum=0.5, velocity=v1)
        assert v2[0] == pytest.approx(1.5)
        assert theta2[0] == pytest.approx(-0.1 - 0.15)

    def test_nesterov_direction(self):
        theta, v = vi_step(np.zeros(1), np.ones(1), 0.1, momentum=0.5, nesterov=True)
        # first step: velocity = F, direction = F + mu * F
        assert theta[0] == pytest.approx(-0.1 * 1.5)

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            vi_step(np.zeros(1), np.ones(1), 0.0)


class TestAdaptiveStep:
    def test_values(self):
        assert adaptive_step(0.5, 0) == pytest.approx(2.0)
        assert adaptive_step(1.0, 9) == pytest.approx(0.1)

    def test_monotone_decreasing(self):
        steps = [adaptive_step(0.7, t) for t in range(50)]
        assert all(a > b for a, b in zip(steps, steps[1:]))

    def test_rejects_zero_kappa(self):
        with pytest.raises(ValueError):
            adaptive_step(0.0, 1)


class TestOeStep:
    def test_reduces_to_plain_step(self):
        theta = np.array([2.0, -1.0])
        op = np.array([0.5, 0.5])
        plain, _ = vi_step(theta, op, 0.2)
        extrapolated = oe_step(theta, theta, op, op, 0.2)
        np.testing.assert_allclose(extrapolated, plain, atol=1e-15)

    def test_scalar_arithmetic(self):
        out = oe_step(np.array([1.0]), np.array([1.0]), np.array([1.0]),
                      np.array([1.0]), 0.25, 1.0)
        assert out[0] == pytest.approx(0.75, abs=1e-15)

    def test_linear_operator_matches_affine_recursion(self):
        gen = np.random.default_rng(20)
        m = gen.standard_normal((4, 4))
        a = m @ m.T / 8  # symmetric PSD
        gamma, lam = 0.1, 1.0
        theta = gen.standard_normal(4)
        prev_theta = theta.copy()
        prev_op = a @ prev_theta
        # closed-form affine recursion on the pair (theta_t, theta_{t-1})
        ref_cur, ref_prev = theta.copy(), theta.copy()
        eye = np.eye(4)
        for _ in range(30):
            op = a @ theta
            theta, prev_theta, prev_op = (
                oe_step(prev_theta, theta, prev_op, op, gamma, lam),
                theta,
                op,
            )
            ref_cur, ref_prev = (
                (eye - gamma * (1 + lam) * a) @ ref_cur + gamma * lam * (a @ ref_prev),
                ref_cur,
            )
            np.testing.assert_allclose(theta, ref_cur, atol=1e-10)


class TestOeSelect:
    def test_t_two_always_second(self):
        iterates = [np.array([0.0]), np.array([1.0]), np.array([2.0])]
        for d in range(20):
            chosen = oe_select_iterate(iterates, RngStream(21).split(d))
            assert chosen[0] == 2.0

    def test_deterministic(self):
        iterates = [np.array([float(t)]) for t in range(11)]
        a = oe_select_iterate(iterates, RngStream(22))
        b = oe_select_iterate(iterates, RngStream(22))
        assert a[0] == b[0]

    def test_needs_two_steps(self):
        with pytest.raises(ValueError):
            oe_select_iterate([np.zeros(1), np.zeros(1)], RngStream(23))


class TestPacking:
    def test_roundtrip(self):
        gen = np.random.default_rng(24)
        w = gen.standard_normal((3, 2))
        b = gen.standard_normal(2)
        flat = pack_params(w, b)
        w2, b2 = unpack_params(flat, (3, 2), True)
        np.testing.assert_array_equal(w, w2)
        np.testing.assert_array_equal(b, b2)

    def test_no_bias(self):
        w = np.ones((2, 2))
        flat = pack_params(w, None)
        w2, b2 = unpack_params(flat, (2, 2), False)
        np.testing.assert_array_equal(w, w2)
        assert b2 is None


class TestEmpiricalOperatorProperties:
    def test_monotone_on_random_pairs(self):
        gen = np.random.default_rng(25)
        net = sigmoid_net(26, in_ch=3, out_ch=1)
        x = gen.standard_normal((12, 1, 3))
        y = np.zeros((12, 1, 1))
        shape = net.weights[0].shape

        def op_at(flat):
            net.weights[0], net.biases[0] = unpack_params(flat, shape, True)
            _, trace = forward(net, x, mode="train", update_stats=False)
            op = last_layer_operator(net, trace, y)
            return pack_params(op.weight, op.bias)

        for _ in range(30):
            t1 = gen.standard_normal(4) * 2
            t2 = gen.standard_normal(4) * 2
            inner = (op_at(t1) - op_at(t2)) @ (t1 - t2)
            assert inner >= -1e-10
