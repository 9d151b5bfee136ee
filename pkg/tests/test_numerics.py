import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitrain.numerics import (
    Activation,
    DerivativeBoundUnavailable,
    RngStream,
    activation_vjp,
    apply_activation,
    gaussian,
    matmul,
    min_activation_derivative,
    normal_cdf,
    sym_eig,
    sym_eig_max,
    sym_eig_min,
)


def triple_loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def charpoly_roots_bisection(a, lo=-100.0, hi=100.0, tol=1e-12):
    """Eigenvalues of a symmetric matrix as roots of det(A - t I), found by
    sign-change bisection on a fine grid."""
    def det(t):
        return np.linalg.det(a - t * np.eye(a.shape[0]))

    grid = np.linspace(lo, hi, 20001)
    vals = np.array([det(t) for t in grid])
    roots = []
    for i in range(len(grid) - 1):
        f0, f1 = vals[i], vals[i + 1]
        if f0 == 0.0:
            roots.append(grid[i])
            continue
        if f0 * f1 < 0:
            a_, b_ = grid[i], grid[i + 1]
            for _ in range(200):
                mid = (a_ + b_) / 2
                if det(a_) * det(mid) <= 0:
                    b_ = mid
                else:
                    a_ = mid
                if b_ - a_ < tol:
                    break
            roots.append((a_ + b_) / 2)
    return np.array(sorted(roots))


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), b), b)

    def test_projector(self):
        p = np.array([[1.0, 0.0], [0.0, 0.0]])
        v = np.array([[5.0], [7.0]])
        np.testing.assert_array_equal(matmul(p, v), np.array([[5.0], [0.0]]))

    def test_against_triple_loop(self):
        gen = np.random.default_rng(3)
        a, b = gen.standard_normal((3, 4)), gen.standard_normal((4, 2))
        np.testing.assert_allclose(matmul(a, b), triple_loop_matmul(a, b), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.eye(2), np.eye(3))


class TestSymEig:
    def test_diagonal(self):
        assert sym_eig_min(np.diag([2.0, 5.0])) == pytest.approx(2.0, abs=1e-12)
        assert sym_eig_max(np.diag([2.0, 5.0])) == pytest.approx(5.0, abs=1e-12)

    def test_two_by_two(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert sym_eig_min(a) == pytest.approx(-1.0, abs=1e-12)

    def test_against_charpoly_bisection(self):
        gen = np.random.default_rng(11)
        a = gen.standard_normal((5, 5))
        sym = a.T @ a + a @ a.T
        values, _ = sym_eig(sym)
        expected = charpoly_roots_bisection(sym)
        np.testing.assert_allclose(np.sort(values), expected, atol=1e-8)

    def test_eigenvector_reconstruction(self):
        gen = np.random.default_rng(12)
        a = gen.standard_normal((7, 7))
        sym = (a + a.T) / 2
        values, vectors = sym_eig(sym)
        np.testing.assert_allclose((vectors * values) @ vectors.T, sym, atol=1e-11)

    def test_rayleigh_quotient_bounds(self):
        gen = np.random.default_rng(13)
        a = gen.standard_normal((6, 6))
        sym = (a + a.T) / 2
        lo, hi = sym_eig_min(sym), sym_eig_max(sym)
        for _ in range(100):
            v = gen.standard_normal(6)
            v /= np.linalg.norm(v)
            q = v @ sym @ v
            assert lo - 1e-10 <= q <= hi + 1e-10

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            sym_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            sym_eig(np.zeros((2, 3)))


class TestActivations:
    def test_sigmoid_at_zero(self):
        out = apply_activation(Activation("sigmoid"), np.zeros((1, 1)))
        assert out[0, 0] == pytest.approx(0.5, abs=1e-15)

    def test_softmax_symmetry(self):
        out = apply_activation(Activation("softmax"), np.zeros((1, 2)))
        np.testing.assert_allclose(out, [[0.5, 0.5]], atol=1e-15)

    def test_normal_cdf_at_zero(self):
        out = apply_activation(Activation("normal_cdf"), np.zeros((1, 1)))
        assert out[0, 0] == pytest.approx(0.5, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
    def test_softmax_rows_sum_to_one(self, row):
        out = apply_activation(Activation("softmax"), np.array([row]))
        assert abs(out.sum() - 1.0) < 1e-12

    def test_softmax_needs_two_channels(self):
        with pytest.raises(ValueError):
            apply_activation(Activation("softmax"), np.zeros((1, 1)))

    def test_softplus_beta_positive(self):
        with pytest.raises(ValueError):
            Activation("softplus", beta=0.0)


class TestActivationVjp:
    def test_relu_gating(self):
        out = activation_vjp(
            Activation("relu"), np.array([[-1.0, 2.0]]), np.array([[1.0, 1.0]])
        )
        np.testing.assert_array_equal(out, [[0.0, 1.0]])

    def test_relu_at_exact_zero(self):
        out = activation_vjp(Activation("relu"), np.zeros((1, 1)), np.ones((1, 1)))
        assert out[0, 0] == 0.0

    def test_softmax_annihilates_ones(self):
        out = activation_vjp(
            Activation("softmax"), np.zeros((1, 2)), np.ones((1, 2))
        )
        np.testing.assert_array_equal(out, [[0.0, 0.0]])

    @pytest.mark.parametrize(
        "act",
        [
            Activation("sigmoid"),
            Activation("softplus", beta=5.0),
            Activation("normal_cdf"),
            Activation("softmax"),
        ],
    )
    def test_matches_finite_differences(self, act):
        gen = np.random.default_rng(17)
        h = 1e-5
        for _ in range(100):
            z = gen.standard_normal((1, 3)) * 2
            u = gen.standard_normal((1, 3))
            analytic = activation_vjp(act, z, u)
            fd = np.zeros_like(z)
            for j in range(3):
                zp, zm = z.copy(), z.copy()
                zp[0, j] += h
                zm[0, j] -= h
                fd[0, j] = np.sum(
                    u * (apply_activation(act, zp) - apply_activation(act, zm))
                ) / (2 * h)
            denom = max(np.linalg.norm(fd), 1e-8)
            assert np.linalg.norm(fd - analytic) / denom < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            activation_vjp(Activation("relu"), np.zeros((1, 2)), np.zeros((2, 2)))


class TestMinActivationDerivative:
    def test_sigmoid_at_zero(self):
        assert min_activation_derivative(
            Activation("sigmoid"), np.zeros((1, 1))
        ) == pytest.approx(0.25, abs=1e-15)

    def test_sigmoid_dominated_by_tail(self):
        s4 = 1.0 / (1.0 + np.exp(-4.0))
        got = min_activation_derivative(Activation("sigmoid"), np.array([[0.0, 4.0]]))
        assert got == pytest.approx(s4 * (1 - s4), rel=1e-12)
        assert got == pytest.approx(0.017663, abs=1e-6)

    def test_softmax_exactly_zero(self):
        gen = np.random.default_rng(19)
        assert min_activation_derivative(Activation("softmax"), gen.standard_normal((4, 3))) == 0.0

    def test_relu_unavailable(self):
        with pytest.raises(DerivativeBoundUnavailable):
            min_activation_derivative(Activation("relu"), np.zeros((1, 1)))


class TestNormalCdf:
    def test_at_zero(self):
        assert normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_far_tail(self):
        assert normal_cdf(10.0) == pytest.approx(1.0, abs=1e-12)

    def test_reference_value(self):
        import mpmath

        expected = float(mpmath.ncdf(1.0))
        assert normal_cdf(1.0) == pytest.approx(expected, abs=1e-9)
        assert normal_cdf(1.0) == pytest.approx(0.8413447, abs=1e-7)

    def test_monotone_on_grid(self):
        grid = np.linspace(-8.0, 8.0, 10_000)
        vals = normal_cdf(grid)
        assert np.all(np.diff(vals) >= 0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-8, 8))
    def test_symmetry(self, x):
        assert abs(normal_cdf(x) + normal_cdf(-x) - 1.0) < 1e-12


class TestGaussian:
    def test_zero_stddev(self):
        out = gaussian(RngStream(1), 3.0, 0.0, (4, 4))
        np.testing.assert_array_equal(out, np.full((4, 4), 3.0))

    def test_monte_carlo_mean(self):
        n = 100_000
        draws = gaussian(RngStream(2), 1.5, 2.0, n)
        assert abs(draws.mean() - 1.5) < 4 * 2.0 / np.sqrt(n)

    def test_same_stream_identical(self):
        r = RngStream(3, 9)
        np.testing.assert_array_equal(gaussian(r, 0, 1, (3, 3)), gaussian(r, 0, 1, (3, 3)))

    def test_split_streams_differ(self):
        r = RngStream(3)
        a = gaussian(r.split(0), 0, 1, 8)
        b = gaussian(r.split(1), 0, 1, 8)
        assert not np.array_equal(a, b)

    def test_negative_stddev(self):
        with pytest.raises(ValueError):
            gaussian(RngStream(1), 0.0, -1.0, 3)
