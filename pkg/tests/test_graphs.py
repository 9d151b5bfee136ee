import numpy as np
import pytest

from vitrain.graphs import (
    BALANCED,
    ConnectivityError,
    Graph,
    IsolatedNodeError,
    chebyshev_feature_map,
    erdos_renyi,
    gcn_filter,
    load_graph,
    low_energy_perturbation,
    mismatch_bound,
    normalized_laplacian,
    perturb_edges,
    sage_feature_map,
    save_graph,
    spectral_split,
)
from vitrain.numerics import RngStream, sym_eig


def two_node_graph():
    return Graph(np.array([[0.0, 1.0], [1.0, 0.0]]))


def triangle_graph():
    adj = np.ones((3, 3)) - np.eye(3)
    return Graph(adj)


class TestGraphValidation:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            Graph(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValueError):
            Graph(np.eye(2))

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            Graph(np.array([[0.0, -1.0], [-1.0, 0.0]]))

    def test_edges(self):
        assert two_node_graph().edges == ((0, 1),)


class TestNormalizedLaplacian:
    def test_two_node(self):
        lap = normalized_laplacian(two_node_graph())
        np.testing.assert_allclose(lap, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-15)

    def test_null_vector(self):
        g = erdos_renyi(10, 0.5, RngStream(5))
        lap = normalized_laplacian(g)
        null = np.sqrt(g.degrees)
        np.testing.assert_allclose(lap @ null, np.zeros(10), atol=1e-10)

    def test_spectrum_in_range(self):
        g = erdos_renyi(10, 0.5, RngStream(6))
        values, _ = sym_eig(normalized_laplacian(g))
        assert values.min() >= -1e-10 and values.max() <= 2 + 1e-10

    def test_spectrum_many_graphs(self):
        for seed in range(50):
            g = erdos_renyi(8, 0.4, RngStream(100 + seed))
            values, _ = sym_eig(normalized_laplacian(g))
            assert values.min() >= -1e-10 and values.max() <= 2 + 1e-10

    def test_isolated_node(self):
        g = Graph(np.zeros((2, 2)))
        with pytest.raises(IsolatedNodeError):
            normalized_laplacian(g)


class TestGcnFilter:
    def test_two_node(self):
        out = gcn_filter(two_node_graph(), np.array([[1.0], [0.0]]))
        np.testing.assert_allclose(out, [[0.5], [0.5]], atol=1e-15)

    def test_zero_input(self):
        np.testing.assert_array_equal(
            gcn_filter(two_node_graph(), np.zeros((2, 3))), np.zeros((2, 3))
        )

    def test_edgeless_is_identity(self):
        g = Graph(np.zeros((3, 3)))
        x = np.random.default_rng(0).standard_normal((3, 2))
        np.testing.assert_allclose(gcn_filter(g, x), x, atol=1e-15)

    def test_linearity(self):
        gen = np.random.default_rng(1)
        g = erdos_renyi(7, 0.5, RngStream(7))
        for _ in range(10):
            a, b = gen.standard_normal(2)
            x, y = gen.standard_normal((2, 7, 3))
            lhs = gcn_filter(g, a * x + b * y)
            rhs = a * gcn_filter(g, x) + b * gcn_filter(g, y)
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gcn_filter(two_node_graph(), np.zeros((3, 1)))


class TestChebyshev:
    def test_first_order_is_rescaled_laplacian(self):
        g = erdos_renyi(6, 0.5, RngStream(8))
        x = np.random.default_rng(2).standard_normal((6, 2))
        np.testing.assert_allclose(
            chebyshev_feature_map(g, x, 1), g.laplacian_rescaled @ x, atol=1e-12
        )

    def test_third_order_polynomial(self):
        g = erdos_renyi(6, 0.5, RngStream(9))
        x = np.random.default_rng(3).standard_normal((6, 2))
        lhat = g.laplacian_rescaled
        t3 = 4 * np.linalg.matrix_power(lhat, 3) - 3 * lhat
        out = chebyshev_feature_map(g, x, 3)
        np.testing.assert_allclose(out[:, 4:6], t3 @ x, atol=1e-10)

    def test_order_zero_rejected(self):
        with pytest.raises(ValueError):
            chebyshev_feature_map(two_node_graph(), np.zeros((2, 1)), 0)

    def test_output_width(self):
        g = erdos_renyi(5, 0.6, RngStream(10))
        out = chebyshev_feature_map(g, np.zeros((5, 3)), 4)
        assert out.shape == (5, 12)


class TestSage:
    def test_two_node(self):
        out = sage_feature_map(two_node_graph(), np.array([[1.0], [3.0]]))
        np.testing.assert_allclose(out, [[1.0, 3.0], [3.0, 1.0]], atol=1e-15)

    def test_zero_input(self):
        np.testing.assert_array_equal(
            sage_feature_map(triangle_graph(), np.zeros((3, 2))), np.zeros((3, 4))
        )

    def test_triangle_neighbor_means(self):
        out = sage_feature_map(triangle_graph(), np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(out[:, 1], [2.5, 2.0, 1.5], atol=1e-15)

    def test_isolated_node(self):
        g = Graph(np.zeros((2, 2)))
        with pytest.raises(IsolatedNodeError):
            sage_feature_map(g, np.zeros((2, 1)))


class TestErdosRenyi:
    def test_complete(self):
        g = erdos_renyi(6, 1.0, RngStream(11))
        assert len(g.edges) == 15

    def test_impossible_connectivity(self):
        with pytest.raises(ConnectivityError):
            erdos_renyi(3, 0.0, RngStream(12), max_attempts=50)

    def test_edge_count_moments(self):
        n, p = 40, 0.15
        pairs = n * (n - 1) // 2
        counts = [len(erdos_renyi(n, p, RngStream(s)).edges) for s in range(200)]
        mean = np.mean(counts)
        sd = np.sqrt(pairs * p * (1 - p))
        # connectivity conditioning nudges the mean up slightly; 4 sigma of
        # the sample mean still brackets it comfortably
        assert abs(mean - pairs * p) < 4 * sd / np.sqrt(200) + 1.0

    def test_determinism(self):
        a = erdos_renyi(12, 0.3, RngStream(13))
        b = erdos_renyi(12, 0.3, RngStream(13))
        np.testing.assert_array_equal(a.adjacency, b.adjacency)


class TestPerturbEdges:
    def test_zero_fraction(self):
        g = erdos_renyi(10, 0.4, RngStream(14))
        out = perturb_edges(g, 0.0, RngStream(15))
        np.testing.assert_array_equal(out.adjacency, g.adjacency)

    def test_complete_graph_no_insertions(self):
        g = erdos_renyi(6, 1.0, RngStream(16))
        out = perturb_edges(g, 0.4, RngStream(17))
        assert len(out.edges) == 15 - int(0.4 * 15)

    def test_literal_count_delta(self):
        g = erdos_renyi(15, 0.2, RngStream(18))
        e = len(g.edges)
        ec = 15 * 14 // 2 - e
        out = perturb_edges(g, 0.2, RngStream(19))
        assert len(out.edges) - e == int(0.2 * ec) - int(0.2 * e)

    def test_balanced_preserves_count(self):
        g = erdos_renyi(15, 0.2, RngStream(20))
        out = perturb_edges(g, 0.2, RngStream(21), mode=BALANCED)
        assert len(out.edges) == len(g.edges)

    def test_result_is_valid_graph(self):
        g = erdos_renyi(12, 0.3, RngStream(22))
        out = perturb_edges(g, 0.3, RngStream(23))
        assert np.array_equal(out.adjacency, out.adjacency.T)
        assert np.all(np.diag(out.adjacency) == 0)


class TestSpectralSplit:
    def test_full_split_has_zero_low(self):
        g = erdos_renyi(8, 0.5, RngStream(24))
        split = spectral_split(g, 8)
        np.testing.assert_allclose(split.low, np.zeros((8, 8)), atol=1e-12)

    def test_two_node_top_component(self):
        split = spectral_split(two_node_graph(), 1)
        np.testing.assert_allclose(split.high, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-10)

    def test_reconstruction(self):
        g = erdos_renyi(15, 0.3, RngStream(25))
        split = spectral_split(g, 7)
        err = np.linalg.norm(split.high + split.low - g.laplacian)
        assert err <= 1e-10

    def test_orthogonal_ranges(self):
        g = erdos_renyi(15, 0.3, RngStream(26))
        split = spectral_split(g, 6)
        cross = split.high_basis.T @ split.low_basis
        assert np.max(np.abs(cross)) <= 1e-8

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            spectral_split(two_node_graph(), 3)


class TestLowEnergyPerturbation:
    def test_zero_delta(self):
        g = erdos_renyi(10, 0.4, RngStream(27))
        out = low_energy_perturbation(g, 5, 0.0, RngStream(28))
        np.testing.assert_allclose(out, g.laplacian, atol=1e-12)

    def test_preserves_top_eigenspace(self):
        g = erdos_renyi(12, 0.4, RngStream(29))
        split = spectral_split(g, 6)
        out = low_energy_perturbation(g, 6, 0.05, RngStream(30))
        diff = out - g.laplacian
        assert np.max(np.abs(diff @ split.high_basis)) <= 1e-8

    def test_operator_norm_bounded(self):
        g = erdos_renyi(12, 0.4, RngStream(31))
        out = low_energy_perturbation(g, 6, 0.05, RngStream(32))
        values, _ = sym_eig(out - g.laplacian)
        assert np.max(np.abs(values)) <= 0.05


class TestMismatchBound:
    def test_zero_delta(self):
        assert mismatch_bound(0.0, 0.25, 2.0, 3.0) == 0.0

    def test_product_formula(self):
        assert mismatch_bound(0.1, 0.25, 2.0, 3.0) == pytest.approx(0.15, abs=1e-15)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            mismatch_bound(-0.1, 0.25, 2.0, 3.0)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        g = erdos_renyi(9, 0.4, RngStream(33))
        path = tmp_path / "graph.txt"
        save_graph(g, path)
        loaded = load_graph(path)
        np.testing.assert_array_equal(loaded.adjacency, g.adjacency)

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0 1 1.0\n")
        with pytest.raises(ValueError):
            load_graph(path)
