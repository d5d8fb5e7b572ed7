import numpy as np
import pytest

from cartographer import layout as L


def brute_force_knn(data, k):
    """Quadratic oracle: per-point distance scan with (dist, index) order."""
    n = data.shape[0]
    indices = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k))
    for i in range(n):
        d = np.linalg.norm(data - data[i], axis=1)
        d[i] = np.inf
        order = np.lexsort((np.arange(n), d))[:k]
        indices[i] = order
        dists[i] = d[order]
    return indices, dists


class TestBuildKnnExact:
    def test_line_example(self):
        data = np.zeros((4, 6))
        data[:, 0] = [0.0, 1.0, 2.0, 10.0]
        g = L.build_knn(data, 2)
        assert g.indices[0].tolist() == [1, 2]
        assert g.indices[3].tolist() == [2, 1]
        assert np.allclose(g.distances[3], [8.0, 9.0])

    def test_k1_is_true_nearest(self):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((60, 5))
        g = L.build_knn(data, 1)
        oracle_idx, _ = brute_force_knn(data, 1)
        assert np.array_equal(g.indices, oracle_idx)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(30, 400))
        data = rng.standard_normal((n, 12))
        k = int(rng.integers(2, 12))
        g = L.build_knn(data, k)
        oracle_idx, oracle_d = brute_force_knn(data, k)
        assert np.array_equal(g.indices, oracle_idx)
        assert np.allclose(g.distances, oracle_d)

    def test_ties_break_to_lower_index(self):
        # four corners of a square: each point's two neighbors are equidistant
        data = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        g = L.build_knn(data, 2)
        assert g.indices[0].tolist() == [1, 2]
        assert g.indices[3].tolist() == [1, 2]

    def test_rows_sorted_and_no_self(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((100, 8))
        g = L.build_knn(data, 10)
        assert np.all(np.diff(g.distances, axis=1) >= 0)
        assert np.all(g.indices != np.arange(100)[:, None])
        assert np.all(g.distances >= 0)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            L.build_knn(np.zeros((5, 3)), 5)


class TestNnDescent:
    def test_recall_on_descriptor_like_data(self, warm_kernels):
        # low intrinsic dimension, as produced by image descriptors
        rng = np.random.default_rng(0)
        data = rng.standard_normal((1000, 10)) @ rng.standard_normal((10, 92))
        approx = L.build_knn(data, 15, mode="nn_descent", seed=3)
        exact = L.build_knn(data, 15, mode="exact")
        recall = np.mean([np.intersect1d(a, e).size for a, e in
                          zip(approx.indices, exact.indices)]) / 15
        assert recall >= 0.9

    def test_deterministic(self, warm_kernels):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((300, 10))
        a = L.build_knn(data, 8, mode="nn_descent", seed=9)
        b = L.build_knn(data, 8, mode="nn_descent", seed=9)
        assert np.array_equal(a.indices, b.indices)

    def test_invariants(self, warm_kernels):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((200, 6))
        g = L.build_knn(data, 7, mode="nn_descent", seed=5)
        assert np.all(g.indices >= 0) and np.all(g.indices < 200)
        assert np.all(g.indices != np.arange(200)[:, None])
        assert np.all(np.diff(g.distances, axis=1) >= 0)


class TestFuzzySimplicialSet:
    def test_sigma_solves_target(self):
        rng = np.random.default_rng(4)
        data = rng.standard_normal((50, 8))
        knn = L.build_knn(data, 10)
        rho, sigma = L.smooth_knn_distances(knn.distances)
        # re-evaluate the smoothed cardinality with the solved sigma
        psum = np.exp(-np.maximum(knn.distances - rho[:, None], 0.0)
                      / sigma[:, None]).sum(axis=1)
        assert np.abs(psum - np.log2(10)).max() <= 1e-3

    def test_all_equal_distances_give_unit_weights(self):
        # rho equals every distance, so the clamp forces exponent zero
        distances = np.full((4, 3), 2.5)
        indices = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
        knn = L.KnnGraph(indices=indices, distances=distances)
        fuzzy = L.fuzzy_simplicial_set(knn)
        assert np.allclose(fuzzy.weights, 1.0)

    def test_t_conorm_half_half(self):
        assert 0.5 + 0.5 - 0.5 * 0.5 == pytest.approx(0.75)

    def test_symmetrized_weight_bounds(self):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((80, 6))
        knn = L.build_knn(data, 8)
        fuzzy = L.fuzzy_simplicial_set(knn)
        assert np.all(fuzzy.weights > 0) and np.all(fuzzy.weights <= 1.0)
        assert np.all(fuzzy.heads < fuzzy.tails)
        keys = fuzzy.heads * fuzzy.n + fuzzy.tails
        assert np.unique(keys).size == keys.size  # no duplicate pairs

    def test_t_conorm_at_least_max_minus_product(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0.01, 1.0, 500)
        b = rng.uniform(0.01, 1.0, 500)
        w = a + b - a * b
        assert np.all(w >= np.maximum(a, b) - a * b - 1e-12)
        assert np.all(w <= 1.0 + 1e-12)


class TestFitCurveParams:
    def scipy_oracle(self, min_dist):
        from scipy.optimize import curve_fit

        xs = np.linspace(0.0, 3.0, 300)
        ys = np.where(xs <= min_dist, 1.0, np.exp(-(xs - min_dist)))
        (a, b), _ = curve_fit(lambda x, a, b: 1.0 / (1.0 + a * x ** (2.0 * b)),
                              xs, ys, p0=(1.0, 1.0), maxfev=10_000)
        return a, b

    def test_min_dist_0p1(self):
        a, b = L.fit_curve_params(0.1)
        assert 1.4 <= a <= 1.8
        assert 0.85 <= b <= 0.95
        oa, ob = self.scipy_oracle(0.1)
        assert a == pytest.approx(oa, abs=0.02)
        assert b == pytest.approx(ob, abs=0.02)

    def test_monotone_in_min_dist(self):
        avals = [L.fit_curve_params(md)[0] for md in (0.01, 0.1, 0.5)]
        assert avals[0] > avals[1] > avals[2]
        oracle = [self.scipy_oracle(md)[0] for md in (0.01, 0.1, 0.5)]
        assert oracle[0] > oracle[1] > oracle[2]

    @pytest.mark.parametrize("min_dist", [0.01, 0.1, 0.5])
    def test_residual_matches_oracle_optimum(self, min_dist):
        # The curve family cannot reach RMSE 0.01 against this piecewise
        # target (the least-squares optimum sits at 0.014..0.023 depending
        # on min_dist), so the meaningful check is that the returned (a, b)
        # achieve the oracle's optimal residual.
        def rmse(a, b):
            xs = np.linspace(0.0, 3.0, 300)
            ys = np.where(xs <= min_dist, 1.0, np.exp(-(xs - min_dist)))
            return float(np.sqrt(np.mean((1.0 / (1.0 + a * xs ** (2.0 * b))
                                          - ys) ** 2)))

        mine = rmse(*L.fit_curve_params(min_dist))
        optimal = rmse(*self.scipy_oracle(min_dist))
        assert mine <= optimal * 1.001 + 1e-9
        assert mine <= 0.025

    def test_invalid_min_dist(self):
        with pytest.raises(ValueError):
            L.fit_curve_params(0.0)


def two_clique_fuzzy(n_per=10, weight=1.0):
    heads, tails, weights = [], [], []
    for base in (0, n_per):
        for i in range(n_per):
            for j in range(i + 1, n_per):
                heads.append(base + i)
                tails.append(base + j)
                weights.append(weight)
    return L.FuzzyGraph(heads=np.array(heads), tails=np.array(tails),
                        weights=np.array(weights), n=2 * n_per)


class TestInitLayout:
    def test_random_seeded_deterministic(self):
        fuzzy = two_clique_fuzzy()
        cfg = L.LayoutConfig(seed=42)
        a = L.init_layout(fuzzy, cfg)
        b = L.init_layout(fuzzy, cfg)
        assert np.array_equal(a.coords, b.coords)

    def test_coords_in_range(self):
        fuzzy = two_clique_fuzzy()
        coords = L.init_layout(fuzzy, L.LayoutConfig(seed=1)).coords
        assert np.all(coords >= -10.0) and np.all(coords <= 10.0)

    def test_spectral_separates_disconnected_cliques(self):
        fuzzy = two_clique_fuzzy()
        cfg = L.LayoutConfig(seed=3, init="spectral")
        coords = L.init_layout(fuzzy, cfg).coords
        first, second = coords[:10, 0], coords[10:, 0]
        assert max(first.max(), second.max()) <= 10.0
        # the two components land on opposite sides of the first axis
        assert first.max() < second.min() or second.max() < first.min()

    def test_spectral_failure_falls_back_to_random(self, monkeypatch, caplog):
        import logging

        monkeypatch.setattr(L, "_power_iteration", lambda *a, **kw: None)
        fuzzy = two_clique_fuzzy()
        cfg = L.LayoutConfig(seed=3, init="spectral")
        with caplog.at_level(logging.WARNING, logger="cartographer.layout"):
            out = L.init_layout(fuzzy, cfg)
        assert "falling back to random" in caplog.text
        expected = np.random.default_rng(3).uniform(-10, 10, (fuzzy.n, 2))
        assert np.array_equal(out.coords, expected)

    def test_spectral_against_dense_eigensolver(self):
        # oracle: eigenvectors of the normalized Laplacian via numpy.linalg.eigh
        fuzzy = two_clique_fuzzy()
        n = fuzzy.n
        w = np.zeros((n, n))
        w[fuzzy.heads, fuzzy.tails] = fuzzy.weights
        w[fuzzy.tails, fuzzy.heads] = fuzzy.weights
        deg = w.sum(axis=1)
        inv = 1.0 / np.sqrt(deg)
        lap = np.eye(n) - inv[:, None] * w * inv[None, :]
        eigvals, eigvecs = np.linalg.eigh(lap)
        # 0-eigenvalue has multiplicity 2 (two components); the component
        # indicator structure must match what the power iteration found
        assert eigvals[0] == pytest.approx(0.0, abs=1e-10)
        assert eigvals[1] == pytest.approx(0.0, abs=1e-10)
        coords = L.init_layout(fuzzy, L.LayoutConfig(seed=3, init="spectral")).coords
        sign_split = np.sign(coords[:10, 0].mean()) != np.sign(coords[10:, 0].mean())
        oracle_vec = eigvecs[:, 1]
        oracle_split = np.sign(oracle_vec[:10].mean()) != np.sign(oracle_vec[10:].mean())
        assert sign_split and oracle_split


class TestOptimizeLayout:
    def test_cliques_separate(self, warm_kernels):
        fuzzy = two_clique_fuzzy(n_per=20)
        cfg = L.LayoutConfig(seed=11, n_epochs=200)
        init = L.init_layout(fuzzy, cfg)
        out = L.optimize_layout(fuzzy, init, cfg)
        a, b = out.coords[:20], out.coords[20:]
        centroid_gap = np.linalg.norm(a.mean(0) - b.mean(0))
        intra = [np.linalg.norm(c[i] - c[j])
                 for c in (a, b) for i in range(20) for j in range(i + 1, 20)]
        assert centroid_gap >= 3.0 * np.mean(intra)

    def test_single_epoch_moves_points(self, warm_kernels):
        fuzzy = two_clique_fuzzy()
        cfg = L.LayoutConfig(seed=2, n_epochs=1)
        init = L.init_layout(fuzzy, cfg)
        out = L.optimize_layout(fuzzy, init, cfg)
        assert np.all(np.isfinite(out.coords))
        assert not np.array_equal(out.coords, init.coords)

    def test_zero_epochs_forbidden(self):
        with pytest.raises(ValueError):
            L.LayoutConfig(n_epochs=0)

    def test_deterministic_bitwise(self, warm_kernels):
        fuzzy = two_clique_fuzzy(n_per=15)
        cfg = L.LayoutConfig(seed=7, n_epochs=50)
        init = L.init_layout(fuzzy, cfg)
        a = L.optimize_layout(fuzzy, init, cfg)
        b = L.optimize_layout(fuzzy, init, cfg)
        assert np.array_equal(a.coords, b.coords)

    def test_non_finite_coords_fatal_with_epoch(self, warm_kernels):
        fuzzy = two_clique_fuzzy()
        cfg = L.LayoutConfig(seed=1, n_epochs=5)
        init = L.init_layout(fuzzy, cfg)
        init.coords[3, 0] = np.nan
        with pytest.raises(RuntimeError, match="epoch 0"):
            L.optimize_layout(fuzzy, init, cfg)


class TestGradients:
    def test_attractive_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        h = 1e-6
        for _ in range(100):
            yi = rng.uniform(-5, 5, 2)
            yj = rng.uniform(-5, 5, 2)
            a = rng.uniform(0.5, 2.0)
            b = rng.uniform(0.7, 1.3)
            grad = L.attractive_gradient(yi, yj, a, b)
            for d in range(2):
                e = np.zeros(2)
                e[d] = h
                fd = (L.attractive_log_likelihood(yi + e, yj, a, b)
                      - L.attractive_log_likelihood(yi - e, yj, a, b)) / (2 * h)
                assert grad[d] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_repulsive_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        h = 1e-6
        for _ in range(100):
            yi = rng.uniform(-5, 5, 2)
            yj = rng.uniform(-5, 5, 2)
            if np.linalg.norm(yi - yj) < 0.05:
                yi = yi + 0.1
            a = rng.uniform(0.5, 2.0)
            b = rng.uniform(0.7, 1.3)
            grad = L.repulsive_gradient(yi, yj, a, b)
            for d in range(2):
                e = np.zeros(2)
                e[d] = h
                fd = (L.repulsive_log_likelihood(yi + e, yj, a, b)
                      - L.repulsive_log_likelihood(yi - e, yj, a, b)) / (2 * h)
                assert grad[d] == pytest.approx(fd, rel=1e-4, abs=1e-6)


class TestTrustworthiness:
    def test_isometric_embedding_is_perfect(self):
        rng = np.random.default_rng(10)
        data = rng.standard_normal((40, 2))
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        assert L.compute_trustworthiness(data, data @ rot.T + 3.0, 5) == 1.0

    def test_shuffle_drops_score(self, warm_kernels):
        rng = np.random.default_rng(11)
        data = np.vstack([rng.standard_normal((40, 5)) + off
                          for off in (0.0, 8.0)])
        cfg = L.LayoutConfig(n_neighbors=10, n_epochs=100, seed=0)
        lay = L.compute_layout(data, [str(i) for i in range(80)], cfg)
        structured = L.compute_trustworthiness(data, lay.coords, 8)
        shuffled = lay.coords[rng.permutation(80)]
        assert L.compute_trustworthiness(data, shuffled, 8) < structured

    def test_three_points_k1(self):
        data = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 1.0]])
        low = np.array([[0.0, 1.0], [1.0, 1.0], [4.0, 0.0]])
        value = L.compute_trustworthiness(data, low, 1)
        assert 0.0 <= value <= 1.0

    def test_matches_sklearn(self):
        from sklearn.manifold import trustworthiness as sk_tw

        rng = np.random.default_rng(12)
        high = rng.standard_normal((90, 7))
        low = rng.standard_normal((90, 2))
        for k in (3, 8, 15):
            assert L.compute_trustworthiness(high, low, k) == pytest.approx(
                float(sk_tw(high, low, n_neighbors=k)), abs=1e-12)

    def test_point_count_mismatch(self):
        with pytest.raises(ValueError):
            L.compute_trustworthiness(np.zeros((5, 3)), np.zeros((4, 2)), 2)

    def test_id_mismatch_between_matrix_and_layout(self):
        from cartographer.embed import EmbeddingMatrix

        rng = np.random.default_rng(14)
        matrix = EmbeddingMatrix(ids=["a", "b", "c"],
                                 data=rng.random((3, 4)).astype(np.float32),
                                 descriptor_tag="t")
        lay = L.Layout2D(ids=["a", "b", "x"], coords=rng.random((3, 2)),
                         config=L.LayoutConfig())
        with pytest.raises(ValueError, match="ids"):
            L.compute_trustworthiness(matrix, lay, 1)
        lay_ok = L.Layout2D(ids=["a", "b", "c"], coords=lay.coords,
                            config=L.LayoutConfig())
        assert 0.0 <= L.compute_trustworthiness(matrix, lay_ok, 1) <= 1.0


class TestLayoutFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        coords = rng.uniform(-10, 10, (7, 2))
        lay = L.Layout2D(ids=[f"obj-{i}" for i in range(7)], coords=coords,
                         config=L.LayoutConfig(seed=5))
        path = tmp_path / "out.lay"
        L.write_layout(path, lay)
        back = L.read_layout(path)
        assert back.ids == lay.ids
        assert np.allclose(back.coords, coords, atol=1e-6)
        assert back.config.seed == 5

    def test_bounds(self):
        coords = np.array([[0.0, -2.0], [3.0, 5.0], [-1.0, 1.0]])
        lay = L.Layout2D(ids=["a", "b", "c"], coords=coords,
                         config=L.LayoutConfig())
        assert lay.bounds == (-1.0, -2.0, 3.0, 5.0)
