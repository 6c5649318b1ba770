import itertools

import numpy as np
import pytest
import scipy.sparse

from deepcontrast.crf import (
    AFFINITY_RADIUS, CrfConfig, EMBED_DIM, contour_affinity, contour_embedding,
    crf_energy, mean_field_infer,
)


def reference_kernels(image, embedding, config):
    """Brute-force dense pairwise kernels for every ordered pixel pair."""
    h, w = image.shape[:2]
    n = h * w
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(float)
    col = image.reshape(n, -1).astype(float)
    k1 = np.zeros((n, n))
    k2 = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            d2 = ((pos[i] - pos[j]) ** 2).sum()
            c2 = ((col[i] - col[j]) ** 2).sum()
            e = d2 / (2 * config.sigma_alpha ** 2) \
                + c2 / (2 * config.sigma_beta ** 2)
            if embedding is not None:
                v = embedding.reshape(n, -1)
                e += ((v[i] - v[j]) ** 2).sum() / (2 * config.sigma_gamma ** 2)
            k1[i, j] = np.exp(-e)
            k2[i, j] = np.exp(-d2 / (2 * config.sigma_epsilon ** 2))
    return k1, k2


class TestAffinity:
    def test_blank_contour_gives_unit_weights(self):
        W = contour_affinity(np.zeros((7, 7)), rho=0.1).toarray()
        n = 49
        assert W.shape == (n, n)
        np.testing.assert_array_equal(np.diag(W), 0)
        # every in-radius pair has weight exactly 1
        yy, xx = np.meshgrid(np.arange(7), np.arange(7), indexing="ij")
        pos = np.stack([yy.ravel(), xx.ravel()], axis=1)
        for i in range(n):
            for j in range(n):
                dy, dx = np.abs(pos[i] - pos[j])
                inside = (i != j and dy <= AFFINITY_RADIUS
                          and dx <= AFFINITY_RADIUS)
                assert W[i, j] == (1.0 if inside else 0.0)

    def test_symmetry(self, rng):
        m = rng.uniform(size=(8, 8))
        W = contour_affinity(m, rho=0.5)
        assert abs(W - W.T).max() == 0

    def test_horizontal_pair_crossing_contour(self):
        # single row: the line between columns is unambiguous, so the max
        # contour value along it is exact
        m = np.zeros((1, 9))
        m[0, 4] = 0.8
        W = contour_affinity(m, rho=0.1).toarray()
        # pair (col 3, col 5) crosses the contour at col 4
        assert W[3, 5] == pytest.approx(np.exp(-0.64 / 0.1))
        # pair (col 1, col 3) does not reach it
        assert W[1, 3] == 1.0
        # endpoints count: pair (col 4, col 5) includes the contour pixel
        assert W[4, 5] == pytest.approx(np.exp(-0.64 / 0.1))

    def test_vertical_pair(self):
        m = np.zeros((9, 1))
        m[4, 0] = 0.5
        W = contour_affinity(m, rho=0.2).toarray()
        assert W[3, 5] == pytest.approx(np.exp(-0.25 / 0.2))
        assert W[1, 3] == 1.0

    def test_values_in_unit_interval(self, rng):
        W = contour_affinity(rng.uniform(size=(6, 6)), rho=0.3)
        assert W.data.min() > 0
        assert W.data.max() <= 1.0


class TestEmbedding:
    def test_first_pair_is_trivial(self):
        W = contour_affinity(np.zeros((6, 6)), rho=0.1)
        evals, emb = contour_embedding(W, (6, 6))
        assert abs(evals[0]) < 1e-9
        v0 = emb[:, :, 0].ravel()
        assert v0.std() < 1e-9
        assert v0[0] > 0  # sign fix makes the constant vector positive

    def test_eigenpair_residuals(self, rng):
        m = rng.uniform(size=(6, 6))
        W = contour_affinity(m, rho=0.3)
        d = np.asarray(W.sum(axis=1)).ravel()
        L = scipy.sparse.diags(d) - W
        evals, emb = contour_embedding(W, (6, 6))
        V = emb.reshape(36, -1)
        for k in range(EMBED_DIM):
            r = L @ V[:, k] - evals[k] * d * V[:, k]
            assert np.linalg.norm(r) < 1e-8

    def test_d_normalization(self, rng):
        W = contour_affinity(rng.uniform(size=(6, 6)), rho=0.3)
        d = np.asarray(W.sum(axis=1)).ravel()
        _, emb = contour_embedding(W, (6, 6))
        V = emb.reshape(36, -1)
        for k in range(EMBED_DIM):
            assert V[:, k] @ (d * V[:, k]) == pytest.approx(1.0)

    def test_two_components_give_two_null_vectors(self):
        # two disjoint 8-pixel path graphs laid out as a 4x4 image
        rows, cols = [], []
        for comp in range(2):
            base = comp * 8
            for i in range(7):
                rows.append(base + i)
                cols.append(base + i + 1)
        data = np.ones(len(rows))
        W = scipy.sparse.coo_matrix(
            (np.concatenate([data, data]),
             (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(16, 16)).tocsr()
        evals, emb = contour_embedding(W, (4, 4))
        assert abs(evals[0]) < 1e-9
        assert abs(evals[1]) < 1e-9
        assert evals[2] > 1e-6
        V = emb.reshape(16, -1)
        for k in (0, 1):
            assert V[:8, k].std() < 1e-8
            assert V[8:, k].std() < 1e-8

    def test_contour_separates_halves(self):
        # a strong vertical contour: the first nontrivial eigenvector is
        # nearly constant per side and differs across it
        m = np.zeros((6, 7))
        m[:, 3] = 2.0
        W = contour_affinity(m, rho=0.05)
        _, emb = contour_embedding(W, (6, 7))
        v = emb[:, :, 1]
        left, right = v[:, :3], v[:, 4:]
        gap = abs(left.mean() - right.mean())
        assert gap > 10 * max(left.std(), right.std())

    def test_small_image_zero_padded(self):
        W = contour_affinity(np.zeros((3, 4)), rho=0.1)
        evals, emb = contour_embedding(W, (3, 4))
        assert emb.shape == (3, 4, EMBED_DIM)
        assert len(evals) == EMBED_DIM
        assert (emb[:, :, 12:] == 0).all()


class TestConfig:
    def test_validate_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="rho"):
            CrfConfig(rho=0).validate()
        with pytest.raises(ValueError, match="sigma_alpha"):
            CrfConfig(sigma_alpha=-1).validate()

    def test_defaults_valid(self):
        CrfConfig().validate()


def small_problem(seed=0):
    rng = np.random.default_rng(seed)
    image = rng.uniform(0, 255, size=(4, 3, 3))
    unary = rng.uniform(0.05, 0.95, size=(4, 3))
    config = CrfConfig(w1=1.0, w2=0.5, sigma_alpha=1.5, sigma_beta=40.0,
                       sigma_gamma=3.0, sigma_epsilon=2.0, rho=0.1,
                       iterations=10)
    return image, unary, config


class TestEnergy:
    def test_matches_pairwise_reference(self):
        image, unary, config = small_problem()
        lab = (unary > 0.5).astype(int)
        k1, k2 = reference_kernels(image, None, config)
        n = 12
        expected = -np.log(np.where(lab.ravel() == 1, unary.ravel(),
                                    1 - unary.ravel())).sum()
        flat = lab.ravel()
        for i in range(n):
            for j in range(i + 1, n):
                if flat[i] != flat[j]:
                    expected += config.w1 * k1[i, j] + config.w2 * k2[i, j]
        got = crf_energy(lab, unary, image, None, config)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_uniform_labeling_has_no_pairwise_cost(self):
        image, unary, config = small_problem()
        ones = np.ones((4, 3), int)
        expected = -np.log(unary).sum()
        assert crf_energy(ones, unary, image, None, config) \
            == pytest.approx(expected)


class TestMeanField:
    def test_zero_weights_return_unary(self):
        image, unary, config = small_problem()
        config.w1 = 0.0
        config.w2 = 0.0
        out = mean_field_infer(unary, image, None, config)
        np.testing.assert_array_equal(out, unary)

    def test_posterior_in_unit_interval(self):
        image, unary, config = small_problem()
        out = mean_field_infer(unary, image, None, config, radius=12)
        assert ((out > 0) & (out < 1)).all()

    def test_one_iteration_matches_dense_reference(self):
        image, unary, config = small_problem(seed=1)
        config.iterations = 1
        got = mean_field_infer(unary, image, None, config, radius=12)
        k1, k2 = reference_kernels(image, None, config)
        np.fill_diagonal(k1, 0)
        np.fill_diagonal(k2, 0)
        theta = config.w1 * k1 + config.w2 * k2
        q1 = np.clip(unary.ravel(), 1e-10, 1 - 1e-10)
        m1 = theta @ (1 - q1)
        m0 = theta @ q1
        z1 = np.log(q1) - m1
        z0 = np.log(1 - q1) - m0
        expected = 1 / (1 + np.exp(z0 - z1))
        np.testing.assert_allclose(got.ravel(), expected, atol=1e-10)

    def test_smooths_isolated_outlier(self):
        # one disagreeing pixel in a confident uniform region flips
        image = np.full((4, 3, 3), 100.0)
        unary = np.full((4, 3), 0.9)
        unary[2, 1] = 0.4
        config = CrfConfig(w1=2.0, w2=1.0, sigma_alpha=2.0, sigma_beta=50.0,
                           sigma_gamma=3.0, sigma_epsilon=2.0, rho=0.1,
                           iterations=10)
        out = mean_field_infer(unary, image, None, config, radius=12)
        assert out[2, 1] > 0.5

    def test_map_energy_not_worse_than_unary(self):
        # exhaustive check over all 2^12 labelings of the 4x3 problem
        image, unary, config = small_problem(seed=2)
        k1, k2 = reference_kernels(image, None, config)
        theta = config.w1 * k1 + config.w2 * k2
        np.fill_diagonal(theta, 0)
        flat_u = unary.ravel()

        def energy(flat_lab):
            e = -np.log(np.where(flat_lab == 1, flat_u, 1 - flat_u)).sum()
            differ = flat_lab[:, None] != flat_lab[None]
            return e + (theta * differ)[np.triu_indices(12, k=1)].sum()

        best = min(energy(np.array(bits))
                   for bits in itertools.product((0, 1), repeat=12))
        unary_map = (flat_u > 0.5).astype(int)
        posterior = mean_field_infer(unary, image, None, config, radius=12)
        mf_map = (posterior.ravel() > 0.5).astype(int)
        e_unary = energy(unary_map)
        e_mf = energy(mf_map)
        assert e_mf <= e_unary + 1e-9
        assert e_mf >= best - 1e-9
        # agreement with the exact module-level energy function
        assert crf_energy(mf_map.reshape(4, 3), unary, image, None, config) \
            == pytest.approx(e_mf)

    def test_embedding_changes_result(self, rng):
        image, unary, config = small_problem(seed=3)
        config.sigma_gamma = 0.2
        emb = rng.normal(size=(4, 3, 4))
        with_emb = mean_field_infer(unary, image, emb, config, radius=12)
        without = mean_field_infer(unary, image, None, config, radius=12)
        assert not np.allclose(with_emb, without)
