import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import subspace_angles
from scipy.stats import multivariate_normal

from svcompress import tvm
from svcompress.errors import (MissingSupervision, PsiCollapse, RankDeficient, SigmaCollapse,
                               SingularAccumulator, SpeakerWithNoUtterances)
from svcompress.gmm import DiagonalGmm, StatsSet, SufficientStats
from svcompress.supervector import center_set
from svcompress.synth import SynthConfig, sample_latent_supervectors
from svcompress.tvm import (FaModel, PpcaModel, SupervisedModel, SupervisionTargets, TvmConfig)
from svcompress.tvm.fefa import fefa_extract, fefa_extract_batch, fefa_train


def _random_ubm(rng, C, F):
    return DiagonalGmm(rng.dirichlet(np.ones(C)), rng.standard_normal((C, F)), rng.uniform(0.5, 2.0, (C, F)))


def _random_stats(rng, ubm, U, scale=20.0):
    C, F = ubm.means.shape
    n = rng.uniform(0.5, scale, (U, C))
    f = n[:, :, None] * (ubm.means + 0.5 * rng.standard_normal((U, C, F)))
    return StatsSet(n, f, [f"u{i}" for i in range(U)], [f"s{i % 3}" for i in range(U)])


def _dense_fefa(n, f, V, ubm):
    """Boxed extraction formulas with h x h block matrices and explicit inverses."""
    C, F = ubm.means.shape
    N = np.diag(np.repeat(n, F))
    Sinv = np.diag(1.0 / ubm.variances.ravel())
    ft = (f - n[:, None] * ubm.means).ravel()
    d = V.shape[1]
    sigma = np.linalg.inv(np.eye(d) + V.T @ Sinv @ N @ V)
    return sigma @ V.T @ Sinv @ ft, sigma


def _dense_update(stats, V, ubm, principle):
    """One V update with per-utterance dense posteriors."""
    C, F = ubm.means.shape
    d = V.shape[1]
    acc_f = np.zeros((C, F, d))
    acc_e = np.zeros((C, d, d))
    for n, f in zip(stats.n, stats.f):
        mu, sigma = _dense_fefa(n, f, V, ubm)
        E = np.outer(mu, mu) + (sigma if principle == 1 else 0)
        for c in range(C):
            acc_f[c] += np.outer(f[c] - n[c] * ubm.means[c], mu)
            acc_e[c] += n[c] * E
    return np.concatenate([acc_f[c] @ np.linalg.inv(acc_e[c]) for c in range(C)])


class TestFefaExtract:
    def test_zero_loadings(self, rng):
        ubm = _random_ubm(rng, 3, 2)
        s = _random_stats(rng, ubm, 1)[0]
        post = fefa_extract(s, np.zeros((6, 4)), ubm)
        np.testing.assert_array_equal(post.mu, np.zeros(4))
        np.testing.assert_array_equal(post.sigma, np.eye(4))

    def test_empty_utterance(self, rng):
        ubm = _random_ubm(rng, 3, 2)
        post = fefa_extract(SufficientStats(np.zeros(3), np.zeros((3, 2))), rng.standard_normal((6, 4)), ubm)
        np.testing.assert_allclose(post.mu, 0.0, atol=1e-15)
        np.testing.assert_allclose(post.sigma, np.eye(4), atol=1e-15)

    def test_dense_oracle(self, rng):
        ubm = _random_ubm(rng, 2, 2)
        V = rng.standard_normal((4, 2))
        s = _random_stats(rng, ubm, 1)[0]
        post = fefa_extract(s, V, ubm)
        mu, sigma = _dense_fefa(s.n, s.f, V, ubm)
        np.testing.assert_allclose(post.mu, mu, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(post.sigma, sigma, rtol=1e-10, atol=1e-12)

    def test_batch_matches_single(self, rng):
        ubm = _random_ubm(rng, 4, 3)
        V = rng.standard_normal((12, 3))
        stats = _random_stats(rng, ubm, 9)
        batch = fefa_extract_batch(stats, V, ubm, chunk=4)
        for u in range(9):
            np.testing.assert_allclose(batch[u], fefa_extract(stats[u], V, ubm).mu, rtol=1e-10, atol=1e-12)

    def test_more_data_tightens_posterior(self, rng):
        ubm = _random_ubm(rng, 3, 2)
        V = rng.standard_normal((6, 3))
        s = _random_stats(rng, ubm, 1)[0]
        traces = [np.trace(fefa_extract(SufficientStats(t * s.n, t * s.f), V, ubm).sigma) for t in (1, 10, 100)]
        assert traces[0] >= traces[1] >= traces[2]


class TestFefaTrain:
    def test_hand_one_step(self):
        # C = F = d = 1, two utterances
        ubm = DiagonalGmm(np.ones(1), np.array([[0.5]]), np.array([[2.0]]))
        n = np.array([[3.0], [5.0]])
        f = np.array([[[4.0]], [[-1.0]]])
        cfg = TvmConfig(d=1, method="fefa", iterations=1, seed=7)
        V0 = np.random.default_rng(7).standard_normal((1, 1))[0, 0]  # init draw N(0, 1/d)
        num = den = 0.0
        for nu, fu in zip(n[:, 0], f[:, 0, 0]):
            ft = fu - nu * 0.5
            P = 1.0 + nu * V0 * V0 / 2.0
            mu = V0 * ft / 2.0 / P
            num += ft * mu
            den += nu * (1.0 / P + mu * mu)
        model = fefa_train(StatsSet(n, f), ubm, cfg)
        assert model.V[0, 0] == pytest.approx(num / den, rel=1e-12)

    @pytest.mark.parametrize("principle", [1, 2])
    def test_update_matches_dense(self, rng, principle):
        ubm = _random_ubm(rng, 2, 2)
        stats = _random_stats(rng, ubm, 6)
        cfg = TvmConfig(d=2, method="fefa", iterations=1, max_principle=principle, seed=3)
        V0 = np.random.default_rng(3).standard_normal((4, 2)) / np.sqrt(2)
        model = fefa_train(stats, ubm, cfg)
        np.testing.assert_allclose(model.V, _dense_update(stats, V0, ubm, principle), rtol=1e-9)

    def test_principles_differ_but_extract(self, tiny_stats):
        ubm, stats = tiny_stats
        models = [fefa_train(stats, ubm, TvmConfig(d=3, method="fefa", iterations=3, max_principle=p))
                  for p in (1, 2)]
        assert not np.allclose(models[0].V, models[1].V)
        for m in models:
            assert np.all(np.isfinite(fefa_extract_batch(stats, m)))

    def test_objective_monotone(self, tiny_stats):
        ubm, stats = tiny_stats
        model = fefa_train(stats, ubm, TvmConfig(d=3, method="fefa", iterations=8))
        obj = np.array(model.log.objectives)
        assert len(obj) == 9
        assert np.all(np.diff(obj) >= -1e-9 * np.abs(obj[:-1]))

    def test_capacity_ordering(self, rng):
        ubm = _random_ubm(rng, 2, 2)
        stats = _random_stats(rng, ubm, 300, scale=200.0)

        def error(d):
            model = fefa_train(stats, ubm, TvmConfig(d=d, method="fefa", iterations=20))
            w = fefa_extract_batch(stats, model)
            recon = ubm.means.ravel() + w @ model.V.T
            target = (stats.f / stats.n[:, :, None]).reshape(len(stats), -1)
            return ((target - recon) ** 2).sum()

        assert error(4) < error(1)

    def test_dead_component_warns(self, rng):
        ubm = _random_ubm(rng, 3, 2)
        stats = _random_stats(rng, ubm, 10)
        stats.n[:, 2] = 0.0
        stats.f[:, 2] = 0.0
        with pytest.warns(SingularAccumulator):
            model = fefa_train(stats, ubm, TvmConfig(d=2, method="fefa", iterations=2))
        assert np.all(np.isfinite(model.V))


class TestPca:
    def test_exact_plane(self, rng):
        basis = np.linalg.qr(rng.standard_normal((6, 2)))[0]
        X = rng.standard_normal((50, 2)) @ basis.T + 3.0
        model = tvm.pca_train(X, 2)
        recon = tvm.pca_extract(model, X) @ model.V.T + model.mean
        np.testing.assert_allclose(recon, X, atol=1e-8)

    def test_leading_eigenvector(self, rng):
        X = rng.multivariate_normal([0, 0], [[3.0, 1.2], [1.2, 1.0]], size=400)
        model = tvm.pca_train(X, 1)
        _, vecs = np.linalg.eigh(np.cov(X, rowvar=False))
        cos = abs(model.V[:, 0] @ vecs[:, -1])
        assert np.arccos(min(cos, 1.0)) < 1e-6

    def test_mean_extracts_to_zero(self, rng):
        X = rng.standard_normal((20, 5))
        model = tvm.pca_train(X, 3)
        np.testing.assert_allclose(tvm.pca_extract(model, X.mean(axis=0)), 0.0, atol=1e-12)

    def test_rank_deficient(self, rng):
        X = rng.standard_normal((3, 10))
        with pytest.warns(RankDeficient):
            model = tvm.pca_train(X, 5)
        assert model.V.shape[1] == 2  # centering removes one dimension


def _dense_posterior(V, noise, m):
    """Posterior via the h x h marginal covariance, independent of the d x d route."""
    C = V @ V.T + np.diag(noise)
    K = V.T @ np.linalg.inv(C)
    return K @ m, np.eye(V.shape[1]) - K @ V


class TestPpcaExtract:
    def test_zero_loadings(self, rng):
        post = tvm.ppca_extract(PpcaModel(np.zeros((5, 2)), 0.7), rng.standard_normal(5))
        np.testing.assert_array_equal(post.mu, np.zeros(2))
        np.testing.assert_array_equal(post.sigma, np.eye(2))

    def test_identity_loadings(self, rng):
        m = rng.standard_normal(4)
        post = tvm.ppca_extract(PpcaModel(np.eye(4), 1.0), m)
        np.testing.assert_allclose(post.sigma, 0.5 * np.eye(4), atol=1e-15)
        np.testing.assert_allclose(post.mu, m / 2, atol=1e-15)

    def test_dense_oracle(self, rng):
        V = rng.standard_normal((12, 3))
        m = rng.standard_normal(12)
        post = tvm.ppca_extract(PpcaModel(V, 0.4), m)
        mu, sigma = _dense_posterior(V, np.full(12, 0.4), m)
        np.testing.assert_allclose(post.mu, mu, atol=1e-10)
        np.testing.assert_allclose(post.sigma, sigma, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-5, 5))
    def test_linear_in_input(self, seed, a):
        r = np.random.default_rng(seed)
        model = PpcaModel(r.standard_normal((8, 2)), float(r.uniform(0.1, 2)))
        m1, m2 = r.standard_normal((2, 8))
        lhs = tvm.ppca_extract(model, a * m1 + m2).mu
        rhs = a * tvm.ppca_extract(model, m1).mu + tvm.ppca_extract(model, m2).mu
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestPpcaTrain:
    def test_recovers_generator(self):
        cfg = SynthConfig(C_true=2, F=20, d_true=5, seed=4)
        X, V_true, _ = sample_latent_supervectors(cfg, 2000, 0.2)
        model = tvm.ppca_train(center_set(X), TvmConfig(d=5, iterations=50))
        assert np.max(subspace_angles(model.V, V_true)) < 0.05
        assert model.sigma2 == pytest.approx(0.04, rel=0.10)

    def test_interpolation_collapses_sigma(self, rng):
        X = rng.standard_normal((3, 10))
        with pytest.warns(SigmaCollapse):
            model = tvm.ppca_train(X, TvmConfig(d=3, iterations=5, max_principle=2))
        assert model.sigma2 == pytest.approx(1e-12)

    @pytest.mark.parametrize("method", ["ppca", "fa"])
    def test_marginal_likelihood_monotone(self, method):
        cfg = SynthConfig(C_true=2, F=10, d_true=4, seed=1)
        X, _, _ = sample_latent_supervectors(cfg, 300, 0.5)
        model = tvm.train(TvmConfig(d=4, method=method, iterations=15), supervectors=center_set(X))
        obj = np.asarray(model.log.objectives)
        assert np.all(np.diff(obj) >= -1e-8 * np.abs(obj[:-1]))
        assert obj[-1] == pytest.approx(tvm.marginal_loglik(model, center_set(X)), rel=1e-12)

    def test_seed_reproducible(self, rng):
        X = center_set(rng.standard_normal((40, 8)))
        a = tvm.ppca_train(X, TvmConfig(d=2, seed=11))
        b = tvm.ppca_train(X, TvmConfig(d=2, seed=11))
        assert np.array_equal(a.V, b.V) and a.sigma2 == b.sigma2


class TestMarginalLoglik:
    def test_zero_loadings(self, rng):
        M = rng.standard_normal((4, 6))
        expected = sum(-3 * np.log(2 * np.pi) - 0.5 * m @ m for m in M)
        assert tvm.marginal_loglik(PpcaModel(np.zeros((6, 2)), 1.0), M) == pytest.approx(expected, rel=1e-12)

    def test_dense_density(self, rng):
        V = rng.standard_normal((10, 2))
        M = rng.standard_normal((5, 10))
        expected = multivariate_normal(np.zeros(10), V @ V.T + 0.3 * np.eye(10)).logpdf(M).sum()
        assert tvm.marginal_loglik(PpcaModel(V, 0.3), M) == pytest.approx(expected, abs=1e-8)

    def test_fa_dense_density(self, rng):
        V = rng.standard_normal((10, 2))
        psi = rng.uniform(0.2, 2.0, 10)
        M = rng.standard_normal((5, 10))
        expected = multivariate_normal(np.zeros(10), V @ V.T + np.diag(psi)).logpdf(M).sum()
        assert tvm.marginal_loglik(FaModel(V, psi), M) == pytest.approx(expected, abs=1e-8)


class TestFa:
    def test_isotropic_matches_ppca(self, rng):
        V = rng.standard_normal((12, 3))
        m = rng.standard_normal((4, 12))
        a = tvm.fa_extract(FaModel(V, np.full(12, 0.6)), m)
        b = tvm.ppca_extract(PpcaModel(V, 0.6), m)
        np.testing.assert_allclose(a.mu, b.mu, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-14, atol=1e-15)

    def test_dense_oracle(self, rng):
        V = rng.standard_normal((12, 3))
        psi = rng.uniform(0.1, 3.0, 12)
        m = rng.standard_normal(12)
        post = tvm.fa_extract(FaModel(V, psi), m)
        mu, sigma = _dense_posterior(V, psi, m)
        np.testing.assert_allclose(post.mu, mu, atol=1e-10)
        np.testing.assert_allclose(post.sigma, sigma, atol=1e-10)

    def test_isotropic_noise_gives_flat_psi(self):
        cfg = SynthConfig(C_true=2, F=20, d_true=3, seed=2)
        X, _, _ = sample_latent_supervectors(cfg, 5000, 0.5)
        model = tvm.fa_train(center_set(X), TvmConfig(d=3, method="fa", iterations=20))
        spread = (model.psi.max() - model.psi.min()) / model.psi.mean()
        assert spread < 0.2

    def test_psi_floor_warns(self, rng):
        X = rng.standard_normal((3, 6))
        X[:, 0] = 0.0  # a dead coordinate has zero residual variance
        with pytest.warns(PsiCollapse):
            model = tvm.fa_train(X, TvmConfig(d=2, method="fa", iterations=3))
        assert model.psi.min() >= 1e-10


def _supervised(rng, h=12, k=4, d=3, beta=1.0):
    return SupervisedModel(rng.standard_normal((h, d)), rng.standard_normal((k, d)), 0.5, 0.8, beta, np.zeros(k))


class TestPplsExtract:
    def test_beta_zero_is_ppca(self, rng):
        model = _supervised(rng, beta=0.0)
        m, y = rng.standard_normal(12), rng.standard_normal(4)
        a = tvm.ppls_extract_trainside(model, m, y)
        b = tvm.ppca_extract(PpcaModel(model.V, model.sigma2), m)
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-14)
        np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-14)

    def test_zero_loadings(self, rng):
        model = SupervisedModel(np.zeros((12, 3)), np.zeros((4, 3)), 0.5, 0.8, 1.0, np.zeros(4))
        post = tvm.ppls_extract_trainside(model, rng.standard_normal(12), rng.standard_normal(4))
        np.testing.assert_array_equal(post.mu, np.zeros(3))
        np.testing.assert_array_equal(post.sigma, np.eye(3))

    def test_dense_oracle(self, rng):
        model = _supervised(rng)
        m, y = rng.standard_normal(12), rng.standard_normal(4)
        stacked = np.vstack([model.V, model.Q])
        noise = np.concatenate([np.full(12, model.sigma2), np.full(4, model.rho2 / model.beta)])
        mu, sigma = _dense_posterior(stacked, noise, np.concatenate([m, y]))
        post = tvm.ppls_extract_trainside(model, m, y)
        np.testing.assert_allclose(post.mu, mu, atol=1e-10)
        np.testing.assert_allclose(post.sigma, sigma, atol=1e-10)

    def test_missing_target(self, rng):
        with pytest.raises(MissingSupervision):
            tvm.ppls_extract_trainside(_supervised(rng), rng.standard_normal(12), None)

    def test_testside_beta_zero(self, rng):
        model = _supervised(rng, beta=0.0)
        m = rng.standard_normal(12)
        np.testing.assert_allclose(tvm.ppls_extract_testside(model, m).mu,
                                   tvm.ppca_extract(model.as_ppca(), m).mu, atol=1e-15)

    def test_testside_zero_loadings(self, rng):
        model = SupervisedModel(np.zeros((12, 3)), rng.standard_normal((4, 3)), 0.5, 0.8, 1.0, np.zeros(4))
        np.testing.assert_array_equal(tvm.ppls_extract_testside(model, rng.standard_normal(12)).mu, np.zeros(3))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 5.0))
    def test_label_prediction_equivalence(self, seed, beta):
        r = np.random.default_rng(seed)
        model = _supervised(r, beta=beta)
        M = r.standard_normal((10, 12)) * 3
        a = tvm.ppls_extract_testside(model, M).mu
        b = tvm.ppls_extract_label_prediction(model, M).mu
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestSupervisedTrain:
    @pytest.mark.parametrize("principle", [1, 2])
    def test_beta_zero_tracks_ppca(self, tiny_stats, principle):
        ubm, stats = tiny_stats
        from svcompress.supervector import map_adapt_matrix
        X = center_set(map_adapt_matrix(ubm, stats.n, stats.f, 1.0))
        targets = {"ppls": tvm.one_hot_targets(stats.speaker_ids),
                   "sppca": tvm.speaker_supervector_targets(ubm, stats, 1.0)}

        def trace(method):
            Vs = []
            cfg = TvmConfig(d=3, method=method, iterations=4, max_principle=principle, beta=0.0)
            tvm.train(cfg, supervectors=X, targets=targets.get(method),
                      callback=lambda it, m: Vs.append(m.V.copy()))
            return np.array(Vs)

        ref = trace("ppca")
        for method in ("ppls", "sppca"):
            assert np.abs(trace(method) - ref).max() <= 1e-12

    def test_hand_one_step(self):
        X = np.array([[1.5], [-0.5]])
        Y = np.array([[0.5, -0.5], [-0.5, 0.5]])
        beta = 2.0
        cfg = TvmConfig(d=1, method="ppls", iterations=1, seed=5, beta=beta)
        r = np.random.default_rng(5)
        v = r.standard_normal((1, 1))[0, 0]
        q = r.standard_normal((2, 1))[:, 0]
        # sigma^2 = rho^2 = 1 at initialization
        P = 1.0 + v * v + beta * q @ q
        mu = np.array([(v * x[0] + beta * q @ y) / P for x, y in zip(X, Y)])
        E = mu @ mu + 2 / P
        v1 = X[:, 0] @ mu / E
        q1 = Y.T @ mu / E
        s1 = ((X ** 2).sum() - E * v1 * v1) / 2
        rho1 = ((Y ** 2).sum() - E * q1 @ q1) / 4
        model = tvm.ppls_train(X, SupervisionTargets(Y, np.zeros(2)), cfg)
        assert model.V[0, 0] == pytest.approx(v1, rel=1e-12)
        np.testing.assert_allclose(model.Q[:, 0], q1, rtol=1e-12)
        assert model.sigma2 == pytest.approx(s1, rel=1e-12)
        assert model.rho2 == pytest.approx(rho1, rel=1e-12)

    def test_ppls_separates_speakers(self, rng):
        centers = rng.standard_normal((3, 30)) * 2
        labels = np.repeat([0, 1, 2], 20)
        X = center_set(centers[labels] + 0.7 * rng.standard_normal((60, 30)))
        targets = tvm.one_hot_targets([f"s{i}" for i in labels])
        model = tvm.ppls_train(X, targets, TvmConfig(d=2, method="ppls", iterations=5))
        w = tvm.ppls_extract_trainside(model, X.matrix, targets.values).mu
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        cos = w @ w.T
        same = labels[:, None] == labels[None, :]
        off = ~np.eye(60, dtype=bool)
        assert cos[same & off].mean() > cos[~same].mean()

    def test_joint_objective_monotone(self, rng):
        X = center_set(rng.standard_normal((60, 10)))
        targets = tvm.one_hot_targets([f"s{i % 4}" for i in range(60)])
        model = tvm.ppls_train(X, targets, TvmConfig(d=3, method="ppls", iterations=10))
        obj = np.asarray(model.log.objectives)
        assert np.all(np.diff(obj) >= -1e-8 * np.abs(obj[:-1]))

    def test_missing_targets(self, rng):
        with pytest.raises(MissingSupervision):
            tvm.ppls_train(rng.standard_normal((10, 4)), None, TvmConfig(d=2, method="ppls"))

    def test_speaker_without_utterances(self):
        with pytest.raises(SpeakerWithNoUtterances):
            tvm.one_hot_targets(["a", "a", "b"], speakers=["a", "b", "c"])

    def test_sppca_targets_shared_per_speaker(self, tiny_stats):
        ubm, stats = tiny_stats
        t = tvm.speaker_supervector_targets(ubm, stats, 1.0)
        spk = np.array(stats.speaker_ids)
        first = t.values[spk == spk[0]]
        assert np.allclose(first, first[0]) and t.kind == "supervectors"
        np.testing.assert_allclose(t.values.mean(axis=0), 0.0, atol=1e-10)


class TestPosteriorCheck:
    def test_zero_loadings_exact(self):
        out = tvm.verify_posterior_appendix(PpcaModel(np.zeros((20, 3)), 0.9), trials=20)
        assert out["max_discrepancy"] <= 1e-12

    def test_random_trials(self):
        model = tvm.posterior_check.random_ppca_model(np.random.default_rng(0), 20, 3)
        assert tvm.verify_posterior_appendix(model, trials=100)["max_discrepancy"] < 1e-8


class TestDispatch:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TvmConfig(d=0)
        with pytest.raises(ValueError):
            TvmConfig(d=2, method="lda")
        with pytest.raises(ValueError):
            TvmConfig(d=2, max_principle=3)

    def test_extract_routes(self, tiny_stats):
        ubm, stats = tiny_stats
        from svcompress.supervector import map_adapt_matrix
        X = center_set(map_adapt_matrix(ubm, stats.n, stats.f, 1.0))
        for method in ("pca", "ppca", "fa"):
            model = tvm.train(TvmConfig(d=3, method=method, iterations=2), supervectors=X)
            assert tvm.extract(model, X.matrix).shape == (len(stats), 3)
        fefa = tvm.train(TvmConfig(d=3, method="fefa", iterations=2), stats=stats, ubm=ubm)
        assert tvm.extract(fefa, stats=stats).shape == (len(stats), 3)

    def test_objective_log_length(self, rng):
        model = tvm.ppca_train(rng.standard_normal((30, 6)), TvmConfig(d=2, iterations=4))
        assert len(model.log.objectives) == 5
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            tvm.ppca_extract(model, rng.standard_normal(6))
