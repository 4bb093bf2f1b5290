import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_label_agreement, brute_kmedians, single_t_ml, t_logpdf_scipy
from robust_enum.datagen import DataSet, make_data2, sample_t_cluster
from robust_enum.em import (
    EmConfig,
    MixtureModel,
    Partition,
    Responsibilities,
    e_step,
    fit_from_centroids,
    fit_mixture,
    hard_assign,
    kmedians_init,
    m_step,
    mixture_loglik,
    run_em,
    seed_centroids,
)
from robust_enum.errors import DegenerateComponentError, InitializationError, InvalidArgumentError
from robust_enum.rng import make_rng
from robust_enum.tdist import ClusterParams


def two_blobs(seed=0, n=50, far=100.0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(0, 0.3, (n, 2)), rng.normal(far, 0.3, (n, 2))])
    return DataSet(x, np.repeat([1, 2], n))


class TestConfigAndTypes:
    @pytest.mark.parametrize("kwargs", [
        {"max_iter": 0}, {"rel_tol": 0.0}, {"kmedians_iters": 0}, {"ridge": -1.0}, {"min_cluster_size": 0},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            EmConfig(**kwargs)

    def test_min_size_defaults_to_r_plus_one(self):
        assert EmConfig().min_size(4) == 5
        assert EmConfig(min_cluster_size=2).min_size(4) == 2

    def test_mixture_rejects_bad_tau(self):
        with pytest.raises(InvalidArgumentError):
            MixtureModel.from_arrays([0.5, 0.6], np.zeros((2, 1)), np.ones((2, 1, 1)), 3.0)
        with pytest.raises(InvalidArgumentError):
            MixtureModel.from_arrays([1.0, 0.0], np.zeros((2, 1)), np.ones((2, 1, 1)), 3.0)

    def test_mixture_rejects_mixed_nu(self):
        comps = (ClusterParams(np.zeros(1), np.eye(1), 3.0), ClusterParams(np.zeros(1), np.eye(1), 4.0))
        with pytest.raises(InvalidArgumentError):
            MixtureModel(comps, np.array([0.5, 0.5]))


class TestKmediansInit:
    def test_single_cluster_is_median(self):
        rng = np.random.default_rng(1)
        x = rng.standard_t(3, size=(101, 3))
        model = kmedians_init(x, 1, EmConfig(seed=4))
        assert np.allclose(model.mus[0], np.median(x, axis=0))
        assert model.tau[0] == 1.0

    def test_two_far_clusters(self):
        data = two_blobs()
        model = kmedians_init(data, 2, EmConfig(seed=3))
        order = np.argsort(model.mus[:, 0])
        assert np.all(np.abs(model.mus[order[0]]) < 1)
        assert np.all(np.abs(model.mus[order[1]] - 100) < 1)
        assert np.allclose(model.tau, 0.5)

    def test_matches_brute_force_from_same_seeds(self):
        data = two_blobs(seed=7, n=30, far=5.0)
        config = EmConfig(seed=11)
        model = kmedians_init(data, 2, config, make_rng(11))
        # seeding is the first use of the stream
        start = data.points[seed_centroids(data.points, 2, make_rng(11))]
        expected = brute_kmedians(data.points, start, config.kmedians_iters)
        assert np.allclose(np.sort(model.mus, axis=0), np.sort(expected, axis=0))

    def test_duplicate_points_fail(self):
        with pytest.raises(InitializationError):
            kmedians_init(np.ones((20, 2)), 2, EmConfig())

    def test_too_few_points(self):
        with pytest.raises(InitializationError):
            kmedians_init(np.random.default_rng(0).normal(size=(5, 2)), 2, EmConfig())


class TestSeeding:
    def test_distinct_and_deterministic(self):
        x = np.random.default_rng(0).normal(size=(40, 2))
        a = seed_centroids(x, 6, make_rng(3))
        assert len(set(a.tolist())) == 6
        assert np.array_equal(a, seed_centroids(x, 6, make_rng(3)))

    def test_coincident_points_stay_distinct(self):
        x = np.vstack([np.zeros((10, 2)), np.ones((1, 2))])
        idx = seed_centroids(x, 3, make_rng(0))
        assert len(set(idx.tolist())) == 3

    def test_finds_small_far_cluster(self):
        # uniform draws of 5 indices hit the 5 far points in 1.3% of seeds
        rng = np.random.default_rng(1)
        centers = np.array([[0, 0], [40, 0], [0, 40], [40, 40], [80, 80]], dtype=float)
        sizes = [500, 500, 500, 500, 5]
        x = np.vstack([c + rng.standard_t(3, size=(k, 2)) for c, k in zip(centers, sizes)])
        hits = sum(np.any(seed_centroids(x, 5, make_rng(s)) >= 2000) for s in range(200))
        assert hits >= 12


class TestEStep:
    def test_single_component(self):
        x = np.random.default_rng(0).normal(size=(30, 2))
        model = MixtureModel.from_arrays([1.0], np.zeros((1, 2)), np.eye(2)[None], 3.0)
        assert np.all(e_step(x, model).upsilon == 1.0)

    def test_symmetric_components(self):
        model = MixtureModel.from_arrays([0.5, 0.5], np.array([[-2.0, 1.0], [2.0, -1.0]]),
                                         np.stack([np.eye(2)] * 2), 3.0)
        assert np.allclose(e_step(np.zeros((1, 2)), model).upsilon, 0.5, atol=1e-15)

    def test_separated_components_against_exact_densities(self):
        mus = np.array([[0.0, 0.0], [40.0, 0.0]])
        model = MixtureModel.from_arrays([0.5, 0.5], mus, np.stack([np.eye(2)] * 2), 3.0)
        resp = e_step(mus[:1], model)
        dens = [t_logpdf_scipy(mus[0], mu, np.eye(2), 3.0) for mu in mus]
        expected = 1.0 / (1.0 + np.exp(dens[1] - dens[0]))
        assert resp.upsilon[0, 0] > 0.999
        assert resp.upsilon[0, 0] == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=30)
    @given(seed=st.integers(0, 2**32 - 1), l=st.integers(1, 4), r=st.sampled_from([1, 2, 3, 40]))
    def test_rows_stochastic_and_weights_bounded(self, seed, l, r):
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=5, size=(25, r))
        tau = rng.dirichlet(np.ones(l))
        tau = np.maximum(tau, 1e-3)
        tau /= tau.sum()
        model = MixtureModel.from_arrays(tau, rng.normal(size=(l, r)), np.stack([np.eye(r)] * l), 3.0)
        resp = e_step(x, model)
        assert np.allclose(resp.upsilon.sum(axis=1), 1.0, atol=1e-10)
        assert np.all((resp.upsilon >= 0) & (resp.upsilon <= 1))
        assert np.all((resp.w > 0) & (resp.w <= (3.0 + r) / 3.0))

    def test_loglik_matches_scipy(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 2))
        psis = np.stack([np.eye(2), np.array([[2.0, 0.3], [0.3, 0.5]])])
        mus = np.array([[0.0, 0.0], [1.0, -1.0]])
        model = MixtureModel.from_arrays([0.3, 0.7], mus, psis, 4.0)
        dens = np.stack([np.exp(t_logpdf_scipy(x, mus[m], psis[m], 4.0)) for m in range(2)], axis=1)
        expected = np.log(dens @ np.array([0.3, 0.7])).sum()
        assert mixture_loglik(x, model) == pytest.approx(expected, rel=1e-12)


class TestMStep:
    def test_indicator_responsibilities(self):
        x = np.array([[0.0, 0.0], [1.0, 0.5], [10.0, 10.0], [11.0, 9.0]])
        up = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        model = m_step(x, Responsibilities(up, np.ones_like(up)), 3.0, EmConfig(min_cluster_size=2, ridge=1e-6))
        assert model.tau[0] == pytest.approx(0.5)

    def test_unit_weights_give_gaussian_ml(self):
        x = np.random.default_rng(2).normal(size=(50, 3))
        ones = np.ones((50, 1))
        model = m_step(x, Responsibilities(ones, ones), 1e6)
        assert np.allclose(model.mus[0], x.mean(axis=0))
        assert np.allclose(model.psis[0], np.cov(x, rowvar=False, bias=True))

    def test_hand_computed_location(self):
        x = np.array([[0.0], [1.0], [10.0]])
        delta = (x[:, 0] - 0.0) ** 2
        w = (3.0 + 1) / (3.0 + delta)
        assert np.allclose(w, [4 / 3, 1.0, 4 / 103])
        up = np.ones((3, 1))
        model = m_step(x, Responsibilities(up, w[:, None]), 3.0, EmConfig(min_cluster_size=1))
        expected = (w * x[:, 0]).sum() / w.sum()
        assert model.mus[0, 0] == pytest.approx(expected, rel=1e-14)
        assert model.mus[0, 0] == pytest.approx(0.585266, abs=1e-6)

    def test_small_component_is_degenerate(self):
        x = np.random.default_rng(0).normal(size=(10, 2))
        up = np.column_stack([np.r_[np.ones(8), np.zeros(2)], np.r_[np.zeros(8), np.ones(2)]])
        with pytest.raises(DegenerateComponentError):
            m_step(x, Responsibilities(up, np.ones_like(up)), 3.0)

    def test_ridge_rescues_collinear_scatter(self):
        t = np.linspace(0, 1, 10)
        x = np.column_stack([t, 2 * t])
        ones = np.ones((10, 1))
        model = m_step(x, Responsibilities(ones, ones), 3.0)
        assert np.all(np.linalg.eigvalsh(model.psis[0]) > 0)

    @settings(max_examples=30)
    @given(seed=st.integers(0, 2**32 - 1), l=st.integers(1, 3))
    def test_scatters_are_valid_params(self, seed, l):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(60, 2))
        up = rng.dirichlet(np.ones(l), size=60)
        w = rng.uniform(0.1, 5 / 3, size=(60, l))
        model = m_step(x, Responsibilities(up, w), 3.0, EmConfig(min_cluster_size=1))
        for c in model.components:
            assert np.array_equal(c.psi, c.psi.T)
            assert np.all(np.linalg.eigvalsh(c.psi) > 0)


class TestHardAssign:
    def test_argmax(self):
        assert hard_assign(np.array([[0.2, 0.5, 0.3]])).assignment[0] == 1

    def test_tie_goes_to_lowest(self):
        assert hard_assign(np.array([[0.5, 0.5]])).assignment[0] == 0

    def test_identity_sizes(self):
        assert hard_assign(np.eye(3)).cluster_sizes.tolist() == [1, 1, 1]

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=50))
    def test_partition_covers_all_points(self, assign):
        p = Partition.from_assignment(assign, 4)
        assert p.cluster_sizes.sum() == len(assign)
        merged = np.sort(np.concatenate(p.cluster_indices))
        assert np.array_equal(merged, np.arange(len(assign)))


class TestFit:
    def test_single_t_cluster_location(self):
        rng = make_rng(21)
        x = sample_t_cluster(np.array([2.0, -1.0]), np.eye(2), 3.0, 500, rng)
        fit = fit_mixture(x, 1, 3.0, EmConfig(rel_tol=1e-12, max_iter=5000))
        mu_ref, psi_ref = single_t_ml(x, 3.0)
        assert np.allclose(fit.model.mus[0], mu_ref, atol=1e-4)
        assert np.allclose(fit.model.psis[0], psi_ref, atol=1e-4)
        assert np.all(np.abs(fit.model.mus[0] - [2.0, -1.0]) < 0.2)

    @pytest.mark.parametrize("seed", range(10))
    def test_trace_monotone(self, seed):
        data = make_data2(0.02, seed, n_per_cluster=100)
        fit = fit_mixture(data, 3, 3.0, EmConfig(seed=seed))
        tr = np.array(fit.loglik_trace)
        assert np.all(np.diff(tr) >= -1e-8 * np.abs(tr[1:]))

    def test_recovers_data2_partition(self):
        data = make_data2(0.01, seed=5)
        fit = fit_mixture(data, 3, 3.0, EmConfig(seed=5))
        inliers = data.labels > 0
        agree = best_label_agreement(data.labels[inliers], fit.partition.assignment[inliers], 3)
        assert agree >= 0.95

    def test_weight_sum_identity(self):
        x = sample_t_cluster(np.zeros(2), np.array([[1.0, 0.4], [0.4, 2.0]]), 3.0, 400, make_rng(8))
        fit = fit_mixture(x, 1, 3.0, EmConfig(rel_tol=1e-10, max_iter=5000))
        assert fit.converged
        assert fit.resp.w[:, 0].sum() == pytest.approx(400, rel=1e-4)

    def test_permutation_equivariance(self):
        data = make_data2(0.0, seed=3, n_per_cluster=100)
        centroids = [[0.5, 4.0], [4.0, 0.5], [-4.0, 0.5]]
        perm = np.random.default_rng(0).permutation(data.n)
        a = fit_from_centroids(data.points, centroids, 3.0)
        b = fit_from_centroids(data.points[perm], centroids, 3.0)
        assert np.allclose(a.model.mus, b.model.mus, atol=1e-8)
        assert np.allclose(a.model.psis, b.model.psis, atol=1e-8)
        assert np.allclose(a.model.tau, b.model.tau, atol=1e-10)
        assert np.array_equal(a.partition.assignment[perm], b.partition.assignment)

    def test_deterministic(self):
        data = make_data2(0.01, seed=1, n_per_cluster=100)
        a = fit_mixture(data, 3, 3.0, EmConfig(seed=4))
        b = fit_mixture(data, 3, 3.0, EmConfig(seed=4))
        assert a.loglik_trace == b.loglik_trace

    def test_run_em_trace_starts_at_init(self):
        data = make_data2(0.0, seed=2, n_per_cluster=50)
        init = kmedians_init(data, 3, EmConfig(seed=2))
        fit = run_em(data, init, EmConfig(max_iter=3))
        assert fit.loglik_trace[0] == pytest.approx(mixture_loglik(data, init))
        assert len(fit.loglik_trace) <= 4
