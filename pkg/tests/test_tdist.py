import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special
from scipy.stats import ortho_group

from oracles import gauss_logpdf, t_logpdf_scipy
from robust_enum.errors import InvalidArgumentError, NumericError
from robust_enum.tdist import ClusterParams, cholesky, squared_mahalanobis, t_logpdf, weight


def params(mu, psi, nu=3.0):
    return ClusterParams(np.asarray(mu, float), np.asarray(psi, float), nu)


class TestClusterParams:
    def test_rejects_asymmetric_scatter(self):
        with pytest.raises(InvalidArgumentError):
            params([0, 0], [[1, 0.1], [0, 1]])

    def test_rejects_indefinite_scatter(self):
        with pytest.raises(NumericError):
            params([0, 0], [[1, 2], [2, 1]])

    @pytest.mark.parametrize("nu", [0.0, -1.0])
    def test_rejects_nonpositive_nu(self, nu):
        with pytest.raises(InvalidArgumentError):
            params([0.0], [[1.0]], nu)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            params([0, 0, 0], np.eye(2))

    def test_cholesky_rejects_singular(self):
        with pytest.raises(NumericError):
            cholesky(np.zeros((2, 2)))


class TestSquaredMahalanobis:
    def test_zero_at_location(self):
        p = params([1.0, -2.0], [[2, 0.3], [0.3, 1]])
        assert squared_mahalanobis(p.mu, p) == 0.0

    def test_identity_scatter_is_euclidean(self):
        assert squared_mahalanobis(np.array([3.0, 4.0]), params([0, 0], np.eye(2))) == pytest.approx(25.0)

    def test_diagonal_scatter(self):
        p = params([0, 0], np.diag([2.0, 0.5]))
        assert squared_mahalanobis(np.array([2.0, 1.0]), p) == pytest.approx(4.0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            squared_mahalanobis(np.zeros(3), params([0, 0], np.eye(2)))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        p = params([0.5, 1.0], [[2, 0.4], [0.4, 0.7]])
        x = rng.normal(size=(20, 2))
        batch = squared_mahalanobis(x, p)
        assert np.allclose(batch, [squared_mahalanobis(xi, p) for xi in x], rtol=1e-13)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 5))
    def test_rotation_invariance(self, seed, r):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(r, r))
        psi = a @ a.T + 0.5 * np.eye(r)
        mu, x = rng.normal(size=r), rng.normal(size=r)
        q = ortho_group.rvs(r, random_state=rng) if r > 1 else np.array([[-1.0]])
        before = squared_mahalanobis(x, params(mu, psi))
        rot_psi = q @ psi @ q.T
        after = squared_mahalanobis(q @ x, params(q @ mu, 0.5 * (rot_psi + rot_psi.T)))
        assert after == pytest.approx(before, rel=1e-9, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_nonnegative_and_zero_only_at_location(self, seed):
        rng = np.random.default_rng(seed)
        p = params(rng.normal(size=2), [[1.5, 0.2], [0.2, 0.9]])
        x = p.mu + rng.normal(size=2)
        assert squared_mahalanobis(x, p) > 0


class TestLogpdf:
    def test_standard_cauchy_center(self):
        assert t_logpdf(np.array([0.0]), params([0.0], [[1.0]], 1.0)) == pytest.approx(np.log(1 / np.pi), abs=1e-12)

    @pytest.mark.parametrize("nu,r", [(1.0, 1), (3.0, 2), (7.5, 4)])
    def test_value_at_location(self, nu, r):
        rng = np.random.default_rng(r)
        a = rng.normal(size=(r, r))
        psi = a @ a.T + np.eye(r)
        expected = (
            special.gammaln((nu + r) / 2) - special.gammaln(nu / 2) - r / 2 * np.log(np.pi * nu)
            - 0.5 * np.linalg.slogdet(psi)[1]
        )
        assert t_logpdf(np.zeros(r), params(np.zeros(r), psi, nu)) == pytest.approx(expected, rel=1e-12)

    def test_gaussian_limit_example(self):
        value = t_logpdf(np.array([1.0, 1.0]), params([0, 0], np.eye(2), 1e6))
        assert value == pytest.approx(-np.log(2 * np.pi) - 1.0, abs=1e-4)

    @staticmethod
    def _point_at_delta(seed, delta, r=2):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(r, r))
        psi = a @ a.T + 0.3 * np.eye(r)
        p = params(rng.normal(size=r), psi, 1e6)
        direction = rng.normal(size=r)
        x = p.mu + direction * np.sqrt(delta / squared_mahalanobis(p.mu + direction, p))
        return x, p, psi

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), delta=st.floats(0, 25), r=st.integers(1, 4))
    def test_gaussian_limit_first_order_gap(self, seed, delta, r):
        # the gap to the Gaussian is (delta^2 - 2 r delta + r (r - 2)) / (4 nu) + O(nu^-2)
        x, p, psi = self._point_at_delta(seed, delta, r)
        gap = t_logpdf(x, p) - gauss_logpdf(x, p.mu, psi)
        assert gap == pytest.approx((delta**2 - 2 * r * delta + r * (r - 2)) / 4e6, abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), delta=st.floats(0, 22))
    def test_gaussian_limit_within_1e4(self, seed, delta):
        # the first-order gap stays below 1e-4 for delta <= 22 at r = 2
        x, p, psi = self._point_at_delta(seed, delta)
        assert t_logpdf(x, p) == pytest.approx(gauss_logpdf(x, p.mu, psi), abs=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 4), nu=st.floats(0.5, 50))
    def test_matches_scipy(self, seed, r, nu):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(r, r))
        psi = a @ a.T + 0.2 * np.eye(r)
        p = params(rng.normal(size=r), psi, nu)
        x = rng.normal(scale=3, size=r)
        assert t_logpdf(x, p) == pytest.approx(t_logpdf_scipy(x, p.mu, psi, nu), rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("nu,psi", [(3.0, 1.0), (1.5, 0.3), (10.0, 4.0)])
    def test_integrates_to_one(self, nu, psi):
        p = params([0.7], [[psi]], nu)
        half = 200 * np.sqrt(psi)
        grid = np.linspace(0.7 - half, 0.7 + half, 400001)
        dens = np.exp(t_logpdf(grid[:, None], p))
        assert integrate.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)

    def test_finite_far_away(self):
        assert np.isfinite(t_logpdf(np.array([1e150, -1e150]), params([0, 0], np.eye(2))))


class TestWeight:
    def test_at_zero(self):
        assert weight(0.0, 3.0, 2) == pytest.approx(5 / 3)

    def test_at_nu(self):
        assert weight(3.0, 3.0, 2) == pytest.approx(5 / 6)

    def test_far_outlier_downweighted(self):
        assert weight(1e9, 3.0, 2) < 1e-8

    def test_negative_delta_rejected(self):
        with pytest.raises(InvalidArgumentError):
            weight(-1.0, 3.0, 2)

    @given(delta=st.floats(0, 1e12), nu=st.floats(0.1, 1e6), r=st.integers(1, 60))
    def test_algebraic_identity(self, delta, nu, r):
        assert weight(delta, nu, r) * (nu + delta) == pytest.approx(nu + r, rel=1e-12)

    @given(d1=st.floats(0, 1e6), gap=st.floats(1e-3, 1e6), nu=st.floats(0.1, 100), r=st.integers(1, 10))
    def test_decreasing_and_bounded(self, d1, gap, nu, r):
        w1, w2 = weight(d1, nu, r), weight(d1 + gap, nu, r)
        assert w2 < w1 <= (nu + r) / nu
