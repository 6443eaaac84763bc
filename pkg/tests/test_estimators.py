import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import f_n_loop, intercept_grid_objective, ols_loop
from eigdyad.core import DyadicDesign, OutcomeMatrix, build_residual_matrix, objective_corrected, offdiag_ones
from eigdyad.dgp import DesignSpec, derive_seed, simulate, standard_designs
from eigdyad.errors import ContractViolation, DegenerateEffectsError, DivergenceError, EstimationError
from eigdyad.estimators import (
    KEstimate,
    adjust_intercept,
    estimate,
    f_n_from_nu,
    f_n_iterate,
    f_n_step,
    fixed_point,
    k_hat,
    ols_adjusted,
    ols_dyadic,
    single_iteration,
    solve_depressed_cubic,
    subsample_moments,
    triple_moments,
    two_step,
)
from eigdyad.spectral import eig_sym


@pytest.fixture(scope="module")
def d3():
    return simulate(standard_designs(40)[2].with_(seed=21))


def intercept_only(n, gamma, seed, beta=1.0):
    return simulate(DesignSpec(n=n, beta=(beta,), gamma=gamma, regressor_form="intercept_only", seed=seed))


class TestOls:
    def test_matches_stacked_least_squares(self, d3):
        d, y, _ = d3
        np.testing.assert_allclose(ols_dyadic(d, y).mu_hat, ols_loop(d.x, y.y), rtol=1e-10)

    def test_exact_fit(self):
        d, _, _ = simulate(standard_designs(10)[0].with_(seed=1))
        y = OutcomeMatrix(d.combine([2.0, -3.0]))
        np.testing.assert_allclose(ols_dyadic(d, y).mu_hat, [2.0, -3.0], atol=1e-12)

    def test_singular_gram(self):
        n = 6
        d = DyadicDesign(np.stack([offdiag_ones(n), 2 * offdiag_ones(n)]))
        with pytest.raises(EstimationError, match="singular"):
            ols_dyadic(d, OutcomeMatrix(offdiag_ones(n)))


class TestCubic:
    @pytest.mark.parametrize("a, b, root", [(0.0, 8.0, 2.0), (1.0, 4.0, 1.0), (0.0, 1e-6, 1e-2), (2.0, 0.0, 0.0)])
    def test_known_roots(self, a, b, root):
        assert solve_depressed_cubic(a, b) == pytest.approx(root, rel=1e-9, abs=1e-14)

    @settings(max_examples=60)
    @given(st.floats(0, 1e3), st.floats(1e-6, 1e6))
    def test_residual(self, a, b):
        x = solve_depressed_cubic(a, b)
        assert x > 0
        assert abs(x**3 + 3 * a * x - b) <= 1e-9 * max(1.0, b, x**3)

    def test_negative_a_rejected(self):
        with pytest.raises(ContractViolation):
            solve_depressed_cubic(-1.0, 1.0)


class TestInterceptAdjustment:
    def test_triple_moments_match_loops(self):
        rng = np.random.default_rng(2)
        n = 7
        e = rng.normal(size=(n, n))
        e = e + e.T
        np.fill_diagonal(e, 0.0)
        a = b = 0.0
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if len({i, j, k}) == 3:
                        a += e[i, j] * e[i, k]
                        b += e[i, j] * e[i, k] * e[j, k]
        ah, bh = triple_moments(e)
        assert ah == pytest.approx(a / n**3, rel=1e-12)
        assert bh == pytest.approx(b / n**3, rel=1e-12)

    def test_recovers_shift(self):
        """``a -> gamma^2 sigma^2``, ``b -> sigma^6`` at the true coefficients."""
        gammas = []
        for s in range(10):
            d, y, t = intercept_only(300, 1.0, derive_seed(3, s), beta=2.0)
            adj = adjust_intercept(d, y, [2.0])
            gammas.append(adj.gamma2_hat)
            assert adj.delta_tilde == 1
        assert np.mean(gammas) == pytest.approx(1.0, abs=0.15)

    def test_negative_delta(self):
        d, y, _ = simulate(DesignSpec(n=300, beta=(1.0,), gamma=1.0, delta=-1, regressor_form="intercept_only", seed=4))
        assert adjust_intercept(d, y, ols_dyadic(d, y).mu_hat).delta_tilde == -1

    def test_no_effects_is_degenerate(self):
        d = DyadicDesign(offdiag_ones(8), intercept=0)
        with pytest.raises(DegenerateEffectsError):
            adjust_intercept(d, OutcomeMatrix(3 * offdiag_ones(8)), [3.0])

    def test_needs_intercept(self, d3):
        d, y, _ = d3
        nd = DyadicDesign(d.x[1:])
        with pytest.raises(ContractViolation):
            adjust_intercept(nd, y, [1.0])
        assert ols_adjusted(nd, y).method == "ols_adjusted"

    def test_only_intercept_moves(self, d3):
        d, y, _ = d3
        a, b = ols_dyadic(d, y).mu_hat, ols_adjusted(d, y).mu_hat
        assert a[1] == b[1] and a[0] != b[0]


class TestFixedPointMap:
    def test_matches_triple_loop(self):
        d, y, _ = simulate(standard_designs(9)[3].with_(seed=5))
        nu = eig_sym(build_residual_matrix(d, y, [0.3, 0.9]).m).nu
        np.testing.assert_allclose(f_n_from_nu(d, y, nu), f_n_loop(d.x, y.y, nu), rtol=1e-10)

    def test_nu_sign_invariant(self, d3):
        d, y, _ = d3
        nu = np.random.default_rng(6).normal(size=d.n)
        nu /= np.linalg.norm(nu)
        np.testing.assert_allclose(f_n_from_nu(d, y, nu), f_n_from_nu(d, y, -nu), rtol=1e-13)

    def test_data_sign_invariant(self, d3):
        d, y, _ = d3
        neg_d = DyadicDesign(-d.x)
        mu = np.array([0.5, 1.5])
        np.testing.assert_allclose(f_n_iterate(d, y, mu), f_n_iterate(neg_d, OutcomeMatrix(-y.y), mu), rtol=1e-10)

    def test_zero_nu_is_ols(self, d3):
        d, y, _ = d3
        np.testing.assert_allclose(f_n_from_nu(d, y, np.zeros(d.n)), ols_dyadic(d, y).mu_hat, rtol=1e-12)

    def test_step_returns_spectrum_used(self, d3):
        d, y, _ = d3
        mu, spec = f_n_step(d, y, [0.0, 1.0])
        np.testing.assert_allclose(mu, f_n_from_nu(d, y, spec.nu))

    def test_coincident_terms_stationary(self):
        """With the ``i == j`` terms kept, fixed points are stationary points of the eigenvalue objective."""
        d, y, _ = intercept_only(60, 1.0, 7, beta=2.0)
        fp = fixed_point(d, y, coincident_terms=True).mu_hat[0]

        def obj(m):
            r = build_residual_matrix(d, y, [m])
            return objective_corrected(r, eig_sym(r.m))

        h = 1e-5
        grad = (obj(fp + h) - obj(fp - h)) / (2 * h)
        assert abs(grad) < 1e-4 * obj(fp)

    def test_linearization_slope(self):
        """``f_N(mu) - mu0`` moves by about ``K = E(U)^2/E(U^2) = 1/2`` per unit of first-stage error.

        The first stage is ``mu0`` plus an independent ``N(0, 1/N)`` draw: an
        OLS start shares the sample mean of ``U`` with the noise of ``f_N`` and
        would confound the slope.
        """
        a, b = [], []
        rng = np.random.default_rng(0)
        for s in range(300):
            d, y, t = intercept_only(100, 1.0, derive_seed(8, s), beta=2.0)
            start = t.mu0 + rng.normal() / 10.0
            a.append(start[0] - t.mu0[0])
            b.append(f_n_iterate(d, y, start)[0] - t.mu0[0])
        assert np.polyfit(a, b, 1)[0] == pytest.approx(0.5, abs=0.15)


class TestFixedPoint:
    def test_converges_to_fixed_point(self, d3):
        d, y, _ = d3
        rep = fixed_point(d, y)
        assert rep.converged and rep.method == "fixed_point"
        assert np.max(np.abs(f_n_iterate(d, y, rep.mu_hat) - rep.mu_hat)) <= 1e-8
        np.testing.assert_array_equal(rep.trajectory[-1], rep.mu_hat)
        assert rep.lambda_lead == rep.spectral.lead

    def test_local_grid_minimum(self):
        d, y, _ = intercept_only(100, 0.0, 9)
        fp = fixed_point(d, y).mu_hat[0]
        grid = np.round(fp, 3) + 1e-3 * np.arange(-30, 31)
        obj = intercept_grid_objective(y.y, grid)
        assert abs(grid[np.argmin(obj)] - fp) <= 2e-3

    def test_grid_oracle_agrees_with_dense(self):
        d, y, _ = intercept_only(30, 1.0, 10)
        grid = np.linspace(-1, 3, 41)
        dense = []
        for m in grid:
            r = build_residual_matrix(d, y, [m])
            dense.append(objective_corrected(r, eig_sym(r.m)))
        np.testing.assert_allclose(intercept_grid_objective(y.y, grid), dense, rtol=1e-11)

    def test_max_iter(self, d3):
        d, y, _ = d3
        rep = fixed_point(d, y, max_iter=1, tol=0.0)
        assert not rep.converged and rep.iterations == 1

    def test_divergence(self, d3, monkeypatch):
        import eigdyad.estimators as est

        def runaway(design, y, mu, coincident_terms=False):
            return np.asarray(mu) * 10.0 + 1.0, eig_sym(build_residual_matrix(design, y, mu).m)

        monkeypatch.setattr(est, "f_n_step", runaway)
        d, y, _ = d3
        with pytest.raises(DivergenceError):
            fixed_point(d, y)


class TestK:
    def test_intercept_only_closed_form(self):
        """With ``X = 1`` the inner matrix is ``1 - q`` and ``K = q``."""
        d, y, _ = intercept_only(60, 1.0, 11)
        nu = np.random.default_rng(12).normal(size=60)
        nu /= np.linalg.norm(nu)
        k = k_hat(d, nu)
        q = nu.sum() ** 2 / 60
        assert k.k[0, 0] == pytest.approx(q, rel=1e-12)
        assert k.g[0, 0] == pytest.approx(1 / (1 - q), rel=1e-12)

    def test_subsample_moments_indices(self, d3):
        d, _, _ = d3
        xx, path, mean = subsample_moments(d)
        p = [(2 * k, 2 * k + 1) for k in range(d.n // 2)]
        t = [(3 * k, 3 * k + 1, 3 * k + 2) for k in range(d.n // 3)]
        np.testing.assert_allclose(xx, np.mean([np.outer(d.x[:, i, j], d.x[:, i, j]) for i, j in p], axis=0))
        np.testing.assert_allclose(path, np.mean([np.outer(d.x[:, i, j], d.x[:, j, k]) for i, j, k in t], axis=0))
        np.testing.assert_allclose(mean, np.mean([d.x[:, i, j] for i, j in p], axis=0))

    def test_nu_sign_invariant(self, d3):
        d, _, _ = d3
        nu = np.random.default_rng(13).normal(size=d.n)
        nu /= np.linalg.norm(nu)
        np.testing.assert_allclose(k_hat(d, nu).k, k_hat(d, -nu).k, rtol=1e-13)

    def test_zero_for_orthogonal_nu(self, d3):
        d, _, _ = d3
        nu = np.zeros(d.n)
        nu[0], nu[1] = 1 / np.sqrt(2), -1 / np.sqrt(2)
        k = k_hat(d, nu)
        np.testing.assert_allclose(k.k, 0.0, atol=1e-15)
        assert k.contracting

    def test_small_n(self):
        with pytest.raises(ContractViolation):
            k_hat(DyadicDesign(offdiag_ones(5)), np.ones(5) / np.sqrt(5))


class TestTwoStep:
    def test_trajectory_formula(self, d3):
        d, y, _ = d3
        rep = two_step(d, y)
        start, mu1, c1, mu2, c2 = rep.trajectory
        g = rep.k_estimate.g
        np.testing.assert_allclose(start, ols_adjusted(d, y).mu_hat)
        np.testing.assert_allclose(mu1, f_n_iterate(d, y, start))
        np.testing.assert_allclose(c1, g @ mu1 + (np.eye(2) - g) @ start)
        np.testing.assert_allclose(mu2, f_n_iterate(d, y, c1))
        np.testing.assert_allclose(c2, g @ mu2 + (np.eye(2) - g) @ c1)
        np.testing.assert_array_equal(rep.mu_hat, c2)

    def test_zero_k_is_two_iterations(self, d3):
        d, y, _ = d3
        zero = KEstimate(np.zeros((2, 2)), 0.0, np.eye(2), 0.0)
        rep = two_step(d, y, k=zero)
        start = ols_adjusted(d, y).mu_hat
        np.testing.assert_allclose(rep.mu_hat, f_n_iterate(d, y, f_n_iterate(d, y, start)), rtol=1e-13)

    def test_single_iteration(self, d3):
        d, y, _ = d3
        rep = single_iteration(d, y)
        np.testing.assert_allclose(rep.mu_hat, f_n_iterate(d, y, ols_adjusted(d, y).mu_hat))
        assert rep.iterations == 1


class TestDispatch:
    @pytest.mark.parametrize("method", ["ols", "ols_adjusted", "single_iteration", "fixed_point", "two_step"])
    def test_all_methods(self, d3, method):
        d, y, t = d3
        rep = estimate(d, y, method)
        assert rep.method == method and np.all(np.isfinite(rep.mu_hat))

    def test_unknown(self, d3):
        d, y, _ = d3
        with pytest.raises(ContractViolation, match="unknown estimator"):
            estimate(d, y, "gmm")
