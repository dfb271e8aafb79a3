"""Model and estimator contracts for the built-in families."""

import numpy as np
import numpy.testing as npt
import pytest

import ccrb
from ccrb.model import _fd_steps


class TestCurvedGaussianConstruction:
    def test_score_at_unit_offset(self, paper_model):
        """Hand value: score = (x - mu) @ mean_jacobian / sigma^2."""
        score = paper_model.score(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0]))
        npt.assert_allclose(score, [[1.0, 0.0]], atol=1e-14)

    def test_score_jacobian_second_diagonal(self, paper_model):
        """Entry (1,1) is -mu_{,2} . mu_{,2} / sigma^2 = -1 for any x."""
        rng = np.random.default_rng(5)
        x = rng.standard_normal((50, 3))
        jac = paper_model.score_jacobian(x, np.array([0.0, 0.0]))
        npt.assert_allclose(jac[:, 1, 1], -1.0, atol=1e-14)

    @pytest.mark.parametrize(
        "sigma, alpha",
        [(1.0, 0.0), (0.0, 1.0), (-1.0, 1.0), (np.inf, 1.0), (1.0, np.nan)],
    )
    def test_domain_errors(self, sigma, alpha):
        with pytest.raises(ValueError):
            ccrb.builtin_curved_gaussian(sigma, alpha)

    def test_param_dim_validation(self):
        with pytest.raises(ValueError):
            ccrb.builtin_curved_gaussian(1.0, 1.0, param_dim=0)

    def test_sampler_determinism(self, paper_model):
        theta = np.array([0.3, -0.2])
        first = paper_model.sampler(theta, 500, 77)
        second = paper_model.sampler(theta, 500, 77)
        assert first.shape == (500, 3)
        npt.assert_array_equal(first, second)

    def test_parameter_point_validation(self):
        with pytest.raises(ValueError):
            ccrb.as_parameter_point([np.nan, 0.0])
        with pytest.raises(ValueError):
            ccrb.as_parameter_point([])
        with pytest.raises(ValueError):
            ccrb.as_parameter_point([1.0, 2.0], dim=3)


class TestGammaEstimator:
    @pytest.mark.parametrize(
        "gamma, sigma, expected",
        [
            (0.0, 1.0, [[1.0, 0.0], [0.0, 1.0]]),
            (1.0, 1.0, [[1.0, 0.0], [0.0, 2.0]]),
            (1.0, 2.0, [[4.0, 0.0], [0.0, 8.0]]),
        ],
    )
    def test_closed_form_covariance(self, gamma, sigma, expected):
        """Gaussian moments: Var(V + gamma W) = sigma^2 (1 + gamma^2)."""
        model = ccrb.builtin_curved_gaussian(sigma, 1.0)
        est = ccrb.builtin_gamma_estimator(gamma, model, [0.0, 0.0])
        npt.assert_allclose(est.closed_form_covariance, expected, atol=1e-14)

    def test_mean_unbiased_at_claimed_point(self, paper_model, paper_estimator):
        """MC mean of T(X) - theta within 4 standard errors of zero."""
        n = 100_000
        draws = paper_model.sampler(np.zeros(2), n, 99)
        errors = paper_estimator.map(draws) - np.zeros(2)
        mean = errors.mean(axis=0)
        se = errors.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mean) <= 4.0 * se)

    def test_residual_coefficients_match_map(self, paper_model, paper_estimator):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((64, 3))
        direct = paper_estimator.map(x) - np.zeros(2)
        linear = (x - paper_model.family.mean_map(np.zeros(2))) @ paper_estimator.residual_coeffs.T
        npt.assert_allclose(direct, linear, atol=1e-13)

    def test_requires_curved_family(self):
        flat = ccrb.builtin_linear_gaussian(np.eye(2), 1.0)
        with pytest.raises(ValueError):
            ccrb.builtin_gamma_estimator(1.0, flat, [0.0, 0.0])


class TestScoreIdentity:
    def test_expected_score_vanishes(self, paper_model):
        """E[Y] = 0 within 4 standard errors over 1e5 draws."""
        theta = np.array([0.4, -0.7])
        draws = paper_model.sampler(theta, 100_000, 123)
        scores = paper_model.score(draws, theta)
        mean = scores.mean(axis=0)
        se = scores.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(mean) <= 4.0 * se)

    def test_density_normalizes(self, paper_model, quad_cfg):
        value = ccrb.expect(paper_model, [0.2, 0.5], lambda x: np.ones(x.shape[0]), quad_cfg)
        npt.assert_allclose(value.value, 1.0, atol=1e-12)


class TestScoreJacobian:
    def test_symmetry_on_samples(self, paper_model):
        theta = np.array([0.6, 0.1])
        x = paper_model.sampler(theta, 100, 3)
        jac = paper_model.score_jacobian(x, theta)
        assert np.abs(jac - np.transpose(jac, (0, 2, 1))).max() <= 1e-6

    def test_fd_linear_mean_model(self):
        """d mean / d theta constant: the score slope is exactly -1."""
        model = ccrb.builtin_linear_gaussian(np.ones((1, 1)), 1.0)
        jac = ccrb.eval_score_jacobian_fd(model, np.array([0.37]), np.array([0.9]))
        npt.assert_allclose(jac, [[[-1.0]]], atol=1e-7)

    def test_fd_curved_entry(self, paper_model):
        """Analytic oracle: (-mu_1.mu_1 + (x-mu).mu_11)/sigma^2 = -1 + 2 = 1."""
        jac = ccrb.eval_score_jacobian_fd(paper_model, np.array([0.0, 0.0, 1.0]), np.zeros(2))
        npt.assert_allclose(jac[0, 0, 0], 1.0, atol=1e-7)

    def test_fd_rejects_bad_step(self, paper_model):
        with pytest.raises(ValueError):
            ccrb.eval_score_jacobian_fd(paper_model, np.zeros(3), np.zeros(2), step=0.0)

    def test_fd_matches_analytic(self, paper_model):
        """Relative 1e-5 agreement at 20 random points and parameters."""
        rng = np.random.default_rng(21)
        for _ in range(20):
            theta = rng.uniform(-1.0, 1.0, size=2)
            x = rng.standard_normal((1, 3))
            fd = ccrb.eval_score_jacobian_fd(paper_model, x, theta)
            exact = paper_model.score_jacobian(x, theta)
            scale = max(1.0, np.abs(exact).max())
            assert np.abs(fd - exact).max() <= 1e-5 * scale

    def test_with_fd_jacobian_flag(self, paper_model):
        fd_model = ccrb.with_fd_jacobian(paper_model)
        assert fd_model.jacobian_is_fd
        x = np.array([[0.5, -0.2, 0.1]])
        npt.assert_allclose(
            fd_model.score_jacobian(x, np.zeros(2)),
            paper_model.score_jacobian(x, np.zeros(2)),
            atol=1e-6,
        )

    def test_fd_step_scaling(self):
        steps = _fd_steps(np.array([0.0, 10.0]), None)
        assert steps[1] == pytest.approx(10.0 * steps[0])


class TestLinearGaussian:
    def test_requires_full_rank(self):
        with pytest.raises(ValueError):
            ccrb.builtin_linear_gaussian(np.ones((3, 2)), 1.0)

    def test_score_is_linear_pullback(self):
        design = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        model = ccrb.builtin_linear_gaussian(design, 0.5)
        theta = np.array([0.2, -0.1])
        x = np.array([[1.0, 2.0, 3.0]])
        expected = (x - design @ theta) @ design / 0.25
        npt.assert_allclose(model.score(x, theta), expected, atol=1e-13)


class TestReparameterization:
    def test_log_density_invariance(self, paper_model):
        transform = np.array([[2.0, 1.0], [0.0, 1.0]])
        remodel = ccrb.reparameterize_linear(paper_model, transform)
        phi = np.array([0.7, -0.3])
        x = np.array([[0.1, 0.2, 0.3]])
        npt.assert_allclose(
            remodel.log_density(x, phi),
            paper_model.log_density(x, np.linalg.solve(transform, phi)),
            atol=1e-13,
        )

    def test_score_matches_fd_of_log_density(self, paper_model):
        """Independent oracle: differentiate the pulled-back log density."""
        transform = np.array([[1.5, -0.4], [0.2, 0.9]])
        remodel = ccrb.reparameterize_linear(paper_model, transform)
        phi = np.array([0.4, 0.8])
        x = np.array([[0.3, -0.5, 0.2]])
        h = 1e-6
        fd = np.zeros(2)
        for i in range(2):
            bump = np.zeros(2)
            bump[i] = h
            fd[i] = (remodel.log_density(x, phi + bump) - remodel.log_density(x, phi - bump))[0] / (2 * h)
        npt.assert_allclose(remodel.score(x, phi)[0], fd, rtol=1e-6, atol=1e-8)

    def test_transform_estimator_covariance(self, paper_estimator):
        transform = np.array([[1.0, 2.0], [0.0, 1.0]])
        mapped = ccrb.transform_estimator(paper_estimator, transform)
        npt.assert_allclose(
            mapped.closed_form_covariance,
            transform @ paper_estimator.closed_form_covariance @ transform.T,
            atol=1e-14,
        )
        npt.assert_allclose(mapped.claimed_unbiased_at, np.zeros(2), atol=1e-15)
