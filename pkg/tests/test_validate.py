"""Monte Carlo validation of the bound chain."""

import numpy as np
import numpy.testing as npt
import pytest

import ccrb


def least_squares_estimator(design, sigma, theta0):
    pseudo = np.linalg.pinv(design)
    return ccrb.EstimatorSpec(
        map=lambda x: x @ pseudo.T,
        claimed_unbiased_at=np.asarray(theta0, dtype=float),
        closed_form_covariance=sigma**2 * np.linalg.inv(design.T @ design),
        residual_coeffs=pseudo,
        name="least-squares",
    )


class TestCovarianceEstimation:
    def test_matches_closed_form_within_errors(self, paper_model, paper_estimator):
        """Gaussian moment oracle: Sigma = diag(1, 2) at gamma = sigma = 1."""
        sigma_hat, ses = ccrb.estimate_covariance(
            paper_model, paper_estimator, [0.0, 0.0], 100_000, seed=2718
        )
        assert np.all(np.abs(sigma_hat - np.diag([1.0, 2.0])) <= 4.0 * ses)

    def test_zero_gamma_identity_covariance(self, paper_model):
        est = ccrb.builtin_gamma_estimator(0.0, paper_model, [0.0, 0.0])
        sigma_hat, ses = ccrb.estimate_covariance(paper_model, est, [0.0, 0.0], 50_000, seed=4)
        assert np.all(np.abs(sigma_hat - np.eye(2)) <= 4.0 * ses)

    def test_determinism(self, paper_model, paper_estimator):
        first, _ = ccrb.estimate_covariance(paper_model, paper_estimator, [0.0, 0.0], 5_000, seed=1)
        second, _ = ccrb.estimate_covariance(paper_model, paper_estimator, [0.0, 0.0], 5_000, seed=1)
        npt.assert_array_equal(first, second)

    def test_sample_floor(self, paper_model, paper_estimator):
        with pytest.raises(ValueError):
            ccrb.estimate_covariance(paper_model, paper_estimator, [0.0, 0.0], 100, seed=1)

    def test_nonfinite_estimator(self, paper_model):
        bad = ccrb.EstimatorSpec(
            map=lambda x: np.full((x.shape[0], 2), np.nan),
            claimed_unbiased_at=np.zeros(2),
        )
        with pytest.raises(FloatingPointError):
            ccrb.estimate_covariance(paper_model, bad, [0.0, 0.0], 2_000, seed=1)


class TestMatrixBoundCheck:
    def test_boundary_margin_is_zero(self):
        """diag(1,2) - I - 0 has eigenvalues (0, 1): the first axis is tight."""
        margin, ok = ccrb.check_matrix_bound(np.diag([1.0, 2.0]), np.eye(2), np.zeros((2, 2)), 1e-9)
        npt.assert_allclose(margin, 0.0, atol=1e-12)
        assert ok

    def test_overclaimed_correction_fails(self):
        margin, ok = ccrb.check_matrix_bound(
            np.diag([1.0, 2.0]), np.eye(2), 2.0 * np.eye(2), 1e-9
        )
        npt.assert_allclose(margin, -2.0, atol=1e-12)
        assert not ok

    def test_efficient_boundary(self):
        margin, ok = ccrb.check_matrix_bound(np.eye(2), np.eye(2), np.zeros((2, 2)), 1e-9)
        npt.assert_allclose(margin, 0.0, atol=1e-12)
        assert ok


class TestFullValidation:
    def test_reference_configuration_with_certificate(
        self, paper_model, paper_estimator, quad_cfg, paper_certificate
    ):
        report = ccrb.full_validation(
            paper_model, paper_estimator, [0.0, 0.0], quad_cfg, sdp_cert=paper_certificate
        )
        assert report.passed
        assert report.sigma_source == "closed_form"
        assert report.classical_margin >= -1e-8
        assert report.matrix_margin >= -1e-8
        assert report.directional_slacks["min"] >= -1e-8
        assert report.warnings == ()

    def test_monte_carlo_sigma_path(self, paper_model, paper_estimator, quad_cfg):
        report = ccrb.full_validation(
            paper_model,
            paper_estimator,
            [0.0, 0.0],
            quad_cfg,
            n_samples=50_000,
            force_mc_sigma=True,
        )
        assert report.sigma_source == "monte_carlo"
        assert report.passed

    def test_biased_estimator_warning(self, paper_model, quad_cfg):
        """A constant offset leaves derivative pairings intact but shifts the
        mean; the mean-bias check must flag it."""
        biased = ccrb.EstimatorSpec(
            map=lambda x: np.stack([x[:, 0] + 0.5, x[:, 1]], axis=1),
            claimed_unbiased_at=np.zeros(2),
        )
        report = ccrb.full_validation(paper_model, biased, [0.0, 0.0], quad_cfg)
        assert any("bias" in w for w in report.warnings)

    def test_linear_model_passes_with_zero_correction(self, quad_cfg):
        design = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        model = ccrb.builtin_linear_gaussian(design, 1.0)
        est = least_squares_estimator(design, 1.0, [0.2, -0.4])
        report = ccrb.full_validation(model, est, [0.2, -0.4], quad_cfg)
        assert report.passed
        assert report.directional_slacks["min"] >= -1e-8

    def test_json_document_shape(self, paper_model, paper_estimator, quad_cfg):
        from ccrb.schemas import validate_document

        report = ccrb.full_validation(paper_model, paper_estimator, [0.0, 0.0], quad_cfg)
        doc = ccrb.validation_to_json_dict(report)
        validate_document("validation", doc)
