"""Directional bounds, homogeneity, equivariance, rank-1 detection."""

import numpy as np
import numpy.testing as npt
import pytest

import ccrb
from ccrb.geometry import SingularInformationError

from conftest import closed_form_correction


class TestClassicalBound:
    def test_identity(self):
        npt.assert_allclose(ccrb.classical_crb(np.eye(2)), np.eye(2), atol=1e-14)

    def test_quarter_identity(self):
        npt.assert_allclose(ccrb.classical_crb(0.25 * np.eye(2)), 4.0 * np.eye(2), atol=1e-12)

    def test_two_by_two_inverse(self):
        J = np.array([[2.0, 1.0], [1.0, 1.0]])
        npt.assert_allclose(ccrb.classical_crb(J), [[1.0, -1.0], [-1.0, 2.0]], atol=1e-12)

    def test_singular_raises(self):
        with pytest.raises(SingularInformationError):
            ccrb.classical_crb(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_asymmetric_raises(self):
        with pytest.raises(ValueError):
            ccrb.classical_crb(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestDirectionalBound:
    def test_reference_direction(self, paper_report):
        """Frozen value 4/7 from the closed-form correction at v = (1, 1)."""
        item = ccrb.directional_bound(paper_report, [1.0, 1.0])
        npt.assert_allclose(item.R, 4.0 / 7.0, atol=1e-9)
        npt.assert_allclose(item.N, 16.0, atol=1e-9)
        npt.assert_allclose(item.D, 448.0, atol=1e-7)
        npt.assert_allclose(item.v_tilde, [4.0, 4.0], atol=1e-9)

    @pytest.mark.parametrize("v", [[1.0, 0.0], [0.0, 1.0]])
    def test_axes_vanish(self, paper_report, v):
        assert ccrb.directional_bound(paper_report, v).R <= 1e-12

    def test_doubled_direction(self, paper_report):
        """Degree-2 homogeneity: R((2,2)) = 4 * R((1,1)) = 16/7."""
        item = ccrb.directional_bound(paper_report, [2.0, 2.0])
        npt.assert_allclose(item.R, 16.0 / 7.0, atol=1e-9)

    @pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
    def test_homogeneity(self, paper_report, c):
        rng = np.random.default_rng(17)
        for _ in range(20):
            v = rng.standard_normal(2)
            base = ccrb.directional_bound(paper_report, v).R
            scaled = ccrb.directional_bound(paper_report, c * v).R
            npt.assert_allclose(scaled, c**2 * base, rtol=1e-10, atol=1e-14)

    def test_closed_form_match(self, paper_report):
        rng = np.random.default_rng(4)
        vs = rng.standard_normal((200, 2))
        _, _, _, r_val, _ = ccrb.bounds.sweep_arrays(paper_report, vs)
        npt.assert_allclose(r_val, closed_form_correction(vs, 1.0, 1.0, 1.0), rtol=1e-9, atol=1e-12)

    def test_zero_direction_rejected(self, paper_report):
        with pytest.raises(ValueError):
            ccrb.directional_bound(paper_report, [0.0, 0.0])

    def test_sandwich_against_closed_form_covariance(self, paper_report, paper_estimator):
        """v' (Sigma - J^{-1}) v >= R(v) with the exact covariance."""
        gap_matrix = paper_estimator.closed_form_covariance - np.linalg.inv(paper_report.J)
        vs = ccrb.sample_directions(2, 1000, seed=23)
        _, _, _, r_val, _ = ccrb.bounds.sweep_arrays(paper_report, vs)
        quad = np.einsum("kp,pq,kq->k", vs, gap_matrix, vs)
        assert (quad - r_val).min() >= -1e-9


class TestScalarReduction:
    def test_one_parameter_model_reduces_to_scalar_ratio(self, quad_cfg):
        """R(v)/v^2 is constant and equals the scalar pairing ratio.

        Analytic oracle for sigma=1: gamma^2 alpha^2 / (3/16 + alpha^2).
        """
        alpha, gamma = 1.3, 0.8
        model = ccrb.builtin_curved_gaussian(1.0, alpha, param_dim=1)
        est = ccrb.builtin_gamma_estimator(gamma, model, [0.0])
        report = ccrb.geometry_report(model, est, [0.0], quad_cfg)
        scalar = report.C[0, 0] ** 2 / report.G_N[0, 0]
        expected = gamma**2 * alpha**2 / (3.0 / 16.0 + alpha**2)
        npt.assert_allclose(scalar, expected, rtol=1e-10)
        for v in (0.3, -1.1, 2.4, 1.0):
            item = ccrb.directional_bound(report, [v])
            npt.assert_allclose(item.R / v**2, scalar, rtol=1e-10)


class TestEquivariance:
    def test_linear_reparameterization(self, paper_model, paper_estimator, paper_report):
        """R'(v') = R(A^T v') under theta -> A theta, T -> A T."""
        cfg = ccrb.PairingConfig(backend="gauss_hermite", gh_order=12)
        rng = np.random.default_rng(99)
        for _ in range(10):
            u, _ = np.linalg.qr(rng.standard_normal((2, 2)))
            w, _ = np.linalg.qr(rng.standard_normal((2, 2)))
            transform = u @ np.diag(rng.uniform(0.5, 2.0, size=2)) @ w.T
            assert np.linalg.cond(transform) <= 10.0
            remodel = ccrb.reparameterize_linear(paper_model, transform)
            re_est = ccrb.transform_estimator(paper_estimator, transform)
            re_report = ccrb.geometry_report(remodel, re_est, transform @ np.zeros(2), cfg)
            v_new = rng.standard_normal(2)
            lhs = ccrb.directional_bound(re_report, v_new).R
            rhs = ccrb.directional_bound(paper_report, transform.T @ v_new).R
            npt.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-12)


class TestSweep:
    def test_axis_pattern(self, paper_report):
        items = ccrb.directional_sweep(
            paper_report, directions=[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        )
        values = [item.R for item in items]
        npt.assert_allclose(values, [0.0, 0.0, 4.0 / 7.0], atol=1e-9)

    def test_seeded_reproducibility(self, paper_report):
        first = ccrb.directional_sweep(paper_report, count=50, seed=7)
        second = ccrb.directional_sweep(paper_report, count=50, seed=7)
        npt.assert_array_equal(
            np.array([item.v for item in first]), np.array([item.v for item in second])
        )
        npt.assert_array_equal(
            np.array([item.R for item in first]), np.array([item.R for item in second])
        )

    def test_empty_sweep_rejected(self, paper_report):
        with pytest.raises(ValueError):
            ccrb.directional_sweep(paper_report, count=0)
        with pytest.raises(ValueError):
            ccrb.directional_sweep(paper_report, directions=np.zeros((0, 2)))

    def test_csv_round_trip(self, paper_report):
        items = ccrb.directional_sweep(paper_report, count=4, seed=1)
        text = ccrb.sweep_to_csv(items, gaps=[0.1, 0.2, 0.3, 0.4])
        lines = text.strip().split("\n")
        assert lines[0] == "v1,v2,N,D,R,degenerate,gap"
        assert len(lines) == 5
        row = lines[1].split(",")
        npt.assert_allclose(float(row[0]), items[0].v[0])
        npt.assert_allclose(float(row[4]), items[0].R)

    def test_degenerate_direction_flag(self, toy_report):
        """The toy's normal Gram only sees the first pair: D = c * v1^4."""
        item = ccrb.directional_bound(toy_report, [0.0, 1.0])
        assert item.degenerate and item.R == 0.0 and item.D == 0.0
        active = ccrb.directional_bound(toy_report, [1.0, 1.0])
        assert not active.degenerate


class TestExactCorrection:
    def test_toy_detection(self, toy_report):
        correction = ccrb.exact_matrix_correction(toy_report)
        assert correction.applies
        npt.assert_allclose(correction.Delta, np.outer([1.0, 2.0], [1.0, 2.0]) / 4.0, atol=1e-12)
        npt.assert_allclose(correction.c, 4.0)

    def test_toy_reproduces_directional_values(self, toy_report):
        correction = ccrb.exact_matrix_correction(toy_report)
        vs = ccrb.sample_directions(2, 200, seed=6)
        _, _, d_val, r_val, _ = ccrb.bounds.sweep_arrays(toy_report, vs)
        quad = np.einsum("kp,pq,kq->k", vs, correction.Delta, vs)
        keep = d_val > 1e-8
        assert np.all(np.abs(r_val[keep] - quad[keep]) <= 1e-6 * (1.0 + quad[keep]))

    def test_zero_normal_gram_does_not_apply(self):
        report = ccrb.rank_one_toy_report([1.0, 2.0], 4.0)
        import dataclasses

        flat = dataclasses.replace(report, G_N=np.zeros((3, 3)), C=np.zeros((2, 3)))
        correction = ccrb.exact_matrix_correction(flat)
        assert not correction.applies
        npt.assert_array_equal(correction.Delta, np.zeros((2, 2)))

    def test_reference_model_is_not_rank_one(self, paper_report):
        """Eigenvalue oracle on the closed-form normal Gram: rank 3."""
        from conftest import paper_normal_gram

        eigs = np.linalg.eigvalsh(paper_normal_gram())
        assert eigs[1] > 1e-3 * eigs[-1]
        correction = ccrb.exact_matrix_correction(paper_report)
        assert not correction.applies
        assert correction.residuals["eigenvalue_ratio"] > 1e-3