"""Curvature-corrected Cramer-Rao bounds.

Computes the classical inverse-information bound, a directional curvature
correction for each direction of parameter space, an exact rank-1 matrix
correction when the normal geometry admits one, and a conservative PSD
matrix correction certified by a small sum-of-squares semidefinite program,
validated against closed forms and Monte Carlo.
"""

from .model import (
    CurvedGaussianModel,
    EstimatorSpec,
    ModelSpec,
    as_parameter_point,
    builtin_curved_gaussian,
    builtin_gamma_estimator,
    builtin_linear_gaussian,
    eval_score_jacobian_fd,
    reparameterize_linear,
    transform_estimator,
    with_fd_jacobian,
)
from .pairing import (
    Expectation,
    ExpectationBatch,
    Integrand,
    PairingConfig,
    expect,
    expect_batch,
)
from .geometry import (
    GeometryReport,
    PairIndex,
    SingularInformationError,
    UnbiasednessWarning,
    christoffel,
    error_pairings,
    fisher_info,
    geometry_report,
    normal_gram,
    pair_index,
    report_from_json_dict,
    report_to_json_dict,
)
from .bounds import (
    DirectionalBound,
    ExactCorrection,
    classical_crb,
    directional_bound,
    directional_sweep,
    exact_matrix_correction,
    sample_directions,
    sweep_to_csv,
)
from .soscert import (
    CertificateVerification,
    CertificateVerificationError,
    MonomialBasis,
    PolynomialSystem,
    SOSCertificate,
    build_system,
    cert_from_json_dict,
    cert_to_json_dict,
    enumerate_monomials,
    rank_one_toy_report,
    solve_sos_sdp,
    verify_certificate,
)
from .validate import (
    SweepSpec,
    ValidationReport,
    check_matrix_bound,
    estimate_covariance,
    full_validation,
    validation_to_json_dict,
)

__version__ = "0.1.0"
