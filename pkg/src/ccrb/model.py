"""Parametric statistical models and estimator abstractions.

A model is a bundle of vectorized callables: observation arguments ``x`` are
``(N, sample_dim)`` arrays, scores come back ``(N, param_dim)``, score
Jacobians ``(N, param_dim, param_dim)``.  All callables are pure, so they are
safe to evaluate concurrently, and the sampler is bit-reproducible for a
fixed ``(theta, count, seed)`` triple.

The built-in family is a Gaussian location model whose mean path bends
quadratically in the first parameter coordinate,

    X ~ N(mu(theta), sigma^2 I),   mu(theta) = (theta_1, ..., theta_d,
                                                alpha * theta_1^2),

together with a one-knob family of unbiased estimators.  Every geometric
quantity computed downstream has a closed form for this family, which is what
makes it useful as a test oracle.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ModelSpec",
    "EstimatorSpec",
    "CurvedGaussianModel",
    "as_parameter_point",
    "builtin_curved_gaussian",
    "builtin_linear_gaussian",
    "builtin_gamma_estimator",
    "eval_score_jacobian_fd",
    "with_fd_jacobian",
    "reparameterize_linear",
    "transform_estimator",
]


def as_parameter_point(theta, dim: Optional[int] = None) -> np.ndarray:
    """Coerce ``theta`` to a validated 1-D float64 parameter vector.

    Raises ValueError on empty, non-finite, or wrong-dimension input.
    """
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("parameter point must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter point must have finite entries")
    if dim is not None and arr.size != dim:
        raise ValueError(f"parameter point has length {arr.size}, expected {dim}")
    return arr


def _as_batch(x, sample_dim: int) -> np.ndarray:
    """Promote a single observation to a batch of one; validate width."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != sample_dim:
        raise ValueError(f"observations must have shape (N, {sample_dim})")
    return arr


@dataclass(frozen=True)
class ModelSpec:
    """A smooth parametric family with strictly positive densities.

    Attributes:
        param_dim: dimension d of the parameter vector.
        sample_dim: dimension n of one observation.
        log_density: ``(x, theta) -> (N,)`` log f(x; theta).
        score: ``(x, theta) -> (N, d)`` gradient of log f in theta.
        score_jacobian: ``(x, theta) -> (N, d, d)`` second derivatives of
            log f in theta; symmetric per observation.
        sampler: ``(theta, count, seed) -> (count, n)`` i.i.d. draws,
            bit-identical for equal inputs.
        name: short identifier used in reports.
        jacobian_is_fd: True when score_jacobian is a finite-difference
            fallback rather than analytic.
        quad_frame: optional ``theta -> (mean, scale)`` Gaussian envelope
            used by the tensor-quadrature expectation backend.
        closed_form: optional ``(key, theta) -> float`` registry of exact
            expectations for recognized integrand keys; returns None for
            unknown keys.
    """

    param_dim: int
    sample_dim: int
    log_density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    score: Callable[[np.ndarray, np.ndarray], np.ndarray]
    score_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, int, int], np.ndarray]
    name: str = "custom"
    jacobian_is_fd: bool = False
    quad_frame: Optional[Callable[[np.ndarray], tuple]] = None
    closed_form: Optional[Callable[[tuple, np.ndarray], Optional[float]]] = None
    family: Optional["CurvedGaussianModel"] = None


@dataclass(frozen=True)
class EstimatorSpec:
    """An estimator T of the parameter vector, as a pure map of one draw.

    ``map`` is vectorized: ``(N, sample_dim) -> (N, param_dim)``.  The
    estimator is only claimed unbiased at ``claimed_unbiased_at``; the
    geometry layer re-checks the derivative pairing condition there and
    warns when it fails.

    ``residual_coeffs`` (optional, shape ``(d, n)``) declares that the
    centered error at the claimed point is linear in the residual,
    ``T(x) - theta0 = residual_coeffs @ (x - mu(theta0))``, which unlocks
    closed-form pairings against Gaussian families.
    """

    map: Callable[[np.ndarray], np.ndarray]
    claimed_unbiased_at: np.ndarray
    closed_form_covariance: Optional[np.ndarray] = None
    name: str = "custom"
    residual_coeffs: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CurvedGaussianModel:
    """Mean-path description of the built-in curved Gaussian family.

    The mean map sends theta to (theta_1, ..., theta_d, alpha * theta_1^2),
    so the observation dimension is param_dim + 1 and all curvature is
    carried by the last coordinate.
    """

    sigma: float
    alpha: float
    param_dim: int = 2

    @property
    def sample_dim(self) -> int:
        return self.param_dim + 1

    def mean_map(self, theta: np.ndarray) -> np.ndarray:
        theta = as_parameter_point(theta, self.param_dim)
        return np.concatenate([theta, [self.alpha * theta[0] ** 2]])

    def mean_jacobian(self, theta: np.ndarray) -> np.ndarray:
        theta = as_parameter_point(theta, self.param_dim)
        jac = np.zeros((self.sample_dim, self.param_dim))
        jac[: self.param_dim, :] = np.eye(self.param_dim)
        jac[self.param_dim, 0] = 2.0 * self.alpha * theta[0]
        return jac

    def mean_hessian(self, theta: np.ndarray) -> np.ndarray:
        as_parameter_point(theta, self.param_dim)
        hess = np.zeros((self.sample_dim, self.param_dim, self.param_dim))
        hess[self.param_dim, 0, 0] = 2.0 * self.alpha
        return hess


def _gaussian_closed_form(sigma, mean_jacobian, mean_hessian):
    """Exact-expectation registry for Gaussian mean-path models.

    Keys follow the integrand vocabulary of the pairing layer.  With
    r = x - mu(theta) and t a constant coefficient vector:

        ("one",)            -> 1
        ("YY", i, j)        -> E[Y_i Y_j]
        ("hY", i, j, m)     -> E[h_ij Y_m]
        ("hh", i, j, k, l)  -> E[h_ij h_kl]
        ("rh", t, i, j)     -> E[(r . t) h_ij]
        ("rY", t, j)        -> E[(r . t) Y_j]

    where h_ij = Y_i Y_j / 4 + (d_i Y_j) / 2 is the second-derivative
    integrand.  All values follow from Gaussian moment identities.
    """
    s2 = sigma**2

    def closed_form(key: tuple, theta: np.ndarray) -> Optional[float]:
        tag = key[0]
        if tag == "one":
            return 1.0
        jac = mean_jacobian(theta)  # (n, d), column i is mu_{,i}
        if tag == "YY":
            i, j = key[1:]
            return float(jac[:, i] @ jac[:, j]) / s2
        if tag == "rY":
            t, j = key[1:]
            return float(np.asarray(t) @ jac[:, j])
        hess = mean_hessian(theta)  # (n, d, d)
        if tag == "hY":
            i, j, m = key[1:]
            return float(hess[:, i, j] @ jac[:, m]) / (2.0 * s2)
        if tag == "rh":
            t, i, j = key[1:]
            return float(np.asarray(t) @ hess[:, i, j]) / 2.0
        if tag == "hh":
            i, j, k, l = key[1:]
            g = jac.T @ jac  # pairwise mean-velocity inner products
            quartic = g[i, j] * g[k, l] + g[i, k] * g[j, l] + g[i, l] * g[j, k]
            return quartic / (16.0 * s2**2) + float(
                hess[:, i, j] @ hess[:, k, l]
            ) / (4.0 * s2)
        return None

    return closed_form


def _gaussian_model(
    sigma: float,
    mean_map,
    mean_jacobian,
    mean_hessian,
    param_dim: int,
    sample_dim: int,
    name: str,
    family=None,
) -> ModelSpec:
    """Assemble a ModelSpec for X ~ N(mean_map(theta), sigma^2 I)."""
    s2 = sigma**2
    log_norm = -0.5 * sample_dim * np.log(2.0 * np.pi * s2)

    def log_density(x, theta):
        x = _as_batch(x, sample_dim)
        r = x - mean_map(theta)
        return log_norm - 0.5 * np.einsum("nc,nc->n", r, r) / s2

    def score(x, theta):
        x = _as_batch(x, sample_dim)
        r = x - mean_map(theta)
        return (r @ mean_jacobian(theta)) / s2

    def score_jacobian(x, theta):
        x = _as_batch(x, sample_dim)
        r = x - mean_map(theta)
        jac = mean_jacobian(theta)
        hess = mean_hessian(theta)
        flat = -(jac.T @ jac)
        curved = np.einsum("nc,cij->nij", r, hess)
        return (flat[None, :, :] + curved) / s2

    def sampler(theta, count, seed):
        if count < 0:
            raise ValueError("sample count must be nonnegative")
        rng = np.random.default_rng(seed)
        mu = mean_map(theta)
        return mu[None, :] + sigma * rng.standard_normal((count, sample_dim))

    def quad_frame(theta):
        return mean_map(theta), sigma

    return ModelSpec(
        param_dim=param_dim,
        sample_dim=sample_dim,
        log_density=log_density,
        score=score,
        score_jacobian=score_jacobian,
        sampler=sampler,
        name=name,
        quad_frame=quad_frame,
        closed_form=_gaussian_closed_form(sigma, mean_jacobian, mean_hessian),
        family=family,
    )


def builtin_curved_gaussian(sigma: float, alpha: float, param_dim: int = 2) -> ModelSpec:
    """Curved Gaussian location model with analytic derivatives.

    Args:
        sigma: noise scale, must be positive.
        alpha: curvature coefficient of the mean path, must be nonzero.
        param_dim: parameter dimension d >= 1 (observations live in d+1).

    Raises:
        ValueError: on sigma <= 0, alpha == 0, or param_dim < 1.
    """
    if not np.isfinite(sigma) or sigma <= 0:
        raise ValueError("sigma must be a positive finite real")
    if not np.isfinite(alpha) or alpha == 0:
        raise ValueError("alpha must be a nonzero finite real")
    if param_dim < 1:
        raise ValueError("param_dim must be at least 1")
    fam = CurvedGaussianModel(sigma=float(sigma), alpha=float(alpha), param_dim=param_dim)
    return _gaussian_model(
        fam.sigma,
        fam.mean_map,
        fam.mean_jacobian,
        fam.mean_hessian,
        param_dim=fam.param_dim,
        sample_dim=fam.sample_dim,
        name="curved-gaussian",
        family=fam,
    )


def builtin_linear_gaussian(design: np.ndarray, sigma: float) -> ModelSpec:
    """Flat Gaussian location model X ~ N(design @ theta, sigma^2 I).

    The mean path is linear, so all second derivatives vanish and the
    embedded manifold has zero extrinsic curvature.  Used as the flat
    reference case in tests and validation.
    """
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise ValueError("design must be an (n, d) matrix")
    if not np.isfinite(sigma) or sigma <= 0:
        raise ValueError("sigma must be a positive finite real")
    n, d = design.shape
    if np.linalg.matrix_rank(design) < d:
        raise ValueError("design must have full column rank")
    zeros = np.zeros((n, d, d))
    return _gaussian_model(
        float(sigma),
        lambda theta: design @ as_parameter_point(theta, d),
        lambda theta: design,
        lambda theta: zeros,
        param_dim=d,
        sample_dim=n,
        name="linear-gaussian",
    )


def builtin_gamma_estimator(gamma: float, model, theta) -> EstimatorSpec:
    """Unbiased estimator family for the curved Gaussian model.

    Component p returns X_p; the last component additionally mixes in
    gamma * (X_n - mu_n(theta)), with mu_n frozen at the claimed point.
    The mix keeps the estimator unbiased there while coupling its error
    to the curved coordinate.  Closed-form covariance is
    diag(sigma^2, ..., sigma^2 * (1 + gamma^2)).
    """
    fam = model.family if isinstance(model, ModelSpec) else model
    if not isinstance(fam, CurvedGaussianModel):
        raise ValueError("builtin_gamma_estimator requires the curved Gaussian model")
    gamma = float(gamma)
    d, n = fam.param_dim, fam.sample_dim
    theta0 = as_parameter_point(theta, d)
    mu_last = fam.alpha * theta0[0] ** 2

    def estimate(x):
        x = _as_batch(x, n)
        t = x[:, :d].copy()
        t[:, d - 1] += gamma * (x[:, d] - mu_last)
        return t

    cov = fam.sigma**2 * np.eye(d)
    cov[d - 1, d - 1] = fam.sigma**2 * (1.0 + gamma**2)
    coeffs = np.zeros((d, n))
    coeffs[:, :d] = np.eye(d)
    coeffs[d - 1, d] = gamma
    return EstimatorSpec(
        map=estimate,
        claimed_unbiased_at=theta0,
        closed_form_covariance=cov,
        name=f"gamma-mix({gamma:g})",
        residual_coeffs=coeffs,
    )


def _fd_steps(theta: np.ndarray, step: Optional[float]) -> np.ndarray:
    if step is not None:
        if not np.isfinite(step) or step <= 0:
            raise ValueError("finite-difference step must be positive")
        return np.full(theta.shape, float(step))
    # cube-root-of-eps scaling balances truncation against roundoff
    base = np.cbrt(np.finfo(float).eps)
    return base * np.maximum(1.0, np.abs(theta))


def eval_score_jacobian_fd(model: ModelSpec, x, theta, step: Optional[float] = None) -> np.ndarray:
    """Central-difference estimate of the score Jacobian, symmetrized.

    Differentiates ``model.score`` in each parameter coordinate with a
    per-coordinate step h_i = step or cbrt(eps) * max(1, |theta_i|), then
    returns (M + M^T) / 2 per observation.
    """
    theta = as_parameter_point(theta, model.param_dim)
    x = _as_batch(x, model.sample_dim)
    h = _fd_steps(theta, step)
    d = model.param_dim
    out = np.empty((x.shape[0], d, d))
    for i in range(d):
        bump = np.zeros(d)
        bump[i] = h[i]
        out[:, i, :] = (model.score(x, theta + bump) - model.score(x, theta - bump)) / (2.0 * h[i])
    return 0.5 * (out + np.transpose(out, (0, 2, 1)))


def with_fd_jacobian(model: ModelSpec, step: Optional[float] = None) -> ModelSpec:
    """Copy of ``model`` whose score Jacobian is the finite-difference fallback."""

    def score_jacobian(x, theta):
        return eval_score_jacobian_fd(model, x, theta, step=step)

    return dataclasses.replace(model, score_jacobian=score_jacobian, jacobian_is_fd=True)


def reparameterize_linear(model: ModelSpec, transform: np.ndarray) -> ModelSpec:
    """Model for the parameter phi = transform @ theta.

    ``transform`` must be invertible.  Scores and score Jacobians pick up
    the usual inverse-transpose factors; the sampler and quadrature frame
    evaluate the original model at theta = transform^{-1} phi.  The
    closed-form registry does not carry over.
    """
    a = np.asarray(transform, dtype=float)
    d = model.param_dim
    if a.shape != (d, d):
        raise ValueError(f"transform must be ({d}, {d})")
    a_inv = np.linalg.inv(a)

    def log_density(x, phi):
        return model.log_density(x, a_inv @ as_parameter_point(phi, d))

    def score(x, phi):
        return model.score(x, a_inv @ as_parameter_point(phi, d)) @ a_inv

    def score_jacobian(x, phi):
        jac = model.score_jacobian(x, a_inv @ as_parameter_point(phi, d))
        return np.einsum("ki,nkl,lj->nij", a_inv, jac, a_inv)

    def sampler(phi, count, seed):
        return model.sampler(a_inv @ as_parameter_point(phi, d), count, seed)

    quad_frame = None
    if model.quad_frame is not None:
        def quad_frame(phi):
            return model.quad_frame(a_inv @ as_parameter_point(phi, d))

    return ModelSpec(
        param_dim=d,
        sample_dim=model.sample_dim,
        log_density=log_density,
        score=score,
        score_jacobian=score_jacobian,
        sampler=sampler,
        name=f"{model.name}/reparam",
        jacobian_is_fd=model.jacobian_is_fd,
        quad_frame=quad_frame,
        closed_form=None,
        family=None,
    )


def transform_estimator(estimator: EstimatorSpec, transform: np.ndarray) -> EstimatorSpec:
    """Estimator of phi = transform @ theta built from an estimator of theta."""
    a = np.asarray(transform, dtype=float)

    def estimate(x):
        return estimator.map(x) @ a.T

    cov = None
    if estimator.closed_form_covariance is not None:
        cov = a @ estimator.closed_form_covariance @ a.T
    coeffs = None
    if estimator.residual_coeffs is not None:
        coeffs = a @ estimator.residual_coeffs
    return EstimatorSpec(
        map=estimate,
        claimed_unbiased_at=a @ estimator.claimed_unbiased_at,
        closed_form_covariance=cov,
        name=f"{estimator.name}/reparam",
        residual_coeffs=coeffs,
    )
