"""Expectation backends for Hilbert-space pairings.

Every inner product used by the geometry layer reduces to an expectation
E_theta[u(X) v(X)] of a product of observable functions, so this module only
has to approximate E_theta[g(X)].  Three interchangeable backends:

* ``closed_form``: exact values from the model's registry, for recognized
  integrand keys only.
* ``gauss_hermite``: tensor Gauss-Hermite quadrature against the model's
  Gaussian envelope, exact up to rounding for polynomial integrands of
  Gaussian models.
* ``monte_carlo``: seeded i.i.d. draws with a fixed chunked reduction so
  results are bit-reproducible; also returns standard errors.

``expect_batch`` evaluates many integrands on one shared grid or draw set
(common random numbers), which keeps estimated Gram matrices internally
consistent and positive semidefinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ModelSpec, as_parameter_point

__all__ = [
    "PairingConfig",
    "Integrand",
    "Expectation",
    "ExpectationBatch",
    "PairingError",
    "GridBudgetError",
    "NonFiniteIntegrandError",
    "ClosedFormUnavailable",
    "expect",
    "expect_batch",
    "mc_chunk_means",
]

BACKENDS = ("closed_form", "gauss_hermite", "monte_carlo")

# Fixed Monte Carlo reduction chunk; summing per chunk and then across chunk
# totals pins the floating-point reduction order.
MC_CHUNK = 4096

GRID_BUDGET = 10**7


class PairingError(RuntimeError):
    """Base class for expectation-backend failures."""


class GridBudgetError(PairingError):
    """Tensor quadrature grid would exceed the point budget."""


class NonFiniteIntegrandError(PairingError):
    """An integrand produced NaN or infinity on the evaluation set."""


class ClosedFormUnavailable(PairingError):
    """No registered closed form for this (model, integrand) pair."""


@dataclass(frozen=True)
class PairingConfig:
    """Backend selection plus tolerance hints for downstream reports.

    gauss_hermite order must lie in [2, 64] and the tensor grid
    order**sample_dim may not exceed 10^7 points; monte_carlo requires at
    least 10^3 samples.
    """

    backend: str = "gauss_hermite"
    gh_order: int = 20
    mc_samples: int = 100_000
    seed: int = 0
    tol_hint: Optional[float] = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if not (2 <= self.gh_order <= 64):
            raise ValueError("gauss_hermite order must be between 2 and 64")
        if self.mc_samples < 1_000:
            raise ValueError("monte_carlo needs at least 1000 samples")


@dataclass(frozen=True)
class Integrand:
    """A scalar observable g with an optional closed-form lookup key.

    ``fn`` is vectorized over a batch of observations: (N, n) -> (N,).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    key: Optional[tuple] = None
    name: str = ""


@dataclass(frozen=True)
class Expectation:
    value: float
    standard_error: float = 0.0


@dataclass(frozen=True)
class ExpectationBatch:
    values: np.ndarray
    standard_errors: np.ndarray


def _as_integrand(g) -> Integrand:
    if isinstance(g, Integrand):
        return g
    return Integrand(fn=g)


def _chunk_edges(n: int) -> np.ndarray:
    return np.arange(0, n, MC_CHUNK)


def _chunked_sum(values: np.ndarray) -> float:
    """Deterministic two-level reduction: per-chunk sums, then their sum."""
    return float(np.sum(np.add.reduceat(values, _chunk_edges(values.shape[0]))))


def _gh_grid(order: int, mean: np.ndarray, scale: float):
    """Tensor Gauss-Hermite nodes/weights for N(mean, scale^2 I)."""
    n = mean.shape[0]
    if order**n > GRID_BUDGET:
        raise GridBudgetError(
            f"gauss_hermite grid {order}^{n} exceeds the {GRID_BUDGET:.0e} point budget"
        )
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    axes = np.meshgrid(*([nodes] * n), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    waxes = np.meshgrid(*([weights] * n), indexing="ij")
    w = np.ones(order**n)
    for a in waxes:
        w = w * a.ravel()
    w = w / math.pi ** (n / 2.0)
    x = mean[None, :] + math.sqrt(2.0) * scale * pts
    return x, w


def _gh_points(model: ModelSpec, theta: np.ndarray, cfg: PairingConfig):
    if model.quad_frame is None:
        raise PairingError(f"model '{model.name}' has no Gaussian quadrature frame")
    mean, scale = model.quad_frame(theta)
    mean = np.asarray(mean, dtype=float)
    x, w = _gh_grid(cfg.gh_order, mean, float(scale))
    # Reweight by the density-to-envelope ratio; identically one for models
    # whose density is the envelope, but keeps the rule valid in general.
    log_env = (
        -0.5 * np.einsum("nc,nc->n", (x - mean) / scale, (x - mean) / scale)
        - 0.5 * mean.shape[0] * math.log(2.0 * math.pi * scale**2)
    )
    ratio = np.exp(model.log_density(x, theta) - log_env)
    return x, w * ratio


def _eval_integrand(g: Integrand, x: np.ndarray) -> np.ndarray:
    vals = np.asarray(g.fn(x), dtype=float)
    vals = np.broadcast_to(vals, (x.shape[0],)) if vals.ndim == 0 else vals
    if vals.shape != (x.shape[0],):
        raise PairingError(f"integrand '{g.name}' returned shape {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrandError(f"integrand '{g.name}' produced non-finite values")
    return vals


def mc_chunk_means(
    model: ModelSpec,
    theta: np.ndarray,
    gs: Sequence,
    cfg: PairingConfig,
    block_size: Optional[int] = None,
):
    """Per-block Monte Carlo means for each integrand, on one draw set.

    Returns ``(means, counts)`` with ``means`` of shape (blocks, len(gs)).
    At the default block size (the fixed reduction chunk) the overall mean
    recoverable as ``means.T @ counts / counts.sum()`` is the value
    ``expect_batch`` reports; finer blocks support jackknife error
    estimates for derived quantities when few reduction chunks exist.
    """
    theta = as_parameter_point(theta, model.param_dim)
    draws = model.sampler(theta, cfg.mc_samples, cfg.seed)
    size = MC_CHUNK if block_size is None else max(1, int(block_size))
    edges = np.arange(0, cfg.mc_samples, size)
    counts = np.diff(np.append(edges, cfg.mc_samples)).astype(float)
    gs = [_as_integrand(g) for g in gs]
    means = np.empty((edges.shape[0], len(gs)))
    for k, g in enumerate(gs):
        vals = _eval_integrand(g, draws)
        means[:, k] = np.add.reduceat(vals, edges) / counts
    return means, counts


def _mc_batch(model, theta, gs, cfg) -> ExpectationBatch:
    theta = as_parameter_point(theta, model.param_dim)
    draws = model.sampler(theta, cfg.mc_samples, cfg.seed)
    n = cfg.mc_samples
    values = np.empty(len(gs))
    ses = np.empty(len(gs))
    for k, g in enumerate(gs):
        vals = _eval_integrand(g, draws)
        total = _chunked_sum(vals)
        mean = total / n
        sq = _chunked_sum(vals * vals)
        var = max(0.0, (sq - n * mean * mean) / (n - 1))
        values[k] = mean
        ses[k] = math.sqrt(var / n)
    return ExpectationBatch(values=values, standard_errors=ses)


def _gh_batch(model, theta, gs, cfg) -> ExpectationBatch:
    theta = as_parameter_point(theta, model.param_dim)
    x, w = _gh_points(model, theta, cfg)
    values = np.empty(len(gs))
    for k, g in enumerate(gs):
        values[k] = float(w @ _eval_integrand(g, x))
    return ExpectationBatch(values=values, standard_errors=np.zeros(len(gs)))


def _closed_batch(model, theta, gs, cfg) -> ExpectationBatch:
    theta = as_parameter_point(theta, model.param_dim)
    if model.closed_form is None:
        raise ClosedFormUnavailable(f"model '{model.name}' has no closed-form registry")
    values = np.empty(len(gs))
    for k, g in enumerate(gs):
        if g.key is None:
            raise ClosedFormUnavailable(f"integrand '{g.name}' carries no lookup key")
        val = model.closed_form(g.key, theta)
        if val is None:
            raise ClosedFormUnavailable(f"no closed form registered for key {g.key!r}")
        values[k] = val
    return ExpectationBatch(values=values, standard_errors=np.zeros(len(gs)))


def expect_batch(model: ModelSpec, theta, gs: Sequence, cfg: PairingConfig) -> ExpectationBatch:
    """Approximate E_theta[g(X)] for every g in ``gs`` on one shared grid
    or draw set, so downstream Gram matrices stay internally consistent."""
    gs = [_as_integrand(g) for g in gs]
    if cfg.backend == "monte_carlo":
        return _mc_batch(model, theta, gs, cfg)
    if cfg.backend == "gauss_hermite":
        return _gh_batch(model, theta, gs, cfg)
    return _closed_batch(model, theta, gs, cfg)


def expect(model: ModelSpec, theta, g, cfg: PairingConfig) -> Expectation:
    """Approximate E_theta[g(X)]; Monte Carlo also reports a standard error."""
    batch = expect_batch(model, theta, [g], cfg)
    return Expectation(value=float(batch.values[0]), standard_error=float(batch.standard_errors[0]))
