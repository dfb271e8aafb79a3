"""Geometric objects of the embedded statistical manifold at one point.

The square-root embedding of a density family is never materialized.  Its
first derivatives pair like half-scores and its second derivatives like

    h_ij(x) = Y_i(x) Y_j(x) / 4 + (d_i Y_j)(x) / 2,

so every Hilbert-space pairing needed here is an expectation of products of
scores, ``h`` values, and centered estimator errors.  From one shared batch
of expectations this module assembles:

* Fisher information J and the tangent Gram G = J / 4,
* Christoffel symbols of the induced connection,
* the normal Gram G_N of the second fundamental form over unique index
  pairs (tangential parts removed by a Gram-Schmidt step),
* estimator error pairings C against the normal vectors and the
  unbiasedness pairings against the tangent vectors.

Convention: G_N and C are stored over unique pairs (i <= j) WITHOUT
multiplicity; the factor 2 for off-diagonal pairs lives in the quadratic
monomial vector the bounds layer builds, so that contractions against these
matrices reproduce full double sums exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import EstimatorSpec, ModelSpec, as_parameter_point
from .pairing import Integrand, PairingConfig, expect_batch, mc_chunk_means

__all__ = [
    "PairIndex",
    "GeometryReport",
    "SingularInformationError",
    "UnbiasednessWarning",
    "pair_index",
    "fisher_info",
    "christoffel",
    "normal_gram",
    "error_pairings",
    "geometry_report",
    "normality_residuals",
    "report_to_json_dict",
    "report_from_json_dict",
]

SINGULAR_EIG_RATIO = 1e-10
FLAT_GRAM_RATIO = 1e-12
QUAD_TOL = 1e-8
MC_SE_FACTOR = 5.0


class SingularInformationError(RuntimeError):
    """Fisher information is numerically singular at this point."""


class UnbiasednessWarning(UserWarning):
    """The estimator's derivative pairings deviate from the unbiased pattern."""


@dataclass(frozen=True)
class PairIndex:
    """Unique symmetric index pairs (i, j) with i <= j, in lexicographic order.

    ``weights`` is 1 on diagonal pairs and 2 off the diagonal; summing
    ``weights[a] * f(pairs[a])`` over the index reproduces the full double
    sum of a symmetric f over all (i, j).
    """

    dim: int
    pairs: tuple
    weights: np.ndarray

    @property
    def m(self) -> int:
        return len(self.pairs)

    def position(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.pairs.index((i, j))


def pair_index(dim: int) -> PairIndex:
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    pairs = tuple((i, j) for i in range(dim) for j in range(i, dim))
    weights = np.array([1.0 if i == j else 2.0 for i, j in pairs])
    return PairIndex(dim=dim, pairs=pairs, weights=weights)


@dataclass(frozen=True)
class GeometryReport:
    """All pairings at one parameter point, plus backend provenance.

    Attributes:
        theta: evaluation point, shape (d,).
        J: Fisher information, (d, d).
        G: tangent Gram J / 4, (d, d).
        Gamma: Christoffel symbols, (d, d, d) indexed [l, i, j].
        b: tangent pairings of second derivatives, (m, d), rows over pairs.
        G_N: normal Gram of the second fundamental form, (m, m).
        C: estimator error pairings against the normal vectors, (d, m).
        unbias: estimator-score pairings, (d, d); one half the identity for
            an estimator that stays unbiased to first order.
        pairs: the PairIndex ordering rows and columns of b, G_N, C.
        meta: backend settings, condition numbers, flags, standard errors.
    """

    theta: np.ndarray
    J: np.ndarray
    G: np.ndarray
    Gamma: np.ndarray
    b: np.ndarray
    G_N: np.ndarray
    C: np.ndarray
    unbias: np.ndarray
    pairs: PairIndex
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Integrand construction
# ---------------------------------------------------------------------------


def _score_h_cache(model: ModelSpec, theta: np.ndarray):
    """Memoize score and h arrays for the one batch the backend evaluates."""
    state = {}

    def get(x: np.ndarray):
        key = id(x)
        if state.get("key") != key:
            y = model.score(x, theta)
            jac = model.score_jacobian(x, theta)
            jac = 0.5 * (jac + np.transpose(jac, (0, 2, 1)))
            h = 0.25 * y[:, :, None] * y[:, None, :] + 0.5 * jac
            state.update(key=key, y=y, h=h)
        return state["y"], state["h"]

    return get


def _estimator_closed_form_key(estimator, theta, tag, *indices):
    """Closed-form key for an error pairing, when one is registered.

    Error pairings admit closed forms only for estimators whose centered
    error is linear in the residual, evaluated at their claimed point.
    """
    if estimator.residual_coeffs is None:
        return None
    claimed = np.asarray(estimator.claimed_unbiased_at, dtype=float)
    if claimed.shape != theta.shape or not np.allclose(claimed, theta, rtol=0, atol=1e-12):
        return None
    coeffs = estimator.residual_coeffs
    return (tag, tuple(float(c) for c in coeffs[indices[0]]), *indices[1:])


def _build_plan(model, estimator, theta, idx: PairIndex, need):
    """Integrand list plus index bookkeeping for the requested blocks."""
    d = idx.dim
    cache = _score_h_cache(model, theta)
    z_state = {}

    def z0(x):
        if z_state.get("key") != id(x):
            z_state.update(key=id(x), z=estimator.map(x) - theta)
        return z_state["z"]

    gs = []
    slots = {}

    def add(name, fn, key):
        gs.append(Integrand(fn=fn, key=key, name=name))
        return len(gs) - 1

    if "YY" in need:
        slots["YY"] = [
            add(f"Y{i}Y{j}", lambda x, i=i, j=j: cache(x)[0][:, i] * cache(x)[0][:, j], ("YY", i, j))
            for (i, j) in idx.pairs
        ]
    if "hY" in need:
        slots["hY"] = [
            [
                add(f"h{i}{j}Y{m}", lambda x, i=i, j=j, m=m: cache(x)[1][:, i, j] * cache(x)[0][:, m], ("hY", i, j, m))
                for m in range(d)
            ]
            for (i, j) in idx.pairs
        ]
    if "hh" in need:
        slots["hh"] = {}
        for a in range(idx.m):
            for bpos in range(a, idx.m):
                i, j = idx.pairs[a]
                k, l = idx.pairs[bpos]
                slots["hh"][(a, bpos)] = add(
                    f"h{i}{j}h{k}{l}",
                    lambda x, i=i, j=j, k=k, l=l: cache(x)[1][:, i, j] * cache(x)[1][:, k, l],
                    ("hh", i, j, k, l),
                )
    if "ZY" in need:
        slots["ZY"] = [
            [
                add(
                    f"Z{p}Y{j}",
                    lambda x, p=p, j=j: z0(x)[:, p] * cache(x)[0][:, j],
                    _estimator_closed_form_key(estimator, theta, "rY", p, j),
                )
                for j in range(d)
            ]
            for p in range(d)
        ]
    if "Zh" in need:
        slots["Zh"] = [
            [
                add(
                    f"Z{p}h{i}{j}",
                    lambda x, p=p, i=i, j=j: z0(x)[:, p] * cache(x)[1][:, i, j],
                    _estimator_closed_form_key(estimator, theta, "rh", p, i, j),
                )
                for (i, j) in idx.pairs
            ]
            for p in range(d)
        ]
    return gs, slots


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _check_information(J: np.ndarray) -> float:
    eigs = np.linalg.eigvalsh(J)
    if eigs[0] <= SINGULAR_EIG_RATIO * eigs[-1]:
        raise SingularInformationError(
            f"Fisher information is numerically singular (eigenvalues {eigs})"
        )
    return float(eigs[-1] / eigs[0])


def _assemble(values: np.ndarray, idx: PairIndex, slots: dict) -> dict:
    """Turn one vector of expectations into the report blocks it covers."""
    d = idx.dim
    out = {}
    if "YY" in slots:
        J = np.zeros((d, d))
        for pos, (i, j) in enumerate(idx.pairs):
            J[i, j] = J[j, i] = values[slots["YY"][pos]]
        out["J"] = J
        out["G"] = 0.25 * J
    if "hY" in slots or "hh" in slots:
        _check_information(out["J"])
    if "hY" in slots:
        b = 0.5 * np.array([[values[s] for s in row] for row in slots["hY"]])
        out["b"] = b
        g_inv = np.linalg.inv(out["G"])
        gamma_pairs = b @ g_inv  # (m, d): Gamma^l for each unique pair
        gamma = np.zeros((d, d, d))
        for pos, (i, j) in enumerate(idx.pairs):
            gamma[:, i, j] = gamma[:, j, i] = gamma_pairs[pos]
        out["Gamma"] = gamma
        out["gamma_pairs"] = gamma_pairs
    if "hh" in slots:
        ehh = np.zeros((idx.m, idx.m))
        for (a, bpos), s in slots["hh"].items():
            ehh[a, bpos] = ehh[bpos, a] = values[s]
        g_inv = np.linalg.inv(out["G"])
        out["G_N"] = ehh - out["b"] @ g_inv @ out["b"].T
    if "ZY" in slots:
        out["unbias"] = 0.5 * np.array([[values[s] for s in row] for row in slots["ZY"]])
    if "Zh" in slots:
        zh = np.array([[values[s] for s in row] for row in slots["Zh"]])
        out["C"] = zh - 0.5 * out["gamma_pairs"].T
    return out


def _evaluate(model, estimator, theta, cfg, need):
    """Expectations for the requested blocks, with jackknife errors under MC.

    Returns (blocks, se_blocks, extra_meta).  Standard errors are present
    only for the monte_carlo backend, estimated by leave-one-chunk-out
    recomputation of every derived block.
    """
    idx = pair_index(model.param_dim)
    gs, slots = _build_plan(model, estimator, theta, idx, need)
    if cfg.backend != "monte_carlo":
        batch = expect_batch(model, theta, gs, cfg)
        blocks = _assemble(batch.values, idx, slots)
        return idx, blocks, None

    means, counts = mc_chunk_means(model, theta, gs, cfg)
    totals = means.T @ counts
    n = counts.sum()
    blocks = _assemble(totals / n, idx, slots)

    if means.shape[0] < 2:
        # too few reduction chunks to jackknife; refine the block split
        # (values above stay on the contractual reduction)
        means, counts = mc_chunk_means(model, theta, gs, cfg, block_size=cfg.mc_samples // 8)
        totals = means.T @ counts
        n = counts.sum()
    nchunks = means.shape[0]
    replicates = {k: [] for k in blocks}
    for bpos in range(nchunks):
        loo = (totals - means[bpos] * counts[bpos]) / (n - counts[bpos])
        rep = _assemble(loo, idx, slots)
        for k in replicates:
            replicates[k].append(rep[k])
    ses = {}
    for k, reps in replicates.items():
        stack = np.stack(reps)
        ses[k] = np.sqrt((nchunks - 1) / nchunks * np.sum((stack - stack.mean(axis=0)) ** 2, axis=0))
    return idx, blocks, ses


def _unbias_tolerance(cfg: PairingConfig, se: Optional[np.ndarray]) -> np.ndarray:
    if cfg.tol_hint is not None:
        return np.asarray(cfg.tol_hint)
    if cfg.backend == "monte_carlo" and se is not None:
        return MC_SE_FACTOR * se + 1e-12
    return np.asarray(QUAD_TOL)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def fisher_info(model: ModelSpec, theta, cfg: PairingConfig) -> np.ndarray:
    """Fisher information matrix E[Y Y^T]; raises on numerical singularity."""
    theta = as_parameter_point(theta, model.param_dim)
    _, blocks, _ = _evaluate(model, None, theta, cfg, need=("YY",))
    _check_information(blocks["J"])
    return blocks["J"]


def christoffel(model: ModelSpec, theta, cfg: PairingConfig) -> np.ndarray:
    """Christoffel symbols of the induced connection, indexed [l, i, j]."""
    theta = as_parameter_point(theta, model.param_dim)
    _, blocks, _ = _evaluate(model, None, theta, cfg, need=("YY", "hY"))
    _check_information(blocks["J"])
    return blocks["Gamma"]


def normal_gram(model: ModelSpec, theta, cfg: PairingConfig) -> np.ndarray:
    """Normal Gram of the second fundamental form over unique pairs."""
    theta = as_parameter_point(theta, model.param_dim)
    _, blocks, _ = _evaluate(model, None, theta, cfg, need=("YY", "hY", "hh"))
    _check_information(blocks["J"])
    return blocks["G_N"]


def error_pairings(model: ModelSpec, estimator: EstimatorSpec, theta, cfg: PairingConfig):
    """Estimator pairings (C, unbias) against normal and tangent vectors.

    Warns (without aborting) when the unbiasedness pairings deviate from
    one half the identity beyond the backend tolerance; the downstream
    bound is only guaranteed for estimators that pass this check.
    """
    theta = as_parameter_point(theta, model.param_dim)
    _, blocks, ses = _evaluate(model, estimator, theta, cfg, need=("YY", "hY", "ZY", "Zh"))
    _check_information(blocks["J"])
    d = model.param_dim
    tol = _unbias_tolerance(cfg, None if ses is None else ses["unbias"])
    deviation = np.abs(blocks["unbias"] - 0.5 * np.eye(d))
    if np.any(deviation > tol):
        warnings.warn(
            f"unbiasedness violated: max pairing deviation {deviation.max():.3g}",
            UnbiasednessWarning,
        )
    return blocks["C"], blocks["unbias"]


def geometry_report(
    model: ModelSpec, estimator: EstimatorSpec, theta, cfg: PairingConfig
) -> GeometryReport:
    """Full geometry at one point, from one shared expectation batch."""
    theta = as_parameter_point(theta, model.param_dim)
    idx, blocks, ses = _evaluate(
        model, estimator, theta, cfg, need=("YY", "hY", "hh", "ZY", "Zh")
    )
    condition = _check_information(blocks["J"])

    d = model.param_dim
    tol = _unbias_tolerance(cfg, None if ses is None else ses["unbias"])
    deviation = np.abs(blocks["unbias"] - 0.5 * np.eye(d))
    unbias_warning = bool(np.any(deviation > tol))
    if unbias_warning:
        warnings.warn(
            f"unbiasedness violated: max pairing deviation {deviation.max():.3g}",
            UnbiasednessWarning,
        )
    flat = bool(
        np.linalg.norm(blocks["G_N"]) < FLAT_GRAM_RATIO * np.linalg.norm(blocks["G"]) ** 2
    )

    meta = {
        "spec_version": 1,
        "model": model.name,
        "estimator": estimator.name,
        "backend": cfg.backend,
        "gh_order": cfg.gh_order,
        "mc_samples": cfg.mc_samples,
        "seed": cfg.seed,
        "jacobian_is_fd": model.jacobian_is_fd,
        "J_condition": condition,
        "flat": flat,
        "unbias_warning": unbias_warning,
        "pair_list": [list(p) for p in idx.pairs],
        "standard_errors": None
        if ses is None
        else {k: ses[k].tolist() for k in ("J", "G", "Gamma", "b", "G_N", "C", "unbias")},
    }
    return GeometryReport(
        theta=theta,
        J=blocks["J"],
        G=blocks["G"],
        Gamma=blocks["Gamma"],
        b=blocks["b"],
        G_N=blocks["G_N"],
        C=blocks["C"],
        unbias=blocks["unbias"],
        pairs=idx,
        meta=meta,
    )


def normality_residuals(model: ModelSpec, report: GeometryReport, cfg: PairingConfig):
    """Independent check that the normal vectors pair to zero with tangents.

    Re-estimates E[(h_ij - sum_l Gamma^l_ij Y_l / 2) * Y_m / 2] using the
    Christoffel symbols frozen in ``report``; exact orthogonality makes
    every entry zero up to backend error.  Returns an (m, d) array and the
    matching standard errors (zero for deterministic backends).
    """
    theta = report.theta
    idx = report.pairs
    cache = _score_h_cache(model, theta)
    gamma_pairs = np.array([report.Gamma[:, i, j] for (i, j) in idx.pairs])

    gs = []
    for pos, (i, j) in enumerate(idx.pairs):
        coeffs = gamma_pairs[pos]
        for m in range(idx.dim):
            def fn(x, i=i, j=j, m=m, coeffs=coeffs):
                y, h = cache(x)
                resid = h[:, i, j] - 0.5 * (y @ coeffs)
                return resid * 0.5 * y[:, m]
            gs.append(Integrand(fn=fn, name=f"normality[{i}{j},{m}]"))
    batch = expect_batch(model, theta, gs, cfg)
    shape = (idx.m, idx.dim)
    return batch.values.reshape(shape), batch.standard_errors.reshape(shape)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def report_to_json_dict(report: GeometryReport) -> dict:
    """Versioned JSON document for a geometry report."""
    return {
        "theta": report.theta.tolist(),
        "J": report.J.tolist(),
        "G": report.G.tolist(),
        "Gamma": report.Gamma.tolist(),
        "b": report.b.tolist(),
        "G_N": report.G_N.tolist(),
        "C": report.C.tolist(),
        "unbias": report.unbias.tolist(),
        "meta": report.meta,
    }


def report_from_json_dict(doc: dict) -> GeometryReport:
    theta = np.asarray(doc["theta"], dtype=float)
    idx = pair_index(theta.size)
    return GeometryReport(
        theta=theta,
        J=np.asarray(doc["J"], dtype=float),
        G=np.asarray(doc["G"], dtype=float),
        Gamma=np.asarray(doc["Gamma"], dtype=float),
        b=np.asarray(doc["b"], dtype=float),
        G_N=np.asarray(doc["G_N"], dtype=float),
        C=np.asarray(doc["C"], dtype=float),
        unbias=np.asarray(doc["unbias"], dtype=float),
        pairs=idx,
        meta=dict(doc["meta"]),
    )
