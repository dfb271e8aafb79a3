"""Sum-of-squares certificates for a conservative matrix correction.

The directional correction R(v) = N(v)^2 / D(v) is a ratio of a degree-6
and a degree-4 homogeneous polynomial.  A PSD matrix Delta satisfies
v^T Delta v <= R(v) everywhere iff

    P_Delta(v) = N(v)^2 - (v^T Delta v) * D(v) >= 0   for all v,

and a sufficient certificate for that is P_Delta(v) = z(v)^T S z(v) with
S PSD, where z stacks all monomials of exact degree 3.  Matching degree-6
coefficients turns the certificate search into a small dense semidefinite
program over (Delta, S), solved here by a bespoke penalty + log-barrier
Newton method: problem sizes are tiny, a hand-rolled solver keeps the
results deterministic, and the canonical feasible start
(Delta = 0, S = n n^T with n the coefficient vector of N) always exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import sample_directions, sweep_arrays
from .geometry import GeometryReport, pair_index

__all__ = [
    "MonomialBasis",
    "PolynomialSystem",
    "SOSCertificate",
    "CertificateVerification",
    "CertificateVerificationError",
    "enumerate_monomials",
    "build_system",
    "solve_sos_sdp",
    "verify_certificate",
    "rank_one_toy_report",
    "cert_to_json_dict",
    "cert_from_json_dict",
]

RESIDUAL_REPORT_TOL = 1e-7
RESIDUAL_FAIL_TOL = 1e-6


class CertificateVerificationError(RuntimeError):
    """A certificate failed its direction sweep; carries the offenders."""

    def __init__(self, message, verification=None):
        super().__init__(message)
        self.verification = verification


# ---------------------------------------------------------------------------
# Monomial bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonomialBasis:
    """Exponent vectors of exact total degree, in graded-lex order."""

    dim: int
    degree: int
    monomials: tuple

    @property
    def size(self) -> int:
        return len(self.monomials)

    def position(self, exponents) -> int:
        return self._index()[tuple(exponents)]

    def _index(self):
        if not hasattr(self, "_pos"):
            object.__setattr__(self, "_pos", {m: k for k, m in enumerate(self.monomials)})
        return self._pos

    def evaluate(self, vs: np.ndarray) -> np.ndarray:
        """Monomial values at each row of ``vs``; shape (rows, size)."""
        vs = np.atleast_2d(np.asarray(vs, dtype=float))
        out = np.ones((vs.shape[0], self.size))
        for k, mono in enumerate(self.monomials):
            for coord, power in enumerate(mono):
                if power:
                    out[:, k] *= vs[:, coord] ** power
        return out


def _exponent_vectors(dim: int, degree: int):
    if dim == 1:
        yield (degree,)
        return
    for lead in range(degree, -1, -1):
        for rest in _exponent_vectors(dim - 1, degree - lead):
            yield (lead,) + rest


def enumerate_monomials(dim: int, degree: int) -> MonomialBasis:
    """All monomials of exact total degree in ``dim`` variables."""
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    return MonomialBasis(dim=dim, degree=degree, monomials=tuple(_exponent_vectors(dim, degree)))


def _poly_mul(a: dict, b: dict) -> dict:
    out = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            key = tuple(x + y for x, y in zip(ea, eb))
            out[key] = out.get(key, 0.0) + ca * cb
    return out


def _poly_vec(poly: dict, basis: MonomialBasis) -> np.ndarray:
    vec = np.zeros(basis.size)
    for exp, coeff in poly.items():
        vec[basis.position(exp)] += coeff
    return vec


# ---------------------------------------------------------------------------
# Coefficient-matching system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolynomialSystem:
    """Degree-6 coefficient-matching data for the certificate program.

    Constraint: d_quad_map @ vech(Delta) + sos_map @ vech(S) = nsq_coeffs,
    with vech taken over the unique-entry pair lists ``delta_pairs`` and
    ``s_pairs``.  ``n_coeffs`` are the degree-3 coefficients of N(v); the
    canonical feasible point is Delta = 0, S = outer(n, n).
    """

    dim: int
    basis3: MonomialBasis
    basis6: MonomialBasis
    n_coeffs: np.ndarray
    nsq_coeffs: np.ndarray
    d_quad_map: np.ndarray
    sos_map: np.ndarray
    delta_pairs: tuple
    s_pairs: tuple

    def feasible_start(self):
        """(Delta0, S0) satisfying every coefficient equality exactly."""
        return np.zeros((self.dim, self.dim)), np.outer(self.n_coeffs, self.n_coeffs)


def _sym_pairs(k: int) -> tuple:
    return tuple((p, q) for p in range(k) for q in range(p, k))


def _vech(mat: np.ndarray, pairs) -> np.ndarray:
    return np.array([mat[p, q] for p, q in pairs])


def _mat(vec: np.ndarray, pairs, k: int) -> np.ndarray:
    out = np.zeros((k, k))
    for val, (p, q) in zip(vec, pairs):
        out[p, q] = out[q, p] = val
    return out


def build_system(report: GeometryReport) -> PolynomialSystem:
    """Expand N(v) and D(v) into monomial coefficients and assemble the
    degree-6 matching maps.

    N(v) = v^T C s(v) is cubic and D(v) = s(v)^T G_N s(v) quartic in v once
    s(v) is written through vt = G^{-1} v; products against the unknowns are
    assembled by exponent-vector convolution.
    """
    d = report.pairs.dim
    g_inv = np.linalg.inv(report.G)
    basis3 = enumerate_monomials(d, 3)
    basis4 = enumerate_monomials(d, 4)
    basis6 = enumerate_monomials(d, 6)

    def unit_exp(p):
        e = [0] * d
        e[p] = 1
        return tuple(e)

    # quadratic coefficient dicts for each weighted pair monomial of vt
    s_polys = []
    for (i, j), w in zip(report.pairs.pairs, report.pairs.weights):
        poly = {}
        for a in range(d):
            for c in range(d):
                coeff = w * g_inv[i, a] * g_inv[j, c]
                if coeff != 0.0:
                    key = tuple(
                        (1 if t == a else 0) + (1 if t == c else 0) for t in range(d)
                    )
                    poly[key] = poly.get(key, 0.0) + coeff
        s_polys.append(poly)

    n_poly = {}
    for pos in range(report.pairs.m):
        for p in range(d):
            coeff = report.C[p, pos]
            if coeff == 0.0:
                continue
            for exp, c2 in _poly_mul({unit_exp(p): coeff}, s_polys[pos]).items():
                n_poly[exp] = n_poly.get(exp, 0.0) + c2
    n_coeffs = _poly_vec(n_poly, basis3)

    d_poly = {}
    for a in range(report.pairs.m):
        for bpos in range(report.pairs.m):
            gn = report.G_N[a, bpos]
            if gn == 0.0:
                continue
            for exp, c4 in _poly_mul(s_polys[a], s_polys[bpos]).items():
                d_poly[exp] = d_poly.get(exp, 0.0) + gn * c4
    d_vec = _poly_vec(d_poly, basis4)

    delta_pairs = _sym_pairs(d)
    d_quad = np.zeros((basis6.size, len(delta_pairs)))
    for col, (p, q) in enumerate(delta_pairs):
        mult = 1.0 if p == q else 2.0
        pq_exp = tuple(x + y for x, y in zip(unit_exp(p), unit_exp(q)))
        for exp4, c4 in zip(basis4.monomials, d_vec):
            if c4 == 0.0:
                continue
            target = tuple(x + y for x, y in zip(exp4, pq_exp))
            d_quad[basis6.position(target), col] += mult * c4

    s_pairs = _sym_pairs(basis3.size)
    sos_map = np.zeros((basis6.size, len(s_pairs)))
    for col, (a, bpos) in enumerate(s_pairs):
        target = tuple(x + y for x, y in zip(basis3.monomials[a], basis3.monomials[bpos]))
        sos_map[basis6.position(target), col] = 1.0 if a == bpos else 2.0

    # assembling N^2 through the sos map makes the canonical feasible point
    # satisfy the equalities bit-exactly
    nsq_coeffs = sos_map @ _vech(np.outer(n_coeffs, n_coeffs), s_pairs)

    return PolynomialSystem(
        dim=d,
        basis3=basis3,
        basis6=basis6,
        n_coeffs=n_coeffs,
        nsq_coeffs=nsq_coeffs,
        d_quad_map=d_quad,
        sos_map=sos_map,
        delta_pairs=delta_pairs,
        s_pairs=s_pairs,
    )


# ---------------------------------------------------------------------------
# Certificates and the solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SOSCertificate:
    """A (Delta, S) pair with coefficient residuals and solve diagnostics."""

    Delta: np.ndarray
    S: np.ndarray
    objective: float
    max_coeff_residual: float
    solver_status: str  # optimal | max_iter | infeasible_numerics
    iterations: int = 0
    stage_objectives: tuple = ()


def _barrier_terms(vec, pairs, k, basis_mats, weight):
    """Value, gradient, Hessian of -weight * logdet over unique entries.

    Returns None when the block is not positive definite.
    """
    mat = _mat(vec, pairs, k)
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    w = np.linalg.inv(mat)
    grad = -weight * np.einsum("ij,aij->a", w, basis_mats)
    mid = np.einsum("ij,ajk,kl->ail", w, basis_mats, w)
    hess = weight * np.einsum("ail,bil->ab", mid, basis_mats)
    return -weight * logdet, grad, hess


def _basis_mats(pairs, k) -> np.ndarray:
    mats = np.zeros((len(pairs), k, k))
    for idx, (p, q) in enumerate(pairs):
        mats[idx, p, q] = 1.0
        mats[idx, q, p] = 1.0
    return mats


def _block_logdet_ok(vec, pairs, k):
    try:
        np.linalg.cholesky(_mat(vec, pairs, k))
        return True
    except np.linalg.LinAlgError:
        return False


def solve_sos_sdp(
    system: PolynomialSystem,
    objective: str = "trace",
    max_iter: int = 200,
    tol: float = 1e-7,
) -> SOSCertificate:
    """Solve the coefficient-matching semidefinite program.

    Maximizes trace(Delta) (or just finds a feasible point under the
    ``zero`` objective) over Delta >= 0, S >= 0 subject to the degree-6
    coefficient equalities.  Equalities are enforced by a quadratic penalty
    inside a log-barrier Newton iteration with a geometric barrier schedule,
    followed by an exact least-squares projection onto the equality
    subspace.  Fully deterministic for fixed inputs.
    """
    if objective not in ("trace", "zero"):
        raise ValueError("objective must be 'trace' or 'zero'")
    d = system.dim
    big_m = system.basis3.size
    dpairs, spairs = system.delta_pairs, system.s_pairs
    nd, ns = len(dpairs), len(spairs)

    # A flat program constrains nothing; only the zero correction is valid.
    if np.abs(system.d_quad_map).max() == 0.0 and np.abs(system.nsq_coeffs).max() == 0.0:
        return SOSCertificate(
            Delta=np.zeros((d, d)),
            S=np.zeros((big_m, big_m)),
            objective=0.0,
            max_coeff_residual=0.0,
            solver_status="optimal",
            iterations=0,
            stage_objectives=(0.0,),
        )

    # block scaling keeps both matrix variables O(1) inside the solver
    rb = 1.0 + float(np.abs(system.nsq_coeffs).max())
    scale_delta = rb / max(np.abs(system.d_quad_map).max(), 1e-30)
    scale_s = rb / max(np.abs(system.sos_map).max(), 1e-30)
    a_mat = np.hstack(
        [system.d_quad_map * (scale_delta / rb), system.sos_map * (scale_s / rb)]
    )
    b_vec = system.nsq_coeffs / rb
    ata = a_mat.T @ a_mat

    cvec = np.zeros(nd + ns)
    if objective == "trace":
        for idx, (p, q) in enumerate(dpairs):
            if p == q:
                cvec[idx] = -1.0

    mats_d = _basis_mats(dpairs, d)
    mats_s = _basis_mats(spairs, big_m)

    delta0, s0 = system.feasible_start()
    s_scaled = s0 / scale_s
    eps_s = 1e-6 * max(1.0, float(np.linalg.norm(s_scaled, 2)))
    x = np.concatenate(
        [
            _vech(1e-8 * max(1.0, float(np.linalg.norm(s_scaled, 2))) * np.eye(d), dpairs),
            _vech(s_scaled + eps_s * np.eye(big_m), spairs),
        ]
    )

    def split(xv):
        return xv[:nd], xv[nd:]

    def blocks_pd(xv):
        xd, xs = split(xv)
        return _block_logdet_ok(xd, dpairs, d) and _block_logdet_ok(xs, spairs, big_m)

    def phi(xv, t_weight, rho):
        xd, xs = split(xv)
        td = _barrier_terms(xd, dpairs, d, mats_d, 1.0 / t_weight)
        ts = _barrier_terms(xs, spairs, big_m, mats_s, 1.0 / t_weight)
        if td is None or ts is None:
            return None
        r = a_mat @ xv - b_vec
        return float(cvec @ xv + 0.5 * rho * (r @ r) + td[0] + ts[0])

    t_final = max(1e10, 10.0 * (d + big_m) / tol)
    stages = []
    t_weight = 10.0
    while t_weight < t_final:
        stages.append(t_weight)
        t_weight *= 10.0
    stages.append(t_final)

    iterations = 0
    stage_objectives = []
    hit_cap = False
    # a penalty weight that is strong from the outset keeps iterates
    # near-feasible, so the recorded objective rises toward the optimum
    # instead of overshooting it by the penalty relaxation
    rho = 10.0 * stages[-1]
    for t_weight in stages:
        for _ in range(50):
            if iterations >= max_iter:
                hit_cap = True
                break
            xd, xs = split(x)
            td = _barrier_terms(xd, dpairs, d, mats_d, 1.0 / t_weight)
            ts = _barrier_terms(xs, spairs, big_m, mats_s, 1.0 / t_weight)
            r = a_mat @ x - b_vec
            grad = cvec + rho * (a_mat.T @ r)
            grad[:nd] += td[1]
            grad[nd:] += ts[1]
            hess = rho * ata
            hess[:nd, :nd] += td[2]
            hess[nd:, nd:] += ts[2]

            step = None
            jitter = 0.0
            diag_scale = float(np.max(np.diag(hess)))
            for _ in range(8):
                try:
                    step = np.linalg.solve(
                        hess + jitter * np.eye(nd + ns), -grad
                    )
                except np.linalg.LinAlgError:
                    step = None
                if step is not None and np.all(np.isfinite(step)) and grad @ step < 0:
                    break
                step = None
                jitter = max(jitter * 100.0, 1e-14 * diag_scale)
            if step is None:
                break

            slope = float(grad @ step)
            base = phi(x, t_weight, rho)
            alpha = 1.0
            accepted = False
            while alpha > 1e-13:
                candidate = x + alpha * step
                value = phi(candidate, t_weight, rho)
                if value is not None and value <= base + 1e-4 * alpha * slope:
                    x = candidate
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            iterations += 1
            # Newton decrement stopping rule for this stage
            if -0.5 * alpha * slope <= 1e-13 * (1.0 + abs(base)):
                break
        xd, _ = split(x)
        stage_objectives.append(float(np.trace(_mat(xd, dpairs, d))) * scale_delta)
        if hit_cap:
            break

    # exact projection onto the equality subspace
    r = a_mat @ x - b_vec
    correction = a_mat.T @ np.linalg.solve(a_mat @ a_mat.T, r)
    x = x - correction

    xd, xs = split(x)
    delta = _mat(xd, dpairs, d) * scale_delta
    s_final = _mat(xs, spairs, big_m) * scale_s
    # the projection can nudge S marginally indefinite; a diagonal lift
    # restores S >= 0 (only strengthening the sum of squares) and the
    # equality residual is re-measured afterwards
    s_min_eig = float(np.linalg.eigvalsh(s_final).min())
    if s_min_eig < 0.0:
        s_final = s_final + (-s_min_eig) * (1.0 + 1e-6) * np.eye(big_m)
    resid = (
        system.d_quad_map @ _vech(delta, dpairs)
        + system.sos_map @ _vech(s_final, spairs)
        - system.nsq_coeffs
    )
    max_resid = float(np.abs(resid).max())
    scale = 1.0 + float(np.abs(system.nsq_coeffs).max())
    if max_resid > RESIDUAL_FAIL_TOL * scale:
        status = "infeasible_numerics"
    elif hit_cap:
        status = "max_iter"
    else:
        status = "optimal"
    return SOSCertificate(
        Delta=delta,
        S=s_final,
        objective=float(np.trace(delta)),
        max_coeff_residual=max_resid,
        solver_status=status,
        iterations=iterations,
        stage_objectives=tuple(stage_objectives),
    )


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificateVerification:
    """Margins from a random-direction sweep of a certificate.

    ``degenerate_max_quadratic`` records the largest v^T Delta v seen on
    degenerate directions (where the directional bound is 0 by convention);
    a positive value there is outside the directional theorem's guarantee
    and is reported rather than failed.
    """

    ok: bool
    nsamples: int
    min_polynomial: float
    max_sos_mismatch: float
    max_dominance_violation: float
    degenerate_count: int
    degenerate_max_quadratic: float
    outside_guarantee: bool
    offenders: tuple


def verify_certificate(
    cert: SOSCertificate,
    system: PolynomialSystem,
    report: GeometryReport,
    nsamples: int = 10_000,
    seed: int = 0,
    directions: Optional[np.ndarray] = None,
) -> CertificateVerification:
    """Check a certificate on seeded random unit directions.

    Verifies P_Delta(v) >= -1e-8 * scale, pointwise agreement of P_Delta
    with z(v)^T S z(v), and v^T Delta v <= R(v) + 1e-8 on non-degenerate
    directions.  Degenerate directions are summarized, not failed: the
    directional machinery asserts nothing there.  Raises
    CertificateVerificationError on failure, listing offending directions.
    ``directions`` overrides the seeded sample when given.
    """
    if nsamples < 1:
        raise ValueError("nsamples must be positive")
    if directions is None:
        vs = sample_directions(system.dim, nsamples, seed)
    else:
        vs = np.atleast_2d(np.asarray(directions, dtype=float))
        nsamples = vs.shape[0]
    _, n_val, d_val, r_val, degenerate = sweep_arrays(report, vs)
    vdv = np.einsum("kp,pq,kq->k", vs, cert.Delta, vs)
    poly = n_val**2 - vdv * d_val

    scale = 1.0 + float(np.abs(system.nsq_coeffs).max())
    z_vals = system.basis3.evaluate(vs)
    zsz = np.einsum("ka,ab,kb->k", z_vals, cert.S, z_vals)
    sos_mismatch = np.abs(poly - zsz)
    sos_tol = max(1e-8 * scale, 10.0 * system.basis6.size * cert.max_coeff_residual)

    nonneg_bad = poly < -1e-8 * scale
    sos_bad = sos_mismatch > sos_tol
    nondeg = ~degenerate
    dominance_violation = np.where(nondeg, vdv - r_val, -np.inf)
    dom_bad = nondeg & (vdv > r_val + 1e-8)

    bad = nonneg_bad | sos_bad | dom_bad
    offenders = tuple(map(tuple, vs[bad][:10]))
    deg_quad = vdv[degenerate]
    verification = CertificateVerification(
        ok=not bool(bad.any()),
        nsamples=nsamples,
        min_polynomial=float(poly.min()),
        max_sos_mismatch=float(sos_mismatch.max()),
        max_dominance_violation=float(dominance_violation.max()) if nondeg.any() else -math.inf,
        degenerate_count=int(degenerate.sum()),
        degenerate_max_quadratic=float(deg_quad.max()) if deg_quad.size else -math.inf,
        outside_guarantee=bool(deg_quad.size and deg_quad.max() > 1e-8),
        offenders=offenders,
    )
    if not verification.ok:
        raise CertificateVerificationError(
            f"certificate failed on {int(bad.sum())} of {nsamples} directions; "
            f"first offenders: {offenders[:3]}",
            verification=verification,
        )
    return verification


# ---------------------------------------------------------------------------
# Synthetic rank-1 data and serialization
# ---------------------------------------------------------------------------


def rank_one_toy_report(a, c: float) -> GeometryReport:
    """Synthetic geometry whose curvature lives in one normal direction.

    With unit tangent Gram, normal Gram c * e_1 e_1^T over pairs, and error
    pairings a e_1^T, the correction is the exact quadratic form
    (a . v)^2 / c, so the certificate program has the closed-form solution
    Delta = outer(a, a) / c with a vanishing SOS remainder.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 1:
        raise ValueError("a must be a nonempty vector")
    if not np.isfinite(c) or c <= 0:
        raise ValueError("c must be a positive real")
    d = a.size
    idx = pair_index(d)
    g_n = np.zeros((idx.m, idx.m))
    g_n[0, 0] = float(c)
    c_mat = np.zeros((d, idx.m))
    c_mat[:, 0] = a
    return GeometryReport(
        theta=np.zeros(d),
        J=4.0 * np.eye(d),
        G=np.eye(d),
        Gamma=np.zeros((d, d, d)),
        b=np.zeros((idx.m, d)),
        G_N=g_n,
        C=c_mat,
        unbias=0.5 * np.eye(d),
        pairs=idx,
        meta={
            "spec_version": 1,
            "model": "rank-one-toy",
            "estimator": "rank-one-toy",
            "backend": "synthetic",
            "flat": False,
            "unbias_warning": False,
            "J_condition": 1.0,
            "pair_list": [list(p) for p in idx.pairs],
            "standard_errors": None,
        },
    )


def cert_to_json_dict(cert: SOSCertificate) -> dict:
    return {
        "spec_version": 1,
        "Delta": cert.Delta.tolist(),
        "S": cert.S.tolist(),
        "objective": cert.objective,
        "residual": cert.max_coeff_residual,
        "status": cert.solver_status,
    }


def cert_from_json_dict(doc: dict) -> SOSCertificate:
    return SOSCertificate(
        Delta=np.asarray(doc["Delta"], dtype=float),
        S=np.asarray(doc["S"], dtype=float),
        objective=float(doc["objective"]),
        max_coeff_residual=float(doc["residual"]),
        solver_status=str(doc["status"]),
    )
