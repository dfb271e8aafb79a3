"""Classical and curvature-corrected estimator variance bounds.

The classical matrix bound is the inverse Fisher information.  On top of it,
each direction v earns a nonnegative correction

    R(v) = N(v)^2 / D(v),
    N(v) = v^T C s(v),      D(v) = s(v)^T G_N s(v),

where s(v) collects the products vt_i vt_j of the rescaled direction
vt = G^{-1} v over unique index pairs, with a factor 2 on off-diagonal
pairs.  R is homogeneous of degree 2 but generally a rational function of
v, not a quadratic form; when the normal Gram has numerical rank one and
the error pairings align with its range, the correction collapses to an
exact rank-1 quadratic form, detected here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import GeometryReport, SingularInformationError

__all__ = [
    "DirectionalBound",
    "ExactCorrection",
    "classical_crb",
    "directional_bound",
    "directional_sweep",
    "sweep_arrays",
    "exact_matrix_correction",
    "sample_directions",
    "sweep_to_csv",
]

DEGENERATE_RATIO = 1e-12
RANK1_TOL = 1e-8


@dataclass(frozen=True)
class DirectionalBound:
    """One direction's curvature correction to the classical bound.

    ``degenerate`` marks directions where D(v) vanishes to tolerance; the
    correction is defined as 0 there by convention, and certificate
    validation treats such directions specially.
    """

    v: np.ndarray
    v_tilde: np.ndarray
    N: float
    D: float
    R: float
    degenerate: bool


@dataclass(frozen=True)
class ExactCorrection:
    """Result of the rank-1 exact matrix correction detection.

    When ``applies``, ``Delta = outer(a, a) / c`` reproduces R(v) exactly on
    all non-degenerate directions: ``c`` is the top eigenvalue of the normal
    Gram, ``u`` its unit eigenvector, and ``a = C u``.  ``residuals`` records
    the two rank-1 deviation measures behind the decision.
    """

    applies: bool
    Delta: np.ndarray
    a: np.ndarray
    c: float
    u: np.ndarray
    residuals: dict


def classical_crb(J: np.ndarray) -> np.ndarray:
    """Inverse Fisher information; the matrix bound with zero correction."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("J must be a square matrix")
    if not np.allclose(J, J.T, rtol=0, atol=1e-10 * max(1.0, np.abs(J).max())):
        raise ValueError("J must be symmetric")
    eigs = np.linalg.eigvalsh(J)
    if eigs[0] <= 1e-10 * max(eigs[-1], 0.0):
        raise SingularInformationError(f"J is not positive definite (eigenvalues {eigs})")
    inv = np.linalg.inv(J)
    return 0.5 * (inv + inv.T)


def sweep_arrays(report: GeometryReport, directions: np.ndarray):
    """Vectorized N, D, R, degenerate over rows of ``directions``.

    The degeneracy cutoff is D <= 1e-12 * ||G_N||_F * ||s(v)||^2; a report
    flagged flat forces every direction degenerate with zero correction.
    """
    vs = np.atleast_2d(np.asarray(directions, dtype=float))
    if vs.shape[1] != report.pairs.dim:
        raise ValueError(f"directions must have {report.pairs.dim} columns")
    vt = np.linalg.solve(report.G, vs.T).T
    idx = report.pairs
    i = np.array([p[0] for p in idx.pairs])
    j = np.array([p[1] for p in idx.pairs])
    s = idx.weights[None, :] * vt[:, i] * vt[:, j]
    n_val = np.einsum("kp,pa,ka->k", vs, report.C, s)
    d_val = np.einsum("ka,ab,kb->k", s, report.G_N, s)
    # negative values only arise from PSD round-off noise; clamp to zero
    d_val = np.maximum(d_val, 0.0)
    gn_scale = np.linalg.norm(report.G_N)
    cutoff = DEGENERATE_RATIO * gn_scale * np.einsum("ka,ka->k", s, s)
    degenerate = d_val <= cutoff
    if report.meta.get("flat", False):
        degenerate = np.ones_like(degenerate, dtype=bool)
    r_val = np.where(degenerate, 0.0, n_val**2 / np.where(degenerate, 1.0, d_val))
    return vt, n_val, d_val, r_val, degenerate


def directional_bound(report: GeometryReport, v) -> DirectionalBound:
    """Curvature correction for one direction; R = 0 on degenerate ones."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != report.pairs.dim:
        raise ValueError(f"direction must be a length-{report.pairs.dim} vector")
    if not np.all(np.isfinite(v)) or np.all(v == 0):
        raise ValueError("direction must be nonzero and finite")
    vt, n_val, d_val, r_val, degenerate = sweep_arrays(report, v[None, :])
    return DirectionalBound(
        v=v,
        v_tilde=vt[0],
        N=float(n_val[0]),
        D=float(d_val[0]),
        R=float(r_val[0]),
        degenerate=bool(degenerate[0]),
    )


def sample_directions(dim: int, count: int, seed: int) -> np.ndarray:
    """Uniform directions on the sphere via normalized Gaussian draws."""
    if count < 1:
        raise ValueError("direction count must be positive")
    rng = np.random.default_rng(seed)
    vs = rng.standard_normal((count, dim))
    norms = np.linalg.norm(vs, axis=1, keepdims=True)
    # resample the (measure-zero) chance of an underflowed draw
    bad = norms[:, 0] < 1e-12
    while np.any(bad):
        vs[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(vs, axis=1, keepdims=True)
        bad = norms[:, 0] < 1e-12
    return vs / norms


def directional_sweep(
    report: GeometryReport,
    directions: Optional[Sequence] = None,
    count: Optional[int] = None,
    seed: int = 0,
) -> list:
    """Directional bounds over an explicit list of directions or a seeded
    uniform sample of ``count`` sphere points."""
    if directions is None:
        if count is None:
            raise ValueError("provide directions or a sample count")
        vs = sample_directions(report.pairs.dim, count, seed)
    else:
        vs = np.atleast_2d(np.asarray(directions, dtype=float))
        if vs.size == 0:
            raise ValueError("direction set must be nonempty")
    vt, n_val, d_val, r_val, degenerate = sweep_arrays(report, vs)
    return [
        DirectionalBound(
            v=vs[k],
            v_tilde=vt[k],
            N=float(n_val[k]),
            D=float(d_val[k]),
            R=float(r_val[k]),
            degenerate=bool(degenerate[k]),
        )
        for k in range(vs.shape[0])
    ]


def exact_matrix_correction(report: GeometryReport, tol: Optional[float] = None) -> ExactCorrection:
    """Detect the rank-1 case admitting an exact matrix correction.

    Applies iff (a) the normal Gram has numerical rank one,
    lambda_2 <= tol * lambda_1, and (b) the error pairings factor through
    its top eigenvector u: ||C - (C u) u^T||_F <= tol * ||C||_F.  Never
    raises; a flat normal Gram returns Delta = 0 with applies = False.

    Default tolerance is 1e-8; under a Monte Carlo report it widens to
    three relative standard errors of the normal Gram.
    """
    if tol is None:
        tol = RANK1_TOL
        ses = report.meta.get("standard_errors")
        if ses is not None:
            gn_scale = max(np.linalg.norm(report.G_N), 1e-300)
            tol = max(tol, 3.0 * float(np.max(np.asarray(ses["G_N"]))) / gn_scale)
    d = report.pairs.dim
    eigvals, eigvecs = np.linalg.eigh(report.G_N)
    lam1 = float(eigvals[-1])
    lam2 = float(eigvals[-2]) if eigvals.size > 1 else 0.0
    zero = ExactCorrection(
        applies=False,
        Delta=np.zeros((d, d)),
        a=np.zeros(d),
        c=0.0,
        u=np.zeros(report.pairs.m),
        residuals={"eigenvalue_ratio": np.nan, "pairing_misalignment": np.nan},
    )
    g_scale = np.linalg.norm(report.G) ** 2
    if lam1 <= max(1e-300, 1e-12 * g_scale):
        return zero
    eig_ratio = abs(lam2) / lam1
    u = eigvecs[:, -1]
    a = report.C @ u
    c_norm = np.linalg.norm(report.C)
    misalignment = 0.0 if c_norm == 0 else float(
        np.linalg.norm(report.C - np.outer(a, u)) / c_norm
    )
    residuals = {"eigenvalue_ratio": eig_ratio, "pairing_misalignment": misalignment}
    if eig_ratio > tol or misalignment > tol:
        return ExactCorrection(
            applies=False,
            Delta=np.zeros((d, d)),
            a=a,
            c=lam1,
            u=u,
            residuals=residuals,
        )
    return ExactCorrection(
        applies=True,
        Delta=np.outer(a, a) / lam1,
        a=a,
        c=lam1,
        u=u,
        residuals=residuals,
    )


def sweep_to_csv(bounds: Sequence[DirectionalBound], gaps: Optional[Sequence[float]] = None) -> str:
    """Render a sweep as CSV: v1..vd, N, D, R, degenerate_flag[, gap]."""
    if not bounds:
        raise ValueError("empty sweep")
    d = bounds[0].v.shape[0]
    header = [f"v{k + 1}" for k in range(d)] + ["N", "D", "R", "degenerate_flag"]
    if gaps is not None:
        header.append("gap")
    lines = [",".join(header)]
    for k, item in enumerate(bounds):
        row = [repr(float(c)) for c in item.v]
        row += [repr(item.N), repr(item.D), repr(item.R), str(int(item.degenerate))]
        if gaps is not None:
            row.append(repr(float(gaps[k])))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
