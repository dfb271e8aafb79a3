"""Command-line front end.

Subcommands: geometry | bound | sweep | sdp | validate | paper-example.
Settings come from an optional JSON config file plus flags, flags winning.
Every subcommand is deterministic given its config: all randomness flows
from the single top-level seed, fanned out to fixed per-purpose streams.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import schemas
from .bounds import (
    classical_crb,
    directional_bound,
    directional_sweep,
    exact_matrix_correction,
    sweep_to_csv,
)
from .geometry import (
    SingularInformationError,
    geometry_report,
    report_to_json_dict,
)
from .model import builtin_curved_gaussian, builtin_gamma_estimator
from .pairing import PairingConfig, PairingError
from .soscert import (
    CertificateVerificationError,
    build_system,
    cert_to_json_dict,
    rank_one_toy_report,
    solve_sos_sdp,
)
from .validate import SweepSpec, full_validation, validation_to_json_dict

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFICATION = 4

# fixed sub-streams of the top-level seed
STREAM_PAIRING = 0
STREAM_SWEEP = 1
STREAM_VALIDATE = 2

BACKEND_ALIASES = {"closed": "closed_form", "gh": "gauss_hermite", "mc": "monte_carlo"}

CONFIG_KEYS = {
    "model",
    "sigma",
    "alpha",
    "gamma",
    "theta",
    "v",
    "backend",
    "gh_order",
    "mc_samples",
    "seed",
    "count",
    "out",
    "toy",
    "a",
    "c",
    "with_sdp",
}

DEFAULTS = {
    "model": "curved-gaussian",
    "sigma": 1.0,
    "alpha": 1.0,
    "gamma": 1.0,
    "theta": (0.0, 0.0),
    "backend": "gh",
    "gh_order": 20,
    "mc_samples": 100_000,
    "seed": 0,
    "count": 100,
}


class ConfigError(ValueError):
    """Bad configuration file or flag combination."""


def derive_seed(seed: int, stream: int) -> int:
    """Deterministic child seed for one purpose-specific stream."""
    state = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream,)).generate_state(2)
    return int(state[0]) ^ (int(state[1]) << 32)


def _parse_vector(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    try:
        return tuple(float(part) for part in str(text).split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector from {text!r}") from exc


@dataclass
class RunConfig:
    """Resolved settings for one subcommand invocation.

    ``explicit`` records which keys the user actually supplied (config file
    or flags), as opposed to defaults; the geometry subcommand demands an
    explicit model specification.
    """

    model: str
    sigma: float
    alpha: float
    gamma: float
    theta: tuple
    backend: str
    gh_order: int
    mc_samples: int
    seed: int
    count: int
    v: Optional[tuple] = None
    out: Optional[str] = None
    toy: Optional[str] = None
    a: Optional[tuple] = None
    c: Optional[float] = None
    with_sdp: bool = False
    explicit: frozenset = frozenset()

    def pairing(self) -> PairingConfig:
        backend = BACKEND_ALIASES.get(self.backend, self.backend)
        try:
            return PairingConfig(
                backend=backend,
                gh_order=self.gh_order,
                mc_samples=self.mc_samples,
                seed=derive_seed(self.seed, STREAM_PAIRING),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_model(self):
        theta = np.asarray(self.theta, dtype=float)
        try:
            if self.model in ("curved-gaussian", "curved_gaussian"):
                model = builtin_curved_gaussian(self.sigma, self.alpha, param_dim=len(self.theta))
                estimator = builtin_gamma_estimator(self.gamma, model, theta)
            elif self.model in ("linear-gaussian", "linear_gaussian"):
                d = len(self.theta)
                model = builtin_linear_gaussian(np.eye(d), self.sigma)
                estimator = EstimatorSpec(
                    map=lambda x: x.copy(),
                    claimed_unbiased_at=theta,
                    closed_form_covariance=self.sigma**2 * np.eye(d),
                    residual_coeffs=np.eye(d),
                    name="identity",
                )
            else:
                raise ConfigError(f"unknown model {self.model!r}")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return model, estimator, theta


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file, and flags (flags win)."""
    merged = dict(DEFAULTS)
    if args.config:
        merged.update(_load_config_file(args.config))
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    merged["theta"] = _parse_vector(merged["theta"])
    for key in ("v", "a"):
        if merged.get(key) is not None:
            merged[key] = _parse_vector(merged[key])
    try:
        return RunConfig(
            model=str(merged["model"]),
            sigma=float(merged["sigma"]),
            alpha=float(merged["alpha"]),
            gamma=float(merged["gamma"]),
            theta=merged["theta"],
            backend=str(merged["backend"]),
            gh_order=int(merged["gh_order"]),
            mc_samples=int(merged["mc_samples"]),
            seed=int(merged["seed"]),
            count=int(merged["count"]),
            v=merged.get("v"),
            out=merged.get("out"),
            toy=merged.get("toy"),
            a=merged.get("a"),
            c=None if merged.get("c") is None else float(merged["c"]),
            with_sdp=bool(merged.get("with_sdp", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(kind: str, doc: dict, out: Optional[str]) -> None:
    schemas.validate_document(kind, doc)
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_geometry(cfg: RunConfig) -> int:
    model, estimator, theta = cfg.build_model()
    report = geometry_report(model, estimator, theta, cfg.pairing())
    _emit_json("geometry", report_to_json_dict(report), cfg.out)
    return EXIT_OK


def cmd_bound(cfg: RunConfig) -> int:
    if cfg.v is None:
        raise ConfigError("bound requires --v")
    model, estimator, theta = cfg.build_model()
    report = geometry_report(model, estimator, theta, cfg.pairing())
    try:
        item = directional_bound(report, np.asarray(cfg.v, dtype=float))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    doc = {
        "spec_version": 1,
        "v": item.v.tolist(),
        "v_tilde": item.v_tilde.tolist(),
        "N": item.N,
        "D": item.D,
        "R": item.R,
        "degenerate": item.degenerate,
    }
    _emit_json("bound", doc, cfg.out)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.count < 1:
        raise ConfigError("sweep requires a positive --count")
    model, estimator, theta = cfg.build_model()
    report = geometry_report(model, estimator, theta, cfg.pairing())
    items = directional_sweep(report, count=cfg.count, seed=derive_seed(cfg.seed, STREAM_SWEEP))
    gaps = None
    if estimator.closed_form_covariance is not None:
        centered = estimator.closed_form_covariance - classical_crb(report.J)
        gaps = [float(item.v @ centered @ item.v) for item in items]
    _emit(sweep_to_csv(items, gaps), cfg.out)
    return EXIT_OK


def cmd_sdp(cfg: RunConfig) -> int:
    if cfg.toy is not None:
        if cfg.toy != "rank1":
            raise ConfigError(f"unknown toy problem {cfg.toy!r} (expected 'rank1')")
        if cfg.a is None or cfg.c is None:
            raise ConfigError("the rank1 toy requires --a and --c")
        try:
            report = rank_one_toy_report(np.asarray(cfg.a, dtype=float), cfg.c)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        model, estimator, theta = cfg.build_model()
        report = geometry_report(model, estimator, theta, cfg.pairing())
    cert = solve_sos_sdp(build_system(report))
    _emit_json("certificate", cert_to_json_dict(cert), cfg.out)
    return EXIT_OK if cert.solver_status == "optimal" else EXIT_NUMERICAL


def cmd_validate(cfg: RunConfig) -> int:
    model, estimator, theta = cfg.build_model()
    cert = None
    if cfg.with_sdp:
        pairing = cfg.pairing()
        report = geometry_report(model, estimator, theta, pairing)
        cert = solve_sos_sdp(build_system(report))
    result = full_validation(
        model,
        estimator,
        theta,
        cfg.pairing(),
        sdp_cert=cert,
        sweep=SweepSpec(count=cfg.count, seed=derive_seed(cfg.seed, STREAM_SWEEP)),
        n_samples=cfg.mc_samples,
        mc_seed=derive_seed(cfg.seed, STREAM_VALIDATE),
    )
    _emit_json("validation", validation_to_json_dict(result), cfg.out)
    return EXIT_OK if result.passed else EXIT_VERIFICATION


def _reference_values(sigma: float, alpha: float, gamma: float) -> dict:
    """Closed forms for the curved two-parameter example at theta_1 = 0."""
    s2, s4 = sigma**2, sigma**4
    g_n = np.zeros((3, 3))
    g_n[0, 0] = 3.0 / (16.0 * s4) + alpha**2 / s2
    g_n[1, 1] = 1.0 / (16.0 * s4)
    g_n[2, 2] = 3.0 / (16.0 * s4)
    g_n[0, 2] = g_n[2, 0] = 1.0 / (16.0 * s4)
    c_mat = np.zeros((2, 3))
    c_mat[1, 0] = gamma * alpha
    r_diag = 16.0 * s4 * gamma**2 * alpha**2 / (12.0 + 16.0 * s2 * alpha**2)
    return {
        "J": np.eye(2) / s2,
        "Gamma": np.zeros((2, 2, 2)),
        "G_N": g_n,
        "C": c_mat,
        "unbias": 0.5 * np.eye(2),
        "R(1,1)": r_diag,
    }


def cmd_paper_example(cfg: RunConfig) -> int:
    if len(cfg.theta) != 2 or cfg.theta[0] != 0.0:
        raise ConfigError("the worked example is evaluated at theta = (0, t2)")
    model, estimator, theta = cfg.build_model()
    report = geometry_report(model, estimator, theta, cfg.pairing())
    ref = _reference_values(cfg.sigma, cfg.alpha, cfg.gamma)
    computed = {
        "J": report.J,
        "Gamma": report.Gamma,
        "G_N": report.G_N,
        "C": report.C,
        "unbias": report.unbias,
        "R(1,1)": directional_bound(report, np.array([1.0, 1.0])).R,
    }
    lines = [
        f"curved Gaussian example: sigma={cfg.sigma:g} alpha={cfg.alpha:g} "
        f"gamma={cfg.gamma:g} theta={list(cfg.theta)}",
        f"{'quantity':<10} {'max |computed - closed form|':>30}",
    ]
    worst = 0.0
    for name, value in computed.items():
        deviation = float(np.max(np.abs(np.asarray(value) - np.asarray(ref[name]))))
        worst = max(worst, deviation)
        lines.append(f"{name:<10} {deviation:>30.3e}")
    correction = exact_matrix_correction(report)
    lines.append(f"rank-1 exact correction applies: {correction.applies}")
    lines.append(f"worst deviation: {worst:.3e}")
    _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccrb",
        description="Curvature-corrected Cramer-Rao bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "geometry": cmd_geometry,
        "bound": cmd_bound,
        "sweep": cmd_sweep,
        "sdp": cmd_sdp,
        "validate": cmd_validate,
        "paper-example": cmd_paper_example,
    }
    for name, handler in commands.items():
        p = sub.add_parser(name)
        p.set_defaults(handler=handler)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--model")
        p.add_argument("--sigma", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--theta", help="comma-separated parameter point")
        p.add_argument("--backend", choices=["closed", "gh", "mc"])
        p.add_argument("--gh-order", dest="gh_order", type=int)
        p.add_argument("--mc-samples", dest="mc_samples", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--count", type=int)
        p.add_argument("--out", help="write output to this file instead of stdout")
        if name == "bound":
            p.add_argument("--v", help="comma-separated direction")
        if name == "sdp":
            p.add_argument("--toy", help="synthetic problem name (rank1)")
            p.add_argument("--a", help="toy pairing vector, comma-separated")
            p.add_argument("--c", type=float, help="toy normal Gram weight")
        if name == "validate":
            p.add_argument(
                "--with-sdp",
                dest="with_sdp",
                action="store_const",
                const=True,
                help="solve the certificate program and check its matrix bound",
            )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        return args.handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificateVerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except (PairingError, SingularInformationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
