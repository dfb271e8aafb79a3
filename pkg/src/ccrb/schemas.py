"""JSON schemas for every machine-readable document the CLI emits."""

from __future__ import annotations

import jsonschema

__all__ = ["SCHEMAS", "validate_document"]

_NUMBER = {"type": "number"}
_VECTOR = {"type": "array", "items": _NUMBER}
_MATRIX = {"type": "array", "items": _VECTOR}
_TENSOR3 = {"type": "array", "items": _MATRIX}

GEOMETRY_SCHEMA = {
    "type": "object",
    "required": ["theta", "J", "G", "Gamma", "b", "G_N", "C", "unbias", "meta"],
    "additionalProperties": False,
    "properties": {
        "theta": _VECTOR,
        "J": _MATRIX,
        "G": _MATRIX,
        "Gamma": _TENSOR3,
        "b": _MATRIX,
        "G_N": _MATRIX,
        "C": _MATRIX,
        "unbias": _MATRIX,
        "meta": {
            "type": "object",
            "required": ["spec_version", "backend"],
            "properties": {
                "spec_version": {"const": 1},
                "backend": {"type": "string"},
            },
        },
    },
}

BOUND_SCHEMA = {
    "type": "object",
    "required": ["spec_version", "v", "v_tilde", "N", "D", "R", "degenerate"],
    "additionalProperties": False,
    "properties": {
        "spec_version": {"const": 1},
        "v": _VECTOR,
        "v_tilde": _VECTOR,
        "N": _NUMBER,
        "D": _NUMBER,
        "R": _NUMBER,
        "degenerate": {"type": "boolean"},
    },
}

CERTIFICATE_SCHEMA = {
    "type": "object",
    "required": ["spec_version", "Delta", "S", "objective", "residual", "status"],
    "additionalProperties": False,
    "properties": {
        "spec_version": {"const": 1},
        "Delta": _MATRIX,
        "S": _MATRIX,
        "objective": _NUMBER,
        "residual": _NUMBER,
        "status": {"enum": ["optimal", "max_iter", "infeasible_numerics"]},
    },
}

VALIDATION_SCHEMA = {
    "type": "object",
    "required": [
        "spec_version",
        "sigma_hat",
        "standard_errors",
        "sample_count",
        "sigma_source",
        "tolerance",
        "classical_margin",
        "matrix_margin",
        "directional_slacks",
        "mean_bias",
        "mean_bias_se",
        "passed",
        "checks",
        "warnings",
    ],
    "additionalProperties": False,
    "properties": {
        "spec_version": {"const": 1},
        "sigma_hat": _MATRIX,
        "standard_errors": _MATRIX,
        "sample_count": {"type": "integer"},
        "sigma_source": {"enum": ["closed_form", "monte_carlo"]},
        "tolerance": _NUMBER,
        "classical_margin": _NUMBER,
        "matrix_margin": _NUMBER,
        "directional_slacks": {"type": "object"},
        "mean_bias": _VECTOR,
        "mean_bias_se": _VECTOR,
        "passed": {"type": "boolean"},
        "checks": {"type": "object"},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}

SCHEMAS = {
    "geometry": GEOMETRY_SCHEMA,
    "bound": BOUND_SCHEMA,
    "certificate": CERTIFICATE_SCHEMA,
    "validation": VALIDATION_SCHEMA,
}


def validate_document(kind: str, doc: dict) -> None:
    """Raise jsonschema.ValidationError if ``doc`` breaks its contract."""
    jsonschema.validate(doc, SCHEMAS[kind])
