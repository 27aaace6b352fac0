"""Model files (JSON) and canonical serialization.

A model file holds exactly one of ``replacement_matrix`` (a ``K x K``
list of rows) or ``spectral_spec`` (``combination`` plus ``blocks`` with
``kind``, ``lambda_r``, ``lambda_c``, ``d`` and ``columns``), and optionally
``initial_state`` and ``epsilon_critical``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blocks import SpectralSpec
from .errors import InputError, ParseError
from .spectrum import DEFAULT_EPSILON, UrnModel, model_from_matrix, model_from_spectral_spec

_KEYS = {"replacement_matrix", "spectral_spec", "initial_state", "epsilon_critical", "name", "description"}


def _finite(obj):
    # JSON has no inf/nan; spell them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(_finite(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class ModelFile:
    """Parsed model document and the model built from it."""

    document: dict
    model: UrnModel

    @property
    def hash(self) -> str:
        return digest(self.document)


def parse_model(document: dict, tol: float = 1e-6) -> ModelFile:
    """Validate a model document and build the model."""
    if not isinstance(document, dict):
        raise ParseError("model document must be a JSON object")
    unknown = set(document) - _KEYS
    if unknown:
        raise ParseError(f"unknown model keys: {sorted(unknown)}")
    has_r = "replacement_matrix" in document
    has_s = "spectral_spec" in document
    if has_r == has_s:
        raise ParseError("model needs exactly one of 'replacement_matrix' or 'spectral_spec'")
    eps = document.get("epsilon_critical", DEFAULT_EPSILON)
    if not isinstance(eps, (int, float)) or isinstance(eps, bool) or not eps >= 0:
        raise ParseError("'epsilon_critical' must be a nonnegative number")
    W0 = document.get("initial_state")
    if W0 is not None and (not isinstance(W0, list) or not all(_is_number(x) for x in W0)):
        raise ParseError("'initial_state' must be a list of numbers")
    if has_r:
        R = document["replacement_matrix"]
        if not isinstance(R, list) or not all(isinstance(r, list) and all(_is_number(x) for x in r) for r in R):
            raise ParseError("'replacement_matrix' must be a list of numeric rows")
        if len({len(r) for r in R}) != 1 or len(R) != len(R[0]):
            raise ParseError("'replacement_matrix' must be square")
        model = model_from_matrix(np.array(R, dtype=float), W0, float(eps), tol)
    else:
        raw = document["spectral_spec"]
        try:
            spec = SpectralSpec.from_dict(raw)
        except (KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"malformed 'spectral_spec': {exc!r}") from None
        except ValueError as exc:
            if isinstance(exc, InputError):
                raise
            raise ParseError(f"malformed 'spectral_spec': {exc}") from None
        model = model_from_spectral_spec(spec, W0, float(eps))
    return ModelFile(document, model)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def load_model(path, tol: float = 1e-6) -> ModelFile:
    """Read and parse a model file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read model file {path}: {exc.strerror}") from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc}") from None
    return parse_model(document, tol)


def model_document(model: UrnModel) -> dict:
    """Document describing a model built in code (spectral form, lossless)."""
    return {
        "spectral_spec": model.spec.to_dict(),
        "initial_state": [float(x) for x in model.initial_state],
        "epsilon_critical": model.epsilon,
    }
