"""JSON-safe encodings for chain states and run documents."""

from __future__ import annotations

import base64
import json

import numpy as np

from .chain import QuantumState
from .errors import ConfigError

# numpy's '<c16' = little-endian complex128, row-major; fixed so encoded
# states are portable across hosts
_VECTOR_DTYPE = "<c16"


def vector_to_b64(vec: np.ndarray) -> str:
    data = np.ascontiguousarray(np.asarray(vec, dtype=_VECTOR_DTYPE))
    return base64.b64encode(data.tobytes()).decode("ascii")


def vector_from_b64(text: str, expected_len: int | None = None) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise ConfigError(f"vector payload is not valid base64: {exc}") from exc
    if len(raw) % 16 != 0:
        raise ConfigError("vector payload length is not a multiple of 16 bytes")
    vec = np.frombuffer(raw, dtype=_VECTOR_DTYPE).astype(np.complex128)
    if expected_len is not None and vec.shape[0] != expected_len:
        raise ConfigError(f"vector has {vec.shape[0]} amplitudes, expected {expected_len}")
    return vec


def state_to_doc(state: QuantumState) -> dict:
    return {
        "n_sites": state.n_sites,
        "kind": state.kind,
        "branches": [
            {"weight": float(w), "vector_b64": vector_to_b64(v)} for w, v in state.branches
        ],
    }


def state_from_doc(doc: dict) -> QuantumState:
    try:
        n = int(doc["n_sites"])
        kind = doc["kind"]
        raw_branches = doc["branches"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed state document: missing {exc}") from exc
    if kind not in ("pure", "mixed"):
        raise ConfigError(f"unknown state kind {kind!r}")
    dim = 2**n
    branches = [
        (float(b["weight"]), vector_from_b64(b["vector_b64"], dim)) for b in raw_branches
    ]
    if kind == "pure" and len(branches) != 1:
        raise ConfigError("pure state document must hold exactly one branch")
    return QuantumState(n, kind, branches)


def canonical_json(doc) -> str:
    """Stable single-line rendering; equal documents give equal bytes."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
