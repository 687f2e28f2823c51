"""Exact finite transverse-field Ising chains with calibrated energy densities.

The chain Hamiltonian is

    H = -h sum_n sigma_n^z - J sum_n sigma_n^x sigma_{n+1}^x - E_g

with h >= J >= 0, so the calibrated ground-state energy is zero and the
per-site energy densities T_n (which sum to H) all have zero ground-state
expectation.  Sites are encoded little-endian: site n owns bit n of the
computational-basis index.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError

DENSE_MAX_SITES = 10
DEFAULT_MAX_SITES = 20
CAPACITY_ENV_VAR = "QETLAB_MAX_SITES"

GROUND_RESIDUAL_TOL = 1e-9
GAP_FLOOR = 1e-8

_ID2 = sp.identity(2, format="csr", dtype=np.float64)
_SX = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
_SY = sp.csr_matrix(np.array([[0.0, -1.0j], [1.0j, 0.0]]))
_SZ = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


def max_sites() -> int:
    raw = os.environ.get(CAPACITY_ENV_VAR)
    if raw is None:
        return DEFAULT_MAX_SITES
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{CAPACITY_ENV_VAR} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"{CAPACITY_ENV_VAR} must be >= 1, got {value}")
    return value


@dataclass(frozen=True)
class ChainModel:
    """Validated chain parameters.  Instances are hashable cache keys."""

    n_sites: int
    h: float
    j: float
    boundary: str = "periodic"

    @property
    def lam(self) -> float:
        return self.j / self.h


@dataclass
class ChainOperator:
    """Sparse operator on the full 2^N Hilbert space."""

    n_sites: int
    matrix: sp.csr_matrix

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def dot(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix.dot(vec)

    def adjoint(self) -> "ChainOperator":
        return ChainOperator(self.n_sites, self.matrix.conjugate().transpose().tocsr())

    def __add__(self, other: "ChainOperator") -> "ChainOperator":
        if self.n_sites != other.n_sites:
            raise ConfigError("operator size mismatch")
        return ChainOperator(self.n_sites, (self.matrix + other.matrix).tocsr())

    def __sub__(self, other: "ChainOperator") -> "ChainOperator":
        if self.n_sites != other.n_sites:
            raise ConfigError("operator size mismatch")
        return ChainOperator(self.n_sites, (self.matrix - other.matrix).tocsr())

    def __matmul__(self, other: "ChainOperator") -> "ChainOperator":
        if self.n_sites != other.n_sites:
            raise ConfigError("operator size mismatch")
        return ChainOperator(self.n_sites, (self.matrix @ other.matrix).tocsr())

    def scaled(self, factor: complex) -> "ChainOperator":
        return ChainOperator(self.n_sites, (self.matrix * factor).tocsr())


class QuantumState:
    """Pure state vector or a mixed state stored as weighted pure branches.

    Mixed states are never materialized as 2^N x 2^N density matrices in
    computations; ``density()`` exists for small-N cross-checks only.
    """

    __slots__ = ("n_sites", "kind", "branches")

    def __init__(self, n_sites, kind, branches):
        self.n_sites = int(n_sites)
        self.kind = kind
        self.branches = [(float(w), np.asarray(v, dtype=np.complex128)) for w, v in branches]

    @classmethod
    def pure(cls, n_sites: int, vector: np.ndarray) -> "QuantumState":
        return cls(n_sites, "pure", [(1.0, vector)])

    @classmethod
    def mixed(cls, n_sites: int, branches) -> "QuantumState":
        return cls(n_sites, "mixed", branches)

    @property
    def vector(self) -> np.ndarray:
        if self.kind != "pure":
            raise ConfigError("mixed state has no single vector")
        return self.branches[0][1]

    def trace(self) -> float:
        return float(sum(w * float(np.vdot(v, v).real) for w, v in self.branches))

    def density(self) -> np.ndarray:
        if self.n_sites > 12:
            raise NumericalError("density matrix materialization capped at 12 sites")
        dim = 2**self.n_sites
        rho = np.zeros((dim, dim), dtype=np.complex128)
        for w, v in self.branches:
            rho += w * np.outer(v, v.conj())
        return rho


def build_model(n_sites: int, h: float, j: float, boundary: str = "periodic") -> ChainModel:
    """Validate parameters and return an immutable model handle."""
    if not isinstance(n_sites, (int, np.integer)) or isinstance(n_sites, bool):
        raise ConfigError(f"n_sites must be an integer, got {n_sites!r}")
    n_sites = int(n_sites)
    if n_sites < 1:
        raise ConfigError(f"n_sites must be >= 1, got {n_sites}")
    cap = max_sites()
    if n_sites > cap:
        raise ConfigError(
            f"n_sites={n_sites} exceeds capacity {cap}"
            f" (override with {CAPACITY_ENV_VAR})"
        )
    h = float(h)
    j = float(j)
    if not np.isfinite(h) or h <= 0.0:
        raise ConfigError(f"h must be finite and > 0, got {h}")
    if not np.isfinite(j) or j < 0.0:
        raise ConfigError(f"J must be finite and >= 0, got {j}")
    if j > h:
        raise ConfigError(f"J <= h required (got J={j}, h={h}); J > h is out of scope")
    if boundary not in ("periodic", "open"):
        raise ConfigError(f"boundary must be 'periodic' or 'open', got {boundary!r}")
    return ChainModel(n_sites, h, j, boundary)


def site_operator(gate: np.ndarray, site: int, n_sites: int) -> sp.csr_matrix:
    """Embed a 2x2 gate at a site (little-endian bit order)."""
    left = sp.identity(2 ** (n_sites - 1 - site), format="csr", dtype=gate.dtype)
    right = sp.identity(2**site, format="csr", dtype=gate.dtype)
    return sp.kron(left, sp.kron(sp.csr_matrix(gate), right, format="csr"), format="csr")


def apply_single_site(vec: np.ndarray, gate: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Apply a 2x2 gate to one site of a state vector without building 2^N ops."""
    shaped = vec.reshape(2 ** (n_sites - 1 - site), 2, 2**site)
    out = np.einsum("ab,xby->xay", gate, shaped)
    return np.ascontiguousarray(out).reshape(vec.shape)


def _reduce_site(site: int, n_sites: int) -> int:
    return int(site) % n_sites


def _bonds(model: ChainModel) -> list[tuple[int, int]]:
    n = model.n_sites
    if n == 1:
        return []
    if model.boundary == "periodic":
        return [(i, (i + 1) % n) for i in range(n)]
    return [(i, i + 1) for i in range(n - 1)]


def _neighbors(model: ChainModel, site: int) -> list[int]:
    n = model.n_sites
    if n == 1:
        return []
    if model.boundary == "periodic":
        return [(site - 1) % n, (site + 1) % n]
    return [m for m in (site - 1, site + 1) if 0 <= m < n]


@functools.lru_cache(maxsize=64)
def _raw_hamiltonian(model: ChainModel) -> sp.csr_matrix:
    n = model.n_sites
    dim = 2**n
    ham = sp.csr_matrix((dim, dim), dtype=np.float64)
    sx = _SX.toarray()
    sz = _SZ.toarray()
    for site in range(n):
        ham = ham - model.h * site_operator(sz, site, n)
    for a, b in _bonds(model):
        ham = ham - model.j * (site_operator(sx, a, n) @ site_operator(sx, b, n))
    return ham.tocsr()


@functools.lru_cache(maxsize=64)
def _solve(model: ChainModel) -> tuple[float, np.ndarray, float]:
    """Ground energy, phase-fixed ground vector, spectral gap."""
    ham = _raw_hamiltonian(model)
    n = model.n_sites
    if n <= DENSE_MAX_SITES:
        vals, vecs = np.linalg.eigh(ham.toarray())
        e0, e1 = float(vals[0]), float(vals[1])
        gvec = vecs[:, 0].astype(np.complex128)
    else:
        # Fixed positive v0: the z-basis Hamiltonian has nonpositive
        # off-diagonal entries, so the ground vector is sign-uniform and
        # overlaps the uniform start vector; makes ARPACK runs reproducible.
        dim = 2**n
        v0 = np.full(dim, dim**-0.5)
        vals, vecs = spla.eigsh(ham, k=2, which="SA", v0=v0)
        order = np.argsort(vals)
        e0, e1 = float(vals[order[0]]), float(vals[order[1]])
        gvec = vecs[:, order[0]].astype(np.complex128)

    gap = e1 - e0
    if gap < GAP_FLOOR:
        raise NumericalError(f"spectral gap {gap:.3e} below floor {GAP_FLOOR:.0e}")

    residual = float(np.linalg.norm(ham.dot(gvec) - e0 * gvec))
    if residual > GROUND_RESIDUAL_TOL:
        raise NumericalError(f"ground-state residual {residual:.3e} exceeds {GROUND_RESIDUAL_TOL:.0e}")

    # Phase convention: the largest-magnitude amplitude is made real positive.
    idx = int(np.argmax(np.abs(gvec)))
    phase = gvec[idx] / abs(gvec[idx])
    gvec = gvec * np.conj(phase)
    gvec.setflags(write=False)
    return e0, gvec, gap


def raw_ground_energy(model: ChainModel) -> float:
    """Uncalibrated ground energy E_g (the constant subtracted from H)."""
    return _solve(model)[0]


def spectral_gap(model: ChainModel) -> float:
    return _solve(model)[2]


def ground_state(model: ChainModel) -> QuantumState:
    """Phase-fixed ground state; repeated calls return identical amplitudes."""
    _, gvec, _ = _solve(model)
    return QuantumState.pure(model.n_sites, gvec.copy())


def build_hamiltonian(model: ChainModel) -> ChainOperator:
    """Calibrated Hamiltonian H = H_raw - E_g, positive semidefinite with H|g> = 0."""
    ham = _raw_hamiltonian(model)
    e0 = raw_ground_energy(model)
    dim = 2**model.n_sites
    return ChainOperator(model.n_sites, (ham - e0 * sp.identity(dim, format="csr")).tocsr())


def _bare_energy_density(model: ChainModel, site: int) -> sp.csr_matrix:
    n = model.n_sites
    sx = _SX.toarray()
    sz = _SZ.toarray()
    term = -model.h * site_operator(sz, site, n)
    for nb in _neighbors(model, site):
        term = term - 0.5 * model.j * (site_operator(sx, site, n) @ site_operator(sx, nb, n))
    return term.tocsr()


@functools.lru_cache(maxsize=512)
def _epsilon(model: ChainModel, site: int) -> float:
    _, gvec, _ = _solve(model)
    bare = _bare_energy_density(model, site)
    val = np.vdot(gvec, bare.dot(gvec))
    return float(val.real)


def energy_density(model: ChainModel, n: int) -> ChainOperator:
    """Calibrated T_n with <g|T_n|g> = 0; supported on sites {n-1, n, n+1}."""
    site = _reduce_site(n, model.n_sites)
    bare = _bare_energy_density(model, site)
    eps = _epsilon(model, site)
    dim = 2**model.n_sites
    return ChainOperator(model.n_sites, (bare - eps * sp.identity(dim, format="csr")).tocsr())


def local_pauli(model: ChainModel, site: int, unit_vector) -> ChainOperator:
    """n-hat . sigma at one site: a Hermitian involution with eigenvalues +-1."""
    vec = np.asarray(unit_vector, dtype=np.float64)
    if vec.shape != (3,):
        raise ConfigError(f"axis must be a 3-vector, got shape {vec.shape}")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > 1e-8:
        raise ConfigError(f"axis must be unit length, got |axis| = {norm}")
    site = _reduce_site(site, model.n_sites)
    gate = vec[0] * PAULI_X + vec[1] * PAULI_Y + vec[2] * PAULI_Z
    return ChainOperator(model.n_sites, site_operator(gate, site, model.n_sites))


REALNESS_TOL = 1e-10


def expectation(state: QuantumState, op: ChainOperator) -> float:
    """Real expectation value; a residual imaginary part above 1e-10 is an error."""
    if state.n_sites != op.n_sites:
        raise ConfigError("state/operator size mismatch")
    total = 0.0 + 0.0j
    for w, v in state.branches:
        total += w * np.vdot(v, op.matrix.dot(v))
    if abs(total.imag) > REALNESS_TOL:
        raise NumericalError(f"expectation has imaginary part {total.imag:.3e}")
    return float(total.real)


def clear_caches() -> None:
    _raw_hamiltonian.cache_clear()
    _solve.cache_clear()
    _epsilon.cache_clear()
