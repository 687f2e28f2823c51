"""Measurement-feedback energy transfer on exact chain ground states.

A supplier measures a one-site Hermitian involution and broadcasts the
outcome bit; each consumer applies an outcome-conditioned local rotation
V(mu) = I cos(theta) + i (-1)^mu U sin(theta).  With theta tuned from the
ground-state coefficients (xi, eta), the branch-averaged energy drawn from
the region around each consumer equals (1/2)[sqrt(xi^2 + eta^2) - xi], and
the global ledger Tr[rho H] = E_S - sum of gains balances exactly whenever
party supports are disjoint.  A party acting on a wrong (outcome-independent)
bit can only deposit energy, never extract it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .analytic import feedback_angle_value
from .chain import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    ChainModel,
    ChainOperator,
    QuantumState,
    build_hamiltonian,
    energy_density,
    ground_state,
    site_operator,
)
from .errors import (
    ConfigError,
    DegenerateProtocolError,
    NumericalError,
    PlacementError,
)

# Pairwise site-label separation quoted for the protocol's operating regime.
LABEL_SEPARATION_MIN = 5
# Geometric floors that keep the energy identities exact: a consumer's
# movable block clears the supplier at distance 2 and other consumers at 3.
MIN_SUPPLIER_CONSUMER_DISTANCE = 2
MIN_CONSUMER_CONSUMER_DISTANCE = 3
MIN_ADVERSARY_DISTANCE = 3

PROBABILITY_FLOOR = 1e-14
INVOLUTION_TOL = 1e-12
COMPLETENESS_TOL = 1e-12
REALNESS_TOL = 1e-10
BOOKKEEPING_TOL = 1e-9
RESIDUAL_FLOOR = -1e-10

_ROLES = ("supplier", "consumer", "adversary")


@dataclass(frozen=True)
class PartyConfig:
    """One protocol party: chain site, measurement/feedback axis, role."""

    site: int
    axis: tuple[float, float, float]
    role: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ConfigError(f"role must be one of {_ROLES}, got {self.role!r}")
        if not isinstance(self.site, (int, np.integer)) or isinstance(self.site, bool):
            raise ConfigError(f"site must be an integer, got {self.site!r}")
        try:
            axis = tuple(float(x) for x in self.axis)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"axis must be a real 3-vector, got {self.axis!r}") from exc
        if len(axis) != 3:
            raise ConfigError(f"axis must be a 3-vector, got {self.axis!r}")
        norm = math.sqrt(sum(x * x for x in axis))
        if not math.isfinite(norm) or abs(norm - 1.0) > 1e-8:
            raise ConfigError(f"axis must be unit length, got |axis| = {norm}")
        object.__setattr__(self, "site", int(self.site))
        object.__setattr__(self, "axis", axis)


def reference_supplier(site: int = 0) -> PartyConfig:
    """y-axis supplier of the worked chain instance."""
    return PartyConfig(site, (0.0, 1.0, 0.0), "supplier")


def reference_consumer(site: int) -> PartyConfig:
    """x-axis consumer of the worked chain instance."""
    return PartyConfig(site, (1.0, 0.0, 0.0), "consumer")


def reference_adversary(site: int) -> PartyConfig:
    return PartyConfig(site, (1.0, 0.0, 0.0), "adversary")


def chain_distance(model: ChainModel, a: int, b: int) -> int:
    """Site separation on the model's geometry (circular when periodic)."""
    n = model.n_sites
    d = abs(a % n - b % n)
    if model.boundary == "periodic":
        d = min(d, n - d)
    return d


def validate_placement(
    model: ChainModel,
    supplier: PartyConfig,
    consumers,
    adversary: PartyConfig | None = None,
) -> None:
    """Reject party layouts that would entangle the local energy ledgers."""
    if supplier.role != "supplier":
        raise ConfigError(f"supplier config has role {supplier.role!r}")
    consumers = list(consumers)
    if not consumers:
        raise ConfigError("at least one consumer is required")
    for consumer in consumers:
        if consumer.role != "consumer":
            raise ConfigError(f"consumer config has role {consumer.role!r}")
    if adversary is not None and adversary.role != "adversary":
        raise ConfigError(f"adversary config has role {adversary.role!r}")

    parties = [supplier, *consumers]
    if adversary is not None:
        parties.append(adversary)
    for i, left in enumerate(parties):
        for right in parties[i + 1 :]:
            gap = abs(left.site - right.site)
            if gap < LABEL_SEPARATION_MIN:
                raise PlacementError(
                    f"sites {left.site} and {right.site} are {gap} labels apart;"
                    f" parties must be >= {LABEL_SEPARATION_MIN}"
                )

    for consumer in consumers:
        d = chain_distance(model, supplier.site, consumer.site)
        if d < MIN_SUPPLIER_CONSUMER_DISTANCE:
            raise PlacementError(
                f"consumer at {consumer.site} sits {d} sites from the supplier"
                f" on this chain; needs >= {MIN_SUPPLIER_CONSUMER_DISTANCE}"
            )
    for i, left in enumerate(consumers):
        for right in consumers[i + 1 :]:
            d = chain_distance(model, left.site, right.site)
            if d < MIN_CONSUMER_CONSUMER_DISTANCE:
                raise PlacementError(
                    f"consumers at {left.site} and {right.site} are {d} sites"
                    f" apart on this chain; needs >= {MIN_CONSUMER_CONSUMER_DISTANCE}"
                )
    if adversary is not None:
        for other in [supplier, *consumers]:
            d = chain_distance(model, adversary.site, other.site)
            if d < MIN_ADVERSARY_DISTANCE:
                raise PlacementError(
                    f"adversary at {adversary.site} sits {d} sites from the party"
                    f" at {other.site}; needs >= {MIN_ADVERSARY_DISTANCE}"
                )


def party_operator(n_sites: int, cfg: PartyConfig) -> ChainOperator:
    ax, ay, az = cfg.axis
    gate = ax * PAULI_X + ay * PAULI_Y + az * PAULI_Z
    return ChainOperator(n_sites, site_operator(gate, cfg.site % n_sites, n_sites))


def _require_involution(u: ChainOperator) -> None:
    m = u.matrix
    herm = (m - m.getH()).tocsr()
    if herm.nnz and float(np.abs(herm.data).max()) > INVOLUTION_TOL:
        raise ConfigError("measurement operator is not Hermitian")
    dim = m.shape[0]
    sq = (m @ m - sp.identity(dim, format="csr", dtype=m.dtype)).tocsr()
    if sq.nnz and float(np.abs(sq.data).max()) > INVOLUTION_TOL:
        raise ConfigError("measurement operator is not an involution (U @ U != I)")


def projectors(u: ChainOperator) -> tuple[ChainOperator, ChainOperator]:
    """Outcome projectors (I + (-1)^mu U)/2 for a Hermitian involution U."""
    _require_involution(u)
    dim = u.matrix.shape[0]
    ident = sp.identity(dim, format="csr", dtype=np.complex128)
    p0 = ChainOperator(u.n_sites, ((ident + u.matrix) * 0.5).tocsr())
    p1 = ChainOperator(u.n_sites, ((ident - u.matrix) * 0.5).tocsr())
    return p0, p1


@dataclass
class OutcomeEnsemble:
    """Post-measurement branches as (mu, probability, post_state) triples."""

    n_sites: int
    branches: list

    def __post_init__(self):
        total = sum(prob for _, prob, _ in self.branches)
        if abs(total - 1.0) > COMPLETENESS_TOL:
            raise NumericalError(f"branch probabilities sum to {total!r}, not 1")
        for _, _, state in self.branches:
            norm = state.trace()
            if abs(norm - 1.0) > 1e-10:
                raise NumericalError(f"post state has norm {norm!r}")

    def as_mixed(self) -> QuantumState:
        return QuantumState.mixed(
            self.n_sites, [(prob, state.vector) for _, prob, state in self.branches]
        )


def measure_supplier(
    g: QuantumState, u_s: ChainOperator, ham: ChainOperator
) -> tuple[OutcomeEnsemble, float]:
    """Project |g> onto the supplier's outcomes; returns the ensemble and E_S.

    E_S is the full average energy after the measurement, sum over mu of
    <g|P(mu) H P(mu)|g>.  Zero-probability branches are dropped rather than
    renormalized.
    """
    gvec = g.vector
    branches = []
    e_s = 0.0
    for mu, proj in zip((0, 1), projectors(u_s)):
        amp = proj.dot(gvec)
        prob = float(np.vdot(amp, amp).real)
        if prob <= PROBABILITY_FLOOR:
            continue
        e_s += float(np.vdot(amp, ham.dot(amp)).real)
        branches.append((mu, prob, QuantumState.pure(g.n_sites, amp / math.sqrt(prob))))
    return OutcomeEnsemble(g.n_sites, branches), e_s


def xi_eta(
    g: QuantumState,
    ham: ChainOperator,
    u_s_config: PartyConfig,
    u_m_config: PartyConfig,
) -> tuple[float, float]:
    """Ground-state feedback coefficients for one supplier/feedback pair.

    xi = <g|U_m H U_m|g> and eta = <g|U_S i[H, U_m]|g>.  Both must come out
    real; a residual imaginary part flags an operator-construction bug.
    """
    if u_s_config.role != "supplier":
        raise ConfigError(f"first config must have role 'supplier', got {u_s_config.role!r}")
    if u_m_config.role == "supplier":
        raise ConfigError("second config must be a consumer or adversary")
    n = ham.n_sites
    u_s = party_operator(n, u_s_config)
    u_m = party_operator(n, u_m_config)
    gvec = g.vector
    mg = u_m.dot(gvec)
    xi = complex(np.vdot(mg, ham.dot(mg)))
    udot_g = 1j * (ham.dot(mg) - u_m.dot(ham.dot(gvec)))
    eta = complex(np.vdot(u_s.dot(gvec), udot_g))
    for name, value in (("xi", xi), ("eta", eta)):
        if abs(value.imag) > REALNESS_TOL:
            raise NumericalError(f"{name} has imaginary part {value.imag:.3e}")
    return xi.real, eta.real


def feedback_angle(xi: float, eta: float) -> float:
    """Angle with cos 2theta = xi/r, sin 2theta = -eta/r; in (-pi/4, pi/4] for xi > 0."""
    if xi == 0.0 and eta == 0.0:
        raise DegenerateProtocolError("xi = eta = 0 leaves the feedback angle undefined")
    return feedback_angle_value(xi, eta)


def feedback_unitary(u_m: ChainOperator, theta: float, mu: int) -> ChainOperator:
    """V(mu) = I cos(theta) + i (-1)^mu U_m sin(theta)."""
    if mu not in (0, 1):
        raise ConfigError(f"mu must be 0 or 1, got {mu!r}")
    _require_involution(u_m)
    dim = u_m.matrix.shape[0]
    ident = sp.identity(dim, format="csr", dtype=np.complex128)
    sign = 1.0 if mu == 0 else -1.0
    matrix = (math.cos(theta) * ident + (1j * sign * math.sin(theta)) * u_m.matrix).tocsr()
    return ChainOperator(u_m.n_sites, matrix)


def _block_sites(model: ChainModel, site: int) -> list[int]:
    n = model.n_sites
    s = site % n
    if model.boundary == "periodic":
        return sorted({(s - 1) % n, s, (s + 1) % n})
    return [k for k in (s - 1, s, s + 1) if 0 <= k < n]


def local_block(model: ChainModel, site: int) -> ChainOperator:
    """Sum of the energy densities a one-site rotation at `site` can move."""
    terms = [energy_density(model, k) for k in _block_sites(model, site)]
    block = terms[0]
    for term in terms[1:]:
        block = block + term
    return block


@dataclass
class ConsumerReport:
    site: int
    xi: float
    eta: float
    theta: float
    e_m_pred: float
    e_m_meas: float

    def to_doc(self) -> dict:
        return {
            "site": self.site,
            "xi": self.xi,
            "eta": self.eta,
            "theta": self.theta,
            "e_m_pred": self.e_m_pred,
            "e_m_meas": self.e_m_meas,
        }


@dataclass
class ProtocolReport:
    """Energy ledger for one run; construction re-checks the books."""

    e_s: float
    consumers: list
    e_c: float
    residual_total: float
    adversary_deposit: float | None = None

    def __post_init__(self):
        if self.e_s < -1e-12:
            raise NumericalError(f"supplier energy {self.e_s} is negative")
        for entry in self.consumers:
            if entry.e_m_pred < -1e-12:
                raise NumericalError(
                    f"predicted gain {entry.e_m_pred} at site {entry.site} is negative"
                )
        if self.residual_total < RESIDUAL_FLOOR:
            raise NumericalError(
                f"final energy {self.residual_total} below {RESIDUAL_FLOOR}"
            )
        ledger_gap = self.residual_total - (
            self.e_s - sum(entry.e_m_meas for entry in self.consumers)
        )
        if abs(ledger_gap) > BOOKKEEPING_TOL:
            raise NumericalError(f"energy ledger off by {ledger_gap:.3e}")

    def to_doc(self) -> dict:
        return {
            "e_s": self.e_s,
            "consumers": [entry.to_doc() for entry in self.consumers],
            "e_c": self.e_c,
            "residual_total": self.residual_total,
            "adversary_deposit": self.adversary_deposit,
        }


def run_qed(model: ChainModel, supplier: PartyConfig, consumers) -> ProtocolReport:
    """Measure, broadcast, rotate each consumer; return the full energy ledger.

    Per-consumer gain is the branch-averaged drop in that consumer's local
    block energy over the feedback step; residual_total is the average energy
    of the final state under the calibrated Hamiltonian.
    """
    consumers = list(consumers)
    validate_placement(model, supplier, consumers)
    g = ground_state(model)
    ham = build_hamiltonian(model)
    n = model.n_sites

    u_s = party_operator(n, supplier)
    ensemble, e_s = measure_supplier(g, u_s, ham)

    coeffs = []
    for consumer in consumers:
        xi, eta = xi_eta(g, ham, supplier, consumer)
        theta = feedback_angle(xi, eta)
        e_pred = 0.5 * (math.hypot(xi, eta) - xi)
        coeffs.append((consumer, xi, eta, theta, e_pred))

    blocks = [local_block(model, consumer.site) for consumer in consumers]
    gains = [0.0] * len(consumers)
    final = []
    for mu, prob, state in ensemble.branches:
        vec = state.vector
        before = [float(np.vdot(vec, block.dot(vec)).real) for block in blocks]
        out = vec
        for consumer, _, _, theta, _ in coeffs:
            v_mu = feedback_unitary(party_operator(n, consumer), theta, mu)
            out = v_mu.dot(out)
        after = [float(np.vdot(out, block.dot(out)).real) for block in blocks]
        for i in range(len(consumers)):
            gains[i] += prob * (before[i] - after[i])
        final.append((prob, out))

    residual_total = sum(
        prob * float(np.vdot(out, ham.dot(out)).real) for prob, out in final
    )
    entries = [
        ConsumerReport(consumer.site, xi, eta, theta, e_pred, gains[i])
        for i, (consumer, xi, eta, theta, e_pred) in enumerate(coeffs)
    ]
    return ProtocolReport(
        e_s=e_s,
        consumers=entries,
        e_c=sum(gains),
        residual_total=residual_total,
    )


def run_qet(model: ChainModel, supplier: PartyConfig, consumer: PartyConfig) -> ProtocolReport:
    """Single-consumer run; identical to run_qed with a one-element list."""
    return run_qed(model, supplier, [consumer])


def adversary_energy(
    model: ChainModel,
    supplier: PartyConfig,
    consumers,
    adversary: PartyConfig,
    theta_d: float | None = None,
    mu_prime: int | None = None,
) -> float:
    """Average energy parked at a party rotating on a guessed outcome bit.

    The guess mu' is uniform and independent of the broadcast bit, so around
    the adversary the pre-rotation state is still locally the ground state;
    the returned block energy is nonnegative for every angle and strictly
    positive when theta_d != 0.  theta_d defaults to the tuned angle of the
    nearest consumer (the strongest impersonation attempt); mu_prime fixes
    one guess instead of averaging both.
    """
    consumers = list(consumers)
    validate_placement(model, supplier, consumers, adversary)
    g = ground_state(model)
    ham = build_hamiltonian(model)
    n = model.n_sites

    if theta_d is None:
        nearest = min(consumers, key=lambda c: chain_distance(model, adversary.site, c.site))
        xi_n, eta_n = xi_eta(g, ham, supplier, nearest)
        theta_d = feedback_angle(xi_n, eta_n)

    if mu_prime is None:
        guesses = (0, 1)
    elif mu_prime in (0, 1):
        guesses = (mu_prime,)
    else:
        raise ConfigError(f"mu_prime must be 0, 1 or None, got {mu_prime!r}")

    u_s = party_operator(n, supplier)
    ensemble, _ = measure_supplier(g, u_s, ham)
    block = local_block(model, adversary.site)
    u_d = party_operator(n, adversary)
    weight = 1.0 / len(guesses)

    deposit = 0.0
    for _, prob, state in ensemble.branches:
        for guess in guesses:
            v_guess = feedback_unitary(u_d, float(theta_d), guess)
            out = v_guess.dot(state.vector)
            deposit += prob * weight * float(np.vdot(out, block.dot(out)).real)
    return deposit
