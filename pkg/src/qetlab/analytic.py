"""Closed-form and quadrature evaluation of infinite-chain correlators and energies.

The x-x correlator G(n) is the single combined integral

    G(n) = (1/pi) int_0^pi [cos(kn) + lambda cos(k(n+1))] / sqrt(1 + lambda^2 + 2 lambda cos k) dk

and the y-y correlator Delta(n) is the n x n Toeplitz determinant with entry
(i, j) = G(i - j + 1).  At the critical ratio lambda = 1 both have closed
forms, which the quadrature and determinant routes are tested against.
All energies are returned in units where the field strength h carries the scale.
"""

from __future__ import annotations

import functools
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigError

C_ASYMPTOTIC = 1.28  # known to 3 significant figures only
DELTA_N_MAX_DEFAULT = 200
QUAD_ABS_TOL = 1e-13
E_C_SPACING = 5
E_C_TAIL_TOL = 1e-12  # relative to h


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def l_fn(n: int, lam: float) -> float:
    """Single-term integral L(n); log-divergent at lambda = 1, so refused there."""
    lam = _check_lambda(lam)
    if lam == 1.0:
        raise ConfigError("L(n) diverges at lambda = 1; use g_fn (the combined integral)")

    def integrand(k):
        return math.cos(k * n) / math.sqrt(1.0 + lam * lam + 2.0 * lam * math.cos(k))

    val, _ = integrate.quad(integrand, 0.0, math.pi, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL, limit=400)
    return val / math.pi


@functools.lru_cache(maxsize=None)
def g_fn(n: int, lam: float) -> float:
    """x-x neighbour correlator G(n) by adaptive quadrature."""
    lam = _check_lambda(lam)
    n = int(n)
    if lam == 0.0:
        # Integrand reduces to cos(kn); exact so downstream determinants and
        # feedback gains vanish identically rather than at quadrature noise.
        return 1.0 if n == 0 else 0.0
    if lam == 1.0:
        # The endpoint singularity cancels: numerator and denominator share a
        # cos(k/2) factor, leaving cos((2n+1)k/2).
        half_order = n + 0.5

        def integrand(k):
            return math.cos(half_order * k)

    else:

        def integrand(k):
            return (math.cos(k * n) + lam * math.cos(k * (n + 1))) / math.sqrt(
                1.0 + lam * lam + 2.0 * lam * math.cos(k)
            )

    val, _ = integrate.quad(integrand, 0.0, math.pi, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL, limit=400)
    return val / math.pi


def g_critical(n: int) -> float:
    """Closed form of G(n) at lambda = 1: (2/pi) (-1)^n / (2n+1)."""
    n = int(n)
    sign = 1.0 if n % 2 == 0 else -1.0
    return (2.0 / math.pi) * sign / (2 * n + 1)


def _g_values(lam: float, lo: int, hi: int) -> dict[int, float]:
    return {n: g_fn(n, lam) for n in range(lo, hi + 1)}


def delta_fn(n: int, lam: float, n_max: int = DELTA_N_MAX_DEFAULT) -> float:
    """y-y correlator Delta(n): n x n Toeplitz determinant in G entries.

    Computed by pivoted LU with log-magnitude accumulation (slogdet); the 1 x 1
    case returns G(1) itself so that Delta(1) = G(1) holds exactly.
    """
    lam = _check_lambda(lam)
    n = int(n)
    if n < 1:
        raise ConfigError(f"Delta(n) requires n >= 1, got {n}")
    if n > n_max:
        raise ConfigError(f"Delta(n) capped at n_max={n_max}, got {n}")
    if n == 1:
        return g_fn(1, lam)
    g = _g_values(lam, 2 - n, n)
    first_col = np.array([g[i + 1] for i in range(n)])
    first_row = np.array([g[1 - j] for j in range(n)])
    matrix = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            matrix[i, j] = first_col[i - j] if i >= j else first_row[j - i]
    sign, logdet = np.linalg.slogdet(matrix)
    if sign == 0.0:
        return 0.0
    return float(sign * math.exp(logdet))


def _log_h(n: int) -> float:
    # log of h(n) = prod_{k=1}^{n-1} k^(n-k)
    if n <= 2:
        return 0.0
    ks = np.arange(1.0, n)
    return float(np.dot(n - ks, np.log(ks)))


def delta_critical_closed(n: int) -> float:
    """Closed form of Delta(n) at lambda = 1, evaluated in the log domain.

    |Delta(n)| = (2/pi)^n 2^{2n(n-1)} h(n)^4 / ((4n^2-1) h(2n)); the sign is -1
    for every n >= 1.
    """
    n = int(n)
    if n < 1:
        raise ConfigError(f"Delta(n) requires n >= 1, got {n}")
    log_mag = (
        n * math.log(2.0 / math.pi)
        + 2.0 * n * (n - 1) * math.log(2.0)
        + 4.0 * _log_h(n)
        - math.log(4.0 * n * n - 1.0)
        - _log_h(2 * n)
    )
    return -math.exp(log_mag)


def delta_asymptotic(n: int, c: float = C_ASYMPTOTIC) -> float:
    """Large-n envelope of Delta(n) at lambda = 1: -1/4 e^{1/4} 2^{1/12} c^-3 n^{-9/4}."""
    if n < 1:
        raise ConfigError(f"Delta(n) requires n >= 1, got {n}")
    prefactor = -0.25 * math.exp(0.25) * 2.0 ** (1.0 / 12.0) / c**3
    return prefactor * float(n) ** -2.25


def e_b_closed(xi: float, eta: float) -> float:
    """Consumer gain 1/2 [sqrt(xi^2 + eta^2) - xi]."""
    return 0.5 * (math.hypot(xi, eta) - xi)


def e_b_asymptotic(d: int, h: float = 1.0, c: float = C_ASYMPTOTIC) -> float:
    """Large-distance envelope of E_B at lambda = 1: (pi h / 4) Delta_asym(d)^2."""
    return 0.25 * math.pi * h * delta_asymptotic(d, c) ** 2


def feedback_angle_value(xi: float, eta: float) -> float:
    # shared with the protocol engine; kept here so tables are self-contained
    if eta == 0.0:
        return 0.0
    return 0.5 * math.atan2(-eta, xi)


@dataclass
class CorrelatorTable:
    lam: float
    entries: dict[int, float]
    delta: dict[int, float]
    eps: float
    provenance: str

    def to_doc(self) -> dict:
        return {
            "lambda": self.lam,
            "entries": {str(n): v for n, v in sorted(self.entries.items())},
            "delta": {str(n): v for n, v in sorted(self.delta.items())},
            "eps": self.eps,
            "provenance": self.provenance,
        }


@dataclass
class EnergyTable:
    h: float
    lam: float
    e_a: float
    e_r: float
    xi: float
    e_c: float
    e_c_truncation_index: int
    rows: list[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "h": self.h,
            "lambda": self.lam,
            "e_a": self.e_a,
            "e_r": self.e_r,
            "xi": self.xi,
            "e_c": self.e_c,
            "e_c_truncation_index": self.e_c_truncation_index,
            "rows": self.rows,
        }


def correlator_table(lam: float, n_min: int, n_max: int, provenance: str = "quadrature") -> CorrelatorTable:
    """G(n) over [n_min, n_max] plus Delta(n) for the positive n in range."""
    lam = _check_lambda(lam)
    if n_min > n_max:
        raise ConfigError(f"empty index range [{n_min}, {n_max}]")
    if provenance not in ("quadrature", "critical-closed-form"):
        raise ConfigError(f"unknown provenance {provenance!r}")
    if provenance == "critical-closed-form":
        if lam != 1.0:
            raise ConfigError("closed-form provenance requires lambda = 1")
        entries = {n: g_critical(n) for n in range(n_min, n_max + 1)}
        delta = {n: delta_critical_closed(n) for n in range(1, n_max + 1)}
    else:
        entries = {n: g_fn(n, lam) for n in range(n_min, n_max + 1)}
        delta = {n: delta_fn(n, lam) for n in range(1, n_max + 1)}
    g0 = entries[0] if 0 in entries else g_fn(0, lam)
    gm1 = entries[-1] if -1 in entries else g_fn(-1, lam)
    eps = -(g0 + lam * gm1)
    return CorrelatorTable(lam=lam, entries=entries, delta=delta, eps=eps, provenance=provenance)


def _delta_for_energy(d: int, lam: float) -> float:
    # The critical point gets the closed form (exact at any distance, which the
    # spaced-consumer sum needs); away from it the determinant route applies.
    if lam == 1.0:
        return delta_critical_closed(d)
    return delta_fn(d, lam)


def _e_c_sum(h: float, lam: float, xi: float) -> tuple[float, int]:
    """Total consumer gain for parties spaced E_C_SPACING apart on both sides.

    Terms are added for m = 1, 2, ... (each counted twice, once per side)
    until the tail bound drops below E_C_TAIL_TOL * h.
    """
    tail_tol = E_C_TAIL_TOL * h
    prefactor = 0.25 * math.pi * h  # small-Delta gain: (pi h / 4) Delta^2
    total = 0.0
    m = 0
    while True:
        m += 1
        d = E_C_SPACING * m
        eta = 2.0 * h * _delta_for_energy(d, lam)
        total += 2.0 * e_b_closed(xi, eta)
        if lam == 1.0:
            # integral bound on sum_{m' > m} of the asymptotic envelope,
            # doubled for both sides and padded for the envelope error
            envelope = 2.0 * prefactor * delta_asymptotic(E_C_SPACING * m) ** 2
            tail = 2.0 * envelope * m / 7.0 * 2.0
            if tail < tail_tol:
                break
        else:
            if 2.0 * e_b_closed(xi, eta) < 0.5 * tail_tol or m >= 64:
                break
    return total, m


def analytic_energies(h: float, lam: float, distances) -> EnergyTable:
    """Infinite-chain energy ledger: E_A, xi, eta(d), theta(d), E_B(d), E_C, E_r."""
    lam = _check_lambda(lam)
    h = float(h)
    if not math.isfinite(h) or h <= 0.0:
        raise ConfigError(f"h must be finite and > 0, got {h}")
    distances = [int(d) for d in distances]
    if any(d < 1 for d in distances):
        raise ConfigError("distances must be >= 1")

    j = lam * h
    if lam == 1.0:
        g0, gm1 = g_critical(0), g_critical(-1)
    else:
        g0, gm1 = g_fn(0, lam), g_fn(-1, lam)
    e_a = h * g0 + 2.0 * j * gm1
    e_r = h * (g0 - 1.0) + 2.0 * j * gm1
    xi = 2.0 * h * g0

    rows = []
    for d in distances:
        eta = 2.0 * h * _delta_for_energy(d, lam)
        theta = feedback_angle_value(xi, eta)
        row = {
            "d": d,
            "xi": xi,
            "eta": eta,
            "theta": theta,
            "e_b": e_b_closed(xi, eta),
            "e_b_asym": e_b_asymptotic(d, h) if lam == 1.0 else None,
        }
        rows.append(row)

    e_c, m_trunc = _e_c_sum(h, lam, xi)
    return EnergyTable(
        h=h,
        lam=lam,
        e_a=e_a,
        e_r=e_r,
        xi=xi,
        e_c=e_c,
        e_c_truncation_index=m_trunc,
        rows=rows,
    )


def log_log_slope(xs, ys) -> float:
    """Least-squares slope of log|y| against log x."""
    xs = np.asarray(xs, dtype=float)
    ys = np.abs(np.asarray(ys, dtype=float))
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ConfigError("log-log slope requires positive data")
    coeffs = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(coeffs[0])


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".15g")


def write_correlator_csv(table: CorrelatorTable, out: io.TextIOBase) -> None:
    out.write("n,G,Delta,Delta_closed,Delta_asym\n")
    for n in sorted(table.entries):
        delta = table.delta.get(n) if n >= 1 else None
        closed = delta_critical_closed(n) if (n >= 1 and table.lam == 1.0) else None
        asym = delta_asymptotic(n) if (n >= 1 and table.lam == 1.0) else None
        out.write(f"{n},{_fmt(table.entries[n])},{_fmt(delta)},{_fmt(closed)},{_fmt(asym)}\n")


def write_energy_csv(energies: EnergyTable, out: io.TextIOBase) -> None:
    out.write("d,xi,eta,theta,E_B,E_B_asym\n")
    for row in energies.rows:
        out.write(
            f"{row['d']},{_fmt(row['xi'])},{_fmt(row['eta'])},{_fmt(row['theta'])},"
            f"{_fmt(row['e_b'])},{_fmt(row['e_b_asym'])}\n"
        )
