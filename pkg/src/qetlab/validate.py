"""Aggregate verification gate: numbered criteria with measured values.

Each criterion re-measures its quantities at run time and compares them
against stated expectations and tolerances.  Results carry the measured
numbers so a failure line is diagnosable on its own.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import analytic
from .chain import build_hamiltonian, build_model, ground_state
from .cooling import minimize_residual
from .errors import ConfigError
from .netsim import Node, replay_session, run_session
from .protocol import (
    PartyConfig,
    adversary_energy,
    measure_supplier,
    party_operator,
    reference_consumer,
    reference_supplier,
    run_qed,
    run_qet,
    xi_eta,
)

E_A_CRITICAL = 6.0 / math.pi
E_R_CRITICAL = 6.0 / math.pi - 1.0
# two-significant-figure reference for the five-spaced distribution total
E_C_REFERENCE_2SF = 6.2e-5

DEFAULT_TOLERANCES = {
    "ising-critical-correlators": {"abs": 1e-10},
    "ising-determinant-identity": {"rel_small": 1e-9, "rel_large": 1e-7},
    "ising-asymptotic-decay": {
        "slope_delta": 0.05,
        "slope_energy": 0.1,
    },
    "ising-reference-numbers": {"abs_exact": 1e-12, "optimizer_rel": 0.01},
    "qet-same-chain-identity": {"abs": 1e-9},
    "finite-size-convergence": {"rel_at_largest": 0.02},
    "adversary-deposit": {"floor": -1e-10, "theta_strict": 0.1},
    "cooling-residual-bound": {"margin": 1e-9},
    "qed-bookkeeping-replay": {"abs": 1e-9, "floor": -1e-10},
    "separable-limit": {"abs": 1e-10},
}


def merge_tolerances(overrides: dict | None) -> dict:
    """Validate an override document and merge it over the defaults."""
    merged = {slug: dict(vals) for slug, vals in DEFAULT_TOLERANCES.items()}
    if overrides is None:
        return merged
    if not isinstance(overrides, dict):
        raise ConfigError("tolerance config must be a JSON object keyed by check slug")
    for slug, vals in overrides.items():
        if slug not in merged:
            raise ConfigError(f"unknown check slug {slug!r} in tolerance config")
        if not isinstance(vals, dict):
            raise ConfigError(f"tolerances for {slug!r} must be an object")
        for name, value in vals.items():
            if name not in merged[slug]:
                raise ConfigError(f"unknown tolerance {name!r} for check {slug!r}")
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"tolerance {slug}.{name} must be a number")
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(f"tolerance {slug}.{name} must be finite")
            if name != "floor" and value <= 0.0:
                raise ConfigError(f"tolerance {slug}.{name} must be positive")
            merged[slug][name] = value
    return merged


@dataclass
class SubCheck:
    name: str
    passed: bool
    measured: float | str
    expected: str

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "expected": self.expected,
        }


@dataclass
class CheckResult:
    criterion: int
    slug: str
    passed: bool
    subchecks: list
    seconds: float

    def to_doc(self) -> dict:
        # seconds stays off the document: emitted files must be byte-stable
        # across runs of the same config.
        return {
            "criterion": self.criterion,
            "slug": self.slug,
            "passed": self.passed,
            "subchecks": [s.to_doc() for s in self.subchecks],
        }


def _critical_closed(n: int) -> float:
    return (2.0 / math.pi) * ((-1.0) ** n) / (2 * n + 1)


def _check_critical_correlators(tol: dict) -> list:
    worst = 0.0
    for n in range(-50, 51):
        worst = max(worst, abs(analytic.g_fn(n, 1.0) - _critical_closed(n)))
    return [
        SubCheck(
            name="quadrature-vs-closed-form",
            passed=worst <= tol["abs"],
            measured=worst,
            expected=f"max |G(n) - closed| <= {tol['abs']} over |n| <= 50",
        )
    ]


def _check_determinant_identity(tol: dict) -> list:
    def max_rel(n_lo, n_hi):
        worst = 0.0
        for n in range(n_lo, n_hi + 1):
            closed = analytic.delta_critical_closed(n)
            worst = max(worst, abs(analytic.delta_fn(n, 1.0) / closed - 1.0))
        return worst

    small = max_rel(1, 8)
    large = max_rel(9, 30)
    return [
        SubCheck(
            name="relative-error-n<=8",
            passed=small <= tol["rel_small"],
            measured=small,
            expected=f"<= {tol['rel_small']}",
        ),
        SubCheck(
            name="relative-error-n<=30",
            passed=large <= tol["rel_large"],
            measured=large,
            expected=f"<= {tol['rel_large']}",
        ),
    ]


def _check_asymptotic_decay(tol: dict) -> list:
    ns = list(range(20, 61, 4))
    slope_delta = analytic.log_log_slope(ns, [abs(analytic.delta_fn(n, 1.0)) for n in ns])
    table = analytic.analytic_energies(1.0, 1.0, ns)
    slope_energy = analytic.log_log_slope(ns, [row["e_b"] for row in table.rows])
    return [
        SubCheck(
            name="correlator-decay-slope",
            passed=abs(slope_delta + 2.25) <= tol["slope_delta"],
            measured=slope_delta,
            expected=f"-2.25 +/- {tol['slope_delta']}",
        ),
        SubCheck(
            name="transfer-decay-slope",
            passed=abs(slope_energy + 4.5) <= tol["slope_energy"],
            measured=slope_energy,
            expected=f"-4.5 +/- {tol['slope_energy']}",
        ),
    ]


def _check_reference_numbers(tol: dict) -> list:
    table = analytic.analytic_energies(1.0, 1.0, [5])
    checks = [
        SubCheck(
            name="measurement-cost",
            passed=abs(table.e_a - E_A_CRITICAL) <= tol["abs_exact"],
            measured=table.e_a,
            expected=f"6/pi = {E_A_CRITICAL!r} within {tol['abs_exact']}",
        ),
        SubCheck(
            name="distribution-total-2sf",
            passed=f"{table.e_c:.1e}" == f"{E_C_REFERENCE_2SF:.1e}",
            measured=table.e_c,
            expected=f"{E_C_REFERENCE_2SF} to 2 significant figures",
        ),
        SubCheck(
            name="residual-analytic",
            passed=abs(table.e_r - E_R_CRITICAL) <= tol["abs_exact"],
            measured=table.e_r,
            expected=f"6/pi - 1 = {E_R_CRITICAL!r} within {tol['abs_exact']}",
        ),
    ]
    result = minimize_residual(build_model(14, 1.0, 1.0))
    rel = abs(result.e_r / E_R_CRITICAL - 1.0)
    checks.append(
        SubCheck(
            name="residual-optimizer-14-sites",
            passed=rel <= tol["optimizer_rel"],
            measured=result.e_r,
            expected=f"within {tol['optimizer_rel']:.0%} of {E_R_CRITICAL!r}",
        )
    )
    return checks


def _check_same_chain_identity(tol: dict) -> list:
    worst = 0.0
    worst_case = None
    for n in (8, 10, 12, 14):
        for lam in (0.0, 0.5, 1.0):
            model = build_model(n, 1.0, lam)
            for d in (5, 6):
                report = run_qet(model, reference_supplier(0), reference_consumer(d))
                entry = report.consumers[0]
                gap = abs(entry.e_m_meas - entry.e_m_pred)
                if gap > worst:
                    worst = gap
                    worst_case = f"N={n} lambda={lam} d={d}"
    return [
        SubCheck(
            name="measured-vs-predicted-gain",
            passed=worst <= tol["abs"],
            measured=worst,
            expected=f"<= {tol['abs']} over the full grid (worst at {worst_case})",
        )
    ]


def _check_finite_size_convergence(tol: dict) -> list:
    gaps = []
    for n in (8, 10, 12, 14):
        model = build_model(n, 1.0, 1.0)
        g = ground_state(model)
        _, e_s = measure_supplier(
            g, party_operator(n, reference_supplier(0)), build_hamiltonian(model)
        )
        gaps.append(abs(e_s - E_A_CRITICAL))
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    rel = gaps[-1] / E_A_CRITICAL
    return [
        SubCheck(
            name="gap-decreases-with-size",
            passed=decreasing,
            measured=str([float(f"{v:.6e}") for v in gaps]),
            expected="strictly decreasing over N in (8, 10, 12, 14)",
        ),
        SubCheck(
            name="relative-gap-at-14-sites",
            passed=rel <= tol["rel_at_largest"],
            measured=rel,
            expected=f"<= {tol['rel_at_largest']}",
        ),
    ]


def _check_adversary_deposit(tol: dict) -> list:
    model = build_model(14, 1.0, 1.0)
    supplier = reference_supplier(0)
    consumers = [reference_consumer(5)]
    rng = np.random.default_rng(2024)
    lowest = math.inf
    lowest_strict = math.inf
    for _ in range(100):
        vec = rng.normal(size=3)
        axis = tuple(vec / np.linalg.norm(vec))
        theta = float(rng.uniform(0.0, math.pi / 2))
        adversary = PartyConfig(site=-5, axis=axis, role="adversary")
        for guess in (0, 1):
            deposit = adversary_energy(
                model, supplier, consumers, adversary, theta_d=theta, mu_prime=guess
            )
            lowest = min(lowest, deposit)
            if theta >= tol["theta_strict"]:
                lowest_strict = min(lowest_strict, deposit)
    return [
        SubCheck(
            name="never-extracts",
            passed=lowest >= tol["floor"],
            measured=lowest,
            expected=f">= {tol['floor']} over exhaustive guesses x 100 random configs",
        ),
        SubCheck(
            name="pays-at-tuned-angles",
            passed=lowest_strict > 0.0,
            measured=lowest_strict,
            expected=f"> 0 whenever theta_D >= {tol['theta_strict']}",
        ),
    ]


def _check_cooling_residual_bound(tol: dict) -> list:
    table = analytic.analytic_energies(1.0, 1.0, [5])
    result = minimize_residual(build_model(14, 1.0, 1.0))
    finite_ref = result.e_c_reference["finite_chain"]
    iterate_floor = min(entry["best"] for entry in result.optimizer_trace)
    return [
        SubCheck(
            name="analytic-bound",
            passed=table.e_r >= table.e_c - tol["margin"],
            measured=f"e_r={table.e_r!r} e_c={table.e_c!r}",
            expected="analytic residual clears the analytic distribution total",
        ),
        SubCheck(
            name="finite-chain-bound",
            passed=result.e_r >= finite_ref - tol["margin"],
            measured=f"e_r={result.e_r!r} e_c={finite_ref!r}",
            expected="optimized residual clears the same-chain distribution total",
        ),
        SubCheck(
            name="every-optimizer-iterate",
            passed=iterate_floor >= finite_ref - tol["margin"],
            measured=iterate_floor,
            expected=f">= {finite_ref!r} - {tol['margin']}",
        ),
    ]


def _check_bookkeeping_replay(tol: dict) -> list:
    checks = []
    worst = -math.inf
    lowest = math.inf
    for n in (13, 14):
        model = build_model(n, 1.0, 1.0)
        report = run_qed(
            model, reference_supplier(0), [reference_consumer(-5), reference_consumer(5)]
        )
        gains = sum(c.e_m_meas for c in report.consumers)
        worst = max(worst, abs(report.residual_total - (report.e_s - gains)))
        lowest = min(lowest, report.residual_total)
    checks.append(
        SubCheck(
            name="residual-equals-cost-minus-gains",
            passed=worst <= tol["abs"],
            measured=worst,
            expected=f"<= {tol['abs']} on mirrored runs at N=13, 14",
        )
    )
    checks.append(
        SubCheck(
            name="residual-nonnegative",
            passed=lowest >= tol["floor"],
            measured=lowest,
            expected=f">= {tol['floor']}",
        )
    )
    model = build_model(14, 1.0, 1.0)
    honest = [
        Node("S", "supplier", 0),
        Node("C1", "consumer", -5),
        Node("C2", "consumer", 5),
    ]
    log = run_session(model, honest, "honest", seed=0)
    honest_ok = replay_session(log).to_json_lines() == log.to_json_lines()
    attack = [
        Node("S", "supplier", 0),
        Node("C1", "consumer", 5),
        Node("D", "adversary", -5),
    ]
    log_e = run_session(model, attack, "eavesdrop", seed=0)
    eaves_ok = replay_session(log_e).to_json_lines() == log_e.to_json_lines()
    checks.append(
        SubCheck(
            name="session-replay-bit-for-bit",
            passed=honest_ok and eaves_ok,
            measured=f"honest={honest_ok} eavesdrop={eaves_ok}",
            expected="replayed transcripts byte-identical",
        )
    )
    return checks


def _check_separable_limit(tol: dict) -> list:
    model = build_model(10, 1.0, 0.0)
    g = ground_state(model)
    _, eta = xi_eta(
        g, build_hamiltonian(model), reference_supplier(0), reference_consumer(5)
    )
    table = analytic.analytic_energies(1.0, 0.0, [5])
    result = minimize_residual(build_model(4, 1.0, 0.0))
    return [
        SubCheck(
            name="coupling-coefficient-vanishes",
            passed=abs(eta) <= tol["abs"],
            measured=eta,
            expected=f"|eta| <= {tol['abs']}",
        ),
        SubCheck(
            name="transfer-vanishes",
            passed=abs(table.rows[0]["e_b"]) <= tol["abs"],
            measured=table.rows[0]["e_b"],
            expected=f"|E_B| <= {tol['abs']}",
        ),
        SubCheck(
            name="residual-vanishes",
            passed=abs(result.e_r) <= tol["abs"],
            measured=result.e_r,
            expected=f"|E_r| <= {tol['abs']}",
        ),
    ]


REGISTRY = [
    (1, "ising-critical-correlators", _check_critical_correlators),
    (2, "ising-determinant-identity", _check_determinant_identity),
    (3, "ising-asymptotic-decay", _check_asymptotic_decay),
    (4, "ising-reference-numbers", _check_reference_numbers),
    (5, "qet-same-chain-identity", _check_same_chain_identity),
    (6, "finite-size-convergence", _check_finite_size_convergence),
    (7, "adversary-deposit", _check_adversary_deposit),
    (8, "cooling-residual-bound", _check_cooling_residual_bound),
    (9, "qed-bookkeeping-replay", _check_bookkeeping_replay),
    (10, "separable-limit", _check_separable_limit),
]


def run(only: str | None = None, tolerances: dict | None = None) -> list:
    """Run the registered criteria, optionally filtered by slug substring."""
    merged = merge_tolerances(tolerances)
    selected = REGISTRY
    if only:
        selected = [
            entry
            for entry in REGISTRY
            if only in entry[1] or only == str(entry[0])
        ]
        if not selected:
            raise ConfigError(f"--only {only!r} matches no registered check")
    results = []
    for number, slug, runner in selected:
        start = time.perf_counter()
        subchecks = runner(merged[slug])
        seconds = time.perf_counter() - start
        results.append(
            CheckResult(
                criterion=number,
                slug=slug,
                passed=all(s.passed for s in subchecks),
                subchecks=subchecks,
                seconds=seconds,
            )
        )
    return results


def render_text(results: list) -> str:
    lines = []
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        lines.append(f"criterion {result.criterion:>2} {result.slug:<28} {status}")
        for sub in result.subchecks:
            mark = "ok" if sub.passed else "FAIL"
            lines.append(
                f"    {mark:<4} {sub.name}: measured={sub.measured!r} expected: {sub.expected}"
            )
    total = sum(1 for r in results if r.passed)
    lines.append(f"{total}/{len(results)} criteria passed")
    return "\n".join(lines) + "\n"
