import io
import math

import numpy as np
import pytest

from qetlab import analytic
from qetlab.errors import ConfigError

# Frozen from an independent high-precision oracle (separate quadrature at 10x
# finer tolerance, cross-checked against 40-digit arbitrary-precision sums).
G0_HALF = 0.93421545766769411614
G1_HALF = -0.22518585101878414881
GM1_HALF = 0.2586579046113416697
DELTA2_HALF = -0.027186151675657147
DELTA5_HALF = -0.0007165553548884728
DELTA5_CRIT = -0.0043542651828254587482
E_B5_CRIT = 1.4890680727241978e-05
E_C_CRIT = 3.138680217817935e-05
E_C_HALF = 5.496667714322001e-07
ETA5_CRIT = -0.008708530365650979
THETA5_CRIT = 0.003419778551314702
SLOPE_DELTA_20_60 = -2.2504141719912565
SLOPE_EB_20_60 = -4.500828316930493
RATIO_CLOSED_ASYM = {5: 1.003755, 60: 0.994398, 200: 0.994339}

SIX_OVER_PI = 6.0 / math.pi


class TestGFn:
    def test_uncoupled_values(self):
        assert analytic.g_fn(0, 0.0) == pytest.approx(1.0, abs=1e-13)
        for n in (1, 2, 5, -1, -3):
            assert analytic.g_fn(n, 0.0) == pytest.approx(0.0, abs=1e-13)

    def test_critical_closed_form_over_full_range(self):
        worst = max(
            abs(analytic.g_fn(n, 1.0) - analytic.g_critical(n)) for n in range(-50, 51)
        )
        assert worst <= 1e-10

    def test_half_coupling_frozen(self):
        assert analytic.g_fn(0, 0.5) == pytest.approx(G0_HALF, abs=1e-12)
        assert analytic.g_fn(1, 0.5) == pytest.approx(G1_HALF, abs=1e-12)
        assert analytic.g_fn(-1, 0.5) == pytest.approx(GM1_HALF, abs=1e-12)

    def test_combined_equals_split_integrals(self):
        lam = 0.5
        for n in (-2, 0, 1, 4):
            split = analytic.l_fn(n, lam) + lam * analytic.l_fn(n + 1, lam)
            assert analytic.g_fn(n, lam) == pytest.approx(split, abs=1e-11)

    def test_l_fn_refused_at_critical_point(self):
        with pytest.raises(ConfigError):
            analytic.l_fn(0, 1.0)

    def test_lambda_out_of_range(self):
        with pytest.raises(ConfigError):
            analytic.g_fn(0, 1.5)
        with pytest.raises(ConfigError):
            analytic.g_fn(0, -0.1)


class TestDeltaFn:
    def test_one_by_one_is_g1_exactly(self):
        for lam in (0.0, 0.3, 1.0):
            assert analytic.delta_fn(1, lam) == analytic.g_fn(1, lam)

    def test_critical_two_by_two(self):
        exact = -16.0 / (45.0 * math.pi**2)
        assert analytic.delta_fn(2, 1.0) == pytest.approx(exact, rel=1e-12)
        assert analytic.delta_critical_closed(2) == pytest.approx(exact, rel=1e-13)

    def test_critical_five_frozen(self):
        assert analytic.delta_fn(5, 1.0) == pytest.approx(DELTA5_CRIT, rel=1e-11)

    def test_half_coupling_frozen(self):
        assert analytic.delta_fn(2, 0.5) == pytest.approx(DELTA2_HALF, rel=1e-9)
        assert analytic.delta_fn(5, 0.5) == pytest.approx(DELTA5_HALF, rel=1e-9)

    def test_uncoupled_determinant_vanishes(self):
        for n in range(1, 6):
            assert analytic.delta_fn(n, 0.0) == pytest.approx(0.0, abs=1e-13)

    def test_determinant_matches_closed_form(self):
        for n in range(1, 9):
            rel = abs(analytic.delta_fn(n, 1.0) / analytic.delta_critical_closed(n) - 1.0)
            assert rel <= 1e-12
        for n in (12, 20, 30):
            rel = abs(analytic.delta_fn(n, 1.0) / analytic.delta_critical_closed(n) - 1.0)
            assert rel <= 5e-12

    def test_sign_and_monotone_decay(self):
        values = [analytic.delta_critical_closed(n) for n in range(1, 41)]
        assert all(v < 0 for v in values)
        mags = [abs(v) for v in values]
        assert all(a > b for a, b in zip(mags, mags[1:]))

    def test_bounds(self):
        with pytest.raises(ConfigError):
            analytic.delta_fn(0, 1.0)
        with pytest.raises(ConfigError):
            analytic.delta_fn(201, 1.0)


class TestClosedForm:
    def test_first_values(self):
        assert analytic.delta_critical_closed(1) == pytest.approx(-2.0 / (3.0 * math.pi), rel=1e-14)

    def test_large_n_finite(self):
        val = analytic.delta_critical_closed(20)
        assert math.isfinite(val)
        assert analytic.delta_fn(20, 1.0) == pytest.approx(val, rel=1e-8)


class TestAsymptote:
    def test_default_constant(self):
        assert analytic.C_ASYMPTOTIC == 1.28

    @pytest.mark.parametrize("n", [5, 60, 200])
    def test_ratio_frozen(self, n):
        ratio = analytic.delta_critical_closed(n) / analytic.delta_asymptotic(n)
        assert ratio == pytest.approx(RATIO_CLOSED_ASYM[n], abs=1e-5)

    def test_ratio_within_two_percent_by_60(self):
        ratio = analytic.delta_critical_closed(60) / analytic.delta_asymptotic(60)
        assert abs(ratio - 1.0) <= 0.02

    def test_delta_slope(self):
        ns = np.arange(20, 61)
        ys = [analytic.delta_critical_closed(int(n)) for n in ns]
        slope = analytic.log_log_slope(ns, ys)
        assert slope == pytest.approx(SLOPE_DELTA_20_60, abs=1e-6)
        assert abs(slope + 2.25) <= 0.05


class TestAnalyticEnergies:
    def test_critical_reference_values(self):
        table = analytic.analytic_energies(1.0, 1.0, [5])
        assert table.e_a == pytest.approx(SIX_OVER_PI, abs=1e-12)
        assert table.e_r == pytest.approx(SIX_OVER_PI - 1.0, abs=1e-12)
        assert table.xi == pytest.approx(4.0 / math.pi, abs=1e-12)
        row = table.rows[0]
        assert row["eta"] == pytest.approx(ETA5_CRIT, rel=1e-9)
        assert row["theta"] == pytest.approx(THETA5_CRIT, rel=1e-9)
        assert row["e_b"] == pytest.approx(E_B5_CRIT, rel=1e-9)

    def test_critical_e_c_frozen(self):
        table = analytic.analytic_energies(1.0, 1.0, [5])
        assert table.e_c == pytest.approx(E_C_CRIT, rel=1e-7)
        assert table.e_c_truncation_index > 10

    def test_e_c_scales_with_h(self):
        base = analytic.analytic_energies(1.0, 1.0, [5])
        doubled = analytic.analytic_energies(2.0, 1.0, [5])
        assert doubled.e_c == pytest.approx(2.0 * base.e_c, rel=1e-12)
        assert doubled.e_a == pytest.approx(2.0 * base.e_a, rel=1e-12)

    def test_half_coupling_e_c_frozen(self):
        table = analytic.analytic_energies(1.0, 0.5, [5])
        assert table.e_c == pytest.approx(E_C_HALF, rel=1e-6)

    def test_uncoupled_limit_exact_zeros(self):
        table = analytic.analytic_energies(1.0, 0.0, [1, 2, 7])
        assert table.e_r == pytest.approx(0.0, abs=1e-12)
        for row in table.rows:
            assert row["eta"] == 0.0
            assert row["e_b"] == 0.0
        assert table.e_c == 0.0
        assert table.e_a == pytest.approx(1.0, abs=1e-12)

    def test_e_b_asym_ratio_at_five(self):
        table = analytic.analytic_energies(1.0, 1.0, [5])
        row = table.rows[0]
        assert row["e_b"] / row["e_b_asym"] == pytest.approx(1.0075, abs=2e-4)

    def test_e_b_slope(self):
        ds = list(range(20, 61))
        table = analytic.analytic_energies(1.0, 1.0, ds)
        slope = analytic.log_log_slope(ds, [r["e_b"] for r in table.rows])
        assert slope == pytest.approx(SLOPE_EB_20_60, abs=1e-6)
        assert abs(slope + 4.5) <= 0.1

    def test_e_b_positive_and_decreasing(self):
        table = analytic.analytic_energies(1.0, 1.0, list(range(1, 30)))
        ebs = [r["e_b"] for r in table.rows]
        assert all(v > 0 for v in ebs)
        assert all(a > b for a, b in zip(ebs, ebs[1:]))

    def test_rejects_bad_distances(self):
        with pytest.raises(ConfigError):
            analytic.analytic_energies(1.0, 1.0, [0])
        with pytest.raises(ConfigError):
            analytic.analytic_energies(-1.0, 1.0, [5])


class TestCorrelatorTable:
    def test_critical_entries_match_closed_form(self):
        table = analytic.correlator_table(1.0, -5, 10)
        for n, val in table.entries.items():
            assert val == pytest.approx(analytic.g_critical(n), abs=1e-10)

    def test_delta_one_equals_g_one(self):
        table = analytic.correlator_table(0.5, 0, 4)
        assert table.delta[1] == table.entries[1]

    def test_closed_form_provenance(self):
        table = analytic.correlator_table(1.0, 0, 4, provenance="critical-closed-form")
        assert table.provenance == "critical-closed-form"
        assert table.entries[0] == 2.0 / math.pi
        with pytest.raises(ConfigError):
            analytic.correlator_table(0.5, 0, 4, provenance="critical-closed-form")

    def test_eps_calibration_constant(self):
        # eps = -(G(0) + lambda G(-1)) h; both correlators are 2/pi at lambda = 1
        table = analytic.correlator_table(1.0, -1, 2)
        assert table.eps == pytest.approx(-4.0 / math.pi, abs=1e-10)


class TestCsvEmission:
    def test_correlator_header_and_values(self):
        table = analytic.correlator_table(1.0, 0, 3)
        buf = io.StringIO()
        analytic.write_correlator_csv(table, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "n,G,Delta,Delta_closed,Delta_asym"
        first = lines[1].split(",")
        assert first[0] == "0"
        assert first[1] == "0.636619772367581"
        assert first[2] == ""  # Delta undefined at n = 0

    def test_uncoupled_delta_column_zero(self):
        table = analytic.correlator_table(0.0, 0, 5)
        buf = io.StringIO()
        analytic.write_correlator_csv(table, buf)
        for line in buf.getvalue().splitlines()[2:]:
            fields = line.split(",")
            assert float(fields[2]) == pytest.approx(0.0, abs=1e-13)
            assert fields[3] == ""  # closed form only defined at lambda = 1

    def test_energy_csv_deterministic(self):
        table = analytic.analytic_energies(1.0, 1.0, [5, 10])
        a, b = io.StringIO(), io.StringIO()
        analytic.write_energy_csv(table, a)
        analytic.write_energy_csv(table, b)
        assert a.getvalue() == b.getvalue()
        lines = a.getvalue().splitlines()
        assert lines[0] == "d,xi,eta,theta,E_B,E_B_asym"
        assert len(lines) == 3

    def test_csv_round_trips_to_fifteen_digits(self):
        table = analytic.analytic_energies(1.0, 1.0, [5])
        buf = io.StringIO()
        analytic.write_energy_csv(table, buf)
        row = buf.getvalue().splitlines()[1].split(",")
        assert float(row[4]) == pytest.approx(table.rows[0]["e_b"], rel=1e-14)
