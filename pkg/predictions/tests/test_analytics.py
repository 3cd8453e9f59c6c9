import math
from fractions import Fraction

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from predictions.services import analytics
from predictions.services.errors import (DomainError, InfeasibleBaselineError, InfiniteSinrError,
                                         InvalidDimensionError, InvalidInputError, RankDeficiencyError)
from predictions.services.numerics import Rng, sample_cn
from predictions.services.schemas import SystemConfig

DEFAULT = SystemConfig()        # M=4, K=4, N=40, S=4


class OverheadTests(SimpleTestCase):
    def test_default_pilot_budget(self):
        self.assertEqual(analytics.pilot_slots_per_block(40, 4, 4, 4), 282)
        report = analytics.pilot_overhead(DEFAULT)
        self.assertEqual(report.P_L, 282)
        self.assertAlmostEqual(report.P_a, 2.82)
        self.assertAlmostEqual(report.lambda_d, 1 - 2.82)
        self.assertEqual(report.baseline_P_a["MVU"], 160)
        self.assertEqual(report.baseline_P_a["PARAFAC-VAMP"], 160)
        self.assertAlmostEqual(report.baseline_P_a["Two-timescale"], 40.82)

    def test_report_names_the_stage2_actually_run(self):
        with self.assertLogs("predictions.services.pilots", level="WARNING"):
            report = analytics.pilot_overhead(DEFAULT)
        self.assertEqual(report.stage2_mode, "direct")
        self.assertEqual(report.P_L_trace, 40 + 4 * 40 * 4)
        reduced = analytics.pilot_overhead(SystemConfig(M=2, K=2, Nx=4, Ny=2, L_G=3, S=4))
        self.assertEqual(reduced.stage2_mode, "reduced")
        self.assertEqual(reduced.P_L_trace, reduced.P_L)

    def test_tau_thresholds(self):
        loose, exact, two_timescale = analytics.feasibility_tau_bounds(DEFAULT)
        self.assertEqual(exact, Fraction(141, 80))
        self.assertEqual(float(exact), 1.7625)
        self.assertEqual(float(loose), 1.8625)
        self.assertEqual(two_timescale, 5)

    def test_intersections_at_5000(self):
        rows = {r["against"]: r for r in analytics.intersections(DEFAULT, 5000)}
        self.assertEqual(rows["Two-timescale"]["tau"], 5.0)
        self.assertEqual(rows["Two-timescale"]["T_S"], 1000.0)
        self.assertAlmostEqual(rows["MVU"]["T_S"], 2836.88, places=2)
        for row in rows.values():
            self.assertAlmostEqual(row["lambda_d"], 0.9436)

    def test_lambda_curve(self):
        rows = analytics.lambda_curve(DEFAULT, 5000, [100, 1000, 5000])
        self.assertEqual(len(rows), 3 * len(analytics.METHODS))
        by_key = {(r["T_S"], r["method"]): r for r in rows}
        for T_S in (100, 1000, 5000):
            self.assertAlmostEqual(by_key[(T_S, "SCLSTM")]["lambda_d"], 0.9436)
        self.assertFalse(by_key[(100, "MVU")]["feasible"])
        self.assertTrue(math.isnan(by_key[(100, "MVU")]["lambda_d"]))
        self.assertAlmostEqual(by_key[(1000, "Two-timescale")]["lambda_d"], 0.9436)
        self.assertAlmostEqual(by_key[(1000, "MVU")]["lambda_d"], 0.84)
        with self.assertRaises(InvalidInputError):
            analytics.lambda_curve(DEFAULT, 5000, [0])

    @given(M=st.integers(1, 8), q=st.integers(1, 10), K=st.integers(1, 8), S=st.integers(1, 10))
    @settings(max_examples=60, deadline=None)
    def test_crossing_points_equalize_pilot_cost(self, M, q, K, S):
        N = M * q
        cfg = SystemConfig(M=M, K=K, Nx=N, Ny=1, S=S)
        P_L = analytics.pilot_slots_per_block(N, K, M, S)
        loose, exact, two_timescale = analytics.feasibility_tau_bounds(cfg)
        self.assertGreaterEqual(loose, exact)
        self.assertEqual(P_L / exact, analytics.baseline_pilots(cfg, exact)["MVU"])
        self.assertEqual(P_L / two_timescale, analytics.baseline_pilots(cfg, two_timescale)["Two-timescale"])

    def test_parafac_length(self):
        self.assertEqual(analytics.parafac_pilot_length(DEFAULT), 10)
        self.assertEqual(analytics.parafac_pilot_length(DEFAULT, 12), 12)
        with self.assertRaises(InfeasibleBaselineError):
            analytics.parafac_pilot_length(DEFAULT, 9)


class ComplexityTests(SimpleTestCase):
    def test_counts(self):
        self.assertEqual(analytics.lstm_param_count(2, [6, 4], 2), 402)
        self.assertEqual(analytics.sclstm_complexity(4, 40, 4), 2313920)
        self.assertEqual(analytics.baseline_complexity(4, 40, 4, 3), {
            "MVU": 70400, "PARAFAC-VAMP": 63680, "Two-timescale": 201600,
        })
        with self.assertRaises(InvalidInputError):
            analytics.lstm_param_count(2, [], 2)
        with self.assertRaises(InvalidInputError):
            analytics.sclstm_complexity(0, 40, 4)


class SumRateTests(SimpleTestCase):
    def setUp(self):
        rng = Rng(3)
        self.G = sample_cn(4, 6, 1.0, rng.child(0))
        self.h = sample_cn(3, 6, 1.0, rng.child(1))
        self.H = self.G[None] * self.h[:, None, :]
        self.theta = rng.child(2).uniform(0, 2 * np.pi, 6)

    def test_zero_forcing_removes_interference(self):
        B = analytics.effective_channels(self.H, self.theta)
        W = analytics.zf_precoder(B)
        self.assertAlmostEqual(np.linalg.norm(W), 1.0)
        gains = np.abs(B.conj() @ W) ** 2
        np.testing.assert_allclose(gains - np.diag(np.diag(gains)), 0.0, atol=1e-20)
        s = analytics.sinr(B, W, 0.5)
        np.testing.assert_allclose(s, np.diag(gains) / 0.5)

    def test_factored_and_cascaded_rates_agree(self):
        W = analytics.zf_precoder(analytics.effective_channels(self.H, self.theta))
        a = analytics.sum_rate(self.G, self.h, W, self.theta, 0.1, lambda_d=0.8)
        b = analytics.cascaded_sum_rate(self.H, W, self.theta, 0.1, lambda_d=0.8)
        self.assertAlmostEqual(a, b)
        self.assertAlmostEqual(analytics.cascaded_sum_rate(self.H, W, self.theta, 0.1), b / 0.8)

    def test_alignment_co_phases_dominant_direction(self):
        H = self.H[:1]
        theta = analytics.align_reflection(H)
        u = np.linalg.svd(H[0])[0][:, 0]
        gain = abs(u.conj() @ analytics.effective_channels(H, theta)[0])
        self.assertAlmostEqual(gain, float(np.sum(np.abs(u.conj() @ H[0]))))

    def test_design_with_perfect_csi(self):
        rate = analytics.design_and_rate(self.H, self.H, 0.1, 1.0)
        theta = analytics.align_reflection(self.H)
        W = analytics.zf_precoder(analytics.effective_channels(self.H, theta))
        self.assertAlmostEqual(rate, analytics.cascaded_sum_rate(self.H, W, theta, 0.1))
        self.assertGreater(rate, 0.0)

    def test_errors(self):
        B = np.ones((2, 3), dtype=complex)
        with self.assertRaises(RankDeficiencyError):
            analytics.zf_precoder(B)
        W = analytics.zf_precoder(np.eye(2, dtype=complex))
        with self.assertRaises(DomainError):
            analytics.sinr(np.eye(2), W, -1.0)
        with self.assertRaises(InfiniteSinrError):
            analytics.sinr(np.eye(2), W, 0.0)
        with self.assertRaises(InvalidDimensionError):
            analytics.sinr(np.eye(2), np.ones((3, 2)), 0.1)
        with self.assertRaises(InvalidDimensionError):
            analytics.effective_channels(self.H, self.theta[:3])

    def test_single_user_and_silent_precoder(self):
        G, h = self.G, self.h[:1]
        W = analytics.zf_precoder(analytics.effective_channels(self.H[:1], self.theta))
        b = G @ np.diag(np.exp(-1j * self.theta)) @ h[0]
        expected = 0.5 * np.log2(1 + abs(b.conj() @ W[:, 0]) ** 2 / 0.2)
        self.assertAlmostEqual(analytics.sum_rate(G, h, W, self.theta, 0.2, 0.5), expected)
        self.assertEqual(analytics.sum_rate(self.G, self.h, np.zeros((4, 3)), self.theta, 0.2), 0.0)

    def test_square_zero_forcing_residual(self):
        B = sample_cn(4, 4, 1.0, Rng(30))
        W = analytics.zf_precoder(B)
        cross = B.conj() @ W
        self.assertLessEqual(np.max(np.abs(cross - np.diag(np.diag(cross)))), 1e-10)


class ComplexityIdentityTests(SimpleTestCase):
    @given(M=st.integers(1, 64), N=st.integers(1, 256), K=st.integers(1, 16))
    @settings(max_examples=100, deadline=None)
    def test_network_complexity_decomposes(self, M, N, K):
        self.assertEqual(analytics.sclstm_complexity(M, N, K),
                         K * (360 * N * N + 42 * N) + 4 * M * N + 4 * K * M * N)
