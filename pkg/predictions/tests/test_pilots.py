import numpy as np
from django.test import SimpleTestCase

from predictions.services.analytics import pilot_slots_per_block
from predictions.services.channel_sim import gen_episode
from predictions.services.errors import IllConditionedCorrectionError, InvalidDimensionError, UndefinedMetricError
from predictions.services.numerics import Rng, dft_matrix, sample_cn
from predictions.services.pilots import (
    decompose_reference, direct_plan, estimate_cascaded_direct, estimate_cascaded_reduced,
    estimate_cascaded_reference, estimate_g1, genie_ls_G, genie_ls_h, nmse, nmse_db, orthogonal_pilots,
    perturb_g1, reduced_feasible, reduced_patterns, reference_plan, run_stages, stage2_mode, synth_fda_rx,
    synth_plan_rx, synth_reduced_rx, synth_uplink_rx,
)
from predictions.services.schemas import SystemConfig

REDUCED = SystemConfig(M=2, K=2, Nx=4, Ny=2, L_G=3, S=4)


def rel_err(est, truth):
    return float(np.linalg.norm(est - truth) / np.linalg.norm(truth))


class PilotPlanTests(SimpleTestCase):
    def test_orthogonal_pilots(self):
        X = orthogonal_pilots(3, 4, 2.0)
        np.testing.assert_allclose(X @ X.conj().T, 4 * 2.0 * np.eye(3), atol=1e-12)
        with self.assertRaises(InvalidDimensionError):
            orthogonal_pilots(3, 2, 1.0)

    def test_plan_slot_counts(self):
        cfg = SystemConfig()
        self.assertEqual(reference_plan(cfg).slots, 2 * (cfg.N + 1))
        self.assertEqual(direct_plan(cfg).slots, cfg.N * cfg.K)
        self.assertEqual(reduced_patterns(cfg).shape, (cfg.N, 10))

    def test_default_channel_falls_back_to_direct(self):
        cfg = SystemConfig()              # M=4, L_G=3, N=40
        self.assertFalse(reduced_feasible(cfg))
        with self.assertLogs("predictions.services.pilots", level="WARNING"):
            self.assertEqual(stage2_mode(cfg), "direct")
        self.assertEqual(stage2_mode(cfg.model_copy(update={"stage2": "reduced"})), "reduced")
        self.assertEqual(stage2_mode(REDUCED), "reduced")

    def test_patterns_chosen_for_the_channel(self):
        cfg = SystemConfig(M=2, K=2, Nx=8, Ny=2, L_G=3, S=2)
        G = gen_episode(cfg, 1, Rng(34)).G
        V = dft_matrix(cfg.N)
        chosen = reduced_patterns(cfg, G)
        self.assertEqual(chosen.shape, (cfg.N, 8))
        np.testing.assert_array_equal(chosen, reduced_patterns(cfg, G))
        # distinct DFT columns
        match = np.abs(V.conj().T @ chosen) > cfg.N - 1e-6
        np.testing.assert_array_equal(match.sum(axis=0), 1)
        self.assertEqual(int(np.sum(match.any(axis=1))), 8)
        with self.assertRaises(InvalidDimensionError):
            reduced_patterns(cfg, G[:, :4])

    def test_uplink_superposes_users(self):
        H = sample_cn(2 * 3, 5, 1.0, Rng(30)).reshape(2, 3, 5)
        v = np.exp(1j * np.linspace(0.0, 1.0, 5))
        X = orthogonal_pilots(2, 4, 1.0)
        Y = synth_uplink_rx(H, v, X, 0.0, Rng(31))
        np.testing.assert_allclose(Y, np.outer(H[0] @ v, X[0]) + np.outer(H[1] @ v, X[1]), atol=1e-12)
        self.assertEqual(synth_uplink_rx(H[0], v, X[:1], 0.0, Rng(32)).shape, (3, 4))
        with self.assertRaises(InvalidDimensionError):
            synth_uplink_rx(H, v[:4], X, 0.0, Rng(33))


class NoiselessEstimatorTests(SimpleTestCase):
    """With no noise every estimator is exact."""

    def test_estimators_over_random_episodes(self):
        cfg = REDUCED
        V = dft_matrix(cfg.N)
        for i in range(50):
            r = Rng(100, (i,))
            ep = gen_episode(cfg, cfg.S + 1, r.child(0))
            g1 = ep.G[0]

            x = np.full(cfg.N, 1.0 + 0j)
            _, g1sq = estimate_g1(synth_fda_rx(g1, V, x, 0.0, r.child(1)), V, x)
            self.assertLess(rel_err(g1sq, g1 * g1), 1e-8)

            plan = reference_plan(cfg)
            H1 = ep.cascaded(1)[:1]
            H1_ref = estimate_cascaded_reference(synth_plan_rx(H1, plan, 0.0, r.child(2)), plan)
            self.assertLess(rel_err(H1_ref, H1), 1e-8)
            G_hat = decompose_reference(H1_ref[0], g1)
            self.assertLess(rel_err(G_hat, ep.G), 1e-8)

            patterns = reduced_patterns(cfg, ep.G)
            Y = synth_reduced_rx(ep.cascaded(2), patterns, cfg.pilot_power, 0.0, r.child(3))
            H_red = estimate_cascaded_reduced(Y, ep.G, patterns, cfg.pilot_power)
            self.assertLess(rel_err(H_red[0], ep.cascaded(2)), 1e-8)
            # any column scaling of the G estimate gives the same cascade
            H_scaled = estimate_cascaded_reduced(Y, ep.G * np.linspace(0.5, 2.0, cfg.N), patterns, cfg.pilot_power)
            self.assertLess(rel_err(H_scaled[0], ep.cascaded(2)), 1e-8)

            dplan = direct_plan(cfg)
            H_dir = estimate_cascaded_direct(synth_plan_rx(ep.cascaded(3), dplan, 0.0, r.child(4)), dplan)
            self.assertLess(rel_err(H_dir[0], ep.cascaded(3)), 1e-8)

    def test_square_root_sign_does_not_change_cascade(self):
        ep = gen_episode(REDUCED, 5, Rng(1))
        H1 = ep.cascaded(1)[0]
        G_pos = decompose_reference(H1, ep.G[0])
        G_neg = decompose_reference(H1, -ep.G[0])
        h1 = ep.ris_ue(1)[0]
        np.testing.assert_allclose(G_pos * h1, G_neg * -h1, atol=1e-12)

    def test_decompose_rejects_zero_first_row(self):
        H = np.ones((2, 3), dtype=complex)
        H[0, 1] = 0
        with self.assertRaises(IllConditionedCorrectionError) as ctx:
            decompose_reference(H, np.ones(3))
        self.assertEqual(ctx.exception.index, 1)

    def test_reduced_needs_enough_rows(self):
        cfg = REDUCED
        Y = np.zeros((1, cfg.K, 1, cfg.M), dtype=complex)
        with self.assertRaises(InvalidDimensionError):
            estimate_cascaded_reduced(Y, np.ones((cfg.M, cfg.N)), reduced_patterns(cfg)[:, :1], 1.0)


class StageTests(SimpleTestCase):
    def test_slot_accounting_matches_closed_form(self):
        cfg = REDUCED
        ep = gen_episode(cfg, cfg.S + 1, Rng(4))
        report = run_stages(cfg, ep, range(1, cfg.S + 1), Rng(5))
        self.assertEqual(report.mode, "reduced")
        self.assertEqual(report.pilot_slots, pilot_slots_per_block(cfg.N, cfg.K, cfg.M, cfg.S))
        self.assertEqual(report.H_hat.shape, (cfg.K, cfg.S, cfg.M, cfg.N))

    def test_estimates_improve_with_snr(self):
        cfg = REDUCED
        errs = []
        for snr in (0.0, 30.0):
            c = cfg.with_snr(snr)
            vals = []
            for i in range(20):
                ep = gen_episode(c, c.S + 1, Rng(6, (i,)))
                vals.append(run_stages(c, ep, range(1, c.S + 1), Rng(7, (i,))).nmse_table(ep)["H"])
            errs.append(np.mean(vals))
        self.assertLess(errs[1], errs[0])

    def mean_nmse(self, cfg, trials, seed):
        vals = []
        for i in range(trials):
            ep = gen_episode(cfg, cfg.S + 1, Rng(seed, (i,)))
            vals.append(run_stages(cfg, ep, range(1, cfg.S + 1), Rng(seed + 1, (i,))).nmse_table(ep)["H"])
        return float(np.mean(vals))

    def test_reduced_error_falls_with_ris_size(self):
        errs = [self.mean_nmse(SystemConfig(M=2, K=2, Nx=nx, Ny=2, L_G=3, S=2, snr_db=10.0, stage2="reduced"),
                               100, 40)
                for nx in (4, 8, 16)]
        self.assertLess(errs[1], errs[0])
        self.assertLess(errs[2], errs[1])

    def test_direct_beats_reduced(self):
        base = dict(M=2, K=2, Nx=4, Ny=2, L_G=3, S=2, snr_db=10.0)
        reduced = self.mean_nmse(SystemConfig(stage2="reduced", **base), 20, 50)
        direct = self.mean_nmse(SystemConfig(stage2="direct", **base), 20, 50)
        self.assertLess(direct, reduced)

    def test_other_users_do_not_leak_into_estimate(self):
        cfg = SystemConfig(M=2, K=3, Nx=4, Ny=2, L_G=3, S=2)
        plan = direct_plan(cfg)
        ep = gen_episode(cfg, 2, Rng(60))
        H = ep.cascaded(1)
        H_moved = H.copy()
        H_moved[1] = H[1] * np.exp(0.7j) + sample_cn(cfg.M, cfg.N, 1.0, Rng(61))
        for sigma2 in (0.0, 0.1):
            a = estimate_cascaded_reference(synth_plan_rx(H, plan, sigma2, Rng(62)), plan)
            b = estimate_cascaded_reference(synth_plan_rx(H_moved, plan, sigma2, Rng(62)), plan)
            self.assertLessEqual(float(np.max(np.abs(a[[0, 2]] - b[[0, 2]]))), 1e-10)
            self.assertGreater(float(np.max(np.abs(a[1] - b[1]))), 0.1)

    def test_direct_mode_has_no_G(self):
        cfg = SystemConfig(M=2, K=2, Nx=4, Ny=2, L_G=3, S=2, stage2="direct")
        ep = gen_episode(cfg, 3, Rng(8))
        report = run_stages(cfg, ep, (1, 2), Rng(9))
        self.assertIsNone(report.G_hat)
        self.assertEqual(report.slots["stage2_steps"], 2 * cfg.N * cfg.K)
        self.assertNotIn("G", report.nmse_table(ep))

    def test_g1_override_anchors_G(self):
        cfg = REDUCED.with_snr(200.0)
        ep = gen_episode(cfg, cfg.S + 1, Rng(10))
        report = run_stages(cfg, ep, range(1, cfg.S + 1), Rng(11), g1_override=ep.G[0])
        np.testing.assert_allclose(report.G_hat[0], ep.G[0], rtol=1e-6)


class GenieAndMetricTests(SimpleTestCase):
    def test_genie_ls_noiseless(self):
        ep = gen_episode(REDUCED, 5, Rng(12))
        np.testing.assert_allclose(genie_ls_G(ep.H, ep.h), ep.G, atol=1e-10)
        np.testing.assert_allclose(genie_ls_h(ep.H, ep.G), ep.h, atol=1e-10)

    def test_perturbation_hits_target_nmse(self):
        g1 = sample_cn(40, 1, 1.0, Rng(13)).ravel()
        vals = [nmse(perturb_g1(g1, 1e-2, Rng(14, (i,))), g1) for i in range(400)]
        self.assertAlmostEqual(np.mean(vals), 1e-2, delta=2e-3)

    def test_nmse(self):
        self.assertEqual(nmse([1, 1], [1, 1]), 0.0)
        self.assertAlmostEqual(nmse([0, 0], [1j, 1]), 1.0)
        self.assertAlmostEqual(nmse_db([1.1], [1.0]), -20.0)
        with self.assertRaises(UndefinedMetricError):
            nmse([1], [0])
        with self.assertRaises(InvalidDimensionError):
            nmse([1, 2], [1])
