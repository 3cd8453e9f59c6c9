import numpy as np
from django.test import SimpleTestCase

from predictions.services.analytics import pilot_slots_per_block
from predictions.services.channel_sim import gen_stream
from predictions.services.errors import (CheckpointIncompatibleError, IllConditionedCorrectionError,
                                         InvalidDimensionError, InvalidInputError)
from predictions.services.numerics import Rng, sample_cn
from predictions.services.pipeline import (
    QPSK, TRACE_COLUMNS, correct_scaling, data_patterns, data_reflection, decision_directed_refine,
    hard_decide, predict_online, qpsk_symbols, synth_data_rx,
)
from predictions.services.schemas import SystemConfig
from predictions.services.sclstm import init_params, predict_window

CFG = SystemConfig(M=2, K=2, Nx=2, Ny=2, L_G=2, L_k=2, S=2, snr_db=20.0)


class CorrectScalingTests(SimpleTestCase):
    def test_recovers_factors_from_any_rescaling(self):
        for i in range(100):
            r = Rng(1, (i,))
            G = sample_cn(3, 5, 1.0, r.child(0))
            h = sample_cn(4, 5, 1.0, r.child(1))
            delta = sample_cn(1, 5, 1.0, r.child(2)).ravel()
            G_hat, h_hat = correct_scaling(G * delta, h / delta, G[0])
            np.testing.assert_allclose(G_hat, G, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(h_hat, h, rtol=1e-9, atol=1e-12)

    def test_idempotent(self):
        G = sample_cn(2, 4, 1.0, Rng(2))
        h = sample_cn(3, 4, 1.0, Rng(3))
        g1 = sample_cn(1, 4, 1.0, Rng(4)).ravel()
        once = correct_scaling(G, h, g1)
        twice = correct_scaling(*once, g1)
        np.testing.assert_allclose(twice[0], once[0])
        np.testing.assert_allclose(twice[1], once[1])
        np.testing.assert_allclose(once[0][0], g1)

    def test_zero_entries_rejected(self):
        G = np.ones((2, 3), dtype=complex)
        h = np.ones((2, 3), dtype=complex)
        with self.assertRaises(IllConditionedCorrectionError) as ctx:
            correct_scaling(G, h, np.array([1, 0, 1]))
        self.assertEqual((ctx.exception.index, ctx.exception.where), (1, "g1_hat"))
        G[0, 2] = 0
        with self.assertRaises(IllConditionedCorrectionError) as ctx:
            correct_scaling(G, h, np.ones(3))
        self.assertEqual(ctx.exception.index, 2)
        with self.assertRaises(InvalidDimensionError):
            correct_scaling(G, h, np.ones(4))


class DataDetectionTests(SimpleTestCase):
    def test_reflections(self):
        np.testing.assert_array_equal(data_reflection("ones", 3), np.ones(3))
        v = data_reflection("random", 6, Rng(5))
        np.testing.assert_allclose(np.abs(v), 1.0)
        with self.assertRaises(InvalidInputError):
            data_reflection("random", 6)
        with self.assertRaises(InvalidInputError):
            data_reflection("zeros", 6)
        P = data_patterns(v)
        np.testing.assert_allclose(P.conj().T @ P, 6 * np.eye(6), atol=1e-9)

    def test_hard_decisions(self):
        np.testing.assert_array_equal(hard_decide(QPSK * 1.3), QPSK)
        s = qpsk_symbols((5, 2), Rng(6))
        self.assertTrue(np.all(np.isin(s, QPSK)))

    def test_noiseless_refinement_is_exact(self):
        K, M, N, D = 2, 2, 4, 8
        H = sample_cn(K * M, N, 1.0, Rng(7)).reshape(K, M, N)
        patterns = data_patterns(np.ones(N))
        symbols = qpsk_symbols((N, K, D), Rng(8))
        Y = synth_data_rx(H, patterns, symbols, 0.0, Rng(9))
        noisy = H + sample_cn(K * M, N, 1e-3, Rng(10)).reshape(K, M, N)
        result = decision_directed_refine(noisy, Y, patterns, 0.0, symbols)
        self.assertTrue(result.reliable)
        self.assertEqual(result.symbol_errors, 0)
        np.testing.assert_allclose(result.H_hat, H, atol=1e-9)

    def test_zero_prediction_is_unreliable(self):
        K, M, N = 2, 2, 4
        patterns = data_patterns(np.ones(N))
        Y = sample_cn(N * M, 8, 1.0, Rng(11)).reshape(N, M, 8)
        H0 = np.zeros((K, M, N), dtype=complex)
        result = decision_directed_refine(H0, Y, patterns, 0.1)
        self.assertFalse(result.reliable)
        np.testing.assert_array_equal(result.H_hat, H0)

    def test_empty_data_block(self):
        with self.assertRaises(InvalidInputError):
            decision_directed_refine(np.ones((1, 2, 2)), np.zeros((2, 2, 0)), np.ones((2, 2)), 0.1)


class PredictOnlineTests(SimpleTestCase):
    def setUp(self):
        self.params = init_params(CFG.M, CFG.N, Rng(20))

    def run_trace(self, T_C, T_L, **kwargs):
        blocks = gen_stream(CFG, T_C, T_L, Rng(21))
        return blocks, predict_online(self.params, blocks, CFG, T_C, T_L, Rng(22), **kwargs)

    def test_single_block(self):
        _, trace = self.run_trace(10, 10)
        self.assertEqual(trace.stage_runs, 1)
        self.assertEqual(trace.pilots, pilot_slots_per_block(CFG.N, CFG.K, CFG.M, CFG.S))
        df = trace.to_frame()
        self.assertEqual(list(df.columns), TRACE_COLUMNS)
        self.assertEqual(len(df), 10 * CFG.K)
        self.assertEqual(sorted(df[df["source"] == "estimate"]["t"].unique()), [1, 2])
        self.assertEqual(sorted(trace.outputs), list(range(3, 11)))
        self.assertEqual(list(trace.mean_nmse_by_step().index), list(range(3, 11)))

    def test_two_blocks_rerun_stages(self):
        _, trace = self.run_trace(20, 10)
        self.assertEqual(trace.stage_runs, 2)
        self.assertEqual(trace.pilots, 2 * pilot_slots_per_block(CFG.N, CFG.K, CFG.M, CFG.S))
        self.assertEqual([b.start for b in trace.blocks], [1, 11])
        df = trace.to_frame()
        self.assertEqual(sorted(df[df["source"] == "estimate"]["t"].unique()), [1, 2, 11, 12])
        self.assertEqual(set(df["block"]), {1, 2})

    def test_one_decomposition_per_block(self):
        _, trace = self.run_trace(20, 10)
        for record in trace.blocks:
            first = record.start + CFG.S
            for t in range(first, record.start + 10):
                out = trace.outputs[t]
                np.testing.assert_allclose(out.H_tilde, record.G_tilde[None] * out.h_tilde[:, None, :])

    def test_genie_window_matches_bare_model(self):
        blocks, trace = self.run_trace(10, 10, g1_source="genie", stage2_source="genie")
        ep = blocks[0]
        window = np.stack([ep.cascaded(s) for s in range(1, CFG.S + 1)], axis=1)
        bare = predict_window(self.params, window)
        out = trace.outputs[CFG.S + 1]
        np.testing.assert_allclose(out.H_tilde, bare.H_tilde[0], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(out.h_tilde, bare.h_tilde[0], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(trace.blocks[0].G_tilde, bare.G_tilde[0], rtol=1e-12, atol=1e-14)

    def test_genie_g1_anchors_first_row(self):
        blocks, trace = self.run_trace(20, 10, g1_source="genie")
        for record, ep in zip(trace.blocks, blocks):
            np.testing.assert_allclose(record.G_hat[0], ep.G[0], rtol=1e-10)
            np.testing.assert_array_equal(record.g1_hat, ep.G[0])

    def test_refinement_columns(self):
        _, trace = self.run_trace(6, 6, refine=True, data_symbols=4)
        df = trace.to_frame()
        predicted = df[df["source"] == "predicted"]
        self.assertTrue(predicted["nmse_refined"].notna().all())
        self.assertTrue(df[df["source"] == "estimate"]["nmse_refined"].isna().all())

    def test_short_block_skips_prediction(self):
        _, trace = self.run_trace(11, 10)
        self.assertEqual(trace.stage_runs, 2)
        self.assertNotIn(11, trace.outputs)

    def test_rejects_mismatched_inputs(self):
        blocks = gen_stream(CFG, 10, 10, Rng(23))
        with self.assertRaises(CheckpointIncompatibleError):
            predict_online(init_params(3, CFG.N, Rng(24)), blocks, CFG, 10, 10, Rng(25))
        with self.assertRaises(CheckpointIncompatibleError):
            predict_online(self.params, blocks, CFG, 10, 10, Rng(25), meta={"M": 2, "N": 4, "K": 2, "S": 3})
        with self.assertRaises(InvalidInputError):
            predict_online(self.params, blocks, CFG, CFG.S, 10, Rng(25))
        with self.assertRaises(InvalidInputError):
            predict_online(self.params, blocks, CFG, 20, 10, Rng(25))
