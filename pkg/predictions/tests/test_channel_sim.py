import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from predictions.services.channel_sim import (
    cascade, eval_ris_ue_channel, gen_bs_ris_channel, gen_episode, gen_ris_ue_paths, gen_stream, steering_vector,
)
from predictions.services.errors import InvalidDimensionError, InvalidInputError
from predictions.services.numerics import Rng, sample_cn
from predictions.services.schemas import SystemConfig


def small_cfg(**kw):
    base = dict(M=2, K=2, Nx=4, Ny=2, L_G=3, L_k=3, S=4)
    base.update(kw)
    return SystemConfig(**base)


class SteeringVectorTests(SimpleTestCase):
    @settings(deadline=None, max_examples=25)
    @given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi), st.integers(1, 6), st.integers(1, 6))
    def test_unit_norm(self, theta, phi, nx, ny):
        a = steering_vector(theta, phi, nx, ny)
        self.assertEqual(a.shape, (nx * ny, 1))
        self.assertAlmostEqual(float(np.linalg.norm(a)), 1.0, places=12)

    def test_horizontal_index_varies_fastest(self):
        theta, phi = 0.3, 1.1
        a = steering_vector(theta, phi, 3, 2).ravel() * np.sqrt(6)
        expected = [np.exp(1j * np.pi * (ny * np.cos(phi) + nx * np.sin(theta) * np.sin(phi)))
                    for ny in range(2) for nx in range(3)]
        np.testing.assert_allclose(a, expected, atol=1e-12)

    def test_rejects_empty_grid(self):
        with self.assertRaises(InvalidDimensionError):
            steering_vector(0.0, 0.0, 0, 1)


class ChannelTests(SimpleTestCase):
    def test_doppler_limit_follows_carrier_and_speed(self):
        self.assertAlmostEqual(SystemConfig().f_max, 280.0)

    def test_bs_ris_channel_shape_and_power(self):
        cfg = small_cfg()
        powers = []
        for i in range(200):
            G, meta = gen_bs_ris_channel(cfg, Rng(1, (i,)))
            self.assertEqual(G.shape, (cfg.M, cfg.N))
            powers.append(np.sum(np.abs(G) ** 2))
        self.assertEqual(meta.gains.shape, (cfg.L_G,))
        # E||G||_F^2 = M*N with unit-variance path gains
        self.assertAlmostEqual(np.mean(powers) / (cfg.M * cfg.N), 1.0, delta=0.2)

    def test_ris_ue_channel_rotates_with_doppler(self):
        cfg = small_cfg(L_k=1)
        paths = gen_ris_ue_paths(cfg, Rng(4))
        h0 = eval_ris_ue_channel(paths, 0, cfg)
        h5 = eval_ris_ue_channel(paths, 5, cfg)
        rot = np.exp(1j * 2 * np.pi * paths.doppler[0] * cfg.step_duration_s * 5)
        np.testing.assert_allclose(h5, h0 * rot, atol=1e-12)

    def test_negative_step_rejected(self):
        cfg = small_cfg()
        with self.assertRaises(InvalidInputError):
            eval_ris_ue_channel(gen_ris_ue_paths(cfg, Rng(0)), -1, cfg)

    @settings(deadline=None, max_examples=20)
    @given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000))
    def test_cascade_is_column_scaling(self, M, N, seed):
        r = Rng(seed)
        G = sample_cn(M, N, 1.0, r.child(0))
        h = sample_cn(N, 1, 1.0, r.child(1))
        np.testing.assert_allclose(cascade(G, h), G @ np.diag(h.ravel()), atol=1e-12)

    def test_cascade_shape_mismatch(self):
        with self.assertRaises(InvalidDimensionError):
            cascade(np.ones((2, 3)), np.ones(4))


class EpisodeTests(SimpleTestCase):
    def test_episode_is_cascade_of_its_factors(self):
        cfg = small_cfg()
        ep = gen_episode(cfg, cfg.S + 1, Rng(5))
        self.assertEqual(ep.H.shape, (cfg.K, cfg.S + 1, cfg.M, cfg.N))
        for s in range(1, cfg.S + 2):
            for k in range(cfg.K):
                np.testing.assert_allclose(ep.cascaded(s)[k], cascade(ep.G, ep.ris_ue(s)[k]), atol=1e-12)

    def test_episode_is_deterministic(self):
        cfg = small_cfg()
        a = gen_episode(cfg, 6, Rng(9))
        b = gen_episode(cfg, 6, Rng(9))
        np.testing.assert_array_equal(a.H, b.H)
        self.assertFalse(np.allclose(a.H, gen_episode(cfg, 6, Rng(10)).H))

    def test_episode_too_short(self):
        cfg = small_cfg()
        with self.assertRaises(InvalidInputError):
            gen_episode(cfg, cfg.S, Rng(0))

    def test_step_outside_episode(self):
        cfg = small_cfg()
        ep = gen_episode(cfg, 5, Rng(0))
        with self.assertRaises(InvalidInputError):
            ep.cascaded(6)

    def test_stream_redraws_G_per_block_and_keeps_paths(self):
        cfg = small_cfg()
        blocks = gen_stream(cfg, 25, 10, Rng(2))
        self.assertEqual([b.start_step for b in blocks], [1, 11, 21])
        self.assertEqual([b.steps for b in blocks], [10, 10, 5])
        self.assertFalse(np.allclose(blocks[0].G, blocks[1].G))
        np.testing.assert_array_equal(blocks[0].paths[0].gains, blocks[2].paths[0].gains)
        # the RIS-UE channel is continuous across the boundary
        h11 = eval_ris_ue_channel(blocks[0].paths[1], 11, cfg).ravel()
        np.testing.assert_allclose(blocks[1].ris_ue(11)[1], h11, atol=1e-12)
