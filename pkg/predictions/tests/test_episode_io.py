import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from predictions.services.channel_sim import gen_stream
from predictions.services.episode_io import (
    dumps_episode, episode_from_text, episode_to_text, load_episode, loads_episode, save_episode,
)
from predictions.services.errors import FormatError
from predictions.services.numerics import Rng
from predictions.services.schemas import SystemConfig


class EpisodeSerializationTests(SimpleTestCase):
    def setUp(self):
        cfg = SystemConfig(M=2, K=3, Nx=2, Ny=2, S=2)
        self.ep = gen_stream(cfg, 12, 6, Rng(3))[1]

    def assertSameEpisode(self, a, b):
        np.testing.assert_array_equal(a.G, b.G)
        np.testing.assert_array_equal(a.h, b.h)
        np.testing.assert_array_equal(a.H, b.H)
        self.assertEqual(a.start_step, b.start_step)
        for pa, pb in zip(a.paths, b.paths):
            np.testing.assert_array_equal(pa.gains, pb.gains)
            np.testing.assert_array_equal(pa.doppler, pb.doppler)
        self.assertEqual(a.bs_paths is None, b.bs_paths is None)
        if a.bs_paths is not None:
            for name in ("gains", "bs_azimuth", "bs_elevation", "ris_azimuth", "ris_elevation"):
                np.testing.assert_array_equal(getattr(a.bs_paths, name), getattr(b.bs_paths, name))

    def test_binary_is_lossless(self):
        data = dumps_episode(self.ep)
        self.assertEqual(data[:4], b"RISE")
        self.assertSameEpisode(self.ep, loads_episode(data))

    def test_text_is_lossless(self):
        self.assertSameEpisode(self.ep, episode_from_text(episode_to_text(self.ep)))

    def test_bs_ris_paths_survive_both_formats(self):
        self.assertEqual(len(self.ep.bs_paths.gains), 3)
        for loaded in (loads_episode(dumps_episode(self.ep)), episode_from_text(episode_to_text(self.ep))):
            np.testing.assert_array_equal(loaded.bs_paths.gains, self.ep.bs_paths.gains)
            np.testing.assert_array_equal(loaded.bs_paths.ris_elevation, self.ep.bs_paths.ris_elevation)

    def test_episode_without_bs_ris_paths(self):
        bare = replace(self.ep, bs_paths=None)
        self.assertIsNone(loads_episode(dumps_episode(bare)).bs_paths)
        self.assertIsNone(episode_from_text(episode_to_text(bare)).bs_paths)
        self.assertLess(len(dumps_episode(bare)), len(dumps_episode(self.ep)))

    def test_files_pick_format_by_suffix(self):
        with tempfile.TemporaryDirectory() as tmp:
            for name in ("ep.rise", "ep.json"):
                path = save_episode(self.ep, Path(tmp) / name)
                self.assertSameEpisode(self.ep, load_episode(path))
            self.assertTrue((Path(tmp) / "ep.json").read_text().startswith("{"))

    def test_bad_magic(self):
        data = bytearray(dumps_episode(self.ep))
        data[:4] = b"XXXX"
        with self.assertRaises(FormatError):
            loads_episode(bytes(data))

    def test_truncated_and_trailing_bytes(self):
        data = dumps_episode(self.ep)
        with self.assertRaises(FormatError):
            loads_episode(data[:-8])
        with self.assertRaises(FormatError):
            loads_episode(data + b"\0")
        with self.assertRaises(FormatError):
            loads_episode(data[:10])

    def test_text_rejects_other_documents(self):
        with self.assertRaises(FormatError):
            episode_from_text('{"format": "something-else"}')
        with self.assertRaises(FormatError):
            episode_from_text("not json")
