"""
Two-timescale channel generation.

G (BS-RIS, M x N) follows a Saleh-Valenzuela sum of L_G rank-one paths and is
held fixed for a whole large-timescale block. Each RIS-UE channel h_k(s) is a
sum of L_k paths whose phases rotate with their Doppler shift from step to
step. The cascaded channel is H_k(s) = G diag(h_k(s)).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import InvalidDimensionError, InvalidInputError
from .numerics import ComplexMatrix, Rng, as_matrix, sample_cn
from .schemas import SystemConfig

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PathSet:
    """Per-path gains, angles (rad) and Doppler shifts (Hz) of one RIS-UE channel."""
    gains: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray
    doppler: np.ndarray

    def __len__(self) -> int:
        return int(self.gains.shape[0])


@dataclass(frozen=True)
class BsRisPaths:
    gains: np.ndarray
    bs_azimuth: np.ndarray
    bs_elevation: np.ndarray
    ris_azimuth: np.ndarray
    ris_elevation: np.ndarray


@dataclass(frozen=True)
class Episode:
    """
    One large-timescale block: fixed G and per-step h_k(s), H_k(s).

    ``h`` has shape (K, T, N) and ``H`` shape (K, T, M, N); index ``i`` along T
    is absolute step ``start_step + i``.
    """
    G: ComplexMatrix
    paths: Tuple[PathSet, ...]
    h: np.ndarray
    H: np.ndarray
    start_step: int = 1
    bs_paths: BsRisPaths = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return int(self.h.shape[1])

    @property
    def K(self) -> int:
        return int(self.h.shape[0])

    def index(self, s: int) -> int:
        i = s - self.start_step
        if not 0 <= i < self.steps:
            raise InvalidInputError(f"step {s} outside episode [{self.start_step}, {self.start_step + self.steps - 1}]")
        return i

    def cascaded(self, s: int) -> np.ndarray:
        """H_k(s) for all users, shape (K, M, N)."""
        return self.H[:, self.index(s)]

    def ris_ue(self, s: int) -> np.ndarray:
        return self.h[:, self.index(s)]


def steering_vector(theta: float, phi: float, Nx: int, Ny: int) -> ComplexMatrix:
    """Half-wavelength UPA response, (Nx*Ny) x 1, n_x varying fastest, unit norm."""
    if Nx < 1 or Ny < 1:
        raise InvalidDimensionError(f"array grid must be >= 1x1, got {Nx}x{Ny}")
    nx = np.arange(Nx)
    ny = np.arange(Ny)
    phase = np.add.outer(ny * np.cos(phi), nx * np.sin(theta) * np.sin(phi))
    a = np.exp(1j * np.pi * phase).reshape(-1, 1)
    return a / np.sqrt(Nx * Ny)


def gen_bs_ris_channel(cfg: SystemConfig, rng: Rng) -> Tuple[ComplexMatrix, BsRisPaths]:
    Mx, My = cfg.bs_grid
    L = cfg.L_G
    alpha = sample_cn(L, 1, 1.0, rng).ravel()
    angles = rng.uniform(0.0, TWO_PI, (4, L))
    G = np.zeros((cfg.M, cfg.N), dtype=np.complex128)
    for rho in range(L):
        a_bs = steering_vector(angles[0, rho], angles[1, rho], Mx, My)
        a_ris = steering_vector(angles[2, rho], angles[3, rho], cfg.Nx, cfg.Ny)
        G += alpha[rho] * (a_bs @ a_ris.conj().T)
    G *= np.sqrt(cfg.M * cfg.N / L)
    meta = BsRisPaths(alpha, angles[0], angles[1], angles[2], angles[3])
    return G, meta


def gen_ris_ue_paths(cfg: SystemConfig, rng: Rng) -> PathSet:
    L = cfg.L_k
    gains = sample_cn(L, 1, 1.0, rng).ravel()
    azimuth = rng.uniform(0.0, TWO_PI, L)
    elevation = rng.uniform(0.0, TWO_PI, L)
    doppler = rng.uniform(0.0, 1.0, L) * cfg.f_max
    return PathSet(gains, azimuth, elevation, doppler)


def eval_ris_ue_channel(paths: PathSet, s: int, cfg: SystemConfig) -> ComplexMatrix:
    """h(s) = sqrt(N/L_k) sum_g beta_g exp(j 2 pi f_g T s) a(psi_g, phi_g)."""
    if s < 0:
        raise InvalidInputError(f"step index must be >= 0, got {s}")
    rotation = np.exp(1j * TWO_PI * paths.doppler * cfg.step_duration_s * s)
    h = np.zeros((cfg.N, 1), dtype=np.complex128)
    for g in range(len(paths)):
        a = steering_vector(paths.azimuth[g], paths.elevation[g], cfg.Nx, cfg.Ny)
        h += paths.gains[g] * rotation[g] * a
    return h * np.sqrt(cfg.N / len(paths))


def cascade(G: np.ndarray, h: np.ndarray) -> ComplexMatrix:
    """H = G diag(h)."""
    G = as_matrix(G)
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim == 2 and h.shape[1] == 1:
        h = h[:, 0]
    if h.ndim != 1 or h.shape[0] != G.shape[1]:
        raise InvalidDimensionError(f"cannot cascade G {G.shape} with h {np.shape(h)}")
    return G * h[np.newaxis, :]


def _episode(cfg: SystemConfig, G, bs_paths, paths: List[PathSet], start_step: int, steps: int) -> Episode:
    h = np.empty((cfg.K, steps, cfg.N), dtype=np.complex128)
    for k, p in enumerate(paths):
        for i in range(steps):
            h[k, i] = eval_ris_ue_channel(p, start_step + i, cfg)[:, 0]
    H = G[np.newaxis, np.newaxis, :, :] * h[:, :, np.newaxis, :]
    return Episode(G=G, paths=tuple(paths), h=h, H=H, start_step=start_step, bs_paths=bs_paths)


def gen_episode(cfg: SystemConfig, total_steps: int, rng: Rng) -> Episode:
    """One G and S_total steps of h_k(s), H_k(s) for s = 1..total_steps."""
    if total_steps < cfg.S + 1:
        raise InvalidInputError(f"total_steps={total_steps} must be >= S+1={cfg.S + 1}")
    G, bs_paths = gen_bs_ris_channel(cfg, rng.child(0))
    paths = [gen_ris_ue_paths(cfg, rng.child(1, k)) for k in range(cfg.K)]
    return _episode(cfg, G, bs_paths, paths, 1, total_steps)


def gen_stream(cfg: SystemConfig, total_steps: int, block_steps: int, rng: Rng) -> List[Episode]:
    """
    Consecutive large-timescale blocks covering steps 1..total_steps.

    The UE paths persist across blocks; G is redrawn at every block boundary.
    """
    if block_steps < 1 or total_steps < 1:
        raise InvalidInputError("block_steps and total_steps must be >= 1")
    paths = [gen_ris_ue_paths(cfg, rng.child(1, k)) for k in range(cfg.K)]
    blocks = []
    for b, start in enumerate(range(1, total_steps + 1, block_steps)):
        steps = min(block_steps, total_steps - start + 1)
        G, bs_paths = gen_bs_ris_channel(cfg, rng.child(0, b))
        blocks.append(_episode(cfg, G, bs_paths, paths, start, steps))
    logger.debug("generated %d blocks of up to %d steps", len(blocks), block_steps)
    return blocks
