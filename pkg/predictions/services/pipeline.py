"""
Online continuous prediction.

Each large-timescale block starts with stage 1 (g1) and stage 2 (cascaded
estimates for the first S steps); afterwards no pilots are sent and the SCLSTM
predicts one step ahead from a sliding window of the S most recent cascaded
channels, which is refilled with its own outputs (or their decision-directed
refinement). Outputs are anchored to the block's g1 estimate.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .channel_sim import Episode
from .errors import (CheckpointIncompatibleError, IllConditionedCorrectionError, InvalidDimensionError,
                     InvalidInputError, RankDeficiencyError)
from .numerics import Rng, dft_matrix, ls_solve, sample_cn
from .pilots import EstimationReport, nmse, perturb_g1, run_stages
from .schemas import SystemConfig
from .sclstm import SclstmParams, predict_window
from .training import check_compatible

logger = logging.getLogger(__name__)

CORRECTION_TOL = 1e-12
TRACE_COLUMNS = ["t", "k", "block", "source", "nmse_H", "nmse_G", "nmse_h", "refined", "nmse_refined",
                 "symbol_errors", "pilots_cumulative"]


def _first_small(values: np.ndarray) -> Optional[int]:
    mags = np.abs(values)
    peak = float(np.max(mags)) if mags.size else 0.0
    small = np.flatnonzero(mags <= CORRECTION_TOL * peak) if peak > 0 else np.arange(mags.size)
    return int(small[0]) if small.size else None


def correct_scaling(G_tilde: np.ndarray, h_tilde: np.ndarray, g1_hat: np.ndarray):
    """
    Anchor a decomposition to g1_hat: D = G~[0] / g1_hat, G_hat = G~ D^-1,
    h_hat_k = D h~_k. Returns (G_hat, h_hat) with h_hat shaped like ``h_tilde``.
    """
    G_tilde = np.asarray(G_tilde, dtype=np.complex128)
    h_tilde = np.asarray(h_tilde, dtype=np.complex128)
    g1_hat = np.asarray(g1_hat, dtype=np.complex128).reshape(-1)
    if G_tilde.ndim != 2 or g1_hat.shape[0] != G_tilde.shape[1] or h_tilde.shape[-1] != G_tilde.shape[1]:
        raise InvalidDimensionError(f"G~ {G_tilde.shape}, h~ {h_tilde.shape}, g1 {g1_hat.shape} are inconsistent")
    bad = _first_small(g1_hat)
    if bad is not None:
        raise IllConditionedCorrectionError(bad, where="g1_hat")
    bad = _first_small(G_tilde[0])
    if bad is not None:
        raise IllConditionedCorrectionError(bad, where="first row of G~")
    delta = G_tilde[0] / g1_hat
    return G_tilde / delta[np.newaxis, :], h_tilde * delta


QPSK = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))


def qpsk_symbols(shape, rng: Rng) -> np.ndarray:
    return QPSK[rng.integers(0, 4, shape)]


def hard_decide(z: np.ndarray, constellation: np.ndarray = QPSK) -> np.ndarray:
    """Nearest constellation point, elementwise."""
    z = np.asarray(z, dtype=np.complex128)
    idx = np.argmin(np.abs(z[..., np.newaxis] - constellation), axis=-1)
    return constellation[idx]


def data_reflection(kind: str, N: int, rng: Optional[Rng] = None) -> np.ndarray:
    """Base reflection vector during data transmission: all-ones or random phases."""
    if kind == "ones":
        return np.ones(N, dtype=np.complex128)
    if kind == "random":
        if rng is None:
            raise InvalidInputError("random reflection needs a random source")
        return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, N))
    raise InvalidInputError(f"unknown reflection kind {kind!r}")


def data_patterns(base: np.ndarray) -> np.ndarray:
    """N sub-block reflections: DFT columns modulated by ``base`` (full rank for unit-modulus base)."""
    base = np.asarray(base, dtype=np.complex128).reshape(-1)
    return base[:, np.newaxis] * dft_matrix(base.shape[0])


def synth_data_rx(H: np.ndarray, patterns: np.ndarray, symbols: np.ndarray, sigma2: float, rng: Rng) -> np.ndarray:
    """Y_j = sum_k H_k v_j s_kj^T + noise; H (K, M, N), symbols (J, K, D) -> (J, M, D)."""
    H = np.asarray(H, dtype=np.complex128)
    eff = np.einsum("kmn,nj->jmk", H, patterns)
    Y = eff @ symbols
    J, M, D = Y.shape
    return Y + sample_cn(J * M, D, sigma2, rng).reshape(J, M, D)


@dataclass
class RefineResult:
    H_hat: np.ndarray
    symbol_errors: int
    reliable: bool


def decision_directed_refine(H_tilde: np.ndarray, Y: np.ndarray, patterns: np.ndarray, sigma2: float,
                             symbols: Optional[np.ndarray] = None,
                             constellation: np.ndarray = QPSK) -> RefineResult:
    """
    Detect data with the predicted cascaded channels, then re-estimate them from
    the decided symbols used as pilots.

    Per sub-block j the effective channels H~_k v_j are LS-combined and
    hard-decided; the decided symbols give LS estimates of H_k v_j, and stacking
    those over all sub-blocks solves H_k V = A_k. ``symbols`` (J, K, D), when
    given, is only used to count detection errors. The result is flagged
    unreliable when a combined stream is rank deficient or below the noise
    floor; a rank-deficient re-estimation returns H_tilde unchanged.
    """
    H_tilde = np.asarray(H_tilde, dtype=np.complex128)
    Y = np.asarray(Y, dtype=np.complex128)
    if Y.size == 0 or Y.ndim != 3 or Y.shape[2] == 0:
        raise InvalidInputError("empty data block")
    K, M, N = H_tilde.shape
    J = Y.shape[0]
    if patterns.shape != (N, J) or Y.shape[1] != M:
        raise InvalidDimensionError(f"data {Y.shape} and patterns {patterns.shape} do not match H~ {H_tilde.shape}")

    reliable = True
    decided = np.empty((J, K, Y.shape[2]), dtype=np.complex128)
    for j in range(J):
        eff = H_tilde @ patterns[:, j]                    # (K, M)
        sv = np.linalg.svd(eff.T, compute_uv=False)
        if sv.size < K or sv[-1] <= 1e-12 * max(float(sv[0]), 1e-300) or sv[-1] ** 2 < sigma2:
            reliable = False
        combined = np.linalg.lstsq(eff.T, Y[j], rcond=None)[0]
        decided[j] = hard_decide(combined, constellation)
    errors = int(np.sum(~np.isclose(decided, symbols))) if symbols is not None else 0

    try:
        A = np.stack([ls_solve(decided[j].T, Y[j].T).T for j in range(J)], axis=-1)   # (M, K, J)
        H_hat = np.stack([ls_solve(patterns.T, A[:, k].T).T for k in range(K)])
    except RankDeficiencyError as e:
        logger.debug("refinement skipped: %s", e)
        return RefineResult(H_tilde.copy(), errors, False)
    return RefineResult(H_hat, errors, reliable)


@dataclass
class BlockRecord:
    index: int
    start: int
    report: EstimationReport
    g1_hat: np.ndarray
    G_tilde: Optional[np.ndarray] = None
    G_hat: Optional[np.ndarray] = None


@dataclass
class StepOutput:
    H_tilde: np.ndarray       # (K, M, N)
    h_tilde: np.ndarray       # (K, N)
    h_hat: np.ndarray         # (K, N), scaling-corrected


@dataclass
class PredictionTrace:
    blocks: List[BlockRecord] = field(default_factory=list)
    outputs: Dict[int, StepOutput] = field(default_factory=dict)
    rows: List[Dict[str, object]] = field(default_factory=list)
    pilots: int = 0

    @property
    def stage_runs(self) -> int:
        return len(self.blocks)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TRACE_COLUMNS)

    def mean_nmse_by_step(self) -> pd.Series:
        df = self.to_frame()
        df = df[df["source"] == "predicted"]
        return df.groupby("t")["nmse_H"].mean()


def predict_online(params: SclstmParams, blocks: List[Episode], cfg: SystemConfig, T_C: int, T_L: int, rng: Rng,
                   g1_source: str = "stage1", g1_nmse: float = 1e-3, stage2_source: str = "estimate",
                   refine: bool = False, data_symbols: int = 8, reflection: str = "ones",
                   meta: Optional[Dict[str, int]] = None) -> PredictionTrace:
    """
    Run the online loop over steps 1..T_C.

    ``blocks`` are consecutive episodes of ``T_L`` steps (see ``gen_stream``).
    Block b starts at t0 = (b-1)*T_L + 1; stages 1-2 cover t0..t0+S-1 and the
    network predicts t0+S..min(b*T_L, T_C) with one G~ per block.
    """
    S = cfg.S
    if meta is not None:
        check_compatible(meta, cfg)
    if (params.M, params.N) != (cfg.M, cfg.N):
        raise CheckpointIncompatibleError(f"model is {params.M}x{params.N}, config is {cfg.M}x{cfg.N}")
    if T_C < S + 1:
        raise InvalidInputError(f"T_C={T_C} must be >= S+1={S + 1}")
    if T_L < 1:
        raise InvalidInputError("T_L must be >= 1")
    if g1_source not in ("genie", "stage1", "perturbed"):
        raise InvalidInputError(f"unknown g1 source {g1_source!r}")

    trace = PredictionTrace()
    for b, start in enumerate(range(1, T_C + 1, T_L)):
        if b >= len(blocks):
            raise InvalidInputError(f"stream has {len(blocks)} blocks, T_C={T_C} needs more")
        ep = blocks[b]
        if ep.start_step != start:
            raise InvalidInputError(f"block {b} starts at {ep.start_step}, expected {start}")
        end = min(start + T_L - 1, T_C)
        n_est = min(S, end - start + 1)
        est_steps = tuple(range(start, start + n_est))
        brng = rng.child(b)

        override = None
        if g1_source == "genie":
            override = ep.G[0]
        elif g1_source == "perturbed":
            override = perturb_g1(ep.G[0], g1_nmse, brng.child(1))
        report = run_stages(cfg, ep, est_steps, brng.child(0), g1_override=override)
        record = BlockRecord(b, start, report, report.g1_hat)
        trace.blocks.append(record)
        trace.pilots += report.pilot_slots
        logger.info("block %d: stages 1-2 at t=%d (%s stage 2, %d pilot slots)", b, start, report.mode,
                    report.pilot_slots)

        window = deque(maxlen=S)
        for i, s in enumerate(est_steps):
            H_s = ep.cascaded(s) if stage2_source == "genie" else report.H_hat[:, i]
            window.append(H_s)
            for k in range(cfg.K):
                trace.rows.append(_row(s, k, b, "estimate", nmse(report.H_hat[k, i], ep.cascaded(s)[k]),
                                       np.nan, np.nan, False, np.nan, 0, trace.pilots))
        if n_est < S:
            continue

        base = data_reflection(reflection, cfg.N, brng.child(2))
        for t in range(start + S, end + 1):
            fw = predict_window(params, np.stack(window, axis=1))
            h_tilde = fw.h_tilde[0]
            if record.G_tilde is None:
                record.G_tilde = fw.G_tilde[0]
                record.G_hat, _ = correct_scaling(record.G_tilde, h_tilde, record.g1_hat)
            G_tilde = record.G_tilde
            H_tilde = G_tilde[np.newaxis] * h_tilde[:, np.newaxis, :]
            _, h_hat = correct_scaling(G_tilde, h_tilde, record.g1_hat)
            trace.outputs[t] = StepOutput(H_tilde, h_tilde, h_hat)

            H_true = ep.cascaded(t)
            h_true = ep.ris_ue(t)
            nmse_G = nmse(record.G_hat, ep.G)
            next_entry = H_tilde
            refined = None
            if refine:
                patterns = data_patterns(base)
                drng = brng.child(3, t)
                symbols = qpsk_symbols((cfg.N, cfg.K, data_symbols), drng.child(0))
                Y = synth_data_rx(H_true, patterns, symbols, cfg.noise_variance, drng.child(1))
                refined = decision_directed_refine(H_tilde, Y, patterns, cfg.noise_variance, symbols)
                if refined.reliable:
                    next_entry = refined.H_hat
            for k in range(cfg.K):
                trace.rows.append(_row(
                    t, k, b, "predicted", nmse(H_tilde[k], H_true[k]), nmse_G, nmse(h_hat[k], h_true[k]),
                    refined is not None and refined.reliable,
                    nmse(refined.H_hat[k], H_true[k]) if refined is not None else np.nan,
                    refined.symbol_errors if refined is not None else 0, trace.pilots))
            window.append(next_entry)
    return trace


def _row(t, k, block, source, nmse_H, nmse_G, nmse_h, refined, nmse_refined, symbol_errors, pilots):
    return {"t": t, "k": k, "block": block + 1, "source": source, "nmse_H": nmse_H, "nmse_G": nmse_G,
            "nmse_h": nmse_h, "refined": bool(refined), "nmse_refined": nmse_refined,
            "symbol_errors": int(symbol_errors), "pilots_cumulative": pilots}
