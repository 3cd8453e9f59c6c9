"""
Closed-form pilot overhead, feasibility thresholds, parameter and complexity
counts, and the downlink sum rate.

Counts are exact: overhead quantities are carried as ``fractions.Fraction`` and
only converted to float for reporting.
"""
import logging
import math
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import (DomainError, InfeasibleBaselineError, InfiniteSinrError, InternalInvariantError,
                     InvalidDimensionError, InvalidInputError, RankDeficiencyError)
from .numerics import RANK_TOL
from .pilots import block_pilot_slots, ceil_div, stage2_mode
from .schemas import OverheadReport, SystemConfig

logger = logging.getLogger(__name__)

METHODS = ("SCLSTM", "MVU", "PARAFAC-VAMP", "Two-timescale")


def pilot_slots_per_block(N: int, K: int, M: int, S: int) -> int:
    """P_L = 3N + 2 + K S ceil(N/M): stage 1 (N), reference step (2(N+1)), S reduced steps."""
    return 3 * N + 2 + K * S * ceil_div(N, M)


def parafac_pilot_length(cfg: SystemConfig, P: Optional[int] = None) -> int:
    P = ceil_div(cfg.N, cfg.M) if P is None else P
    if P < 1 or cfg.M * P < cfg.N:
        raise InfeasibleBaselineError(f"PARAFAC-VAMP needs M*P >= N, got M={cfg.M}, P={P}, N={cfg.N}")
    return P


def baseline_pilots(cfg: SystemConfig, tau: Fraction, P: Optional[int] = None) -> Dict[str, Fraction]:
    """Average pilot slots per small-timescale block for each baseline."""
    N, K, M = cfg.N, cfg.K, cfg.M
    P = parafac_pilot_length(cfg, P)
    return {
        "MVU": Fraction(N * K),
        "PARAFAC-VAMP": Fraction(K * M * P),
        "Two-timescale": Fraction(2 * (N + 1)) / tau + K * ceil_div(N, M),
    }


def data_coefficient(T_S, P_a) -> Fraction:
    return (Fraction(T_S) - Fraction(P_a)) / Fraction(T_S)


def feasibility_tau_bounds(cfg: SystemConfig) -> Tuple[Fraction, Fraction, Fraction]:
    """
    Thresholds on tau = T_L/T_S above which SCLSTM's pilots beat the baselines:
    the relaxed bound 3/K + S/M + S/N + 2/(NK), the exact P_L/(NK), and M/K + S.
    """
    N, K, M, S = cfg.N, cfg.K, cfg.M, cfg.S
    loose = Fraction(3, K) + Fraction(S, M) + Fraction(S, N) + Fraction(2, N * K)
    exact = Fraction(pilot_slots_per_block(N, K, M, S), N * K)
    two_timescale = Fraction(M, K) + S
    if loose < exact:
        raise InternalInvariantError(f"relaxed bound {loose} below exact threshold {exact}")
    return loose, exact, two_timescale


def pilot_overhead(cfg: SystemConfig, parafac_P: Optional[int] = None) -> OverheadReport:
    P_L = pilot_slots_per_block(cfg.N, cfg.K, cfg.M, cfg.S)
    tau = Fraction(cfg.tau)
    P_a = P_L / tau
    P = parafac_pilot_length(cfg, parafac_P)
    loose, exact, two_timescale = feasibility_tau_bounds(cfg)
    mode = stage2_mode(cfg)
    return OverheadReport(
        P_L=P_L, tau=float(tau), T_S=float(cfg.T_S), T_L=float(cfg.T_L), P_a=float(P_a),
        lambda_d=float(data_coefficient(cfg.T_S, P_a)),
        baseline_P_a={k: float(v) for k, v in baseline_pilots(cfg, tau, P).items()},
        tau_prop1_loose=float(loose), tau_prop1_exact=float(exact), tau_prop2=float(two_timescale), parafac_P=P,
        stage2_mode=mode, P_L_trace=block_pilot_slots(cfg, mode),
    )


def lambda_curve(cfg: SystemConfig, T_L: int, ts_values: Iterable[int], parafac_P: Optional[int] = None) -> List[dict]:
    """
    Data coefficient of every method for each T_S at a fixed T_L (tau = T_L/T_S).
    Points where a method needs more pilot slots than T_S are flagged infeasible
    and carry no coefficient.
    """
    P_L = pilot_slots_per_block(cfg.N, cfg.K, cfg.M, cfg.S)
    rows = []
    for T_S in ts_values:
        if T_S < 1:
            raise InvalidInputError(f"T_S must be >= 1, got {T_S}")
        tau = Fraction(T_L, T_S)
        costs = {"SCLSTM": P_L / tau, **baseline_pilots(cfg, tau, parafac_P)}
        for method in METHODS:
            P_a = costs[method]
            feasible = P_a <= T_S
            rows.append({
                "T_S": T_S, "tau": float(tau), "method": method, "P_a": float(P_a),
                "lambda_d": float(data_coefficient(T_S, P_a)) if feasible else math.nan,
                "feasible": feasible,
            })
    return rows


def intersections(cfg: SystemConfig, T_L: int) -> List[dict]:
    """Points where SCLSTM's flat coefficient 1 - P_L/T_L meets the Two-timescale and MVU curves."""
    _, exact, two_timescale = feasibility_tau_bounds(cfg)
    ordinate = 1 - Fraction(pilot_slots_per_block(cfg.N, cfg.K, cfg.M, cfg.S), T_L)
    return [
        {"against": "Two-timescale", "tau": float(two_timescale), "T_S": float(Fraction(T_L) / two_timescale),
         "lambda_d": float(ordinate)},
        {"against": "MVU", "tau": float(exact), "T_S": float(Fraction(T_L) / exact), "lambda_d": float(ordinate)},
    ]


def lstm_param_count(n_in: int, cells: Sequence[int], n_out: int) -> int:
    """Trainable parameters of stacked LSTM layers plus a dense output layer."""
    cells = list(cells)
    if not cells:
        raise InvalidInputError("at least one LSTM layer is required")
    if n_in < 1 or n_out < 1 or any(c < 1 for c in cells):
        raise InvalidInputError("layer sizes must be >= 1")
    total, prev = 0, n_in
    for n in cells:
        total += 4 * (prev * n + n * n + n)
        prev = n
    return total + prev * n_out + n_out


def sclstm_complexity(M: int, N: int, K: int) -> int:
    """360 K N^2 + (4KM + 4M + 42K) N."""
    if min(M, N, K) < 1:
        raise InvalidInputError(f"M, N, K must be >= 1, got {M}, {N}, {K}")
    return 360 * K * N * N + (4 * K * M + 4 * M + 42 * K) * N


def baseline_complexity(M: int, N: int, K: int, L: int, i_max: int = 100) -> Dict[str, int]:
    return {
        "MVU": N ** 3 + K * N ** 2,
        "PARAFAC-VAMP": (K + M) * (5 * N ** 2 - N),
        "Two-timescale": 2 * N ** 3 + (K + M * L) * N ** 2 + M * L * N * i_max,
    }


def effective_channels(H: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """b_k = H_k e^{-j theta} = G Theta^H h_k; (K, M, N) -> (K, M). User k sees b_k^H w."""
    H = np.asarray(H, dtype=np.complex128)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if H.ndim != 3 or H.shape[2] != theta.shape[0]:
        raise InvalidDimensionError(f"cascaded channels {H.shape} vs {theta.shape[0]} RIS phases")
    return H @ np.exp(-1j * theta)


def align_reflection(H: np.ndarray) -> np.ndarray:
    """RIS phases co-phasing every element of the strongest user's dominant BS direction."""
    H = np.asarray(H, dtype=np.complex128)
    k = int(np.argmax(np.sum(np.abs(H) ** 2, axis=(1, 2))))
    u = linalg.svd(H[k], full_matrices=False)[0][:, 0]
    return np.angle(u.conj() @ H[k])


def zf_precoder(B: np.ndarray) -> np.ndarray:
    """
    Zero-forcing precoder for effective channels B (K, M): the pseudo-inverse of
    the downlink matrix B^*, scaled to unit total power. Returns W (M, K).
    """
    B = np.atleast_2d(np.asarray(B, dtype=np.complex128))
    C = B.conj()
    sv = linalg.svdvals(C)
    rank = int(np.sum(sv > RANK_TOL * max(float(sv[0]), 1e-300))) if sv.size else 0
    if rank < C.shape[0]:
        raise RankDeficiencyError(rank, C.shape[0], "effective downlink channel is rank deficient")
    W = linalg.pinv(C)
    return W / np.linalg.norm(W)


def sinr(B: np.ndarray, W: np.ndarray, sigma2: float) -> np.ndarray:
    B = np.atleast_2d(np.asarray(B, dtype=np.complex128))
    W = np.asarray(W, dtype=np.complex128)
    if W.shape != (B.shape[1], B.shape[0]):
        raise InvalidDimensionError(f"precoder {W.shape} does not match channels {B.shape}")
    if sigma2 < 0:
        raise DomainError(f"noise variance must be >= 0, got {sigma2}")
    gains = np.abs(B.conj() @ W) ** 2                  # [k, j] = |b_k^H w_j|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    denom = interference + sigma2
    blocked = (denom <= 0) & (signal > 0)
    if np.any(blocked):
        raise InfiniteSinrError(f"users {np.flatnonzero(blocked).tolist()} see no noise and no interference")
    return np.divide(signal, denom, out=np.zeros_like(signal), where=denom > 0)


def cascaded_sum_rate(H: np.ndarray, W: np.ndarray, theta: np.ndarray, sigma2: float, lambda_d: float = 1.0) -> float:
    """lambda_d * sum_k log2(1 + SINR_k) for cascaded channels H (K, M, N)."""
    return float(lambda_d * np.sum(np.log2(1.0 + sinr(effective_channels(H, theta), W, sigma2))))


def sum_rate(G: np.ndarray, h: np.ndarray, W: np.ndarray, theta: np.ndarray, sigma2: float,
             lambda_d: float = 1.0) -> float:
    """Downlink sum rate with user k receiving h_k^H Theta G^H w_j; h is (K, N)."""
    G = np.asarray(G, dtype=np.complex128)
    h = np.atleast_2d(np.asarray(h, dtype=np.complex128))
    if G.ndim != 2 or h.shape[1] != G.shape[1]:
        raise InvalidDimensionError(f"G {G.shape} and h {h.shape} are inconsistent")
    return cascaded_sum_rate(G[np.newaxis] * h[:, np.newaxis, :], W, theta, sigma2, lambda_d)


def design_and_rate(H_est: np.ndarray, H_true: np.ndarray, sigma2: float, lambda_d: float) -> float:
    """Pick Theta and a ZF precoder from estimates; evaluate the rate on the true channels."""
    theta = align_reflection(H_est)
    W = zf_precoder(effective_channels(H_est, theta))
    return cascaded_sum_rate(H_true, W, theta, sigma2, lambda_d)
