"""
Stage 1 (full-duplex estimation of g1) and stage 2 (pilot-based cascaded
channel estimation), together with the uplink signal synthesis they consume.

Stage 2 runs once per large-timescale block:

* reference step: one reference user sends a length-2 pilot over N+1 DFT
  reflection patterns (2(N+1) slots); its cascaded estimate, anchored by g1,
  yields G_hat.
* each of the S window steps: every user sends ceil(N/M) single-slot pilots,
  one DFT pattern per slot, and h_k(s) is solved against G_hat
  (K*ceil(N/M) slots per step). The patterns are picked greedily from the DFT
  columns to keep the stacked system well conditioned for the G_hat at hand,
  all M*ceil(N/M) rows are used, and the solve is linear MMSE under a unit
  prior on the column-normalised unknowns.

The per-step system has rank at most rank(G)*ceil(N/M); when that is below N
(L_G < M) the direct estimator (N patterns x K orthogonal pilots) is used.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .channel_sim import Episode
from .errors import IllConditionedCorrectionError, InvalidDimensionError, InvalidInputError, UndefinedMetricError
from .numerics import ComplexMatrix, Rng, dft_matrix, ls_solve, principal_sqrt, ridge_solve, sample_cn
from .schemas import SystemConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PilotPlan:
    """
    Pilot rows ``X`` (users x length, x_i x_j^H = length*power*delta_ij) sent over
    each column of ``patterns`` (N x J unit-modulus reflection vectors).
    """
    X: np.ndarray
    patterns: np.ndarray
    power: float

    @property
    def pilot_length(self) -> int:
        return int(self.X.shape[1])

    @property
    def users(self) -> int:
        return int(self.X.shape[0])

    @property
    def slots(self) -> int:
        return int(self.patterns.shape[1]) * self.pilot_length


@dataclass
class EstimationReport:
    g1_hat: np.ndarray
    g1sq_hat: np.ndarray
    G_hat: Optional[np.ndarray]
    H_hat: np.ndarray                  # (K, n_steps, M, N)
    steps: Tuple[int, ...]
    mode: str
    slots: Dict[str, int] = field(default_factory=dict)

    @property
    def pilot_slots(self) -> int:
        return sum(self.slots.values())

    def nmse_table(self, ep: Episode) -> Dict[str, float]:
        truth = np.stack([ep.cascaded(s) for s in self.steps], axis=1)
        g1 = ep.G[0]
        table = {
            "g1sq": nmse(self.g1sq_hat, g1 * g1),
            "g1": nmse(self.g1_hat, g1),
            "H": nmse(self.H_hat, truth),
        }
        if self.G_hat is not None:
            table["G"] = nmse(self.G_hat, ep.G)
        return table


def orthogonal_pilots(users: int, length: int, power: float) -> np.ndarray:
    """Rows of a length-point DFT scaled to ``power``: x_i x_j^H = length*power*delta_ij."""
    if users < 1 or length < users:
        raise InvalidDimensionError(f"cannot build {users} orthogonal pilots of length {length}")
    return np.sqrt(power) * dft_matrix(length)[:users]


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def reference_plan(cfg: SystemConfig) -> PilotPlan:
    V = dft_matrix(cfg.N)
    patterns = np.hstack([V, V[:, :1]])
    return PilotPlan(orthogonal_pilots(1, 2, cfg.pilot_power), patterns, cfg.pilot_power)


def direct_plan(cfg: SystemConfig) -> PilotPlan:
    return PilotPlan(orthogonal_pilots(cfg.K, cfg.K, cfg.pilot_power), dft_matrix(cfg.N), cfg.pilot_power)


def column_basis(G_hat: np.ndarray) -> ComplexMatrix:
    """G_hat with every column rescaled to norm sqrt(M)."""
    G_hat = np.asarray(G_hat, dtype=np.complex128)
    norms = np.linalg.norm(G_hat, axis=0)
    small = np.flatnonzero(norms <= 1e-12 * max(float(np.max(norms)), 1e-300))
    if small.size:
        raise IllConditionedCorrectionError(int(small[0]), where="G_hat column")
    return G_hat * (np.sqrt(G_hat.shape[0]) / norms)[np.newaxis, :]


def reduced_patterns(cfg: SystemConfig, G_hat: Optional[np.ndarray] = None) -> np.ndarray:
    """
    ceil(N/M) DFT reflection patterns for the per-step slots.

    Without ``G_hat`` these are the first DFT columns. With it, columns are
    added one at a time to maximise log det(delta*I + sum_j B_j^H B_j), where
    B_j = U diag(v_j) over the column-normalised G_hat and delta is the
    inverse pilot SNR.
    """
    J = ceil_div(cfg.N, cfg.M)
    V = dft_matrix(cfg.N)
    if G_hat is None:
        return V[:, :J]
    U = column_basis(G_hat)
    M, N = U.shape
    if N != cfg.N:
        raise InvalidDimensionError(f"G_hat has {N} columns, expected {cfg.N}")
    delta = max(cfg.noise_variance / cfg.pilot_power, 1e-6)
    info = delta * np.eye(N, dtype=np.complex128)
    chosen = []
    for _ in range(J):
        inv = linalg.inv(info)
        best, best_gain = -1, -np.inf
        for j in range(N):
            if j in chosen:
                continue
            B = U * V[:, j][np.newaxis, :]
            gain = np.linalg.slogdet(np.eye(M) + B @ inv @ B.conj().T)[1]
            if gain > best_gain + 1e-9:
                best, best_gain = j, gain
        chosen.append(best)
        B = U * V[:, best][np.newaxis, :]
        info = info + B.conj().T @ B
    logger.debug("reduced patterns %s", chosen)
    return V[:, chosen]


def reduced_feasible(cfg: SystemConfig) -> bool:
    return min(cfg.M, cfg.L_G, cfg.N) * ceil_div(cfg.N, cfg.M) >= cfg.N


def stage2_mode(cfg: SystemConfig) -> str:
    if cfg.stage2 != "auto":
        return cfg.stage2
    if reduced_feasible(cfg):
        return "reduced"
    logger.warning("reduced stage-2 estimation is rank deficient for M=%d, L_G=%d, N=%d; using direct",
                   cfg.M, cfg.L_G, cfg.N)
    return "direct"


def per_step_slots(cfg: SystemConfig, mode: str) -> int:
    if mode == "reduced":
        return cfg.K * ceil_div(cfg.N, cfg.M)
    return cfg.N * cfg.K


def block_pilot_slots(cfg: SystemConfig, mode: str) -> int:
    """Slots :func:`run_stages` spends on one block of S window steps in ``mode``."""
    reference = 2 * (cfg.N + 1) if mode == "reduced" else 0
    return cfg.N + reference + cfg.S * per_step_slots(cfg, mode)


def synth_uplink_rx(H: np.ndarray, v: np.ndarray, X: np.ndarray, sigma2: float, rng: Rng) -> ComplexMatrix:
    """Y = sum_k H_k v x_k + noise, an M x T block."""
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim == 2:
        H = H[np.newaxis]
    v = np.asarray(v, dtype=np.complex128).reshape(-1)
    X = np.atleast_2d(np.asarray(X, dtype=np.complex128))
    K, M, N = H.shape
    if v.shape[0] != N or X.shape[0] != K:
        raise InvalidDimensionError(f"H {H.shape}, v {v.shape}, X {X.shape} are inconsistent")
    effective = H @ v                      # (K, M)
    Y = effective.T @ X                    # (M, T)
    return Y + sample_cn(M, X.shape[1], sigma2, rng)


def synth_fda_rx(g1: np.ndarray, V: np.ndarray, x: np.ndarray, sigma2: float, rng: Rng) -> np.ndarray:
    """y_t = (g1 . g1^T) v_t x_t + e_t for each pattern column v_t of V."""
    g1 = np.asarray(g1, dtype=np.complex128).reshape(-1)
    V = np.asarray(V, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    if V.shape[0] != g1.shape[0] or V.shape[1] != x.shape[0]:
        raise InvalidDimensionError(f"g1 {g1.shape}, V {V.shape}, x {x.shape} are inconsistent")
    y = ((g1 * g1) @ V) * x
    return y + sample_cn(x.shape[0], 1, sigma2, rng).ravel()


def estimate_g1(y: np.ndarray, V: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """LS estimate of g1 . g1 from the FDA observations, and its principal square root."""
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    if np.any(x == 0):
        raise InvalidInputError("FDA pilot symbols must be nonzero")
    V = np.asarray(V, dtype=np.complex128)
    g1sq_hat = ls_solve(V.T, y / x)
    return principal_sqrt(g1sq_hat), g1sq_hat


def perturb_g1(g1: np.ndarray, target_nmse: float, rng: Rng) -> np.ndarray:
    """g1 plus a CN perturbation whose expected NMSE is ``target_nmse``."""
    g1 = np.asarray(g1, dtype=np.complex128).reshape(-1)
    variance = target_nmse * float(np.sum(np.abs(g1) ** 2)) / g1.shape[0]
    return g1 + sample_cn(g1.shape[0], 1, variance, rng).ravel()


def synth_plan_rx(H: np.ndarray, plan: PilotPlan, sigma2: float, rng: Rng) -> np.ndarray:
    """One M x L_p block per reflection pattern, shape (J, M, L_p)."""
    return np.stack([
        synth_uplink_rx(H, plan.patterns[:, j], plan.X, sigma2, rng.child(j))
        for j in range(plan.patterns.shape[1])
    ])


def estimate_cascaded_reference(Y: np.ndarray, plan: PilotPlan) -> np.ndarray:
    """
    Per-user LS estimate of H_u from pattern blocks Y (J, M, L_p).

    Users are separated by pilot orthogonality, then H_u V = A_u is solved in the
    least-squares sense; returns (users, M, N).
    """
    Y = np.asarray(Y, dtype=np.complex128)
    J, M, Lp = Y.shape
    if J != plan.patterns.shape[1] or Lp != plan.pilot_length:
        raise InvalidDimensionError(f"observation blocks {Y.shape} do not match the pilot plan")
    scale = plan.pilot_length * plan.power
    A = np.einsum("jml,ul->ujm", Y, plan.X.conj()) / scale      # (users, J, M)
    Vt = plan.patterns.T
    return np.stack([ls_solve(Vt, A[u]).T for u in range(plan.users)])


def estimate_cascaded_direct(Y: np.ndarray, plan: PilotPlan) -> np.ndarray:
    """Full per-step LS, Y of shape (steps, J, M, L_p); returns (steps, users, M, N)."""
    Y = np.asarray(Y, dtype=np.complex128)
    if Y.ndim == 3:
        Y = Y[np.newaxis]
    return np.stack([estimate_cascaded_reference(Y[s], plan) for s in range(Y.shape[0])])


def decompose_reference(H_ref: np.ndarray, g1_hat: np.ndarray) -> ComplexMatrix:
    """G_hat[:, n] = H_ref[:, n] * g1_hat[n] / H_ref[0, n]."""
    H_ref = np.asarray(H_ref, dtype=np.complex128)
    g1_hat = np.asarray(g1_hat, dtype=np.complex128).reshape(-1)
    first = H_ref[0]
    tol = 1e-12 * float(np.max(np.abs(first)))
    small = np.flatnonzero(np.abs(first) <= tol)
    if small.size:
        raise IllConditionedCorrectionError(int(small[0]), where="reference cascaded first row")
    return H_ref * (g1_hat / first)[np.newaxis, :]


def synth_reduced_rx(H: np.ndarray, patterns: np.ndarray, power: float, sigma2: float, rng: Rng) -> np.ndarray:
    """Observations y_kj = H_k v_j sqrt(P) + n, one user per slot, shape (K, J, M)."""
    H = np.asarray(H, dtype=np.complex128)
    K, M, _ = H.shape
    J = patterns.shape[1]
    clean = np.sqrt(power) * np.einsum("kmn,nj->kjm", H, patterns)
    noise = sample_cn(K * J, M, sigma2, rng).reshape(K, J, M)
    return clean + noise


def estimate_cascaded_reduced(Y: np.ndarray, G_hat: np.ndarray, patterns: np.ndarray, power: float,
                              sigma2: float = 0.0) -> np.ndarray:
    """
    Per-step h_k(s) against a fixed G_hat, Y of shape (steps, K, J, M).

    The unknowns are x_n = h_n*|G_hat[:, n]|/sqrt(M), so H_hat = U diag(x) does not
    depend on the column scaling of G_hat. All M*J rows of the stacked system
    [U diag(v_j) sqrt(P)]_j are solved with ridge weight ``sigma2`` (exact LS when
    it is zero). Returns H_hat of shape (steps, K, M, N).
    """
    Y = np.asarray(Y, dtype=np.complex128)
    if Y.ndim == 3:
        Y = Y[np.newaxis]
    G_hat = np.asarray(G_hat, dtype=np.complex128)
    M, N = G_hat.shape
    steps, K, J, M_obs = Y.shape
    if M_obs != M or patterns.shape != (N, J):
        raise InvalidDimensionError(f"observations {Y.shape} inconsistent with G_hat {G_hat.shape}")
    if M * J < N:
        raise InvalidDimensionError(f"{M * J} stacked observations cannot resolve {N} unknowns")
    U = column_basis(G_hat)
    A = np.sqrt(power) * np.concatenate([U * patterns[:, j][np.newaxis, :] for j in range(J)])
    b = Y.reshape(steps * K, J * M).T                               # slot-major stacking
    x_hat = ridge_solve(A, b, sigma2).T.reshape(steps, K, N)
    return U[np.newaxis, np.newaxis] * x_hat[:, :, np.newaxis, :]


def genie_ls_G(H_obs: np.ndarray, h_true: np.ndarray) -> ComplexMatrix:
    """Column-wise LS of G from cascaded observations (..., M, N) given the true h (..., N)."""
    H_obs = np.asarray(H_obs, dtype=np.complex128)
    h = np.asarray(h_true, dtype=np.complex128)
    M, N = H_obs.shape[-2:]
    Hf = H_obs.reshape(-1, M, N)
    hf = h.reshape(-1, N)
    num = np.einsum("imn,in->mn", Hf, hf.conj())
    den = np.sum(np.abs(hf) ** 2, axis=0)
    return num / den[np.newaxis, :]


def genie_ls_h(H_obs: np.ndarray, G_true: np.ndarray) -> np.ndarray:
    """Per-element LS of h from cascaded observations (..., M, N) given the true G."""
    H_obs = np.asarray(H_obs, dtype=np.complex128)
    G = np.asarray(G_true, dtype=np.complex128)
    num = np.einsum("...mn,mn->...n", H_obs, G.conj())
    return num / np.sum(np.abs(G) ** 2, axis=0)


def nmse(estimate, truth) -> float:
    """sum |est - truth|^2 / sum |truth|^2 over every entry."""
    est = np.asarray(estimate, dtype=np.complex128)
    ref = np.asarray(truth, dtype=np.complex128)
    if est.shape != ref.shape:
        raise InvalidDimensionError(f"estimate {est.shape} vs truth {ref.shape}")
    energy = float(np.sum(np.abs(ref) ** 2))
    if energy == 0.0:
        raise UndefinedMetricError("NMSE undefined for an all-zero reference")
    return float(np.sum(np.abs(est - ref) ** 2)) / energy


def nmse_db(estimate, truth) -> float:
    return 10.0 * math.log10(max(nmse(estimate, truth), 1e-300))


def run_stages(cfg: SystemConfig, ep: Episode, steps: Sequence[int], rng: Rng,
               g1_override: Optional[np.ndarray] = None) -> EstimationReport:
    """
    Stage 1 and stage 2 for one block: g1 from the FDA, then cascaded estimates
    for ``steps`` (the window that seeds prediction).
    """
    sigma2 = cfg.noise_variance
    N = cfg.N
    V = dft_matrix(N)
    x = np.full(N, np.sqrt(cfg.pilot_power), dtype=np.complex128)
    y = synth_fda_rx(ep.G[0], V, x, sigma2, rng.child(1))
    g1_hat, g1sq_hat = estimate_g1(y, V, x)
    if g1_override is not None:
        g1_hat = np.asarray(g1_override, dtype=np.complex128)
    slots = {"stage1": N}

    mode = stage2_mode(cfg)
    steps = tuple(steps)
    G_hat = None
    if mode == "reduced":
        plan = reference_plan(cfg)
        H1 = ep.cascaded(steps[0])[:1]
        H1_ref = estimate_cascaded_reference(synth_plan_rx(H1, plan, sigma2, rng.child(2)), plan)[0]
        G_hat = decompose_reference(H1_ref, g1_hat)
        patterns = reduced_patterns(cfg, G_hat)
        Y = np.stack([synth_reduced_rx(ep.cascaded(s), patterns, cfg.pilot_power, sigma2, rng.child(3, s))
                      for s in steps])
        H_hat = estimate_cascaded_reduced(Y, G_hat, patterns, cfg.pilot_power, sigma2)
        slots["stage2_reference"] = plan.slots
    else:
        plan = direct_plan(cfg)
        Y = np.stack([synth_plan_rx(ep.cascaded(s), plan, sigma2, rng.child(3, s)) for s in steps])
        H_hat = estimate_cascaded_direct(Y, plan)
    slots["stage2_steps"] = per_step_slots(cfg, mode) * len(steps)
    return EstimationReport(g1_hat=g1_hat, g1sq_hat=g1sq_hat, G_hat=G_hat,
                            H_hat=np.swapaxes(H_hat, 0, 1), steps=steps, mode=mode, slots=slots)
