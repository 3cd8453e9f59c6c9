"""
Sparse-connected LSTM (SCLSTM) for joint channel decomposition and prediction.

Architecture, all on real/imag-stacked tensors:

* G-layer: masked linear 2MN -> 2MN on the average of every cascaded estimate
  in the window, followed by anchor normalization: each column is divided by
  its first-antenna entry, so G~[0, n] ~ 1 and the cross-user average only has
  to carry the direction of G[:, n].
* h-layer: masked linear 2MN -> 2N shared across users and applied to each
  step's cascaded estimate, producing the sequence h_k(1..S).
* LSTM block shared across users: LSTM(6N) -> LSTM(4N) -> dense(2N) on the
  last step, added to the h-layer output of that step, producing h~_k(S+1).
* H~_k(S+1) = G~ diag(h~_k(S+1)).

Gradients of the batch-mean squared error are computed by hand (BPTT through
both LSTMs); masked weight gradients are zero outside their masks.

:func:`persistence_start` gives a network that repeats the last cascaded
estimate before any training; the LSTM block then learns the residual.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import InternalInvariantError, InvalidInputError
from .numerics import Rng, stack_real, unstack_real

GATE_NAMES = ("f", "q", "i", "o")
LSTM_TENSORS = tuple(f"W_{g}{src}" for g in GATE_NAMES for src in ("z", "u")) + tuple(f"b_{g}" for g in GATE_NAMES)
BLOCK_LAYERS = ("lstm1", "lstm2")
EPS_ANCHOR = 1e-3          # in units of the normalized data, whose rms is 1


@dataclass(frozen=True)
class SparseMask:
    bitmap: np.ndarray   # bool, rows x cols

    @property
    def rows(self) -> int:
        return int(self.bitmap.shape[0])

    @property
    def cols(self) -> int:
        return int(self.bitmap.shape[1])

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.bitmap))

    def pairs(self) -> List[Tuple[int, int]]:
        return [(int(r), int(c)) for r, c in np.argwhere(self.bitmap)]


def build_masks(M: int, N: int) -> Tuple[SparseMask, SparseMask]:
    """
    G-layer (2MN x 2MN) and h-layer (2N x 2MN) connectivity.

    Index p = n*M + m addresses Re{G[m, n]h[n]}; MN + p its imaginary part.
    """
    if M < 1 or N < 1:
        raise InvalidInputError(f"M and N must be >= 1, got M={M}, N={N}")
    MN = M * N
    g = np.zeros((2 * MN, 2 * MN), dtype=bool)
    p = np.arange(MN)
    for out in (p, MN + p):
        g[out, p] = True
        g[out, MN + p] = True
    h = np.zeros((2 * N, 2 * MN), dtype=bool)
    for n in range(N):
        cols = n * M + np.arange(M)
        for out in (n, N + n):
            h[out, cols] = True
            h[out, MN + cols] = True
    return SparseMask(g), SparseMask(h)


@dataclass
class SclstmParams:
    M: int
    N: int
    tensors: Dict[str, np.ndarray]
    g_mask: SparseMask
    h_mask: SparseMask
    scale: float = 1.0          # dataset normalization constant c

    def masks(self) -> Dict[str, np.ndarray]:
        return {"g_layer.W": self.g_mask.bitmap, "h_layer.W": self.h_mask.bitmap}

    def cell(self, layer: str) -> Dict[str, np.ndarray]:
        return {name: self.tensors[f"{layer}.{name}"] for name in LSTM_TENSORS}

    def copy(self) -> "SclstmParams":
        return SclstmParams(self.M, self.N, {k: v.copy() for k, v in self.tensors.items()},
                            self.g_mask, self.h_mask, self.scale)

    def with_tensors(self, tensors: Dict[str, np.ndarray]) -> "SclstmParams":
        return SclstmParams(self.M, self.N, tensors, self.g_mask, self.h_mask, self.scale)

    def apply_masks(self) -> None:
        for name, mask in self.masks().items():
            self.tensors[name] = np.where(mask, self.tensors[name], 0.0).astype(self.tensors[name].dtype)

    def astype(self, dtype) -> "SclstmParams":
        return self.with_tensors({k: v.astype(dtype) for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return self.tensors["dense.W"].dtype

    def block_parameter_count(self) -> int:
        """Trainable entries of one LSTM block (both LSTMs and the dense layer)."""
        names = [k for k in self.tensors if k.split(".")[0] in BLOCK_LAYERS + ("dense",)]
        return int(sum(self.tensors[k].size for k in names))

    def sparse_weight_count(self) -> Dict[str, int]:
        return {"g_layer": self.g_mask.nnz, "h_layer": self.h_mask.nnz}


def _glorot(rng: Rng, fan_in, fan_out, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (np.asarray(fan_in, dtype=np.float64) + np.asarray(fan_out, dtype=np.float64)))
    return rng.uniform(-1.0, 1.0, shape) * limit


def init_params(M: int, N: int, rng: Optional[Rng] = None, zero: bool = False) -> SclstmParams:
    """
    Masked Glorot-uniform sparse layers (fan-in = per-neuron mask degree),
    Glorot LSTM/dense weights, forget-gate bias +1. ``zero`` gives the all-zero
    network, whose prediction is identically 0.
    """
    g_mask, h_mask = build_masks(M, N)
    MN = M * N
    shapes = {
        "g_layer.W": (2 * MN, 2 * MN), "g_layer.b": (2 * MN,),
        "h_layer.W": (2 * N, 2 * MN), "h_layer.b": (2 * N,),
        "dense.W": (2 * N, 4 * N), "dense.b": (2 * N,),
    }
    for layer, n_in, n in (("lstm1", 2 * N, 6 * N), ("lstm2", 6 * N, 4 * N)):
        for g in GATE_NAMES:
            shapes[f"{layer}.W_{g}z"] = (n, n_in)
            shapes[f"{layer}.W_{g}u"] = (n, n)
            shapes[f"{layer}.b_{g}"] = (n,)
    tensors = {k: np.zeros(s, dtype=np.float64) for k, s in shapes.items()}
    params = SclstmParams(M, N, tensors, g_mask, h_mask)
    if zero:
        return params
    if rng is None:
        raise InvalidInputError("random initialization needs an Rng")

    for i, (name, mask) in enumerate(params.masks().items()):
        deg_out = mask.sum(axis=1, keepdims=True)
        deg_in = mask.sum(axis=0, keepdims=True)
        tensors[name] = np.where(mask, _glorot(rng.child(i), deg_out, deg_in, mask.shape), 0.0)
    for j, name in enumerate(sorted(k for k in shapes if k.split(".")[1].startswith("W_") or k == "dense.W")):
        rows, cols = shapes[name]
        tensors[name] = _glorot(rng.child(10 + j), cols, rows, (rows, cols))
    for layer in BLOCK_LAYERS:
        tensors[f"{layer}.b_f"][:] = 1.0
    return params


def persistence_start(M: int, N: int, rng: Rng) -> SclstmParams:
    """
    Random LSTM block with the sparse layers set so that H~_k(S+1) = H_k(S):
    the G-layer passes the window mean through unchanged, the h-layer reads
    antenna 0 of each step, and the dense layer starts at zero.
    """
    params = init_params(M, N, rng)
    t = params.tensors
    MN = M * N
    t["g_layer.W"] = np.eye(2 * MN)
    t["g_layer.b"] = np.zeros(2 * MN)
    W = np.zeros((2 * N, 2 * MN))
    n = np.arange(N)
    W[n, n * M] = 1.0
    W[N + n, MN + n * M] = 1.0
    t["h_layer.W"] = W
    t["h_layer.b"] = np.zeros(2 * N)
    t["dense.W"] = np.zeros_like(t["dense.W"])
    t["dense.b"] = np.zeros_like(t["dense.b"])
    return params


def stack_window_input(H_hat: np.ndarray) -> np.ndarray:
    """
    Network input from cascaded windows (B, K, S, M, N): per user
    [vec(Re H_k), vec(Im H_k)] with H_k = [H_k(1), ..., H_k(S)] (M x NS), column-major.
    """
    H_hat = np.asarray(H_hat, dtype=np.complex128)
    if H_hat.ndim == 4:
        H_hat = H_hat[np.newaxis]
    B, K = H_hat.shape[:2]
    flat = np.swapaxes(H_hat, -1, -2).reshape(B, K, -1)
    return np.concatenate([flat.real, flat.imag], axis=-1).reshape(B, -1)


def anchor_columns(Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    G~[:, m, n] = Y[:, m, n] * w_n with w_n = conj(a_n) / (|a_n|^2 + EPS_ANCHOR),
    a_n = Y[:, 0, n]. Returns (G~, w).
    """
    a = Y[:, 0, :]
    w = a.conj() / (np.abs(a) ** 2 + EPS_ANCHOR)
    return Y * w[:, np.newaxis, :], w


def anchor_columns_backward(Y: np.ndarray, w: np.ndarray, gG: np.ndarray) -> np.ndarray:
    """Wirtinger gradient (d/dRe + j d/dIm) with respect to Y, given that of G~."""
    gY = gG * w.conj()[:, np.newaxis, :]
    a = Y[:, 0, :]
    D = np.abs(a) ** 2 + EPS_ANCHOR
    gw = np.sum(Y.conj() * gG, axis=1)
    gY[:, 0, :] += (EPS_ANCHOR * gw.conj() - a * a * gw) / (D * D)
    return gY


def _step_slices(x: np.ndarray, M: int, N: int, K: int, S: int) -> np.ndarray:
    """Flat network input -> per-step 2MN slices, shape (B, K, S, 2MN)."""
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[np.newaxis]
    if x.shape[1] != K * 2 * S * M * N:
        raise InvalidInputError(f"input width {x.shape[1]} != K*2*S*M*N = {K * 2 * S * M * N}")
    B = x.shape[0]
    parts = x.reshape(B, K, 2, S, N * M)
    return np.transpose(parts, (0, 1, 3, 2, 4)).reshape(B, K, S, 2 * M * N)


def sparse_layer_forward(weights: np.ndarray, bias: np.ndarray, mask: SparseMask, x: np.ndarray) -> np.ndarray:
    """y = W x + b with W zero outside ``mask`` (identity activation); x is (..., in)."""
    if weights.shape != mask.bitmap.shape:
        raise InternalInvariantError(f"weights {weights.shape} do not match mask {mask.bitmap.shape}")
    if np.any(weights[~mask.bitmap] != 0):
        raise InternalInvariantError("sparse layer weight set outside its mask")
    return x @ weights.T + bias


def g_layer_input(H_hat: np.ndarray) -> np.ndarray:
    """Mean of every cascaded estimate in the (K, S, M, N) history, real/imag stacked."""
    H_hat = np.asarray(H_hat, dtype=np.complex128)
    if H_hat.size == 0 or H_hat.ndim < 3:
        raise InvalidInputError("empty cascaded-channel history")
    M, N = H_hat.shape[-2:]
    return stack_real(H_hat.reshape(-1, M, N).mean(axis=0))


@dataclass
class CellCache:
    z: np.ndarray
    u_prev: np.ndarray
    q_prev: np.ndarray
    f: np.ndarray
    q_cand: np.ndarray
    i: np.ndarray
    o: np.ndarray
    tanh_q: np.ndarray


def lstm_cell_forward(cell: Mapping[str, np.ndarray], z: np.ndarray, u_prev: np.ndarray,
                      q_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray, CellCache]:
    def pre(g):
        return z @ cell[f"W_{g}z"].T + u_prev @ cell[f"W_{g}u"].T + cell[f"b_{g}"]

    f = expit(pre("f"))
    q_cand = np.tanh(pre("q"))
    i = expit(pre("i"))
    q = q_cand * i + q_prev * f
    o = expit(pre("o"))
    tanh_q = np.tanh(q)
    u = tanh_q * o
    return u, q, CellCache(z, u_prev, q_prev, f, q_cand, i, o, tanh_q)


def lstm_cell_backward(cell: Mapping[str, np.ndarray], c: CellCache, du: np.ndarray, dq_next: np.ndarray,
                       grads: Dict[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Accumulate parameter gradients into ``grads``; return (dz, du_prev, dq_prev)."""
    do = du * c.tanh_q
    dq = dq_next + du * c.o * (1.0 - c.tanh_q ** 2)
    da = {
        "f": dq * c.q_prev * c.f * (1.0 - c.f),
        "q": dq * c.i * (1.0 - c.q_cand ** 2),
        "i": dq * c.q_cand * c.i * (1.0 - c.i),
        "o": do * c.o * (1.0 - c.o),
    }
    dz = 0.0
    du_prev = 0.0
    for g, a in da.items():
        grads[f"W_{g}z"] += a.T @ c.z
        grads[f"W_{g}u"] += a.T @ c.u_prev
        grads[f"b_{g}"] += a.sum(axis=0)
        dz = dz + a @ cell[f"W_{g}z"]
        du_prev = du_prev + a @ cell[f"W_{g}u"]
    return dz, du_prev, dq * c.f


def lstm_sequence_forward(cell: Mapping[str, np.ndarray], z_seq: np.ndarray) -> Tuple[np.ndarray, List[CellCache]]:
    R, S, _ = z_seq.shape
    n = cell["b_f"].shape[0]
    u = np.zeros((R, n), dtype=z_seq.dtype)
    q = np.zeros((R, n), dtype=z_seq.dtype)
    outs, caches = [], []
    for s in range(S):
        u, q, c = lstm_cell_forward(cell, z_seq[:, s], u, q)
        outs.append(u)
        caches.append(c)
    return np.stack(outs, axis=1), caches


def lstm_sequence_backward(cell: Mapping[str, np.ndarray], caches: List[CellCache],
                           du_seq: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    grads = {k: np.zeros_like(v) for k, v in cell.items()}
    R, S, n = du_seq.shape
    du_rec = np.zeros((R, n), dtype=du_seq.dtype)
    dq_rec = np.zeros((R, n), dtype=du_seq.dtype)
    dz_seq = [None] * S
    for s in reversed(range(S)):
        dz_seq[s], du_rec, dq_rec = lstm_cell_backward(cell, caches[s], du_seq[:, s] + du_rec, dq_rec, grads)
    return np.stack(dz_seq, axis=1), grads


@dataclass
class ForwardResult:
    G_tilde: np.ndarray           # (B, M, N)
    h_tilde: np.ndarray           # (B, K, N)
    H_tilde: np.ndarray           # (B, K, M, N)
    cache: Dict[str, object] = field(default_factory=dict, repr=False)


def sclstm_forward(params: SclstmParams, x: np.ndarray, K: int, S: int, keep_cache: bool = False) -> ForwardResult:
    M, N = params.M, params.N
    t = params.tensors
    steps = _step_slices(np.asarray(x, dtype=params.dtype), M, N, K, S)     # (B, K, S, 2MN)
    B = steps.shape[0]

    xg = steps.mean(axis=(1, 2))
    og = sparse_layer_forward(t["g_layer.W"], t["g_layer.b"], params.g_mask, xg)
    Y = unstack_real(og, M, N)
    G_tilde, w = anchor_columns(Y)

    xh = steps.reshape(B * K, S, 2 * M * N)
    zh = sparse_layer_forward(t["h_layer.W"], t["h_layer.b"], params.h_mask, xh)
    u1, c1 = lstm_sequence_forward(params.cell("lstm1"), zh)
    u2, c2 = lstm_sequence_forward(params.cell("lstm2"), u1)
    od = u2[:, -1] @ t["dense.W"].T + t["dense.b"] + zh[:, -1]
    h_tilde = (od[:, :N] + 1j * od[:, N:]).reshape(B, K, N)
    H_tilde = G_tilde[:, np.newaxis] * h_tilde[:, :, np.newaxis, :]

    cache = {}
    if keep_cache:
        cache = {"xg": xg, "xh": xh, "Y": Y, "w": w, "u2": u2, "c1": c1, "c2": c2}
    return ForwardResult(G_tilde, h_tilde, H_tilde, cache)


def loss_mse(H_tilde: np.ndarray, H_true: np.ndarray) -> float:
    """(1/B) sum_b sum_k ||H~_k - H_k||^2 over a (B, K, M, N) batch."""
    H_tilde = np.asarray(H_tilde)
    H_true = np.asarray(H_true)
    if H_tilde.shape != H_true.shape:
        raise InvalidInputError(f"prediction {H_tilde.shape} vs target {H_true.shape}")
    return float(np.sum(np.abs(H_tilde - H_true) ** 2)) / H_true.shape[0]


def sclstm_backward(params: SclstmParams, x: np.ndarray, H_true: np.ndarray, K: int,
                    S: int) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and exact gradients of ``loss_mse`` with respect to every parameter tensor."""
    M, N = params.M, params.N
    t = params.tensors
    fw = sclstm_forward(params, x, K, S, keep_cache=True)
    H_true = np.asarray(H_true)
    B = H_true.shape[0]
    E = fw.H_tilde - H_true
    loss = float(np.sum(np.abs(E) ** 2)) / B

    # Wirtinger: dL/dRe + j dL/dIm = 2 dL/dconj(z)
    gG = (2.0 / B) * np.sum(E * fw.h_tilde.conj()[:, :, np.newaxis, :], axis=1)
    gh = (2.0 / B) * np.sum(E * fw.G_tilde.conj()[:, np.newaxis], axis=2)

    grads: Dict[str, np.ndarray] = {}
    gY = anchor_columns_backward(fw.cache["Y"], fw.cache["w"], gG)
    dog = stack_real(gY).astype(params.dtype)
    grads["g_layer.W"] = (dog.T @ fw.cache["xg"]) * params.g_mask.bitmap
    grads["g_layer.b"] = dog.sum(axis=0)

    dod = np.concatenate([gh.real, gh.imag], axis=-1).reshape(B * K, 2 * N).astype(params.dtype)
    u2 = fw.cache["u2"]
    grads["dense.W"] = dod.T @ u2[:, -1]
    grads["dense.b"] = dod.sum(axis=0)
    du2 = np.zeros_like(u2)
    du2[:, -1] = dod @ t["dense.W"]

    du1, g2 = lstm_sequence_backward(params.cell("lstm2"), fw.cache["c2"], du2)
    dzh, g1 = lstm_sequence_backward(params.cell("lstm1"), fw.cache["c1"], du1)
    dzh[:, -1] += dod
    for layer, g in (("lstm1", g1), ("lstm2", g2)):
        for name, value in g.items():
            grads[f"{layer}.{name}"] = value

    xh = fw.cache["xh"]
    grads["h_layer.W"] = np.einsum("rso,rsi->oi", dzh, xh) * params.h_mask.bitmap
    grads["h_layer.b"] = dzh.sum(axis=(0, 1))
    return loss, grads


def predict_window(params: SclstmParams, H_window: np.ndarray) -> ForwardResult:
    """
    Run the network on raw (unnormalized) cascaded windows (K, S, M, N) or
    (B, K, S, M, N); outputs are rescaled back to channel units.
    """
    H_window = np.asarray(H_window, dtype=np.complex128)
    if H_window.ndim == 4:
        H_window = H_window[np.newaxis]
    _, K, S, M, N = H_window.shape
    if (M, N) != (params.M, params.N):
        raise InvalidInputError(f"window is {M}x{N}, model is {params.M}x{params.N}")
    c = params.scale
    fw = sclstm_forward(params, stack_window_input(H_window * c), K, S)
    return ForwardResult(fw.G_tilde / c, fw.h_tilde, fw.H_tilde / c)
