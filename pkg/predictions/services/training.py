"""
Offline training of the SCLSTM: datasets, Adam, the epoch loop with
best-validation checkpointing, and the binary checkpoint format.

Checkpoint layout (little-endian)::

    magic "SCLS" | version u16 | dtype u8 (1=float64, 2=float32) | reserved u8
    M, N, K, S u32 | scale c f64 | tensor count u32
    per tensor: name length u16, name utf-8, ndim u8, dims u32..., has_mask u8,
                data (dtype), mask bitmap (np.packbits, row-major) when has_mask
"""
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .channel_sim import gen_episode
from .errors import CheckpointIncompatibleError, FormatError, TrainingDivergedError
from .numerics import Rng
from .pilots import run_stages
from .schemas import SystemConfig, TrainingHyper
from .sclstm import (
    SclstmParams, SparseMask, loss_mse, persistence_start, sclstm_backward, sclstm_forward, stack_window_input,
)

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Normalized training/validation arrays; ``scale`` multiplies raw channels."""
    M: int
    N: int
    K: int
    S: int
    scale: float
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: Optional[np.ndarray] = None
    y_test: Optional[np.ndarray] = None
    meta: Dict[str, object] = field(default_factory=dict)


def sample_windows(cfg: SystemConfig, hyper: TrainingHyper, count: int, rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """
    ``count`` samples of (estimated window (K, S, M, N), target H(S+1) (K, M, N)).

    Inputs come from stage-1/2 estimation at cfg.snr_db, from the true channels
    (``genie``), or at an SNR drawn per sample from ``hyper.mixed_snr_db``.
    """
    windows = np.empty((count, cfg.K, cfg.S, cfg.M, cfg.N), dtype=np.complex128)
    targets = np.empty((count, cfg.K, cfg.M, cfg.N), dtype=np.complex128)
    steps = tuple(range(1, cfg.S + 1))
    for i in range(count):
        r = rng.child(i)
        sample_cfg = cfg
        if hyper.inputs == "mixed":
            choice = int(r.child(7).integers(0, len(hyper.mixed_snr_db)))
            sample_cfg = cfg.with_snr(hyper.mixed_snr_db[choice])
        ep = gen_episode(sample_cfg, cfg.S + 1, r.child(0))
        if hyper.inputs == "genie":
            windows[i] = ep.H[:, :cfg.S]
        else:
            windows[i] = run_stages(sample_cfg, ep, steps, r.child(1)).H_hat
        targets[i] = ep.H[:, cfg.S]
    return windows, targets


def build_dataset(cfg: SystemConfig, hyper: TrainingHyper, rng: Rng) -> Dataset:
    w_tr, y_tr = sample_windows(cfg, hyper, hyper.train_samples, rng.child(0))
    w_va, y_va = sample_windows(cfg, hyper, hyper.val_samples, rng.child(1))
    w_te, y_te = sample_windows(cfg, hyper, hyper.test_samples, rng.child(2))
    rms = math.sqrt(float(np.mean(np.abs(y_tr) ** 2)))
    c = 1.0 / rms if rms > 0 else 1.0
    logger.info("dataset built: %d/%d/%d samples, scale c=%.6g", len(y_tr), len(y_va), len(y_te), c)
    return Dataset(cfg.M, cfg.N, cfg.K, cfg.S, c,
                   stack_window_input(w_tr * c), y_tr * c, stack_window_input(w_va * c), y_va * c,
                   stack_window_input(w_te * c), y_te * c,
                   meta={"snr_db": cfg.snr_db, "inputs": hyper.inputs, "seed": rng.seed})


def save_dataset(ds: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    arrays = {name: getattr(ds, name) for name in ("x_train", "y_train", "x_val", "y_val", "x_test", "y_test")
              if getattr(ds, name) is not None}
    header = {"M": ds.M, "N": ds.N, "K": ds.K, "S": ds.S, "scale": ds.scale, "meta": ds.meta}
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        arrays = {k: data[k] for k in data.files if k != "header"}
    return Dataset(header["M"], header["N"], header["K"], header["S"], header["scale"],
                   arrays["x_train"], arrays["y_train"], arrays["x_val"], arrays["y_val"],
                   arrays.get("x_test"), arrays.get("y_test"), meta=header.get("meta", {}))


@dataclass
class AdamState:
    t: int
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: SclstmParams) -> "AdamState":
        return cls(0, {k: np.zeros_like(x) for k, x in params.tensors.items()},
                   {k: np.zeros_like(x) for k, x in params.tensors.items()})


def decayed_lr(lr: float, decay: float, t: int) -> float:
    """Learning rate of the t-th (1-based) update: lr / (1 + decay*(t-1))."""
    return lr / (1.0 + decay * (t - 1))


def adam_step(params: SclstmParams, grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              decay: float = 0.0, betas: Tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> Tuple[SclstmParams, AdamState]:
    """
    One bias-corrected Adam update; returns new parameters and state, masks re-applied.

    This is update t = state.t + 1 (1-based) and its step size is
    decayed_lr(lr, decay, t) = lr / (1 + decay*(t-1)): the first update uses lr
    itself and the decay counts the updates already taken.
    """
    b1, b2 = betas
    t = state.t + 1
    lr_t = decayed_lr(lr, decay, t)
    tensors, m_new, v_new = {}, {}, {}
    for name, theta in params.tensors.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        tensors[name] = (theta - lr_t * m_hat / (np.sqrt(v_hat) + eps)).astype(theta.dtype)
        m_new[name], v_new[name] = m, v
    updated = params.with_tensors(tensors)
    updated.apply_masks()
    return updated, AdamState(t, m_new, v_new)


def evaluate_loss(params: SclstmParams, x: np.ndarray, y: np.ndarray, K: int, S: int, chunk: int = 512) -> float:
    total = 0.0
    for start in range(0, x.shape[0], chunk):
        fw = sclstm_forward(params, x[start:start + chunk], K, S)
        total += loss_mse(fw.H_tilde, y[start:start + chunk]) * fw.H_tilde.shape[0]
    return total / x.shape[0]


@dataclass
class TrainResult:
    params: SclstmParams
    history: List[Dict[str, float]]
    best_epoch: int


def train(ds: Dataset, hyper: TrainingHyper, rng: Rng, params: Optional[SclstmParams] = None) -> TrainResult:
    """
    Minibatch Adam for up to ``hyper.max_epochs`` epochs, keeping the parameters
    with the lowest validation loss (epoch 0 = before any update). Without
    ``params`` training starts from :func:`persistence_start`.
    """
    dtype = np.float32 if hyper.dtype == "float32" else np.float64
    if params is None:
        params = persistence_start(ds.M, ds.N, rng.child(0))
    params = params.astype(dtype)
    params.scale = ds.scale
    x_tr, y_tr = ds.x_train.astype(dtype), ds.y_train
    x_va, y_va = ds.x_val.astype(dtype), ds.y_val
    state = AdamState.zeros_like(params)

    val = evaluate_loss(params, x_va, y_va, ds.K, ds.S)
    history = [{"epoch": 0, "train_loss": evaluate_loss(params, x_tr, y_tr, ds.K, ds.S),
                "val_loss": val, "lr": hyper.lr}]
    best, best_epoch, best_val = params.copy(), 0, val
    n = x_tr.shape[0]
    for epoch in range(1, hyper.max_epochs + 1):
        order = rng.child(1, epoch).permutation(n)
        batch_losses = []
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, grads = sclstm_backward(params, x_tr[idx], y_tr[idx], ds.K, ds.S)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            params, state = adam_step(params, grads, state, hyper.lr, hyper.decay,
                                      (hyper.beta1, hyper.beta2), hyper.eps)
            batch_losses.append(loss * len(idx))
        train_loss = sum(batch_losses) / n
        val = evaluate_loss(params, x_va, y_va, ds.K, ds.S)
        if not (math.isfinite(train_loss) and math.isfinite(val)):
            raise TrainingDivergedError(epoch)
        lr_now = decayed_lr(hyper.lr, hyper.decay, state.t)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val, "lr": lr_now})
        logger.info("epoch %d train_loss=%.6g val_loss=%.6g lr=%.3g", epoch, train_loss, val, lr_now)
        if val < best_val:
            best, best_epoch, best_val = params.copy(), epoch, val
    return TrainResult(best, history, best_epoch)


MAGIC = b"SCLS"
VERSION = 2
_DTYPES = {1: "<f8", 2: "<f4"}
_HEADER = struct.Struct("<4sHBB4IdI")


def dumps_checkpoint(params: SclstmParams, K: int, S: int) -> bytes:
    code = 2 if params.dtype == np.float32 else 1
    dt = _DTYPES[code]
    masks = params.masks()
    parts = [_HEADER.pack(MAGIC, VERSION, code, 0, params.M, params.N, K, S, float(params.scale),
                          len(params.tensors))]
    for name in sorted(params.tensors):
        arr = params.tensors[name]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        mask = masks.get(name)
        parts.append(struct.pack("<B", 1 if mask is not None else 0))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
        if mask is not None:
            parts.append(np.packbits(mask.ravel()).tobytes())
    return b"".join(parts)


def loads_checkpoint(data: bytes) -> Tuple[SclstmParams, Dict[str, int]]:
    if len(data) < _HEADER.size:
        raise FormatError("checkpoint header truncated")
    magic, version, code, _, M, N, K, S, scale, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != VERSION or code not in _DTYPES:
        raise FormatError(f"not a v{VERSION} SCLSTM checkpoint")
    dt = np.dtype(_DTYPES[code])
    off = _HEADER.size
    tensors, masks = {}, {}
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + length].decode("utf-8")
            off += length
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            (has_mask,) = struct.unpack_from("<B", data, off)
            off += 1
            size = int(np.prod(shape))
            raw = np.frombuffer(data, dtype=dt, count=size, offset=off)
            tensors[name] = raw.reshape(shape).astype(dt.newbyteorder("="))
            off += size * dt.itemsize
            if has_mask:
                nbytes = (size + 7) // 8
                bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=off))[:size]
                masks[name] = bits.astype(bool).reshape(shape)
                off += nbytes
    except (struct.error, ValueError) as e:
        raise FormatError(f"corrupt checkpoint: {e}") from e
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes in checkpoint")
    if not {"g_layer.W", "h_layer.W"} <= set(masks):
        raise FormatError("checkpoint is missing its sparse-layer masks")
    params = SclstmParams(M, N, tensors, SparseMask(masks["g_layer.W"]), SparseMask(masks["h_layer.W"]), scale)
    return params, {"M": M, "N": N, "K": K, "S": S}


def save_checkpoint(params: SclstmParams, K: int, S: int, path: Union[str, Path]) -> str:
    """Write the checkpoint and return its sha256 hex digest."""
    data = dumps_checkpoint(params, K, S)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: Union[str, Path], cfg: Optional[SystemConfig] = None) -> Tuple[SclstmParams, Dict[str, int]]:
    params, meta = loads_checkpoint(Path(path).read_bytes())
    if cfg is not None:
        check_compatible(meta, cfg)
    return params, meta


def check_compatible(meta: Dict[str, int], cfg: SystemConfig) -> None:
    expected = {"M": cfg.M, "N": cfg.N, "K": cfg.K, "S": cfg.S}
    if {k: meta[k] for k in expected} != expected:
        raise CheckpointIncompatibleError(f"checkpoint built for {meta}, config needs {expected}")
