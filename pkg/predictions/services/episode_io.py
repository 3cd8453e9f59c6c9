"""
Episode serialization.

Binary layout (all little-endian)::

    magic    4s   b"RISE"
    version  u16  2
    dtype    u8   1 = complex128 stored as interleaved float64 (re, im)
    reserved u8
    M, N, K, T, L_k, start_step, L_G   7 x u32 (L_G = 0: no BS-RIS path record)
    G        M*N complex           row-major
    h        K*T*N complex
    H        K*T*M*N complex
    paths    per user: gains L_k complex, azimuth, elevation, doppler L_k float64 each
    bs_paths gains L_G complex, BS azimuth, BS elevation, RIS azimuth, RIS elevation
             L_G float64 each

The text dump is JSON with complex entries as [re, im] pairs; floats are
written with their shortest round-trip repr so it is lossless.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from .channel_sim import BsRisPaths, Episode, PathSet
from .errors import FormatError

MAGIC = b"RISE"
VERSION = 2
DTYPE_COMPLEX128 = 1
_HEADER = struct.Struct("<4sHBB7I")
_BS_ANGLES = ("bs_azimuth", "bs_elevation", "ris_azimuth", "ris_elevation")


def _complex_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<c16").tobytes()


def _read(buf: memoryview, offset: int, count: int, dtype: str):
    size = np.dtype(dtype).itemsize * count
    if offset + size > len(buf):
        raise FormatError("truncated episode payload")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy(), offset + size


def dumps_episode(ep: Episode) -> bytes:
    K, T, M, N = ep.H.shape
    L = len(ep.paths[0]) if ep.paths else 0
    L_G = len(ep.bs_paths.gains) if ep.bs_paths is not None else 0
    parts = [_HEADER.pack(MAGIC, VERSION, DTYPE_COMPLEX128, 0, M, N, K, T, L, ep.start_step, L_G),
             _complex_bytes(ep.G), _complex_bytes(ep.h), _complex_bytes(ep.H)]
    for p in ep.paths:
        parts.append(_complex_bytes(p.gains))
        for arr in (p.azimuth, p.elevation, p.doppler):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if ep.bs_paths is not None:
        parts.append(_complex_bytes(ep.bs_paths.gains))
        for name in _BS_ANGLES:
            parts.append(np.ascontiguousarray(getattr(ep.bs_paths, name), dtype="<f8").tobytes())
    return b"".join(parts)


def loads_episode(data: bytes) -> Episode:
    buf = memoryview(data)
    if len(buf) < _HEADER.size:
        raise FormatError("episode header truncated")
    magic, version, dtype, _, M, N, K, T, L, start, L_G = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION or dtype != DTYPE_COMPLEX128:
        raise FormatError(f"unsupported episode version/dtype {version}/{dtype}")
    off = _HEADER.size
    G, off = _read(buf, off, M * N, "<c16")
    h, off = _read(buf, off, K * T * N, "<c16")
    H, off = _read(buf, off, K * T * M * N, "<c16")
    paths = []
    for _ in range(K):
        gains, off = _read(buf, off, L, "<c16")
        az, off = _read(buf, off, L, "<f8")
        el, off = _read(buf, off, L, "<f8")
        dop, off = _read(buf, off, L, "<f8")
        paths.append(PathSet(gains, az, el, dop))
    bs_paths = None
    if L_G:
        gains, off = _read(buf, off, L_G, "<c16")
        angles = []
        for _ in _BS_ANGLES:
            a, off = _read(buf, off, L_G, "<f8")
            angles.append(a)
        bs_paths = BsRisPaths(gains, *angles)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after episode")
    return Episode(G=G.reshape(M, N), paths=tuple(paths), h=h.reshape(K, T, N),
                   H=H.reshape(K, T, M, N), start_step=start, bs_paths=bs_paths)


def _pairs(a: np.ndarray):
    a = np.asarray(a, dtype=np.complex128)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _from_pairs(obj) -> np.ndarray:
    a = np.asarray(obj, dtype=np.float64)
    return a[..., 0] + 1j * a[..., 1]


def episode_to_text(ep: Episode) -> str:
    doc: Dict[str, Any] = {
        "format": "ris-episode-text",
        "version": VERSION,
        "start_step": ep.start_step,
        "G": _pairs(ep.G),
        "h": _pairs(ep.h),
        "H": _pairs(ep.H),
        "paths": [
            {"gains": _pairs(p.gains), "azimuth": p.azimuth.tolist(),
             "elevation": p.elevation.tolist(), "doppler": p.doppler.tolist()}
            for p in ep.paths
        ],
        "bs_paths": None if ep.bs_paths is None else {
            "gains": _pairs(ep.bs_paths.gains),
            **{name: getattr(ep.bs_paths, name).tolist() for name in _BS_ANGLES},
        },
    }
    return json.dumps(doc, sort_keys=True)


def episode_from_text(text: str) -> Episode:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid episode text: {e}") from e
    if doc.get("format") != "ris-episode-text":
        raise FormatError("not an episode text dump")
    paths = tuple(
        PathSet(_from_pairs(p["gains"]).reshape(-1), np.asarray(p["azimuth"], dtype=np.float64),
                np.asarray(p["elevation"], dtype=np.float64), np.asarray(p["doppler"], dtype=np.float64))
        for p in doc["paths"]
    )
    bs = doc.get("bs_paths")
    bs_paths = None
    if bs is not None:
        bs_paths = BsRisPaths(_from_pairs(bs["gains"]).reshape(-1),
                              *(np.asarray(bs[name], dtype=np.float64) for name in _BS_ANGLES))
    return Episode(G=_from_pairs(doc["G"]), paths=paths, h=_from_pairs(doc["h"]),
                   H=_from_pairs(doc["H"]), start_step=int(doc["start_step"]), bs_paths=bs_paths)


def save_episode(ep: Episode, path: Union[str, Path]) -> Path:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(episode_to_text(ep))
    else:
        path.write_bytes(dumps_episode(ep))
    return path


def load_episode(path: Union[str, Path]) -> Episode:
    path = Path(path)
    if path.suffix == ".json":
        return episode_from_text(path.read_text())
    return loads_episode(path.read_bytes())
