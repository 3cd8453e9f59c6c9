"""
Complex linear algebra, sampling and solver primitives.

Every channel, pilot block and network activation in the package is a numpy
``complex128`` (or real ``float64``) array; functions here never mutate their
inputs. Randomness comes from :class:`Rng`, a Philox (counter-based) generator
keyed by ``(seed, path)`` so independent streams can be split off for parallel
episode generation without changing any result.
"""
from typing import Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import linalg

from .errors import DomainError, InvalidDimensionError, RankDeficiencyError

ComplexMatrix = npt.NDArray[np.complex128]

RANK_TOL = 1e-12


class Rng:
    """Splittable deterministic random source."""

    def __init__(self, seed: int, path: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, *path: int) -> "Rng":
        """Independent stream addressed by ``path`` below this one."""
        return Rng(self.seed, self.path + tuple(path))

    def uniform(self, low: float, high: float, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int):
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"


def as_matrix(a: Union[npt.ArrayLike, complex]) -> ComplexMatrix:
    """Coerce to a 2-D complex128 array; vectors become columns."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(-1, 1)
    elif m.ndim != 2:
        raise InvalidDimensionError(f"expected a matrix, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidDimensionError(f"empty matrix of shape {m.shape}")
    return m


def dft_matrix(n: int) -> ComplexMatrix:
    """V[p, q] = exp(-j*2*pi*p*q/n); V^H V = n*I."""
    if n < 1:
        raise InvalidDimensionError(f"DFT size must be >= 1, got {n}")
    return linalg.dft(n).astype(np.complex128)


def ls_solve(A: npt.ArrayLike, B: npt.ArrayLike) -> ComplexMatrix:
    """
    Least-squares solution of A X = B through a Householder QR of A.

    Raises RankDeficiencyError (carrying the effective rank) when the smallest
    singular value of A falls below RANK_TOL times the largest.
    """
    A = as_matrix(A)
    B = np.asarray(B, dtype=np.complex128)
    vector_rhs = B.ndim == 1
    B = as_matrix(B)
    rows, cols = A.shape
    if rows < cols:
        raise InvalidDimensionError(f"underdetermined system: {rows} rows < {cols} unknowns")
    if B.shape[0] != rows:
        raise InvalidDimensionError(f"rhs has {B.shape[0]} rows, expected {rows}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise DomainError("non-finite entries in least-squares system")

    sv = linalg.svdvals(A)
    if sv[0] == 0.0 or sv[-1] < RANK_TOL * sv[0]:
        rank = int(np.count_nonzero(sv > RANK_TOL * sv[0])) if sv[0] > 0 else 0
        raise RankDeficiencyError(rank, cols)

    Q, R = linalg.qr(A, mode="economic")
    X = linalg.solve_triangular(R, Q.conj().T @ B)
    return X.ravel() if vector_rhs else X


def ridge_solve(A: npt.ArrayLike, B: npt.ArrayLike, weight: float) -> ComplexMatrix:
    """
    argmin_X ||A X - B||^2 + weight*||X||^2, solved as LS on [A; sqrt(weight) I].

    With weight = noise variance / prior variance this is the linear MMSE
    estimate under a white prior. ``weight == 0`` is plain :func:`ls_solve`.
    """
    if weight < 0 or not np.isfinite(weight):
        raise DomainError(f"ridge weight must be finite and >= 0, got {weight}")
    if weight == 0:
        return ls_solve(A, B)
    A = as_matrix(A)
    B = np.asarray(B, dtype=np.complex128)
    vector_rhs = B.ndim == 1
    B = as_matrix(B)
    if B.shape[0] != A.shape[0]:
        raise InvalidDimensionError(f"rhs has {B.shape[0]} rows, expected {A.shape[0]}")
    cols = A.shape[1]
    X = ls_solve(np.vstack([A, np.sqrt(weight) * np.eye(cols)]),
                 np.vstack([B, np.zeros((cols, B.shape[1]), dtype=np.complex128)]))
    return X.ravel() if vector_rhs else X


def sample_cn(rows: int, cols: int, variance: float, rng: Rng) -> ComplexMatrix:
    """I.i.d. CN(0, variance) entries (real and imaginary parts each variance/2)."""
    if variance < 0:
        raise DomainError(f"variance must be >= 0, got {variance}")
    if rows < 1 or cols < 1:
        raise InvalidDimensionError(f"invalid shape ({rows}, {cols})")
    scale = np.sqrt(variance / 2.0)
    re = rng.normal((rows, cols))
    im = rng.normal((rows, cols))
    return scale * (re + 1j * im)


def principal_sqrt(z):
    """
    Principal square root with Re{w} >= 0, and Im{w} >= 0 when Re{w} == 0.

    Works elementwise on arrays; scalars in, scalar out.
    """
    w = np.sqrt(np.asarray(z, dtype=np.complex128))
    flip = (w.real == 0.0) & (w.imag < 0.0)
    w = np.where(flip, -w, w)
    # normalise signed zeros so results compare bit-identically
    w = w.real + 0.0 + 1j * (w.imag + 0.0)
    return complex(w) if np.ndim(w) == 0 else w


def stack_real(z: npt.ArrayLike) -> np.ndarray:
    """[vec(Re z), vec(Im z)] with column-major vec over the last two axes."""
    z = np.asarray(z, dtype=np.complex128)
    lead = z.shape[:-2]
    flat = np.swapaxes(z, -1, -2).reshape(lead + (-1,))
    return np.concatenate([flat.real, flat.imag], axis=-1)


def unstack_real(x: np.ndarray, rows: int, cols: int) -> ComplexMatrix:
    """Inverse of :func:`stack_real`."""
    x = np.asarray(x, dtype=np.float64)
    half = rows * cols
    if x.shape[-1] != 2 * half:
        raise InvalidDimensionError(f"expected last axis {2 * half}, got {x.shape[-1]}")
    z = x[..., :half] + 1j * x[..., half:]
    z = z.reshape(x.shape[:-1] + (cols, rows))
    return np.swapaxes(z, -1, -2)
