"""Measurement operators with forward and adjoint application.

Supported kinds: identity, dense (Gaussian or Rademacher matrices), and a
column-masked unitary 2-d Fourier transform for k-space sampling. Complex
measurements are stored as interleaved (real, imag) float64 pairs, so the
adjoint identity <Ax, y> = <x, A^T y> holds in the real inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np


@dataclass(frozen=True)
class KSpaceMask:
    """Per-column keep pattern over k-space in centred (fftshifted) layout."""

    width: int
    keep: np.ndarray
    acceleration: int
    center_fraction: float
    seed: int = 0

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=np.uint8)
        if keep.shape != (self.width,):
            raise ValueError("mask keep vector must have one entry per column")
        object.__setattr__(self, "keep", keep)

    @property
    def kept_count(self) -> int:
        return int(self.keep.sum())


def make_mask(w: int, acceleration: int, center_fraction: float, seed: int) -> KSpaceMask:
    """Keep all floor(center_fraction * w) centre columns plus uniformly
    random others until floor(w / acceleration) columns are kept."""
    if acceleration < 1:
        raise ValueError("acceleration must be >= 1")
    if not (0 <= center_fraction < 1.0 / acceleration + 1e-12):
        raise ValueError("center_fraction must lie in [0, 1/acceleration)")
    total = w // acceleration
    n_center = int(center_fraction * w)
    if total < 1:
        raise ValueError(f"infeasible mask: w={w}, acceleration={acceleration}")
    if n_center > total:
        raise ValueError("centre band exceeds the sampling budget")
    keep = np.zeros(w, dtype=np.uint8)
    start = (w - n_center) // 2
    keep[start:start + n_center] = 1
    pool = np.flatnonzero(keep == 0)
    rng = np.random.default_rng(seed)
    extra = rng.choice(pool, size=total - n_center, replace=False)
    keep[extra] = 1
    return KSpaceMask(width=w, keep=keep, acceleration=acceleration,
                      center_fraction=center_fraction, seed=seed)


class LinearOperator:
    """A measurement map with ``apply`` and ``adjoint``.

    ``n`` is the signal dimension, ``m`` the number of measurements
    (complex samples for the masked Fourier kind; ``out_dim`` gives the
    length of the real vector ``apply`` returns).
    """

    def __init__(self, kind, m, n, matrix=None, fourier=None):
        self.kind = kind
        self.m = int(m)
        self.n = int(n)
        self._matrix = matrix
        self._fourier = fourier

    @property
    def out_dim(self) -> int:
        return 2 * self.m if self.kind == "masked_fourier" else self.m

    @property
    def complex_output(self) -> bool:
        return self.kind == "masked_fourier"

    @property
    def matrix(self) -> np.ndarray | None:
        return self._matrix

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != self.n:
            raise ValueError(f"operator expects length {self.n}, got {x.size}")
        if self.kind == "identity":
            return x
        if self.kind == "dense":
            return self._matrix @ x
        h, w, cols = self._fourier
        K = np.fft.fft2(x.reshape(h, w)) / np.sqrt(h * w)
        sub = K[:, cols]
        out = np.empty(2 * sub.size)
        out[0::2] = sub.real.reshape(-1)
        out[1::2] = sub.imag.reshape(-1)
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size != self.out_dim:
            raise ValueError(f"adjoint expects length {self.out_dim}, got {y.size}")
        if self.kind == "identity":
            return y
        if self.kind == "dense":
            return self._matrix.T @ y
        h, w, cols = self._fourier
        sub = (y[0::2] + 1j * y[1::2]).reshape(h, len(cols))
        K = np.zeros((h, w), dtype=complex)
        K[:, cols] = sub
        x = np.fft.ifft2(K) * np.sqrt(h * w)
        return x.real.reshape(-1)


def make_identity(n: int) -> LinearOperator:
    return LinearOperator("identity", n, n)


def make_gaussian(m: int, n: int, seed: int) -> LinearOperator:
    """Dense matrix with iid N(0, 1/m) entries, deterministic per seed."""
    if m < 1 or n < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    return LinearOperator("dense", m, n, matrix=rng.normal(0.0, 1.0 / np.sqrt(m), (m, n)))


def make_rademacher(m: int, n: int, seed: int) -> LinearOperator:
    """Dense matrix with iid entries in {-1, +1}, unscaled."""
    if m < 1 or n < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    return LinearOperator("dense", m, n, matrix=(rng.integers(0, 2, (m, n)) * 2.0 - 1.0))


def make_masked_fourier(h: int, w: int, mask: KSpaceMask) -> LinearOperator:
    """Rows of the unitary 2-d DFT at kept columns; adjoint zero-fills and
    inverse-transforms, returning the real part."""
    if mask.width != w:
        raise ValueError(f"mask width {mask.width} does not match image width {w}")
    if mask.kept_count == 0:
        raise ValueError("mask keeps no columns")
    cols = np.flatnonzero(np.fft.ifftshift(mask.keep))
    return LinearOperator("masked_fourier", h * len(cols), h * w, fourier=(h, w, cols))


def operator_norm(op: LinearOperator, iters: int = 200, seed: int = 0, tol: float = 1e-10) -> float:
    """Largest singular value via power iteration on A^T A."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=op.n)
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(iters):
        w = op.adjoint(op.apply(v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - last) <= tol * max(norm, 1.0):
            last = norm
            break
        last = norm
    return float(np.sqrt(last))


def dft_matrix_2d(h: int, w: int) -> np.ndarray:
    """Dense unitary 2-d DFT matrix acting on row-major flattened images.

    Intended as a small-size oracle for the FFT-based operator."""
    fh = np.fft.fft(np.eye(h)) / np.sqrt(h)
    fw = np.fft.fft(np.eye(w)) / np.sqrt(w)
    return np.kron(fh, fw)
