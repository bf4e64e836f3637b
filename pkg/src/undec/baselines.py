"""Classical recovery baselines: wavelet thresholding, ISTA, and TV.

The haar basis is orthonormal (Parseval holds exactly), so analysis and
synthesis coincide and hard thresholding of coefficients is the optimal
same-budget compressor. CDF 9/7 is provided through a lifting scheme,
which is exactly invertible regardless of boundary handling.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .operators import LinearOperator, operator_norm

_SQRT2 = np.sqrt(2.0)

# CDF 9/7 lifting coefficients (predict/update pairs plus scaling).
_CDF97_A1 = -1.586134342059924
_CDF97_A2 = -0.052980118572961
_CDF97_A3 = 0.882911075530934
_CDF97_A4 = 0.443506852043971
_CDF97_K = 1.230174104914001


@dataclass(frozen=True)
class WaveletBasis:
    family: str = "haar"
    levels: int | None = None  # None: decompose down to extent 1

    def __post_init__(self):
        if self.family not in ("haar", "cdf97"):
            raise ValueError(f"unknown wavelet family: {self.family!r}")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be >= 1")


def _check_pow2(n: int):
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"transform extents must be powers of two, got {n}")


def _levels_for(shape, levels):
    max_lv = int(np.log2(min(shape)))
    return max_lv if levels is None else min(levels, max_lv)


def _haar_step(a):
    even, odd = a[0::2], a[1::2]
    return np.concatenate([(even + odd) / _SQRT2, (even - odd) / _SQRT2])


def _haar_unstep(c):
    h = len(c) // 2
    s, d = c[:h], c[h:]
    out = np.empty_like(c)
    out[0::2] = (s + d) / _SQRT2
    out[1::2] = (s - d) / _SQRT2
    return out


def _lift_odd(x, coef):
    # x[i] += coef * (x[i-1] + x[i+1]) for odd i, mirrored at the right edge
    n = len(x)
    right = np.empty(n // 2)
    right[:-1] = x[2::2]
    right[-1] = x[n - 2]
    x[1::2] += coef * (x[0::2] + right)


def _lift_even(x, coef):
    # x[i] += coef * (x[i-1] + x[i+1]) for even i, mirrored at the left edge
    left = np.empty(len(x) // 2)
    left[1:] = x[1:-1:2]
    left[0] = x[1]
    x[0::2] += coef * (left + x[1::2])


def _cdf97_step(a):
    x = a.astype(np.float64).copy()
    for predict, update in ((_CDF97_A1, _CDF97_A2), (_CDF97_A3, _CDF97_A4)):
        _lift_odd(x, predict)
        _lift_even(x, update)
    return np.concatenate([x[0::2] / _CDF97_K, x[1::2] * _CDF97_K])


def _cdf97_unstep(c):
    n = len(c)
    h = n // 2
    x = np.empty(n)
    x[0::2] = c[:h] * _CDF97_K
    x[1::2] = c[h:] / _CDF97_K
    for predict, update in ((_CDF97_A3, _CDF97_A4), (_CDF97_A1, _CDF97_A2)):
        _lift_even(x, -update)
        _lift_odd(x, -predict)
    return x


def _axis_apply(block, fn, axis):
    return np.apply_along_axis(fn, axis, block)


def wavelet_forward(image: np.ndarray, basis: WaveletBasis) -> np.ndarray:
    """Multi-level decomposition; the output array has the input's shape."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ValueError("wavelet transforms support 1-d or 2-d arrays")
    for n in x.shape:
        _check_pow2(n)
    step = _haar_step if basis.family == "haar" else _cdf97_step
    levels = _levels_for(x.shape, basis.levels)
    out = x.copy()
    ext = list(x.shape)
    for _ in range(levels):
        sl = tuple(slice(0, e) for e in ext)
        block = out[sl]
        for ax in range(x.ndim):
            block = _axis_apply(block, step, ax)
        out[sl] = block
        ext = [e // 2 for e in ext]
    return out


def wavelet_inverse(coeffs: np.ndarray, basis: WaveletBasis) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    for n in c.shape:
        _check_pow2(n)
    unstep = _haar_unstep if basis.family == "haar" else _cdf97_unstep
    levels = _levels_for(c.shape, basis.levels)
    out = c.copy()
    exts = [[e // 2 ** lv for e in c.shape] for lv in range(levels, 0, -1)]
    for ext in exts:
        sl = tuple(slice(0, 2 * e) for e in ext)
        block = out[sl]
        for ax in reversed(range(c.ndim)):
            block = _axis_apply(block, unstep, ax)
        out[sl] = block
    return out


def threshold_compress(image: np.ndarray, basis: WaveletBasis, n_keep: int) -> np.ndarray:
    """Keep the n_keep largest-magnitude coefficients, zero the rest, invert.

    Ties are broken by coefficient index (the lower index is kept)."""
    coeffs = wavelet_forward(image, basis)
    flat = coeffs.reshape(-1)
    if not (1 <= n_keep <= flat.size):
        raise ValueError(f"n_keep must lie in [1, {flat.size}]")
    order = np.argsort(-np.abs(flat), kind="stable")
    kept = np.zeros_like(flat)
    kept[order[:n_keep]] = flat[order[:n_keep]]
    return wavelet_inverse(kept.reshape(coeffs.shape), basis)


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


class DivergenceError(RuntimeError):
    pass


def ista_l1(y: np.ndarray, A: LinearOperator, basis: WaveletBasis, lam: float,
            iterations: int, step: float | None = None,
            shape: tuple | None = None) -> np.ndarray:
    """Iterative soft thresholding for 0.5 ||y - Ax||^2 + lam ||Wx||_1.

    Each iteration takes a gradient step on the data term and applies the
    wavelet-domain shrinkage prox (exact for the orthonormal haar basis).
    ``step`` must not exceed 1 / ||A||^2; the default is 0.95 of that bound
    from a power-iteration estimate. Starts from the zero-filled adjoint.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if shape is None:
        shape = (A.n,)
    if int(np.prod(shape)) != A.n:
        raise ValueError("shape does not match the operator's signal size")
    if step is None:
        step = 0.95 / operator_norm(A) ** 2
    x = A.adjoint(y).reshape(shape)

    def objective(img):
        r = A.apply(img.reshape(-1)) - y
        return 0.5 * float(r @ r) + lam * float(np.abs(wavelet_forward(img, basis)).sum())

    f0 = objective(x)
    blowup = 1e6 * f0 + 1e-9 * (1.0 + float(y @ y))
    for _ in range(iterations):
        grad = A.adjoint(A.apply(x.reshape(-1)) - y).reshape(shape)
        z = x - step * grad
        x = wavelet_inverse(soft_threshold(wavelet_forward(z, basis), lam * step), basis)
        f = objective(x)
        if not np.isfinite(f) or f > blowup:
            raise DivergenceError(f"ISTA diverged: objective {f:.3e}")
    return x


def _tv_value_grad(x: np.ndarray, delta: float):
    """Anisotropic total variation smoothed as sum sqrt(diff^2 + delta^2)."""
    val = 0.0
    grad = np.zeros_like(x)
    for ax in range(x.ndim):
        d = np.diff(x, axis=ax)
        r = np.sqrt(d * d + delta * delta)
        val += float(r.sum() - delta * d.size)
        w = d / r
        sl_lo = [slice(None)] * x.ndim
        sl_hi = [slice(None)] * x.ndim
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        grad[tuple(sl_lo)] -= w
        grad[tuple(sl_hi)] += w
    return val, grad


def tv_recover(y: np.ndarray, A: LinearOperator, lam: float, iterations: int,
               shape: tuple | None = None, delta: float = 1e-6,
               step: float | None = None) -> np.ndarray:
    """Gradient descent with backtracking on 0.5 ||y - Ax||^2 + lam TV(x).

    TV is anisotropic with smoothing ``delta``; backtracking halves the step
    until the objective decreases, so the iteration is monotone."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if shape is None:
        shape = (A.n,)
    if int(np.prod(shape)) != A.n:
        raise ValueError("shape does not match the operator's signal size")
    if step is None:
        step = 1.0 / max(operator_norm(A) ** 2, 1e-12)
    x = A.adjoint(y).reshape(shape)

    def objective(img):
        r = A.apply(img.reshape(-1)) - y
        tv, _ = _tv_value_grad(img, delta)
        return 0.5 * float(r @ r) + lam * tv

    f = objective(x)
    blowup = 1e6 * f + 1e-9 * (1.0 + float(y @ y))
    for _ in range(iterations):
        r = A.apply(x.reshape(-1)) - y
        tv, tv_grad = _tv_value_grad(x, delta)
        grad = A.adjoint(r).reshape(shape) + lam * tv_grad
        s = step
        for _ in range(30):
            cand = x - s * grad
            fc = objective(cand)
            if fc <= f:
                break
            s *= 0.5
        else:
            break  # no descent direction at float resolution; converged
        x, f = cand, fc
        if not np.isfinite(f) or f > blowup:
            raise DivergenceError(f"TV descent diverged: objective {f:.3e}")
    return x
