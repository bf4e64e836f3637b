"""Dense float64 tensors with reverse-mode differentiation for a fixed op set.

The engine is deliberately small: it supports exactly the operations the
convolutional generators and their fitting loops need (matmul, reshape,
broadcast add/sub, ReLU, sigmoid, zero-insertion upsampling, small-kernel
convolution with circular or zero padding, per-channel normalization,
application of a linear measurement operator, and a sum-of-squares loss).
Graphs are implicit: every op records its parents and a vector-Jacobian
closure, and ``Tensor.backward`` walks the DAG once in reverse topological
order. All arithmetic is double precision.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A dense real array plus the bookkeeping needed for reverse mode.

    Leaf tensors are constructed directly from array data and reject
    non-finite values. Interior nodes are produced by the ops below and
    carry a ``_vjp`` closure mapping the output gradient to per-parent
    gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("tensor values must be finite")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @classmethod
    def _from_op(cls, data, parents, vjp):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = any(p.requires_grad for p in parents)
        t._parents = tuple(parents)
        t._vjp = vjp
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.shape != ():
            raise ValueError("backward requires a scalar loss")
        order = _toposort(self)
        self.grad = np.array(1.0)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            node.grad = None  # free interior buffers early


def _toposort(root):
    """Post-order over the differentiable part of the DAG, each node once."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(loss: Tensor, params) -> list[np.ndarray]:
    """Gradient of a scalar loss for each leaf in ``params``.

    Leaves not connected to the loss get a zero gradient.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def _unbroadcast(g, shape):
    """Sum a gradient over axes that numpy broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return Tensor._from_op(out, (a, b), vjp)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def vjp(g):
        return (s * g,)

    return Tensor._from_op(s * x.data, (x,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g):
        ga = g @ b.data.T if need_a else None
        gb = a.data.T @ g if need_b else None
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return Tensor._from_op(x.data.reshape(shape), (x,), vjp)


def relu(x: Tensor) -> Tensor:
    # Subgradient at 0 is taken as 0, keeping gradients deterministic.
    def vjp(g):
        return (g * (x.data > 0),)

    return Tensor._from_op(np.maximum(x.data, 0.0), (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return Tensor._from_op(s, (x,), vjp)


def upsample2x(x: Tensor, rank: int | None = None) -> Tensor:
    """Zero-insertion upsampling: [x1,...,xn] -> [x1,0,x2,0,...,xn,0].

    The first ``rank`` axes are treated as spatial (all axes when ``rank``
    is None); trailing axes (channels) pass through. In 2-d the rule is
    applied along both spatial axes, so values land at even indices only.
    """
    if x.size == 0:
        raise ValueError("upsample2x: empty input")
    r = x.ndim if rank is None else rank
    shape = tuple(2 * s if i < r else s for i, s in enumerate(x.data.shape))
    out = np.zeros(shape)
    sel = tuple(slice(None, None, 2) if i < r else slice(None) for i in range(x.ndim))
    out[sel] = x.data

    def vjp(g):
        return (g[sel],)

    return Tensor._from_op(out, (x,), vjp)


def upsample2x_trunc(x: Tensor) -> Tensor:
    """Zero insertion truncated at the end: R^n -> R^(2n-1) along axis 0."""
    n = x.data.shape[0]
    if n == 0:
        raise ValueError("upsample2x_trunc: empty input")
    out = np.zeros((2 * n - 1,) + x.data.shape[1:])
    out[::2] = x.data

    def vjp(g):
        return (g[::2],)

    return Tensor._from_op(out, (x,), vjp)


def _pad_before(ell: int) -> int:
    # Left-biased anchor: even kernels pad ceil((l-1)/2) before, floor after.
    return (ell - 1 + 1) // 2


def _corr_same_axis(arr: np.ndarray, kern: np.ndarray, axis: int, pad_before: int) -> np.ndarray:
    """Zero-padded correlation with an explicit anchor along one axis."""
    ell = len(kern)
    n = arr.shape[axis]
    pads = [(0, 0)] * arr.ndim
    pads[axis] = (pad_before, ell - 1 - pad_before)
    xp = np.pad(arr, pads)
    out = np.zeros_like(arr)
    idx = [slice(None)] * arr.ndim
    for j in range(ell):
        idx[axis] = slice(j, j + n)
        out += kern[j] * xp[tuple(idx)]
    return out


def conv_fixed(x: Tensor, kernel: np.ndarray, rank: int, scale_factor: float = 1.0) -> Tensor:
    """Separable correlation with a constant 1-d kernel along each spatial axis.

    Applying the same length-l kernel along both axes of a 2-d signal equals
    convolving with the outer-product l x l kernel. Zero-same padding with a
    left-biased anchor keeps output extents equal to input extents.
    """
    kern = np.asarray(kernel, dtype=np.float64)
    pb = _pad_before(len(kern))
    out = x.data
    for ax in range(rank):
        out = _corr_same_axis(out, kern, ax, pb)
    if scale_factor != 1.0:
        out = out * scale_factor
    kern_t = kern[::-1]
    pb_t = len(kern) - 1 - pb

    def vjp(g):
        gx = g if scale_factor == 1.0 else g * scale_factor
        for ax in reversed(range(rank)):
            gx = _corr_same_axis(gx, kern_t, ax, pb_t)
        return (gx,)

    return Tensor._from_op(out, (x,), vjp)


def _kernel_offsets(kshape, mode):
    """Tap multi-indices and their anchor shift for an explicit kernel."""
    if mode == "circular":
        shifts = [0] * len(kshape)
    elif mode == "same":
        shifts = [_pad_before(ell) for ell in kshape]
    else:
        raise ValueError(f"unknown padding mode: {mode!r}")
    return list(np.ndindex(*kshape)), shifts


def _upconv_axis(arr: np.ndarray, kern: np.ndarray, axis: int, pb: int) -> np.ndarray:
    """Correlation with ``kern`` of the zero-upsampled array along one axis.

    Equivalent to zero-insertion followed by zero-same correlation, but the
    inserted zeros are never materialized: each kernel tap only touches one
    output parity class."""
    n = arr.shape[axis]
    shape = list(arr.shape)
    shape[axis] = 2 * n
    out = np.zeros(shape)

    def sl(a, lo, hi, step=1):
        idx = [slice(None)] * arr.ndim
        idx[axis] = slice(lo, hi, step)
        return a[tuple(idx)]

    for j, kj in enumerate(kern):
        s = j - pb
        r = s % 2
        q = (s + r) // 2  # x index offset: out[2i+r] += k_j * x[i + q]
        i_lo = max(0, -q)
        i_hi = min(n, n - q)
        if i_hi <= i_lo:
            continue
        dst = sl(out, 2 * i_lo + r, 2 * (i_hi - 1) + r + 1, 2)
        src = sl(arr, i_lo + q, i_hi + q)
        dst += kj * src
    return out


def _upconv_axis_T(g: np.ndarray, kern: np.ndarray, axis: int, pb: int) -> np.ndarray:
    """Transpose of ``_upconv_axis``: maps gradients of the length-2n output
    back to the length-n input."""
    n2 = g.shape[axis]
    n = n2 // 2
    shape = list(g.shape)
    shape[axis] = n
    gx = np.zeros(shape)

    def sl(a, lo, hi, step=1):
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(lo, hi, step)
        return a[tuple(idx)]

    for j, kj in enumerate(kern):
        s = j - pb
        r = s % 2
        q = (s + r) // 2
        i_lo = max(0, -q)
        i_hi = min(n, n - q)
        if i_hi <= i_lo:
            continue
        dst = sl(gx, i_lo + q, i_hi + q)
        src = sl(g, 2 * i_lo + r, 2 * (i_hi - 1) + r + 1, 2)
        dst += kj * src
    return gx


def upsample_conv_fixed(x: Tensor, kernel: np.ndarray, rank: int,
                        scale_factor: float = 1.0) -> Tensor:
    """Fused zero-insertion upsampling and fixed-kernel correlation.

    Exactly equal to conv_fixed(upsample2x(x, rank), kernel, rank) but
    skips the inserted zeros, roughly quartering the memory traffic."""
    kern = np.asarray(kernel, dtype=np.float64)
    pb = _pad_before(len(kern))
    out = x.data
    for ax in range(rank):
        out = _upconv_axis(out, kern, ax, pb)
    if scale_factor != 1.0:
        out = out * scale_factor

    def vjp(g):
        gx = g if scale_factor == 1.0 else g * scale_factor
        for ax in reversed(range(rank)):
            gx = _upconv_axis_T(gx, kern, ax, pb)
        return (gx,)

    return Tensor._from_op(out, (x,), vjp)


def conv(signal: Tensor, kernel, mode: str = "circular") -> Tensor:
    """Correlate a 1-d or 2-d signal with a small kernel.

    ``mode='circular'`` reproduces multiplication by the circulant matrix
    built from the kernel (output_i = sum_j kernel_j * signal_{i+j mod n});
    ``mode='same'`` pads with zeros so the output extent equals the input
    extent, anchored left-biased for even kernel sizes. The kernel may be a
    Tensor (learnable) or a plain array.
    """
    kern_t = kernel if isinstance(kernel, Tensor) else Tensor(np.asarray(kernel, dtype=np.float64))
    x, k = signal.data, kern_t.data
    if x.ndim not in (1, 2) or k.ndim != x.ndim:
        raise ValueError("conv supports 1-d or 2-d signals with a kernel of equal rank")
    if any(ke > xe for ke, xe in zip(k.shape, x.shape)):
        raise ValueError(f"kernel extent {k.shape} exceeds signal extent {x.shape}")
    taps, shifts = _kernel_offsets(k.shape, mode)
    axes = tuple(range(x.ndim))

    if mode == "circular":
        out = np.zeros_like(x)
        for t in taps:
            out += k[t] * np.roll(x, tuple(-o for o in t), axis=axes)

        def vjp(g):
            gx = None
            if signal.requires_grad:
                gx = np.zeros_like(x)
                for t in taps:
                    gx += k[t] * np.roll(g, t, axis=axes)
            gk = None
            if kern_t.requires_grad:
                gk = np.empty_like(k)
                for t in taps:
                    gk[t] = np.sum(g * np.roll(x, tuple(-o for o in t), axis=axes))
            return gx, gk

        return Tensor._from_op(out, (signal, kern_t), vjp)

    # zero-same
    pads = [(sh, ke - 1 - sh) for sh, ke in zip(shifts, k.shape)]
    xp = np.pad(x, pads)
    out = np.zeros_like(x)
    for t in taps:
        win = tuple(slice(o, o + n) for o, n in zip(t, x.shape))
        out += k[t] * xp[win]

    def vjp(g):
        gx = None
        if signal.requires_grad:
            gxp = np.zeros_like(xp)
            for t in taps:
                win = tuple(slice(o, o + n) for o, n in zip(t, x.shape))
                gxp[win] += k[t] * g
            crop = tuple(slice(p[0], p[0] + n) for p, n in zip(pads, x.shape))
            gx = gxp[crop]
        gk = None
        if kern_t.requires_grad:
            gk = np.empty_like(k)
            for t in taps:
                win = tuple(slice(o, o + n) for o, n in zip(t, x.shape))
                gk[t] = np.sum(g * xp[win])
        return gx, gk

    return Tensor._from_op(out, (signal, kern_t), vjp)


def conv_pairs(x: Tensor, kernels: Tensor, mode: str = "same") -> Tensor:
    """Multi-channel convolution with an independent kernel per channel pair.

    ``x`` has shape (spatial..., k_in); ``kernels`` has shape
    (taps..., k_in, k_out). Output channel s is the sum over input channels
    j of the correlation of x[..., j] with kernels[..., j, s].
    """
    kshape = kernels.data.shape[:-2]
    rank = len(kshape)
    spatial = x.data.shape[:rank]
    taps, shifts = _kernel_offsets(kshape, mode)
    if mode != "same":
        raise ValueError("conv_pairs supports zero-same padding only")
    pads = [(sh, ke - 1 - sh) for sh, ke in zip(shifts, kshape)] + [(0, 0)]
    xp = np.pad(x.data, pads)
    k_out = kernels.data.shape[-1]
    out = np.zeros(spatial + (k_out,))
    wins = [tuple(slice(o, o + n) for o, n in zip(t, spatial)) + (slice(None),) for t in taps]
    for t, win in zip(taps, wins):
        out += xp[win] @ kernels.data[t]
    need_x, need_k = x.requires_grad, kernels.requires_grad

    def vjp(g):
        gx = None
        if need_x:
            gxp = np.zeros_like(xp)
            for t, win in zip(taps, wins):
                gxp[win] += g @ kernels.data[t].T
            crop = tuple(slice(p[0], p[0] + n) for p, n in zip(pads, x.data.shape))
            gx = gxp[crop]
        gk = None
        if need_k:
            gk = np.empty_like(kernels.data)
            gf = g.reshape(-1, k_out)
            for t, win in zip(taps, wins):
                gk[t] = xp[win].reshape(-1, xp.shape[-1]).T @ gf
        return gx, gk

    return Tensor._from_op(out, (x, kernels), vjp)


def channel_norm(x: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Standardize each channel and add a learned offset.

    output = (z - mean(z)) / sqrt(var(z) + eps) + beta, with the empirical
    mean and the population variance taken over the whole channel. When
    ``beta`` is a vector its length must match the last axis of ``x`` and
    each slice along that axis is one channel; a scalar ``beta`` treats the
    whole tensor as a single channel. The gradient flows through both the
    mean and the variance.
    """
    if eps <= 0:
        raise ValueError("channel_norm requires eps > 0")
    if beta.ndim == 0:
        axes = tuple(range(x.ndim))
    else:
        if beta.shape != (x.data.shape[-1],):
            raise ValueError("beta length must match the channel axis")
        axes = tuple(range(x.ndim - 1))
    m = x.data.mean(axis=axes, keepdims=True)
    v = x.data.var(axis=axes, keepdims=True)
    s = np.sqrt(v + eps)
    xhat = x.data - m
    xhat /= s
    out = xhat + beta.data

    def vjp(g):
        gx = None
        if x.requires_grad:
            gm = g.mean(axis=axes, keepdims=True)
            gx = g * xhat
            gxh = gx.mean(axis=axes, keepdims=True)
            np.multiply(xhat, gxh, out=gx)
            np.subtract(g, gx, out=gx)
            gx -= gm
            gx /= s
        gb = None
        if beta.requires_grad:
            gb = g.sum(axis=axes) if beta.ndim else np.array(g.sum())
        return gx, gb

    return Tensor._from_op(out, (x, beta), vjp)


def apply_operator(op, x: Tensor) -> Tensor:
    """Apply a LinearOperator to a flattened tensor; backward uses the adjoint."""
    flat = x.data.reshape(-1)
    out = op.apply(flat)
    shape = x.data.shape

    def vjp(g):
        return (op.adjoint(g).reshape(shape),)

    return Tensor._from_op(out, (x,), vjp)


def sum_squares(x: Tensor) -> Tensor:
    """Scalar sum of squared entries."""
    out = np.array(np.dot(x.data.reshape(-1), x.data.reshape(-1)))

    def vjp(g):
        return (2.0 * g * x.data,)

    return Tensor._from_op(out, (x,), vjp)
