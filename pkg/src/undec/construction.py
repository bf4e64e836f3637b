"""Exact sparse representations of discrete piecewise-linear functions.

A construction-arch generator of depth d outputs 2^(d-1) + 1 points. One
channel with one nonzero first-layer coefficient produces a discrete ramp;
a bias added before the final ReLU shifts the kink to any grid index,
yielding a rectangular function (zero up to index p, then slope * (i - p)).
A target with s slope changes is the sum of s such channels plus a constant
offset, so the whole parameter set has O(s) nonzero entries.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from . import generator as gen
from .generator import GeneratorConfig, GeneratorParams


def grid_length(depth: int) -> int:
    """Output length n_d of a depth-d construction generator (n_1 = 2)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return 2 ** (depth - 1) + 1


def construction_config(depth: int, channels: int) -> GeneratorConfig:
    return GeneratorConfig(
        arch="construction", depth=depth, channels=channels, input_extent=2,
        spatial_rank=1, use_sigmoid=False, use_channel_norm=False,
    )


@dataclass(frozen=True)
class PiecewiseLinearSpec:
    """A discrete piecewise-linear target on grid indices 0..n-1.

    ``segments`` is an ordered list of (breakpoint index, slope change):
    f(i) = initial_value + sum_j change_j * max(0, i - p_j).
    """

    n: int
    segments: tuple
    initial_value: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if len(self.segments) < 1:
            raise ValueError("at least one segment is required")
        last = -1
        for p, _ in self.segments:
            if not (0 <= p < self.n):
                raise ValueError(f"breakpoint {p} outside [0, {self.n})")
            if p <= last:
                raise ValueError("breakpoints must be strictly increasing")
            last = p

    @property
    def piece_count(self) -> int:
        return len(self.segments)

    def evaluate(self) -> np.ndarray:
        idx = np.arange(self.n, dtype=np.float64)
        out = np.full(self.n, float(self.initial_value))
        for p, change in self.segments:
            out += change * np.maximum(0.0, idx - p)
        return out


@dataclass
class SparseParams:
    """Built generator parameters together with their nonzero count."""

    config: GeneratorConfig
    params: GeneratorParams
    nonzero_count: int


def _count_nonzero(params: GeneratorParams) -> int:
    return int(np.count_nonzero(params.flatten()))


def calibrate_slope(depth: int, alpha_target: float) -> float:
    """First-layer coefficient that yields per-index output slope alpha.

    Each truncated-upsampling block halves the per-index slope, so the
    required input coefficient is found by pushing a unit ramp through the
    network once and scaling (the forward map is linear in that coefficient
    while all intermediate values stay nonnegative).
    """
    if not np.isfinite(alpha_target):
        raise ValueError("alpha_target must be finite")
    if alpha_target == 0.0:
        return 0.0
    unit = _ramp_params(depth, 1.0)
    out = gen.forward(construction_config(depth, 1), unit)
    sigma = out[1] - out[0]
    return float(alpha_target / sigma)


def _zero_params(config: GeneratorConfig) -> GeneratorParams:
    cs, bs, as_, ow, ob = gen.param_shapes(config)
    return GeneratorParams(
        coeffs=[np.zeros(s) for s in cs],
        betas=[np.zeros(s) for s in bs],
        biases=[np.zeros(s) for s in as_],
        out_weight=np.zeros(ow),
        out_bias=np.zeros(()) if ob else None,
    )


def _ramp_params(depth: int, gamma: float) -> GeneratorParams:
    """Single-channel parameters producing the ramp gamma * (0, 1, ..., n-1)
    scaled by the per-layer slope attenuation; intermediate blocks pass the
    channel through the identity."""
    config = construction_config(depth, 1)
    params = _zero_params(config)
    if depth == 1:
        params.out_weight[:] = [[0.0], [gamma]]
        return params
    params.coeffs[0][:] = [[0.0], [gamma]]
    for b in range(1, depth - 1):
        params.coeffs[b][:] = np.eye(1)
    params.out_weight[:] = [[1.0]]
    return params


def build_rectangular(depth: int, p: int, slope: float) -> SparseParams:
    """Parameters whose forward pass is zero through index p, then linear.

    The kink bias is applied before the final ReLU, so only the first-layer
    coefficient, the identity pass-through entries, one bias entry, and the
    output weight are nonzero: at most depth + 1 entries beyond the
    identity structure.
    """
    n = grid_length(depth)
    if not (0 <= p < n):
        raise ValueError(f"kink index {p} outside [0, {n})")
    config = construction_config(depth, 1)
    params = _zero_params(config)
    mag = abs(slope)
    sgn = float(np.sign(slope))
    if depth == 1:
        # Two-point grid: the rect is (0, slope) for p = 0 and zero for p = 1.
        if p == 0:
            params.out_weight[:] = [[0.0], [slope]]
        return SparseParams(config, params, _count_nonzero(params))
    gamma = calibrate_slope(depth, mag)
    params.coeffs[0][:] = [[0.0], [gamma]]
    for b in range(1, depth - 1):
        params.coeffs[b][:] = np.eye(1)
    params.biases[depth - 2][:] = -mag * p
    params.out_weight[:] = [[sgn]]
    return SparseParams(config, params, _count_nonzero(params))


def build_piecewise(spec: PiecewiseLinearSpec, depth: int) -> SparseParams:
    """Parameters reproducing the target exactly with one channel per piece.

    Channel j carries the rectangular function of segment j with magnitude
    |change_j|; negative slope changes are handled by negating the output
    weight entry, which keeps every pre-ReLU value nonnegative where the
    construction relies on it. Nonzero count is at most s(d+1) + s + 1.
    """
    n = grid_length(depth)
    if spec.n != n:
        raise ValueError(f"spec length {spec.n} incompatible with depth {depth} (needs {n})")
    s = spec.piece_count
    config = construction_config(depth, s)
    params = _zero_params(config)
    if depth == 1:
        # Grid of two points: evaluate directly.
        target = spec.evaluate()
        params.out_bias[...] = target[0]
        params.out_weight[:] = 0.0
        params.out_weight[1, 0] = target[1] - target[0]
        return SparseParams(config, params, _count_nonzero(params))
    for j, (p, change) in enumerate(spec.segments):
        mag = abs(change)
        params.coeffs[0][1, j] = calibrate_slope(depth, mag)
        params.biases[depth - 2][j] = -mag * p
        params.out_weight[j, 0] = float(np.sign(change))
    for b in range(1, depth - 1):
        params.coeffs[b][:] = np.eye(s)
    params.out_bias[...] = spec.initial_value
    return SparseParams(config, params, _count_nonzero(params))


def nonzero_bound(s: int, depth: int) -> int:
    """Bound on nonzero entries including identity pass-through: s(d+1)+s+1."""
    return s * (depth + 1) + s + 1


def preactivation_floor(sp: SparseParams) -> float:
    """Smallest pre-ReLU value the construction relies on being nonnegative.

    Re-evaluates the blocks with plain array arithmetic. At every block but
    the last, all pre-activations must survive the ReLU; at the last block
    only the values past each channel's kink are relied upon (the bias
    deliberately drives the rest negative).
    """
    config, params = sp.config, sp.params
    if config.depth == 1:
        return 0.0
    kern = gen.CONSTRUCTION_KERNEL_1D
    B = np.eye(2)
    floor = np.inf
    for b in range(config.depth - 1):
        Z = B @ params.coeffs[b]
        up = np.zeros((2 * Z.shape[0] - 1, Z.shape[1]))
        up[::2] = Z
        pre = np.zeros_like(up)
        padded = np.pad(up, ((1, 1), (0, 0)))
        for j, kj in enumerate(kern):
            pre += kj * padded[j:j + up.shape[0]]
        pre = pre + params.biases[b]
        if b < config.depth - 2:
            floor = min(floor, float(pre.min()))
        else:
            idx = np.arange(pre.shape[0])
            for ch in range(pre.shape[1]):
                past_kink = pre[idx > _kink_index(params, ch), ch]
                if past_kink.size:
                    floor = min(floor, float(past_kink.min()))
        B = np.maximum(pre, 0.0)
    return floor if np.isfinite(floor) else 0.0


def _kink_index(params: GeneratorParams, channel: int) -> int:
    """Kink grid index p of a built channel, recovered from bias and slope.

    The builder sets bias = -|slope| * p with |slope| = gamma * 2^(1-d)."""
    bias = params.biases[-1][channel]
    gamma = params.coeffs[0][1, channel]
    depth = len(params.coeffs) + 1
    mag = abs(gamma) * 2.0 ** (1 - depth)
    if mag == 0.0:
        return 0
    return int(round(-bias / mag))


def spec_from_text(text: str, n: int) -> PiecewiseLinearSpec:
    """Parse a target description: optional line 'init <value>', then one
    'breakpoint slope_change' pair per line."""
    initial = 0.0
    segments = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "init":
            if len(parts) != 2:
                raise ValueError(f"malformed init line: {raw!r}")
            initial = float(parts[1])
            continue
        if len(parts) != 2:
            raise ValueError(f"malformed segment line: {raw!r}")
        segments.append((int(parts[0]), float(parts[1])))
    return PiecewiseLinearSpec(n=n, segments=tuple(segments), initial_value=initial)
