"""Un-trained convolutional generators.

A generator maps a fixed pseudo-random input volume B_1 (n_1 channels of
width k) through d-1 blocks of { upsample, convolve, combine channels,
ReLU, channel normalization } followed by a linear output layer and an
optional sigmoid. Six variants are supported:

  i    fixed interpolation kernel, zero-insertion upsampling x2 per block
  ii   learnable convolution kernels, upsampling x2 per block
  iii  fixed interpolation kernel, no upsampling
  iv   learnable kernels, no upsampling
  plain         arch-i connectivity with channel norm and sigmoid off
  construction  1-d variant with truncated upsampling (R^n -> R^(2n-1)),
                per-channel biases, input volume fixed to the 2x2 identity

For architectures i/iii the per-pair coefficients are scalars scaling one
fixed kernel; for ii/iv each (input, output) channel pair has its own
kernel of extent ``kernel_extent`` per spatial dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ARCHS = ("i", "ii", "iii", "iv", "construction", "plain")
UPSAMPLING_ARCHS = ("i", "ii", "plain")
FIXED_KERNEL_ARCHS = ("i", "iii", "plain")

# 1-d section of the fixed interpolation kernel; applying it along both axes
# of a 2-d signal gives the 4x4 kernel (1/16) * outer([1,3,3,1], [1,3,3,1]).
FIXED_KERNEL_1D = np.array([1.0, 3.0, 3.0, 1.0]) / 4.0
# Midpoint-interpolation kernel of the truncated upsampling operator.
CONSTRUCTION_KERNEL_1D = np.array([1.0, 2.0, 1.0]) / 2.0

CHANNEL_NORM_EPS = 1e-6


@dataclass(frozen=True)
class GeneratorConfig:
    arch: str
    depth: int
    channels: int
    out_channels: int = 1
    input_extent: int = 4
    spatial_rank: int = 1
    kernel_extent: int = 4
    use_sigmoid: bool = True
    use_channel_norm: bool = True
    input_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch: {self.arch!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.out_channels not in (1, 3):
            raise ValueError("out_channels must be 1 or 3")
        if self.input_extent < 1:
            raise ValueError("input_extent must be >= 1")
        if self.spatial_rank not in (1, 2):
            raise ValueError("spatial_rank must be 1 or 2")
        if self.arch in FIXED_KERNEL_ARCHS and self.kernel_extent != 4:
            raise ValueError("kernel_extent is fixed at 4 for fixed-kernel archs")
        if self.arch in ("ii", "iv") and self.kernel_extent < 1:
            raise ValueError("kernel_extent must be >= 1")
        if self.arch == "construction":
            if self.spatial_rank != 1:
                raise ValueError("construction arch is 1-d only")
            if self.input_extent != 2:
                raise ValueError("construction arch requires input_extent == 2")
            if self.use_channel_norm or self.use_sigmoid:
                raise ValueError("construction arch runs without channel norm or sigmoid")
        if self.arch == "plain" and (self.use_channel_norm or self.use_sigmoid):
            raise ValueError("plain arch runs without channel norm or sigmoid")


@dataclass
class GeneratorParams:
    """Trainable coefficients of a generator, as plain float64 arrays.

    ``coeffs[b]`` mixes channels in block b: shape (k_in, k) for scalar
    coefficients, (taps..., k_in, k) for learnable kernels. ``betas[b]``
    are channel-norm offsets, ``biases[b]`` the per-channel biases of the
    construction arch. ``out_weight`` is the (k, out_channels) output
    combination; ``out_bias`` a scalar used by the construction arch only.
    """

    coeffs: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    out_weight: np.ndarray = None
    out_bias: np.ndarray | None = None

    def copy(self):
        return GeneratorParams(
            coeffs=[c.copy() for c in self.coeffs],
            betas=[b.copy() for b in self.betas],
            biases=[b.copy() for b in self.biases],
            out_weight=self.out_weight.copy(),
            out_bias=None if self.out_bias is None else self.out_bias.copy(),
        )

    def arrays(self):
        """All parameter arrays in a fixed flattening order."""
        out = []
        nb = len(self.coeffs)
        for b in range(nb):
            out.append(self.coeffs[b])
            if self.betas:
                out.append(self.betas[b])
            if self.biases:
                out.append(self.biases[b])
        out.append(self.out_weight)
        if self.out_bias is not None:
            out.append(self.out_bias)
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays()])


def _block_in_channels(config: GeneratorConfig, block: int) -> int:
    if config.arch == "construction" and block == 0:
        return 2
    return config.channels


def _input_channels(config: GeneratorConfig) -> int:
    return 2 if config.arch == "construction" else config.channels


def param_shapes(config: GeneratorConfig):
    """Shapes of every parameter array, in flattening order metadata.

    Returns (coeff_shapes, beta_shapes, bias_shapes, out_weight_shape,
    has_out_bias)."""
    blocks = config.depth - 1
    k = config.channels
    taps = (config.kernel_extent,) * config.spatial_rank
    coeff_shapes = []
    for b in range(blocks):
        kin = _block_in_channels(config, b)
        if config.arch in ("ii", "iv"):
            coeff_shapes.append(taps + (kin, k))
        else:
            coeff_shapes.append((kin, k))
    beta_shapes = [(k,)] * blocks if config.use_channel_norm else []
    bias_shapes = [(k,)] * blocks if config.arch == "construction" else []
    k_last = k if blocks > 0 else _input_channels(config)
    out_shape = (k_last, config.out_channels)
    return coeff_shapes, beta_shapes, bias_shapes, out_shape, config.arch == "construction"


def param_count(config: GeneratorConfig) -> int:
    """Exact number of stored scalars.

    Closed forms (d = depth, k = channels, r = spatial_rank, l = kernel
    extent, q = out_channels):
      arch i / iii:  (d-1) k^2 + (d-1) k [channel-norm betas] + k q
      arch ii / iv:  (d-1) k^2 l^r + (d-1) k [betas] + k q
      plain:         (d-1) k^2 + k q
      construction:  2k + (d-2) k^2 + (d-1) k [biases] + k + 1   (d >= 2)
    """
    cs, bs, as_, ow, ob = param_shapes(config)
    total = sum(int(np.prod(s)) for s in cs + bs + as_) + int(np.prod(ow))
    return total + (1 if ob else 0)


def init_params(config: GeneratorConfig, seed: int, scale: float = 0.1) -> GeneratorParams:
    """Deterministic pseudo-random initialization; same seed, same params."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    rng = np.random.default_rng(seed)
    cs, bs, as_, ow, ob = param_shapes(config)
    params = GeneratorParams(
        coeffs=[rng.normal(0.0, 1.0, s) * scale for s in cs],
        betas=[np.zeros(s) for s in bs],
        biases=[np.zeros(s) for s in as_],
        out_weight=rng.normal(0.0, 1.0, ow) * scale,
        out_bias=np.zeros(()) if ob else None,
    )
    return params


def unflatten(config: GeneratorConfig, vec: np.ndarray) -> GeneratorParams:
    """Inverse of GeneratorParams.flatten for the given config."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != param_count(config):
        raise ValueError(f"expected {param_count(config)} scalars, got {vec.size}")
    cs, bs, as_, ow, ob = param_shapes(config)
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = vec[pos:pos + n].reshape(shape).copy()
        pos += n
        return out

    coeffs, betas, biases = [], [], []
    for b in range(len(cs)):
        coeffs.append(take(cs[b]))
        if bs:
            betas.append(take(bs[b]))
        if as_:
            biases.append(take(as_[b]))
    out_weight = take(ow)
    out_bias = take(()) if ob else None
    return GeneratorParams(coeffs, betas, biases, out_weight, out_bias)


def input_volume(config: GeneratorConfig) -> np.ndarray:
    """The fixed, never-trained input tensor B_1.

    Entries are iid uniform on [0, 0.1) drawn from ``input_seed`` (small
    positive values keep early ReLUs active); the construction arch uses
    the 2x2 identity exactly.
    """
    if config.arch == "construction":
        return np.eye(2)
    rng = np.random.default_rng(config.input_seed)
    shape = (config.input_extent,) * config.spatial_rank + (config.channels,)
    return rng.uniform(0.0, 0.1, size=shape)


def input_norm(config: GeneratorConfig) -> float:
    """Spectral norm of B_1 viewed as a (pixels x channels) matrix."""
    b1 = input_volume(config)
    return float(np.linalg.norm(b1.reshape(-1, b1.shape[-1]), 2))


def output_extent(config: GeneratorConfig) -> int:
    """Output extent per spatial dimension."""
    if config.arch in UPSAMPLING_ARCHS:
        return config.input_extent * 2 ** (config.depth - 1)
    if config.arch == "construction":
        return 2 ** (config.depth - 1) + 1
    return config.input_extent


def output_shape(config: GeneratorConfig) -> tuple:
    spatial = (output_extent(config),) * config.spatial_rank
    if config.out_channels == 1:
        return spatial
    return spatial + (config.out_channels,)


def output_size(config: GeneratorConfig) -> int:
    return int(np.prod(output_shape(config)))


def params_to_tensors(params: GeneratorParams, requires_grad: bool = True) -> GeneratorParams:
    """Wrap every parameter array in an autodiff leaf (data is shared)."""
    wrap = lambda a: Tensor(a, requires_grad=requires_grad)
    return GeneratorParams(
        coeffs=[wrap(c) for c in params.coeffs],
        betas=[wrap(b) for b in params.betas],
        biases=[wrap(b) for b in params.biases],
        out_weight=wrap(params.out_weight),
        out_bias=None if params.out_bias is None else wrap(params.out_bias),
    )


def tensors_to_params(pt: GeneratorParams) -> GeneratorParams:
    return GeneratorParams(
        coeffs=[c.data.copy() for c in pt.coeffs],
        betas=[b.data.copy() for b in pt.betas],
        biases=[b.data.copy() for b in pt.biases],
        out_weight=pt.out_weight.data.copy(),
        out_bias=None if pt.out_bias is None else pt.out_bias.data.copy(),
    )


def leaf_list(pt: GeneratorParams) -> list:
    """Leaves of a tensor-valued parameter set, in flattening order."""
    return pt.arrays()


def _combine(x: Tensor, weight: Tensor) -> Tensor:
    """Per-pixel linear combination of channels: (sp..., kin) @ (kin, kout)."""
    spatial = x.shape[:-1]
    flat = ad.reshape(x, (-1, x.shape[-1]))
    mixed = ad.matmul(flat, weight)
    return ad.reshape(mixed, spatial + (weight.shape[1],))


def forward_graph(config: GeneratorConfig, pt: GeneratorParams,
                  b1: np.ndarray | None = None,
                  kernel_scales=None) -> Tensor:
    """Differentiable forward pass; ``pt`` holds Tensor-valued parameters.

    ``kernel_scales`` optionally rescales the fixed kernel per block (used
    by norm-constrained analyses); default is no rescaling.
    """
    rank = config.spatial_rank
    blocks = config.depth - 1
    if len(pt.coeffs) != blocks:
        raise ValueError(f"expected {blocks} coefficient blocks, got {len(pt.coeffs)}")
    volume = input_volume(config) if b1 is None else b1
    B = Tensor(volume)
    for b in range(blocks):
        if config.arch in ("ii", "iv"):
            Z = B
            if config.arch == "ii":
                Z = ad.upsample2x(Z, rank)
            Z = ad.conv_pairs(Z, pt.coeffs[b], mode="same")
        else:
            Z = _combine(B, pt.coeffs[b])
            if config.arch == "construction":
                Z = ad.upsample2x_trunc(Z)
                Z = ad.conv_fixed(Z, CONSTRUCTION_KERNEL_1D, rank=1)
                Z = ad.add(Z, pt.biases[b])
            else:
                s = 1.0 if kernel_scales is None else kernel_scales[b]
                if config.arch in UPSAMPLING_ARCHS:
                    Z = ad.upsample_conv_fixed(Z, FIXED_KERNEL_1D, rank, scale_factor=s)
                else:
                    Z = ad.conv_fixed(Z, FIXED_KERNEL_1D, rank, scale_factor=s)
        Z = ad.relu(Z)
        if config.use_channel_norm:
            Z = ad.channel_norm(Z, pt.betas[b], CHANNEL_NORM_EPS)
        B = Z
    out = _combine(B, pt.out_weight)
    if pt.out_bias is not None:
        out = ad.add(out, pt.out_bias)
    if config.use_sigmoid:
        out = ad.sigmoid(out)
    if config.out_channels == 1:
        out = ad.reshape(out, out.shape[:-1])
    return out


def forward(config: GeneratorConfig, params: GeneratorParams) -> np.ndarray:
    """Evaluate the generator; returns the image as a plain array.

    Shape is (n_d,) / (n_d, n_d) for one output channel, with a trailing
    channel axis otherwise. With sigmoid on, every entry lies in (0, 1).
    """
    _check_shapes(config, params)
    out = forward_graph(config, params_to_tensors(params, requires_grad=False)).data
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("generator produced non-finite activations")
    return out


def _check_shapes(config: GeneratorConfig, params: GeneratorParams):
    cs, bs, as_, ow, ob = param_shapes(config)
    got = [c.shape for c in params.coeffs]
    if got != cs:
        raise ValueError(f"coefficient shapes {got} do not match config {cs}")
    if [b.shape for b in params.betas] != bs:
        raise ValueError("beta shapes do not match config")
    if [b.shape for b in params.biases] != as_:
        raise ValueError("bias shapes do not match config")
    if params.out_weight.shape != ow:
        raise ValueError(f"output weight shape {params.out_weight.shape} != {ow}")
    if ob != (params.out_bias is not None):
        raise ValueError("output bias presence does not match config")


# --- serialization -----------------------------------------------------------

_CONFIG_FIELDS = (
    ("arch", str), ("depth", int), ("channels", int), ("out_channels", int),
    ("input_extent", int), ("spatial_rank", int), ("kernel_extent", int),
    ("use_sigmoid", bool), ("use_channel_norm", bool), ("input_seed", int),
)


def config_to_text(config: GeneratorConfig) -> str:
    lines = []
    for name, _ in _CONFIG_FIELDS:
        lines.append(f"{name} = {getattr(config, name)}")
    return "\n".join(lines) + "\n"


def _parse_bool(s: str) -> bool:
    if s in ("True", "true", "1"):
        return True
    if s in ("False", "false", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def config_from_text(text: str) -> GeneratorConfig:
    known = dict(_CONFIG_FIELDS)
    values = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in known:
            raise ValueError(f"unknown config key: {key!r}")
        typ = known[key]
        values[key] = _parse_bool(val) if typ is bool else typ(val)
    return GeneratorConfig(**values)


def params_to_bytes(config: GeneratorConfig, params: GeneratorParams) -> bytes:
    """Config block (key = value text) followed by the flat little-endian
    float64 parameter vector."""
    vec = params.flatten()
    header = config_to_text(config) + f"params {vec.size}\n"
    return header.encode("ascii") + vec.astype("<f8").tobytes()


def params_from_bytes(blob: bytes) -> tuple[GeneratorConfig, GeneratorParams]:
    marker = b"\nparams "
    cut = blob.find(marker)
    if cut < 0:
        raise ValueError("missing params header")
    head = blob[:cut].decode("ascii")
    rest = blob[cut + 1:]
    line_end = rest.find(b"\n")
    count = int(rest[len(b"params "):line_end])
    payload = rest[line_end + 1:]
    if len(payload) != 8 * count:
        raise ValueError(f"expected {8 * count} payload bytes, got {len(payload)}")
    config = config_from_text(head)
    vec = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return config, unflatten(config, vec)
