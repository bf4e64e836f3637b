"""Empirical checks of the analytical claims at desk scale.

Covers four probes: the Lipschitz bound of the normalization-free
generator on norm-bounded coefficients, the circulant/Hankel product
identity, the dimension of one-layer outputs within a fixed ReLU sign
pattern, and the measurement-count phase behavior of in-range recovery.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import time

import numpy as np

from . import generator as gen
from . import recovery as rec
from .generator import GeneratorConfig
from .operators import make_gaussian, make_identity


class TheoryViolation(AssertionError):
    """An empirical probe contradicted the bound it was checking."""


# --- Lipschitz bound ---------------------------------------------------------

@dataclass(frozen=True)
class BallSpec:
    """Coefficient ball and network size entering the Lipschitz bound."""

    mu: float
    xi: float
    d: int

    def __post_init__(self):
        if self.mu <= 0 or self.xi <= 0:
            raise ValueError("mu and xi must be positive")
        if self.d < 1:
            raise ValueError("d must be >= 1")


def lipschitz_bound(ball: BallSpec) -> float:
    """The bound xi * mu^d * d on the generator's Lipschitz constant."""
    return ball.xi * ball.mu ** ball.d * ball.d


def _upsample_fixed_conv_np(v: np.ndarray, kern: np.ndarray, scale: float) -> np.ndarray:
    from .autodiff import _corr_same_axis, _pad_before
    up = np.zeros(2 * v.shape[0])
    up[::2] = v
    return scale * _corr_same_axis(up, kern, 0, _pad_before(len(kern)))


def _block_operator_norm(n_in: int, kern: np.ndarray, iters: int = 500, tol: float = 1e-10) -> float:
    """Operator norm of (fixed conv) o (zero-insertion upsampling) by power
    iteration on the normal map."""
    from .autodiff import Tensor, conv_fixed, upsample2x, gradients, sum_squares, scale as ad_scale

    rng = np.random.default_rng(12345)
    v = rng.normal(size=n_in)
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(iters):
        # w = M^T M v via autodiff of 0.5 ||M v||^2
        leaf = Tensor(v, requires_grad=True)
        out = conv_fixed(upsample2x(leaf, 1), kern, 1)
        loss = ad_scale(sum_squares(out), 0.5)
        (g,) = gradients(loss, [leaf])
        norm = np.linalg.norm(g)
        if norm == 0.0:
            return 0.0
        v = g / norm
        if abs(norm - last) <= tol * max(norm, 1.0):
            last = norm
            break
        last = norm
    return float(np.sqrt(last))


@dataclass
class LipschitzCheckResult:
    max_ratio: float
    bound: float
    pairs_used: int

    @property
    def slack(self) -> float:
        return self.bound - self.max_ratio


def _sample_in_ball(rng, shape, radius):
    x = rng.normal(size=shape)
    r = radius * rng.uniform() ** (1.0 / max(x.size, 1))
    return x * (r / np.linalg.norm(x))


def empirical_lipschitz_check(config: GeneratorConfig, ball: BallSpec,
                              trials: int, seed: int) -> LipschitzCheckResult:
    """Sample coefficient pairs with per-layer Frobenius norm <= mu and
    verify ||G(C) - G(C')|| <= bound * ||C - C'|| on every pair.

    The check runs on the normalization-free (plain) network with each
    block's upsample-and-convolve operator rescaled to unit operator norm;
    ``ball.xi`` should equal the input volume's spectral norm. Raises
    TheoryViolation if any sampled pair exceeds the bound.
    """
    if config.arch != "plain":
        raise ValueError("the Lipschitz check targets the plain arch")
    if config.spatial_rank != 1:
        raise ValueError("the Lipschitz check is one-dimensional")
    blocks = config.depth - 1
    scales = []
    n_i = config.input_extent
    for _ in range(blocks):
        nu = _block_operator_norm(n_i, gen.FIXED_KERNEL_1D)
        scales.append(1.0 / nu)
        n_i *= 2
    bound = lipschitz_bound(ball)
    rng = np.random.default_rng(seed)
    shapes = gen.param_shapes(config)
    coeff_shapes, _, _, out_shape, _ = shapes

    def sample():
        params = gen.GeneratorParams(
            coeffs=[_sample_in_ball(rng, s, ball.mu) for s in coeff_shapes],
            out_weight=_sample_in_ball(rng, out_shape, ball.mu),
        )
        return params

    max_ratio = 0.0
    used = 0
    for _ in range(trials):
        pa, pb = sample(), sample()
        ga = gen.forward_graph(config, gen.params_to_tensors(pa, False), kernel_scales=scales).data
        gb = gen.forward_graph(config, gen.params_to_tensors(pb, False), kernel_scales=scales).data
        dc = np.linalg.norm(pa.flatten() - pb.flatten())
        if dc == 0.0:
            continue
        ratio = float(np.linalg.norm(ga - gb) / dc)
        used += 1
        if ratio > max_ratio:
            max_ratio = ratio
    result = LipschitzCheckResult(max_ratio=max_ratio, bound=bound, pairs_used=used)
    if max_ratio > bound:
        raise TheoryViolation(
            f"Lipschitz ratio {max_ratio:.6g} exceeds bound {bound:.6g}")
    return result


# --- circulant / Hankel identity ---------------------------------------------

def circulant_matrix(c: np.ndarray, n: int) -> np.ndarray:
    """n x n matrix T with T[i, (i+j) mod n] = c[j]."""
    c = np.asarray(c, dtype=np.float64)
    T = np.zeros((n, n))
    for j, cj in enumerate(c):
        T[np.arange(n), (np.arange(n) + j) % n] += cj
    return T


def hankel_matrix(v: np.ndarray, ell: int) -> np.ndarray:
    """First ell columns of the circulant-wrapped Hankel matrix of v:
    H[i, j] = v[(i+j) mod n]."""
    v = np.asarray(v, dtype=np.float64)
    n = len(v)
    i, j = np.meshgrid(np.arange(n), np.arange(ell), indexing="ij")
    return v[(i + j) % n]


def hankel_identity_check(n: int, ell: int, trials: int, seed: int) -> float:
    """Max |T(c) v - H(v) c| over random draws, with v a zero-upsampled
    signal; also exercises the circular conv op against the matrix path."""
    from .autodiff import Tensor, conv

    if ell > n:
        raise ValueError("ell must not exceed n")
    if n % 2 != 0:
        raise ValueError("n must be even (v is an upsampled length-n/2 signal)")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        b = rng.normal(size=n // 2)
        v = np.zeros(n)
        v[::2] = b
        c = rng.normal(size=ell)
        lhs = circulant_matrix(c, n) @ v
        rhs = hankel_matrix(v, ell) @ c
        ours = conv(Tensor(v), c, mode="circular").data
        worst = max(worst, float(np.abs(lhs - rhs).max()), float(np.abs(ours - lhs).max()))
    return worst


# --- sign-pattern subspace dimension ------------------------------------------

@dataclass
class SignPatternResult:
    dim_bound: int
    class_sizes: dict
    class_ranks: dict
    max_rank: int
    asserted_classes: int


def _one_layer_outputs(hmat, c_filters, c_out):
    """Output and sign pattern of the one-layer circular decoder.

    hmat: (n, k*ell) stacked Hankel blocks of the upsampled input channels;
    c_filters: (k, k*ell) filter stack per output channel; c_out: (k,)."""
    pre = hmat @ c_filters.T  # (n, k)
    pattern = pre > 0
    return np.where(pattern, pre, 0.0) @ c_out, pattern


def signpattern_rank_check(n: int, k: int, ell: int, samples: int, seed: int,
                           members_per_base: int = 40,
                           rank_threshold: float = 1e-8) -> SignPatternResult:
    """Group one-layer decoder outputs by ReLU sign pattern and verify that
    every populated pattern class spans at most ell * k^2 dimensions.

    Outputs are sampled in clusters: a base filter draw plus small filter
    perturbations (which usually preserve the pattern) with fresh output
    weights, so classes accumulate enough members for the rank statement
    to have force. Classes with at least ell*k^2 + 2 members are asserted;
    numerical rank counts singular values above ``rank_threshold`` times
    the largest. Raises TheoryViolation on any violation.
    """
    dim = ell * k * k
    if n <= 2 * dim:
        raise ValueError("need n > 2 * ell * k^2 for an informative bound")
    rng = np.random.default_rng(seed)
    b = rng.uniform(0.1, 1.0, size=(n // 2, k))
    v = np.zeros((n, k))
    v[::2] = b
    hmat = np.hstack([hankel_matrix(v[:, j], ell) for j in range(k)])  # (n, k*ell)

    groups: dict[bytes, list[np.ndarray]] = {}
    n_bases = max(1, samples // members_per_base)
    for base in range(n_bases):
        if base == 0:
            # all-positive pattern: positive filters on a nonnegative input
            c0 = rng.uniform(0.5, 1.5, size=(k, k * ell))
        else:
            c0 = rng.normal(size=(k, k * ell))
        for _ in range(members_per_base):
            c = c0 + 0.01 * rng.normal(size=c0.shape)
            w = rng.normal(size=k)
            out, pattern = _one_layer_outputs(hmat, c, w)
            groups.setdefault(pattern.tobytes(), []).append(out)

    sizes, ranks = {}, {}
    max_rank = 0
    asserted = 0
    for key, outs in groups.items():
        sizes[key] = len(outs)
        if len(outs) < 2:
            continue
        M = np.stack(outs)
        sv = np.linalg.svd(M, compute_uv=False)
        r = int(np.sum(sv > rank_threshold * sv[0])) if sv[0] > 0 else 0
        ranks[key] = r
        max_rank = max(max_rank, r)
        if len(outs) >= dim + 2:
            asserted += 1
            if r > dim:
                raise TheoryViolation(
                    f"sign-pattern class of size {len(outs)} has rank {r} > {dim}")
    return SignPatternResult(dim_bound=dim, class_sizes=sizes, class_ranks=ranks,
                             max_rank=max_rank, asserted_classes=asserted)


# --- measurement sweep ---------------------------------------------------------

@dataclass
class SweepGrid:
    """Grid of generator sizes and measurement counts for recovery sweeps."""

    param_targets: list
    measurements: list
    seeds: int = 3
    target_kind: str = "in_range_noise_fit"
    target_iterations: int = 600
    fit_iterations: int = 2000
    jobs: int = 1

    def __post_init__(self):
        if not self.param_targets or not self.measurements:
            raise ValueError("grid must contain at least one N and one m")
        if any(v < 1 for v in list(self.param_targets) + list(self.measurements)):
            raise ValueError("grid values must be positive")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.target_kind not in ("in_range_noise_fit", "natural_image"):
            raise ValueError(f"unknown target kind: {self.target_kind!r}")


def channels_for_params(target: int, depth: int, arch: str = "i",
                        kernel_extent: int = 4, spatial_rank: int = 1,
                        out_channels: int = 1) -> int:
    """Channel count whose parameter total is closest to ``target``."""
    best_k, best_gap = 1, None
    for k in range(1, 512):
        cfg = GeneratorConfig(arch, depth, k, out_channels=out_channels,
                              input_extent=2 if arch == "construction" else 4,
                              spatial_rank=spatial_rank, kernel_extent=kernel_extent,
                              use_sigmoid=arch not in ("construction", "plain"),
                              use_channel_norm=arch not in ("construction", "plain"))
        gap = abs(gen.param_count(cfg) - target)
        if best_gap is None or gap < best_gap:
            best_k, best_gap = k, gap
        elif gap > best_gap and gen.param_count(cfg) > target:
            break
    return best_k


def _smooth_signal(n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    return 0.5 + 0.25 * np.sin(2 * np.pi * t) + 0.15 * np.cos(5 * np.pi * t + 0.7)


def _sweep_cell(args):
    (config, N, m, seed, target_kind, target_iterations, fit_iterations) = args
    n = gen.output_size(config)
    start = time.perf_counter()
    if target_kind == "in_range_noise_fit":
        noise = np.random.default_rng(90000 + 1000 * N + seed).uniform(0.0, 1.0, size=n)
        tgt_problem = rec.RecoveryProblem(make_identity(n), noise, config)
        tgt = rec.fit(tgt_problem, rec.OptimizerSettings(
            iterations=target_iterations, init_seed=70000 + seed))
        xstar = tgt.estimate
    else:
        xstar = _smooth_signal(n).reshape(gen.output_shape(config))
    A = make_gaussian(m, n, seed=50000 + 101 * N + 13 * m + seed)
    y = A.apply(xstar.reshape(-1))
    problem = rec.RecoveryProblem(A, y, config, reference=xstar)
    res = rec.fit(problem, rec.OptimizerSettings(
        iterations=fit_iterations, init_seed=30000 + seed,
        final_step_factor=0.01, decay_start=0.5))
    nmse = float(np.sum((res.estimate - xstar) ** 2) / np.sum(xstar ** 2))
    wall = time.perf_counter() - start
    return {"N": N, "m": m, "seed": seed, "mse": nmse,
            "psnr": rec.psnr(res.estimate, xstar),
            "iterations": res.iterations_run, "wall_time": wall}


def measurement_sweep(grid: SweepGrid, config_template: GeneratorConfig) -> list:
    """Recovery error over (N, m, seed) cells; rows follow the CSV schema
    N, m, seed, mse, psnr, iterations, wall_time with mse normalized by
    the target's energy. Cells are independent and may run in parallel."""
    cells = []
    for N_target in grid.param_targets:
        k = channels_for_params(N_target, config_template.depth,
                                arch=config_template.arch,
                                kernel_extent=config_template.kernel_extent,
                                spatial_rank=config_template.spatial_rank,
                                out_channels=config_template.out_channels)
        config = GeneratorConfig(
            arch=config_template.arch, depth=config_template.depth, channels=k,
            out_channels=config_template.out_channels,
            input_extent=config_template.input_extent,
            spatial_rank=config_template.spatial_rank,
            kernel_extent=config_template.kernel_extent,
            use_sigmoid=config_template.use_sigmoid,
            use_channel_norm=config_template.use_channel_norm,
            input_seed=config_template.input_seed)
        N = gen.param_count(config)
        for m in grid.measurements:
            for seed in range(grid.seeds):
                cells.append((config, N, m, seed, grid.target_kind,
                              grid.target_iterations, grid.fit_iterations))
    if grid.jobs > 1:
        with ProcessPoolExecutor(max_workers=grid.jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    return rows


def sweep_is_monotone(rows: list, allowed_inversions: int = 1) -> bool:
    """True when mean mse is non-increasing in m per N, allowing a bounded
    number of inversions per curve."""
    byN: dict[int, dict[int, list]] = {}
    for r in rows:
        byN.setdefault(r["N"], {}).setdefault(r["m"], []).append(r["mse"])
    for N, per_m in byN.items():
        ms = sorted(per_m)
        means = [float(np.mean(per_m[m])) for m in ms]
        inversions = sum(1 for a, b in zip(means, means[1:]) if b > a * (1 + 1e-9))
        if inversions > allowed_inversions:
            return False
    return True
