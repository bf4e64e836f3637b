"""Fitting generator coefficients to measurements.

Solves min_C || y - A G(C) ||^2 with Adam or plain gradient descent from a
seeded random initialization, optionally restarted; the run with the lowest
final loss wins. Complex measurements contribute as 2m real residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import time

import numpy as np

from . import autodiff as ad
from . import generator as gen
from .autodiff import Tensor
from .operators import LinearOperator


class RecoveryError(RuntimeError):
    pass


@dataclass
class RecoveryProblem:
    operator: LinearOperator
    y: np.ndarray
    config: gen.GeneratorConfig
    reference: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.y)):
            raise ValueError("measurements must be finite")
        if self.operator.out_dim != self.y.size:
            raise ValueError(
                f"operator emits {self.operator.out_dim} values, y has {self.y.size}")
        if self.operator.n != gen.output_size(self.config):
            raise ValueError(
                f"operator expects {self.operator.n} signal entries, generator "
                f"produces {gen.output_size(self.config)}")
        if self.reference is not None:
            self.reference = np.asarray(self.reference, dtype=np.float64)
            if self.reference.shape != gen.output_shape(self.config):
                raise ValueError("reference shape does not match generator output")


@dataclass
class OptimizerSettings:
    method: str = "adam"
    step_size: float = 0.01
    iterations: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    restarts: int = 1
    init_seed: int = 0
    init_scale: float = 0.1
    ball_radius: float | None = None  # optional projection onto ||C||_2 <= radius
    # Optional schedule: hold step_size for decay_start * iterations steps,
    # then decay geometrically to step_size * final_step_factor. The default
    # factor of 1 keeps the step constant.
    final_step_factor: float = 1.0
    decay_start: float = 0.5

    def __post_init__(self):
        if self.method not in ("adam", "gd"):
            raise ValueError(f"unknown method: {self.method!r}")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not (0 < self.final_step_factor <= 1.0):
            raise ValueError("final_step_factor must lie in (0, 1]")
        if not (0.0 <= self.decay_start <= 1.0):
            raise ValueError("decay_start must lie in [0, 1]")

    def step_at(self, t: int) -> float:
        if self.final_step_factor == 1.0:
            return self.step_size
        t_flat = int(self.iterations * self.decay_start)
        if t < t_flat:
            return self.step_size
        span = max(self.iterations - 1 - t_flat, 1)
        return self.step_size * self.final_step_factor ** ((t - t_flat) / span)


@dataclass
class RecoveryResult:
    params: gen.GeneratorParams
    estimate: np.ndarray
    loss_trace: np.ndarray
    metrics: dict
    iterations_run: int
    wall_time: float
    restart_index: int = 0
    mse_trace: np.ndarray | None = None
    psnr_trace: np.ndarray | None = None

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1])

    def digest(self) -> str:
        """Hash of the deterministic payload (excludes wall_time)."""
        h = hashlib.sha256()
        h.update(self.params.flatten().tobytes())
        h.update(self.estimate.tobytes())
        h.update(self.loss_trace.tobytes())
        return h.hexdigest()


def mse(x: np.ndarray, reference: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if x.shape != reference.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {reference.shape}")
    return float(np.mean((x - reference) ** 2))


PSNR_CAP_DB = 300.0


def psnr(x: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped at 300 dB for exact matches."""
    err = mse(x, reference)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(peak ** 2 / err)), PSNR_CAP_DB)


def loss(problem: RecoveryProblem, params: gen.GeneratorParams) -> float:
    """Squared Euclidean norm of the measurement residual at ``params``."""
    est = gen.forward(problem.config, params)
    r = problem.operator.apply(est.reshape(-1)) - problem.y
    return float(r @ r)


def _project_ball(leaves, radius):
    total = np.sqrt(sum(float(np.sum(t.data ** 2)) for t in leaves))
    if total > radius:
        s = radius / total
        for t in leaves:
            t.data *= s


def _fit_single(problem, settings, seed) -> RecoveryResult:
    config = problem.config
    params0 = gen.init_params(config, seed=seed, scale=settings.init_scale)
    pt = gen.params_to_tensors(params0)
    leaves = gen.leaf_list(pt)
    y_t = Tensor(problem.y)
    track = problem.reference is not None
    losses = np.empty(settings.iterations + 1)
    mses = np.empty(settings.iterations + 1) if track else None

    m1 = [np.zeros_like(t.data) for t in leaves]
    m2 = [np.zeros_like(t.data) for t in leaves]
    start = time.perf_counter()

    def evaluate():
        out = gen.forward_graph(config, pt)
        z = ad.apply_operator(problem.operator, out)
        return out, ad.sum_squares(ad.sub(z, y_t))

    for t in range(settings.iterations):
        out, L = evaluate()
        lval = float(L.data)
        if not np.isfinite(lval):
            raise RecoveryError(f"non-finite loss at iteration {t}")
        losses[t] = lval
        if track:
            mses[t] = mse(out.data, problem.reference)
        grads = ad.gradients(L, leaves)
        lr = settings.step_at(t)
        if settings.method == "adam":
            b1, b2 = settings.beta1, settings.beta2
            c1 = 1.0 - b1 ** (t + 1)
            c2 = 1.0 - b2 ** (t + 1)
            for i, (leaf, g) in enumerate(zip(leaves, grads)):
                m1[i] = b1 * m1[i] + (1 - b1) * g
                m2[i] = b2 * m2[i] + (1 - b2) * g * g
                leaf.data -= lr * (m1[i] / c1) / (np.sqrt(m2[i] / c2) + settings.eps)
        else:
            for leaf, g in zip(leaves, grads):
                leaf.data -= lr * g
        if settings.ball_radius is not None:
            _project_ball(leaves, settings.ball_radius)

    out, L = evaluate()
    lval = float(L.data)
    if not np.isfinite(lval):
        raise RecoveryError(f"non-finite loss at iteration {settings.iterations}")
    losses[-1] = lval
    if track:
        mses[-1] = mse(out.data, problem.reference)
    wall = time.perf_counter() - start

    estimate = out.data.copy()
    metrics = {}
    psnrs = None
    if track:
        metrics = {"mse": float(mses[-1]), "psnr": psnr(estimate, problem.reference)}
        with np.errstate(divide="ignore"):
            psnrs = np.minimum(10.0 * np.log10(1.0 / np.maximum(mses, 1e-300)), PSNR_CAP_DB)
    return RecoveryResult(
        params=gen.tensors_to_params(pt),
        estimate=estimate,
        loss_trace=losses,
        metrics=metrics,
        iterations_run=settings.iterations,
        wall_time=wall,
        mse_trace=mses,
        psnr_trace=psnrs,
    )


def fit(problem: RecoveryProblem, settings: OptimizerSettings) -> RecoveryResult:
    """Minimize the measurement loss; with restarts, lowest final loss wins.

    Deterministic given the settings seeds: restart r initializes from
    ``init_seed + r``.
    """
    best = None
    for r in range(settings.restarts):
        res = _fit_single(problem, settings, seed=settings.init_seed + r)
        res.restart_index = r
        if best is None or res.final_loss < best.final_loss:
            best = res
    return best
