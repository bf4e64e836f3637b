"""Command-line interface: compress, cs, mri, construct, theory.

Every run resolves to a flat key = value config (sections for generator,
operator, optimizer, io); the resolved config is echoed to the output
directory as ``manifest.cfg`` so any run can be reproduced with
``undec --config manifest.cfg``. Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import baselines as bl
from . import construction as con
from . import generator as gen
from . import io as uio
from . import operators as ops
from . import recovery as rec
from . import theory


class CliError(Exception):
    pass


@dataclass
class GeneratorOptions:
    arch: str = "i"
    depth: int = 4
    channels: int = 64
    out_channels: int = 1
    input_extent: int = 16
    spatial_rank: int = 2
    kernel_extent: int = 4
    sigmoid: bool = True
    channel_norm: bool = True
    input_seed: int = 0


@dataclass
class OperatorOptions:
    kind: str = "gaussian"  # gaussian | rademacher | fourier | identity
    measurements: int = 0
    acceleration: int = 8
    center_fraction: float = 0.04


@dataclass
class OptimizerOptions:
    method: str = "adam"
    step: float = 0.01
    iterations: int = 5000
    restarts: int = 1
    init_scale: float = 0.1
    final_step_factor: float = 1.0
    decay_start: float = 0.5


@dataclass
class IoOptions:
    image: str = ""
    kspace: str = ""
    mask: str = ""
    phantom: str = ""  # shepp | smooth
    height: int = 128
    width: int = 128
    baseline: str = "none"  # none | l1 | tv | both
    spec_file: str = ""
    check: str = "hankel"
    grid_n: str = "200,800"
    grid_m: str = "100,400,1600"
    trials: int = 100


@dataclass
class RunConfig:
    command: str = "compress"
    seed: int = 0
    jobs: int = 1
    out_dir: str = "out"
    generator: GeneratorOptions = field(default_factory=GeneratorOptions)
    operator: OperatorOptions = field(default_factory=OperatorOptions)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    io: IoOptions = field(default_factory=IoOptions)


_SECTIONS = ("generator", "operator", "optimizer", "io")


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        if f.name in _SECTIONS:
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for sec in _SECTIONS:
        block = getattr(cfg, sec)
        lines.append("")
        lines.append(f"[{sec}]")
        for f in fields(block):
            lines.append(f"{f.name} = {getattr(block, f.name)}")
    return "\n".join(lines) + "\n"


def _convert(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw in ("True", "true", "1"):
                return True
            if raw in ("False", "false", "0"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise CliError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}")


def config_from_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string("[_top]\n" + text)
    cfg = RunConfig()
    top_types = {"command": str, "seed": int, "jobs": int, "out_dir": str}
    for key, raw in parser["_top"].items():
        if key not in top_types:
            raise CliError(f"unknown config key: {key!r}")
        setattr(cfg, key, _convert(raw, top_types[key], key))
    for sec in parser.sections():
        if sec == "_top":
            continue
        if sec not in _SECTIONS:
            raise CliError(f"unknown config section: {sec!r}")
        block = getattr(cfg, sec)
        types = {f.name: type(getattr(block, f.name)) for f in fields(block)}
        for key, raw in parser[sec].items():
            if key not in types:
                raise CliError(f"unknown config key: {sec}.{key!r}")
            setattr(block, key, _convert(raw, types[key], f"{sec}.{key}"))
    return cfg


def generator_config(cfg: RunConfig) -> gen.GeneratorConfig:
    g = cfg.generator
    return gen.GeneratorConfig(
        arch=g.arch, depth=g.depth, channels=g.channels, out_channels=g.out_channels,
        input_extent=g.input_extent, spatial_rank=g.spatial_rank,
        kernel_extent=g.kernel_extent, use_sigmoid=g.sigmoid,
        use_channel_norm=g.channel_norm, input_seed=g.input_seed)


def optimizer_settings(cfg: RunConfig) -> rec.OptimizerSettings:
    o = cfg.optimizer
    return rec.OptimizerSettings(
        method=o.method, step_size=o.step, iterations=o.iterations,
        restarts=o.restarts, init_seed=cfg.seed, init_scale=o.init_scale,
        final_step_factor=o.final_step_factor, decay_start=o.decay_start)


def _load_input_image(cfg: RunConfig) -> np.ndarray:
    io_opts = cfg.io
    if io_opts.image:
        if not os.path.exists(io_opts.image):
            raise CliError(f"input image not found: {io_opts.image}")
        return uio.load_image(io_opts.image)
    if io_opts.phantom == "shepp":
        return uio.phantom(io_opts.height, io_opts.width)
    if io_opts.phantom == "smooth":
        return uio.smooth_image(io_opts.height, io_opts.width)
    raise CliError("no input: pass --image FILE or --phantom {shepp,smooth}")


def _fit_and_report(cfg, config, operator, y, reference, out_dir):
    settings = optimizer_settings(cfg)
    problem = rec.RecoveryProblem(operator, y, config, reference=reference)
    result = rec.fit(problem, settings)
    trace_rows = [(i, result.loss_trace[i]) for i in range(len(result.loss_trace))]
    header = ["iteration", "loss"]
    if result.mse_trace is not None:
        header += ["mse", "psnr"]
        trace_rows = [(i, result.loss_trace[i], result.mse_trace[i], result.psnr_trace[i])
                      for i in range(len(result.loss_trace))]
    uio.write_csv(os.path.join(out_dir, "trace.csv"), header, trace_rows)
    return result


def _result_rows(tag, result_or_psnr, loss=None):
    if isinstance(result_or_psnr, rec.RecoveryResult):
        r = result_or_psnr
        return [(tag, r.final_loss, r.metrics.get("mse", float("nan")),
                 r.metrics.get("psnr", float("nan")))]
    return [(tag, loss if loss is not None else float("nan"),
             float("nan"), result_or_psnr)]


_RESULT_HEADER = ["method", "loss", "mse", "psnr"]


def _save_estimate(out_dir, name, img):
    uio.save_image(os.path.join(out_dir, name), np.clip(img, 0.0, 1.0))


def _is_pow2(n):
    return n >= 2 and (n & (n - 1)) == 0


def run_compress(cfg: RunConfig, out_dir: str) -> int:
    image = _load_input_image(cfg)
    config = _auto_extent(cfg, image)
    if image.shape != gen.output_shape(config):
        raise CliError(
            f"generator output {gen.output_shape(config)} does not match image {image.shape}")
    operator = ops.make_identity(image.size)
    result = _fit_and_report(cfg, config, operator, image.reshape(-1), image, out_dir)
    _save_estimate(out_dir, "recovered.pgm", result.estimate)
    rows = _result_rows("generator", result)
    n_params = gen.param_count(config)
    if image.ndim == 2 and all(_is_pow2(s) for s in image.shape):
        n_keep = min(n_params, image.size)
        wav = bl.threshold_compress(image, bl.WaveletBasis("haar"), n_keep)
        rows += _result_rows(f"wavelet_n{n_keep}", rec.psnr(wav, image))
        _save_estimate(out_dir, "wavelet.pgm", wav)
    uio.write_csv(os.path.join(out_dir, "result.csv"), _RESULT_HEADER, rows)
    print(f"compress: params={n_params} final_psnr={result.metrics['psnr']:.2f} dB")
    return 0


def _auto_extent(cfg: RunConfig, image: np.ndarray) -> gen.GeneratorConfig:
    """Adjust input_extent so the generator output matches the image."""
    g = cfg.generator
    rank = image.ndim if image.ndim <= 2 else 2
    target = image.shape[0]
    factor = 2 ** (g.depth - 1) if g.arch in gen.UPSAMPLING_ARCHS else 1
    if target % factor:
        raise CliError(f"image extent {target} not divisible by upsampling factor {factor}")
    cfg.generator.input_extent = target // factor
    cfg.generator.spatial_rank = rank
    return generator_config(cfg)


def run_cs(cfg: RunConfig, out_dir: str) -> int:
    image = _load_input_image(cfg)
    config = _auto_extent(cfg, image)
    n = image.size
    m = cfg.operator.measurements
    if m < 1:
        raise CliError("--measurements must be >= 1 for the cs command")
    if cfg.operator.kind == "gaussian":
        operator = ops.make_gaussian(m, n, cfg.seed)
    elif cfg.operator.kind == "rademacher":
        operator = ops.make_rademacher(m, n, cfg.seed)
    else:
        raise CliError(f"cs supports gaussian or rademacher operators, not {cfg.operator.kind!r}")
    y = operator.apply(image.reshape(-1))
    result = _fit_and_report(cfg, config, operator, y, image, out_dir)
    _save_estimate(out_dir, "recovered.pgm", result.estimate)
    rows = _result_rows("generator", result)
    rows += _baseline_rows(cfg, operator, y, image, out_dir)
    uio.write_csv(os.path.join(out_dir, "result.csv"), _RESULT_HEADER, rows)
    print(f"cs: m={m} n={n} final_psnr={result.metrics['psnr']:.2f} dB")
    return 0


def _baseline_rows(cfg, operator, y, reference, out_dir):
    rows = []
    which = cfg.io.baseline
    lam_grid = (1e-4, 1e-3, 1e-2, 1e-1)
    shape = reference.shape
    if which in ("l1", "both"):
        best = None
        for lam in lam_grid:
            x = bl.ista_l1(y, operator, bl.WaveletBasis("haar"), lam, 200, shape=shape)
            p = rec.psnr(x, reference)
            if best is None or p > best[0]:
                best = (p, lam, x)
        rows += _result_rows(f"l1_wavelet_lam{best[1]:g}", best[0])
        _save_estimate(out_dir, "l1.pgm", best[2])
    if which in ("tv", "both"):
        best = None
        for lam in lam_grid:
            x = bl.tv_recover(y, operator, lam, 150, shape=shape)
            p = rec.psnr(x, reference)
            if best is None or p > best[0]:
                best = (p, lam, x)
        rows += _result_rows(f"tv_lam{best[1]:g}", best[0])
        _save_estimate(out_dir, "tv.pgm", best[2])
    return rows


def run_mri(cfg: RunConfig, out_dir: str) -> int:
    io_opts = cfg.io
    if io_opts.kspace:
        if not os.path.exists(io_opts.kspace):
            raise CliError(f"k-space file not found: {io_opts.kspace}")
        kspace = uio.load_kspace(io_opts.kspace)
    else:
        if io_opts.phantom not in ("shepp", "smooth"):
            raise CliError("no input: pass --kspace FILE or --phantom {shepp,smooth}")
        img = (uio.phantom if io_opts.phantom == "shepp" else uio.smooth_image)(
            io_opts.height, io_opts.width)
        kspace = uio.kspace_of(img)
    h, w = kspace.shape
    reference = uio.image_of_kspace(kspace)
    if io_opts.mask:
        if not os.path.exists(io_opts.mask):
            raise CliError(f"mask file not found: {io_opts.mask}")
        mask = uio.load_mask(io_opts.mask)
    else:
        mask = ops.make_mask(w, cfg.operator.acceleration,
                             cfg.operator.center_fraction, cfg.seed)
    operator = ops.make_masked_fourier(h, w, mask)
    cols = np.flatnonzero(np.fft.ifftshift(mask.keep))
    sub = kspace[:, cols]
    y = np.empty(2 * sub.size)
    y[0::2] = sub.real.reshape(-1)
    y[1::2] = sub.imag.reshape(-1)

    cfg.generator.spatial_rank = 2
    config = _auto_extent_hw(cfg, h, w)
    result = _fit_and_report(cfg, config, operator, y, reference, out_dir)
    zf = operator.adjoint(y).reshape(h, w)
    rows = _result_rows("generator", result)
    rows += _result_rows("zero_fill", rec.psnr(np.abs(zf), reference))
    rows += _baseline_rows(cfg, operator, y, reference, out_dir)
    uio.write_csv(os.path.join(out_dir, "result.csv"), _RESULT_HEADER, rows)
    uio.save_mask(os.path.join(out_dir, "mask.txt"), mask)
    _save_estimate(out_dir, "recovered.pgm", result.estimate)
    _save_estimate(out_dir, "zero_fill.pgm", np.abs(zf))
    _save_estimate(out_dir, "reference.pgm", reference)
    print(f"mri: {h}x{w} kept_cols={mask.kept_count} "
          f"decoder_psnr={result.metrics['psnr']:.2f} dB")
    return 0


def _auto_extent_hw(cfg: RunConfig, h: int, w: int) -> gen.GeneratorConfig:
    if h != w:
        raise CliError(f"mri reconstruction requires square images, got {h}x{w}")
    g = cfg.generator
    factor = 2 ** (g.depth - 1) if g.arch in gen.UPSAMPLING_ARCHS else 1
    if h % factor:
        raise CliError(f"extent {h} not divisible by upsampling factor {factor}")
    cfg.generator.input_extent = h // factor
    return generator_config(cfg)


def run_construct(cfg: RunConfig, out_dir: str) -> int:
    if not cfg.io.spec_file:
        raise CliError("construct requires --spec FILE")
    if not os.path.exists(cfg.io.spec_file):
        raise CliError(f"spec file not found: {cfg.io.spec_file}")
    depth = cfg.generator.depth
    n = con.grid_length(depth)
    with open(cfg.io.spec_file) as fh:
        spec = con.spec_from_text(fh.read(), n)
    built = con.build_piecewise(spec, depth)
    out = gen.forward(built.config, built.params)
    target = spec.evaluate()
    err = float(np.abs(out - target).max())
    uio.write_csv(os.path.join(out_dir, "construct.csv"),
                  ["index", "target", "output"],
                  [(i, target[i], out[i]) for i in range(n)])
    with open(os.path.join(out_dir, "params.bin"), "wb") as fh:
        fh.write(gen.params_to_bytes(built.config, built.params))
    print(f"construct: depth={depth} n={n} pieces={spec.piece_count} "
          f"nonzeros={built.nonzero_count} max_abs_error={err:.3e}")
    return 0


def run_theory(cfg: RunConfig, out_dir: str) -> int:
    check = cfg.io.check
    if check == "hankel":
        dev = theory.hankel_identity_check(32, 5, cfg.io.trials, cfg.seed)
        print(f"theory hankel: max deviation {dev:.3e} over {cfg.io.trials} trials")
        return 0 if dev < 1e-12 else 1
    if check == "lipschitz":
        config = gen.GeneratorConfig("plain", cfg.generator.depth,
                                     min(cfg.generator.channels, 8),
                                     input_extent=8, spatial_rank=1,
                                     use_sigmoid=False, use_channel_norm=False)
        xi = gen.input_norm(config)
        worst = 0.0
        for mu in (0.5, 1.0, 2.0):
            ball = theory.BallSpec(mu, xi, config.depth)
            res = theory.empirical_lipschitz_check(config, ball, cfg.io.trials, cfg.seed)
            worst = max(worst, res.max_ratio / res.bound)
        print(f"theory lipschitz: max ratio/bound {worst:.3f} (depth {config.depth})")
        return 0
    if check == "rank":
        res = theory.signpattern_rank_check(64, 2, 3, samples=max(cfg.io.trials, 400),
                                            seed=cfg.seed)
        print(f"theory rank: max rank {res.max_rank} <= bound {res.dim_bound} "
              f"({res.asserted_classes} classes asserted)")
        return 0
    if check == "sweep":
        grid = theory.SweepGrid(
            param_targets=[int(v) for v in cfg.io.grid_n.split(",")],
            measurements=[int(v) for v in cfg.io.grid_m.split(",")],
            seeds=3, jobs=cfg.jobs)
        template = gen.GeneratorConfig("i", 3, 8, input_extent=128, spatial_rank=1)
        rows = theory.measurement_sweep(grid, template)
        uio.write_csv(os.path.join(out_dir, "sweep.csv"),
                      ["N", "m", "seed", "mse", "psnr", "iterations", "wall_time"],
                      [(r["N"], r["m"], r["seed"], r["mse"], r["psnr"],
                        r["iterations"], r["wall_time"]) for r in rows])
        mono = theory.sweep_is_monotone(rows)
        print(f"theory sweep: {len(rows)} cells, monotone in m: {mono}")
        return 0
    raise CliError(f"unknown theory check: {check!r}")


_RUNNERS = {
    "compress": run_compress,
    "cs": run_cs,
    "mri": run_mri,
    "construct": run_construct,
    "theory": run_theory,
}


def run(cfg: RunConfig) -> int:
    if cfg.command not in _RUNNERS:
        raise CliError(f"unknown command: {cfg.command!r}")
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    code = _RUNNERS[cfg.command](cfg, out_dir)
    with open(os.path.join(out_dir, "manifest.cfg"), "w") as fh:
        fh.write(config_to_text(cfg))
    return code


def _add_common(p):
    p.add_argument("--config", help="config file; flags given here override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--arch", choices=["i", "ii", "iii", "iv"], default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--kernel-extent", dest="kernel_extent", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--init-scale", dest="init_scale", type=float, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="undec",
                                 description="un-trained convolutional generators "
                                             "for inverse problems")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="fit a generator directly to an image")
    _add_common(p)
    p.add_argument("--image", default=None)
    p.add_argument("--phantom", choices=["shepp", "smooth"], default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)

    p = sub.add_parser("cs", help="compressive sensing with a random matrix")
    _add_common(p)
    p.add_argument("--image", default=None)
    p.add_argument("--phantom", choices=["shepp", "smooth"], default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--operator", choices=["gaussian", "rademacher"], default=None)
    p.add_argument("--measurements", type=int, default=None)
    p.add_argument("--baseline", choices=["none", "l1", "tv", "both"], default=None)

    p = sub.add_parser("mri", help="undersampled Fourier recovery")
    _add_common(p)
    p.add_argument("--kspace", default=None)
    p.add_argument("--phantom", choices=["shepp", "smooth"], default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--acceleration", type=int, default=None)
    p.add_argument("--center-fraction", dest="center_fraction", type=float, default=None)
    p.add_argument("--baseline", choices=["none", "l1", "tv", "both"], default=None)

    p = sub.add_parser("construct", help="exact piecewise-linear parameter construction")
    _add_common(p)
    p.add_argument("--spec", dest="spec_file", default=None)

    p = sub.add_parser("theory", help="empirical checks of the analytical claims")
    _add_common(p)
    p.add_argument("--check", choices=["lipschitz", "hankel", "rank", "sweep"], default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--grid-n", dest="grid_n", default=None)
    p.add_argument("--grid-m", dest="grid_m", default=None)

    return ap


_TOP_KEYS = ("seed", "jobs", "out_dir")
_GEN_KEYS = ("arch", "depth", "channels", "kernel_extent")
_OPT_KEYS = {"iterations": "iterations", "lr": "step", "restarts": "restarts",
             "init_scale": "init_scale"}
_OPR_KEYS = ("measurements", "acceleration", "center_fraction")
_IO_KEYS = ("image", "kspace", "mask", "phantom", "height", "width", "baseline",
            "spec_file", "check", "grid_n", "grid_m", "trials")


def resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise CliError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            cfg = config_from_text(fh.read())
    else:
        cfg = RunConfig()
    cfg.command = args.command
    if args.command in ("cs", "mri") and not getattr(args, "config", None):
        cfg.optimizer.iterations = 10000
    for key in _TOP_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    for key in _GEN_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg.generator, key, v)
    for key, dst in _OPT_KEYS.items():
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg.optimizer, dst, v)
    for key in _OPR_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg.operator, key, v)
    if getattr(args, "operator", None) is not None:
        cfg.operator.kind = args.operator
    for key in _IO_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg.io, key, v)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return run(cfg)
    except (CliError, uio.FormatError, ValueError, OSError,
            rec.RecoveryError, theory.TheoryViolation) as exc:
        print(f"undec: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
