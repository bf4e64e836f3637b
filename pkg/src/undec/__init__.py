"""Un-trained convolutional generators for compression and recovery."""

from .autodiff import Tensor, gradients
from .generator import (
    GeneratorConfig,
    GeneratorParams,
    forward,
    init_params,
    input_volume,
    param_count,
)
from .construction import PiecewiseLinearSpec, SparseParams, build_piecewise, build_rectangular
from .operators import (
    KSpaceMask,
    LinearOperator,
    make_gaussian,
    make_identity,
    make_mask,
    make_masked_fourier,
    make_rademacher,
)
from .recovery import OptimizerSettings, RecoveryProblem, RecoveryResult, fit, loss, psnr
from .baselines import WaveletBasis, ista_l1, threshold_compress, tv_recover, wavelet_forward, wavelet_inverse
from .theory import BallSpec, SweepGrid, empirical_lipschitz_check, lipschitz_bound, measurement_sweep

__version__ = "0.1.0"
