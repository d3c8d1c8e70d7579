"""Movement-induced Gaussian-process priors for temporal fusion of per-frame latents."""
from .exceptions import (
    ConfigError, CoverageError, DataError, FormatError, MotionPriorError, NumericalError,
)
from .fusion import FusionConfig, FusionReport, fuse_sequence, fuse_streaming
from .gp import GPHyper, LatentSequence, PosteriorResult, fit_hyperparams, nlml, posterior
from .kernels import (
    FrameTimeline, KernelKind, KernelSpec, Matern32Params, build_covariance,
    cumulative_arclength, distance_matrix, gyro_distance, matern32, pose_distance,
)
from .so3 import GyroLog, PoseLog
from .ssgp import FixedLagSmoother, kalman_rts, matern32_ss

__version__ = "0.1.0"
