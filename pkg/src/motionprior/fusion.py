"""End-to-end latent fusion: pick a kernel and solver, return posterior means."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import gp, ssgp
from .exceptions import ConfigError, DataError
from .kernels import (
    DEFAULT_MAX_GAP, FrameTimeline, KernelKind, distance_matrix, kernel_inputs,
)

log = logging.getLogger(__name__)

SOLVERS = ("auto", "batch", "statespace")


@dataclass
class FusionConfig:
    """What to fuse and how.

    ``hyper`` is either a :class:`~motionprior.gp.GPHyper` or the string
    ``"fit"``.  ``window`` selects sliding-window mode and ``lag``
    fixed-lag mode; at most one may be set.
    """

    kind: KernelKind
    hyper: object = "fit"
    solver: str = "auto"
    window: int = None
    lag: int = None
    max_gap: float = DEFAULT_MAX_GAP
    threads: int = 1

    def __post_init__(self):
        self.kind = KernelKind(self.kind)
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.window is not None and self.lag is not None:
            raise ConfigError("window and lag modes are mutually exclusive")
        if self.window is not None and self.window < 2:
            raise ConfigError("window must be at least 2")
        if self.lag is not None and self.lag < 0:
            raise ConfigError("lag must be nonnegative")
        if self.solver == "statespace" and not self.kind.markovian:
            raise ConfigError(
                f"unsupported combination: solver 'statespace' with {self.kind.value} kernel "
                "(only time and gyro kernels have a state-space form)")
        if self.lag is not None and not self.kind.markovian:
            raise ConfigError(f"fixed-lag mode needs a time or gyro kernel, not {self.kind.value}")
        if self.lag is not None and self.solver == "batch":
            raise ConfigError("fixed-lag mode runs on the state-space solver")
        if isinstance(self.hyper, gp.GPHyper) and self.hyper.kernel.kind is not self.kind:
            raise ConfigError("hyperparameters were given for a different kernel kind")

    @property
    def mode(self):
        if self.window is not None:
            return f"sliding-window({self.window})"
        if self.lag is not None:
            return f"fixed-lag({self.lag})"
        return "full-sequence"

    def resolved_solver(self):
        if self.lag is not None:
            return "statespace"
        if self.solver == "auto":
            return "statespace" if self.kind.markovian and self.window is None else "batch"
        return self.solver


@dataclass
class FusionReport:
    frames: int
    dims: int
    kernel: str
    mode: str
    solver: str
    hyper: dict
    variance: dict
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "frames": self.frames, "dims": self.dims, "kernel": self.kernel,
            "mode": self.mode, "solver": self.solver, "hyperparameters": self.hyper,
            "posterior_variance": self.variance, "timings_s": self.timings,
        }


def check_alignment(frames, latents):
    t_f, t_l = frames.t, latents.timestamps
    if len(t_f) != len(t_l) or np.any(t_f != t_l):
        n = min(len(t_f), len(t_l))
        bad = np.flatnonzero(t_f[:n] != t_l[:n])
        parts = [f"frame {int(frames.frame_ids[i])}: frame t={t_f[i]!r} latent t={t_l[i]!r}"
                 for i in bad[:10]]
        if len(t_f) != len(t_l):
            parts.append(f"{len(t_f)} frames but {len(t_l)} latent rows")
        raise DataError("latent timestamps do not match the frame timeline: " + "; ".join(parts))


def _require_streams(kind, gyro, poses):
    if kind in (KernelKind.GYRO, KernelKind.PRODUCT) and gyro is None:
        raise ConfigError(f"{kind.value} kernel requires a gyro log")
    if kind is KernelKind.POSE and poses is None:
        raise ConfigError("pose kernel requires a pose log")


def _distances(kind, frames, gyro, poses, max_gap):
    if kind is KernelKind.PRODUCT:
        return (distance_matrix(KernelKind.GYRO, frames, gyro, poses, max_gap),
                distance_matrix(KernelKind.TIME, frames))
    return distance_matrix(kind, frames, gyro, poses, max_gap), None


def _variance_summary(var):
    return {"min": float(np.min(var)), "max": float(np.max(var)),
            "mean": float(np.mean(var)), "per_frame": [float(v) for v in var]}


def _sliding_window(C, sigma2, Y, w):
    """Batch posterior per window; each frame taken from the window centred on it."""
    n = len(Y)
    Z = np.empty_like(Y)
    var = np.empty(n)
    w = min(w, n)
    half = (w - 1) // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - w)
        sl = slice(lo, lo + w)
        res = gp.posterior(C[sl, sl], sigma2, Y[sl])
        Z[i] = res.Z[i - lo]
        var[i] = res.var[i - lo]
    return Z, var


def fuse_sequence(config, frames, latents, gyro=None, poses=None):
    """Fuse a whole latent sequence; returns ``(LatentSequence, FusionReport)``."""
    timings = {}
    t0 = time.perf_counter()
    kind = config.kind
    _require_streams(kind, gyro, poses)
    check_alignment(frames, latents)
    Y = np.asarray(latents.Y, dtype=np.float64)
    solver = config.resolved_solver()

    hyper = config.hyper
    D = D_time = None
    if isinstance(hyper, str):
        if hyper != "fit":
            raise ConfigError(f"hyperparameters must be explicit or 'fit', got {hyper!r}")
        D, D_time = _distances(kind, frames, gyro, poses, config.max_gap)
        timings["distances"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        hyper = gp.fit_from_distances(kind, Y, D, D_time, max_workers=config.threads)
        timings["fit"] = time.perf_counter() - t1
        log.info("fitted %s", hyper.to_dict())

    t1 = time.perf_counter()
    if solver == "statespace":
        s = kernel_inputs(kind, frames, gyro, poses, config.max_gap)
        timings["inputs"] = time.perf_counter() - t1
        t1 = time.perf_counter()
        model = ssgp.matern32_ss(hyper.kernel.params)
        if config.lag is not None:
            Z, var = _run_fixed_lag(model, s, Y, hyper.sigma2, config.lag)
        else:
            res = ssgp.kalman_rts(model, s, Y, hyper.sigma2)
            Z, var = res.Z, res.var
    else:
        if D is None:
            D, D_time = _distances(kind, frames, gyro, poses, config.max_gap)
        C = gp.hyper_covariance(hyper, D, D_time)
        timings["covariance"] = time.perf_counter() - t1
        t1 = time.perf_counter()
        if config.window is not None:
            Z, var = _sliding_window(C, hyper.sigma2, Y, config.window)
        else:
            res = gp.posterior(C, hyper.sigma2, Y)
            Z, var = res.Z, res.var
    timings["solve"] = time.perf_counter() - t1
    timings["total"] = time.perf_counter() - t0

    out = gp.LatentSequence(latents.timestamps, Z)
    report = FusionReport(len(Y), Y.shape[1], kind.value, config.mode, solver,
                          hyper.to_dict(), _variance_summary(var), timings)
    return out, report


def _run_fixed_lag(model, s, Y, sigma2, lag):
    sm = ssgp.FixedLagSmoother(model, sigma2, Y.shape[1], lag)
    Z = np.empty_like(Y)
    var = np.empty(len(Y))
    for k in range(len(Y)):
        for i, z, v in sm.push(s[k], Y[k]):
            Z[i], var[i] = z, v
    for i, z, v in sm.finish():
        Z[i], var[i] = z, v
    return Z, var


def fuse_streaming(config, frame_stream, gyro=None):
    """Fixed-lag fusion over an iterable of ``(t, y)`` pairs.

    Yields ``(t, z, var)`` for frame ``i`` once frame ``i + lag`` has been
    consumed (the tail is flushed when the stream ends).  Explicit
    hyperparameters are required.  For the gyro kernel the log must cover
    every frame time; arclength is accumulated incrementally.
    """
    kind = config.kind
    if not kind.markovian:
        raise ConfigError(f"streaming fusion needs a time or gyro kernel, not {kind.value}")
    if config.lag is None:
        raise ConfigError("streaming fusion needs a lag")
    if not isinstance(config.hyper, gp.GPHyper):
        raise ConfigError("streaming fusion needs explicit hyperparameters")
    _require_streams(kind, gyro, None)
    hyper = config.hyper
    model = ssgp.matern32_ss(hyper.kernel.params)
    sm = None
    stamps = []
    s_prev = t_prev = None
    for t, y in frame_stream:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if sm is None:
            sm = ssgp.FixedLagSmoother(model, hyper.sigma2, len(y), config.lag)
        if t_prev is not None and not t > t_prev:
            raise DataError(f"frame time {t!r} does not increase (previous {t_prev!r})")
        if kind is KernelKind.TIME:
            s = float(t)
        elif s_prev is None:
            s = 0.0
        else:
            ft = FrameTimeline.from_times([t_prev, t])
            s = s_prev + float(kernel_inputs(kind, ft, gyro, None, config.max_gap)[1])
        s_prev, t_prev = s, t
        stamps.append(t)
        for i, z, v in sm.push(s, y):
            yield stamps[i], z, v
    if sm is not None:
        for i, z, v in sm.finish():
            yield stamps[i], z, v
