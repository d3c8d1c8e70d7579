"""Synthetic trajectories, sensor logs and GP-sampled latents for testing."""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import io
from .exceptions import DataError
from .gp import LatentSequence
from .kernels import FrameTimeline, build_covariance
from .so3 import GyroLog, PoseLog, quat_exp, quat_mul

PROFILES = ("constant", "stopgo", "random")


@dataclass(frozen=True)
class TrajectorySpec:
    seed: int = 0
    duration: float = 10.0
    gyro_rate: float = 100.0
    frame_rate: float = 10.0
    profile: str = "stopgo"
    omega_max: float = 1.0
    segment: float = 1.0
    translation_scale: float = 1.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise DataError(f"unknown motion profile {self.profile!r}; choose from {PROFILES}")
        if not (self.duration > 0 and self.gyro_rate > 0 and self.frame_rate > 0):
            raise DataError("duration and rates must be positive")
        if self.frame_rate > self.gyro_rate:
            raise DataError("frame rate cannot exceed gyro rate")
        if self.omega_max < 0 or self.segment <= 0:
            raise DataError("omega_max must be nonnegative and segment positive")


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([0.0, 0.0, 1.0])


def _rates(spec, t_mid, rng):
    n = len(t_mid)
    if spec.profile == "constant":
        axis = _unit(rng.normal(size=3))
        return np.tile(spec.omega_max * axis, (n, 1))
    if spec.profile == "stopgo":
        seg = np.floor(t_mid / spec.segment).astype(np.int64)
        n_seg = int(seg.max()) + 1 if n else 0
        axes = np.array([_unit(a) for a in rng.normal(size=(n_seg, 3))]).reshape(-1, 3)
        moving = (seg % 2 == 0)[:, None]
        return np.where(moving, spec.omega_max * axes[seg], 0.0)
    # smooth random: a few sinusoids per axis, rescaled so the peak norm is omega_max
    freqs = rng.uniform(0.05, 0.5, size=(4, 3))
    phases = rng.uniform(0, 2 * np.pi, size=(4, 3))
    amps = rng.normal(size=(4, 3))
    w = np.sum(amps[None] * np.sin(2 * np.pi * freqs[None] * t_mid[:, None, None] + phases[None]), axis=1)
    peak = np.max(np.linalg.norm(w, axis=1)) if n else 0.0
    return w * (spec.omega_max / peak) if peak > 0 else w


def gen_trajectory(spec):
    """Gyro log, pose log (at gyro rate) and frame timeline.

    Orientation is the exact stepwise integral of the emitted rates (each
    rate held over the interval ending at its stamp); positions follow a
    cubic spline through random knots.  Frames are every ``k``-th gyro stamp.
    """
    ss = np.random.SeedSequence(spec.seed)
    rng_w, rng_p = (np.random.default_rng(s) for s in ss.spawn(2))
    K = int(round(spec.duration * spec.gyro_rate))
    t = np.arange(K + 1, dtype=np.float64) / spec.gyro_rate
    dt = 1.0 / spec.gyro_rate
    omega = _rates(spec, t - 0.5 * dt, rng_w)

    steps = quat_exp(omega[1:] * np.diff(t)[:, None])
    q = np.empty((K + 1, 4))
    q[0] = (1.0, 0.0, 0.0, 0.0)
    for k in range(1, K + 1):
        qk = quat_mul(q[k - 1], steps[k - 1])
        q[k] = qk / np.linalg.norm(qk)

    n_knots = max(int(np.ceil(spec.duration)) + 1, 2)
    knots_t = np.linspace(0.0, t[-1], n_knots)
    knots = spec.translation_scale * rng_p.normal(size=(n_knots, 3))
    p = CubicSpline(knots_t, knots, axis=0)(t)

    step = max(int(round(spec.gyro_rate / spec.frame_rate)), 1)
    ft = t[::step]
    frames = FrameTimeline(np.arange(len(ft)), ft)
    return GyroLog(t, omega), PoseLog(t, p, q), frames


def sample_gp(C, dims, seed):
    """``dims`` independent zero-mean draws with covariance ``C`` as columns (N x dims)."""
    C = np.asarray(C, dtype=np.float64)
    # symmetric square root: exact for rank-deficient priors (e.g. a stationary camera)
    w, V = np.linalg.eigh(C)
    S = V * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.default_rng(seed)
    return S @ rng.standard_normal((len(C), int(dims)))


def make_dataset(spec, kernel, noise_sigma, out_dir, dims=8):
    """Write a synthetic dataset and return its manifest.

    Files: ``gyro.csv``, ``poses.csv``, ``frames.csv``, ``clean.lseq``,
    ``noisy.lseq`` and ``manifest.json``.  Latents are drawn from the
    ``kernel`` prior evaluated on the generated motion; noisy latents add
    white Gaussian noise with standard deviation ``noise_sigma``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gyro, poses, frames = gen_trajectory(spec)
    C = build_covariance(kernel, frames, gyro, poses)
    ss = np.random.SeedSequence([spec.seed, 1])
    seed_z, seed_e = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    Z = sample_gp(C, dims, seed_z).astype(np.float32)
    noise = np.random.default_rng(seed_e).standard_normal(Z.shape) * noise_sigma
    Y = (Z.astype(np.float64) + noise).astype(np.float32)

    paths = {name: out / name for name in
             ("gyro.csv", "poses.csv", "frames.csv", "clean.lseq", "noisy.lseq")}
    io.write_gyro_csv(paths["gyro.csv"], gyro)
    io.write_pose_csv(paths["poses.csv"], poses)
    io.write_frames_csv(paths["frames.csv"], frames)
    io.write_latents(paths["clean.lseq"], LatentSequence(frames.t, Z))
    io.write_latents(paths["noisy.lseq"], LatentSequence(frames.t, Y))
    manifest = {
        "spec": asdict(spec),
        "kernel": kernel.to_dict(),
        "noise_sigma": float(noise_sigma),
        "dims": int(dims),
        "frames": len(frames),
        "gyro_samples": len(gyro),
        "files": {k: str(v) for k, v in paths.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
