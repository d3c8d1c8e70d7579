"""Motion-driven distances and the Matérn-3/2 covariance built on them.

Three distances are supported over a timeline of camera frames:

* ``time``  -- ``|t_i - t_j|``;
* ``gyro``  -- ``|s_i - s_j|`` where ``s`` is the cumulative rotation
  arclength integrated from angular-rate samples between frames;
* ``pose``  -- translation plus chordal rotation distance between full
  poses, evaluated for every pair of frames.

A fourth kind, ``product``, multiplies a time-decay and a gyro covariance
elementwise.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import ConfigError, CoverageError, DataError
from .so3 import expm_so3, make_continuous, quat_to_rot, trace_distance

SQRT3 = np.sqrt(3.0)
DEFAULT_MAX_GAP = 0.5


class KernelKind(str, Enum):
    TIME = "time"
    GYRO = "gyro"
    POSE = "pose"
    PRODUCT = "product"

    @property
    def markovian(self):
        return self in (KernelKind.TIME, KernelKind.GYRO)


@dataclass(frozen=True)
class Matern32Params:
    gamma2: float
    ell: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma2) and self.gamma2 > 0):
            raise DataError(f"gamma2 must be positive, got {self.gamma2}")
        if not (np.isfinite(self.ell) and self.ell > 0):
            raise DataError(f"ell must be positive, got {self.ell}")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind with its hyperparameters.

    For ``product`` kernels ``params`` belongs to the gyro factor and
    ``time_params`` to the time-decay factor; the prior variance is the
    product of the two magnitudes.
    """

    kind: KernelKind
    params: Matern32Params
    time_params: Matern32Params = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.PRODUCT and self.time_params is None:
            raise ConfigError("product kernel needs parameters for both factors")

    @property
    def prior_variance(self):
        if self.kind is KernelKind.PRODUCT:
            return self.params.gamma2 * self.time_params.gamma2
        return self.params.gamma2

    def to_dict(self):
        out = {"kind": self.kind.value, "gamma2": self.params.gamma2, "ell": self.params.ell}
        if self.time_params is not None:
            out["gamma2_t"] = self.time_params.gamma2
            out["ell_t"] = self.time_params.ell
        return out


@dataclass(frozen=True)
class FrameTimeline:
    frame_ids: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        ids = np.asarray(self.frame_ids, dtype=np.int64).reshape(-1)
        if len(t) < 1:
            raise DataError("frame timeline is empty")
        if len(ids) != len(t):
            raise DataError("frame ids and timestamps differ in length")
        if np.any(np.diff(t) <= 0):
            k = int(np.argmax(np.diff(t) <= 0)) + 1
            raise DataError(f"frame timestamps not strictly increasing at frame {k}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "frame_ids", ids)

    @classmethod
    def from_times(cls, t):
        t = np.asarray(t, dtype=np.float64)
        return cls(np.arange(len(t)), t)

    def __len__(self):
        return len(self.t)


def matern32(d, params):
    """``gamma2 * (1 + sqrt(3) d / ell) * exp(-sqrt(3) d / ell)``, elementwise."""
    r = SQRT3 * np.asarray(d, dtype=np.float64) / params.ell
    return params.gamma2 * (1.0 + r) * np.exp(-r)


def matern32_dlogell(d, params):
    """Derivative of :func:`matern32` with respect to ``log(ell)``."""
    r = SQRT3 * np.asarray(d, dtype=np.float64) / params.ell
    return params.gamma2 * r * r * np.exp(-r)


# -- pose distance -----------------------------------------------------------

def pose_distance(pa, qa, pb, qb):
    """Distance between poses given as (position, unit quaternion) pairs."""
    Ra, Rb = quat_to_rot(qa), quat_to_rot(qb)
    dp = np.asarray(pa, dtype=np.float64) - np.asarray(pb, dtype=np.float64)
    rot = np.clip(3.0 - np.sum(Ra * Rb), 0.0, 4.0)
    return float(np.sqrt(dp @ dp + (2.0 / 3.0) * rot))


def pose_embedding(p, R):
    """12-D embedding whose Euclidean distances equal the pose distance."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    R = np.asarray(R, dtype=np.float64).reshape(-1, 9)
    return np.hstack([p, R / SQRT3])


def pose_distance_matrix(p, R):
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    Rf = np.asarray(R, dtype=np.float64).reshape(-1, 9)
    sq = np.sum(p * p, axis=1)
    dp2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (p @ p.T), 0.0)
    rot = np.clip(3.0 - Rf @ Rf.T, 0.0, 4.0)
    D = np.sqrt(dp2 + (2.0 / 3.0) * rot)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def poses_at(poses, times):
    """Positions and quaternions of ``poses`` at ``times``.

    Exact stamp matches are returned untouched; other times are linearly
    interpolated (slerp for orientation).  Times outside the log raise
    ``CoverageError``.
    """
    times = np.asarray(times, dtype=np.float64)
    t = poses.t
    if len(t) == 0 or times.min() < t[0] or times.max() > t[-1]:
        raise CoverageError(
            f"pose log [{t[0] if len(t) else 'empty'}, {t[-1] if len(t) else ''}] "
            f"does not cover frame times [{times.min()}, {times.max()}]")
    idx = np.searchsorted(t, times, side="left")
    exact = (idx < len(t)) & (t[np.minimum(idx, len(t) - 1)] == times)
    p = np.empty((len(times), 3))
    q = np.empty((len(times), 4))
    p[exact] = poses.p[idx[exact]]
    q[exact] = poses.q[idx[exact]]
    for n in np.flatnonzero(~exact):
        k = idx[n]
        a = (times[n] - t[k - 1]) / (t[k] - t[k - 1])
        p[n] = (1 - a) * poses.p[k - 1] + a * poses.p[k]
        q0, q1 = make_continuous(np.stack([poses.q[k - 1], poses.q[k]]))
        q[n] = _slerp(q0, q1, a)
    return p, q


def _slerp(q0, q1, a):
    dot = np.clip(np.dot(q0, q1), -1.0, 1.0)
    omega = np.arccos(dot)
    if omega < 1e-10:
        q = (1 - a) * q0 + a * q1
    else:
        q = (np.sin((1 - a) * omega) * q0 + np.sin(a * omega) * q1) / np.sin(omega)
    return q / np.linalg.norm(q)


# -- gyro distance -----------------------------------------------------------

def _check_coverage(gyro, t0, t1, max_gap):
    if gyro is None or len(gyro) == 0:
        raise CoverageError("gyro log is empty")
    gt = gyro.t
    if gt[0] > t0 or gt[-1] < t1:
        raise CoverageError(
            f"gyro log spans [{gt[0]!r}, {gt[-1]!r}] but [{t0!r}, {t1!r}] is required")
    if max_gap is None or t1 <= t0:
        return
    # gyro intervals (t[k-1], t[k]] overlapping (t0, t1]
    lo = max(int(np.searchsorted(gt, t0, side="right")), 1)
    hi = int(np.searchsorted(gt, t1, side="left"))
    gaps = np.diff(gt[lo - 1:hi + 1])
    if len(gaps) and gaps.max() > max_gap:
        k = lo + int(np.argmax(gaps))
        raise CoverageError(
            f"gyro gap of {gaps.max():.6g} s between t={gt[k - 1]!r} and t={gt[k]!r} "
            f"exceeds max_gap={max_gap}")


def _ordered_products(mats, group, n_groups):
    """Ordered product of ``mats`` within each group (groups are contiguous)."""
    counts = np.bincount(group, minlength=n_groups)
    out = np.broadcast_to(np.eye(3), (n_groups, 3, 3)).copy()
    if len(mats) == 0:
        return out
    width = int(counts.max())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = np.arange(len(group)) - starts[group]
    buf = np.broadcast_to(np.eye(3), (n_groups, width, 3, 3)).copy()
    buf[group, pos] = mats
    while buf.shape[1] > 1:
        if buf.shape[1] % 2:
            pad = np.broadcast_to(np.eye(3), (n_groups, 1, 3, 3))
            buf = np.concatenate([buf, pad], axis=1)
        buf = buf[:, 0::2] @ buf[:, 1::2]
    return buf[:, 0]


def interval_rotations(gyro, times, max_gap=DEFAULT_MAX_GAP):
    """Relative rotations over consecutive intervals ``(times[i-1], times[i]]``.

    Each gyro sample ``k`` holds its rate over ``(t[k-1], t[k]]``; the hold
    segments are clipped at the interval boundaries so that the rotation
    over a union of adjacent intervals is the product of the pieces.
    Returns an array of shape ``(len(times) - 1, 3, 3)``.
    """
    times = np.asarray(times, dtype=np.float64)
    n = len(times) - 1
    if n <= 0:
        return np.empty((0, 3, 3))
    if np.any(np.diff(times) < 0):
        raise DataError("interval boundaries must be nondecreasing")
    _check_coverage(gyro, times[0], times[-1], max_gap)
    gt = gyro.t
    inner = gt[(gt > times[0]) & (gt < times[-1])]
    bounds = np.union1d(inner, times)
    seg_end = bounds[1:]
    dt = np.diff(bounds)
    k = np.searchsorted(gt, seg_end, side="left")
    group = np.searchsorted(times, seg_end, side="left") - 1
    mats = expm_so3(gyro.omega[k], dt)
    return _ordered_products(mats, group, n)


def gyro_relative_rotation(gyro, ti, tj, max_gap=DEFAULT_MAX_GAP):
    """Rotation accumulated from the gyro log over ``(ti, tj]``."""
    if tj < ti:
        raise DataError("gyro_relative_rotation needs ti <= tj")
    if ti == tj:
        _check_coverage(gyro, ti, tj, None)
        return np.eye(3)
    return interval_rotations(gyro, [ti, tj], max_gap)[0]


def gyro_distance(gyro, ti, tj, max_gap=DEFAULT_MAX_GAP):
    return float(trace_distance(gyro_relative_rotation(gyro, ti, tj, max_gap)))


def cumulative_arclength(frames, gyro, max_gap=DEFAULT_MAX_GAP):
    """Cumulative gyro distance ``s`` with ``s[0] = 0``, one entry per frame."""
    t = frames.t if isinstance(frames, FrameTimeline) else np.asarray(frames, dtype=np.float64)
    if len(t) == 1:
        return np.zeros(1)
    steps = trace_distance(interval_rotations(gyro, t, max_gap))
    return np.concatenate([[0.0], np.cumsum(steps)])


# -- matrices ----------------------------------------------------------------

def _abs_diff(x):
    D = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(D, 0.0)
    return D


def kernel_inputs(kind, frames, gyro=None, poses=None, max_gap=DEFAULT_MAX_GAP):
    """The 1-D index a Markovian kernel runs over (time or arclength)."""
    kind = KernelKind(kind)
    if kind is KernelKind.TIME:
        return frames.t.copy()
    if kind is KernelKind.GYRO:
        if gyro is None:
            raise ConfigError("gyro kernel requires a gyro log")
        return cumulative_arclength(frames, gyro, max_gap)
    raise ConfigError(f"{kind.value} kernel has no one-dimensional input")


def distance_matrix(kind, frames, gyro=None, poses=None, max_gap=DEFAULT_MAX_GAP):
    kind = KernelKind(kind)
    if kind in (KernelKind.TIME, KernelKind.GYRO):
        return _abs_diff(kernel_inputs(kind, frames, gyro, poses, max_gap))
    if kind is KernelKind.POSE:
        if poses is None:
            raise ConfigError("pose kernel requires a pose log")
        p, q = poses_at(poses, frames.t)
        return pose_distance_matrix(p, quat_to_rot(q))
    raise ConfigError("product kernel has two factor distances; request 'time' and 'gyro' separately")


def covariance_from_distances(kernel, D, D_time=None):
    """Covariance from precomputed distances (``D_time`` only for products)."""
    C = matern32(D, kernel.params)
    if kernel.kind is KernelKind.PRODUCT:
        C = C * matern32(D_time, kernel.time_params)
    return 0.5 * (C + C.T)


def build_covariance(kernel, frames, gyro=None, poses=None, max_gap=DEFAULT_MAX_GAP):
    if kernel.kind is KernelKind.PRODUCT:
        Dg = distance_matrix(KernelKind.GYRO, frames, gyro, poses, max_gap)
        Dt = distance_matrix(KernelKind.TIME, frames)
        return covariance_from_distances(kernel, Dg, Dt)
    D = distance_matrix(kernel.kind, frames, gyro, poses, max_gap)
    return covariance_from_distances(kernel, D)
