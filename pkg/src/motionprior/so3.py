"""Rotation utilities: skew matrices, the SO(3) exponential, quaternions.

Conventions
-----------
* Quaternions are scalar-first ``(qw, qx, qy, qz)`` with the Hamilton
  product and describe body-to-world orientation.
* Angular velocity is expressed in the body frame, so orientation is
  propagated as ``R(t + dt) = R(t) @ expm_so3(omega, dt)``.  Writing the
  same step with the opposite sign (``exp(-[w]x dt)``) only transposes the
  relative rotation, and every distance in this package reads the trace,
  which is transpose invariant.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class GyroLog:
    """Timestamped angular-rate samples.

    ``t`` has shape (K,) in seconds and ``omega`` shape (K, 3) in rad/s.
    """

    t: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        w = np.asarray(self.omega, dtype=np.float64).reshape(-1, 3)
        if len(t) != len(w):
            raise DataError(f"gyro log has {len(t)} stamps but {len(w)} rate rows")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise DataError("gyro log contains non-finite values")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            k = int(np.argmax(np.diff(t) <= 0)) + 1
            raise DataError(f"gyro timestamps not strictly increasing at sample {k}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omega", w)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class PoseLog:
    """Timestamped poses: positions ``p`` (K, 3) and unit quaternions ``q`` (K, 4)."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        p = np.asarray(self.p, dtype=np.float64).reshape(-1, 3)
        q = np.asarray(self.q, dtype=np.float64).reshape(-1, 4)
        if not (len(t) == len(p) == len(q)):
            raise DataError("pose log arrays have inconsistent lengths")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise DataError("pose log contains non-finite values")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            k = int(np.argmax(np.diff(t) <= 0)) + 1
            raise DataError(f"pose timestamps not strictly increasing at sample {k}")
        norms = np.linalg.norm(q, axis=1)
        if len(q) and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise DataError("pose quaternions must have unit norm")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return len(self.t)

    def rotations(self):
        return quat_to_rot(self.q)


def skew(v):
    """Cross-product matrix: ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def _skew_batch(v):
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def expm_so3(v, dt=1.0, sign=1):
    """Rotation ``exp(sign * [v]x * dt)`` by the Rodrigues formula.

    ``v`` may be a single 3-vector or a stack of shape (..., 3); ``dt``
    broadcasts against the leading dimensions.  Below ``theta = 1e-8`` the
    coefficients fall back to their second-order Taylor expansions.
    """
    v = np.asarray(v, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("dt must be nonnegative")
    phi = (sign * v) * dt[..., None]
    theta2 = np.sum(phi * phi, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = _skew_batch(phi)
    R = np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)
    return R


def rot_distance(Ra, Rb):
    """Chordal distance ``sqrt(tr(I - Ra^T Rb))``, in [0, 2]."""
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    # tr(Ra^T Rb) without forming the product
    tr = np.sum(Ra * Rb, axis=(-2, -1))
    return np.sqrt(np.clip(3.0 - tr, 0.0, 4.0))


def trace_distance(R):
    """``sqrt(tr(I - R))`` for a relative rotation (or a stack of them)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R, axis1=-2, axis2=-1)
    return np.sqrt(np.clip(3.0 - tr, 0.0, 4.0))


def quat_mul(a, b):
    """Hamilton product of scalar-first quaternions (broadcasting)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rot(q):
    """Rotation matrix of a unit quaternion (or stack of quaternions)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_to_quat(R, tol=1e-6):
    """Unit quaternion (scalar-first, ``qw >= 0``) of a rotation matrix.

    Raises ``DataError`` when ``R`` is not orthonormal with determinant +1
    to within ``tol``.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise DataError(f"expected a 3x3 matrix, got shape {R.shape}")
    if (not np.all(np.isfinite(R)) or np.max(np.abs(R.T @ R - np.eye(3))) > tol
            or abs(np.linalg.det(R) - 1.0) > tol):
        raise DataError("matrix is not a proper rotation")
    # Shepperd's method: pivot on the largest of w, x, y, z
    tr = np.trace(R)
    cand = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    i = int(np.argmax(cand))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_exp(phi):
    """Unit quaternion of the rotation vector ``phi`` (axis times angle)."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi, axis=-1)
    half = 0.5 * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half)[..., None], k[..., None] * phi], axis=-1)


def quat_deriv_to_omega(q, qdot):
    """Body angular velocity ``Im[2 conj(q) * qdot]``."""
    return 2.0 * quat_mul(quat_conj(q), qdot)[..., 1:]


def make_continuous(q):
    """Flip signs so consecutive quaternions have nonnegative dot product."""
    q = np.array(q, dtype=np.float64, copy=True)
    for k in range(1, len(q)):
        if np.dot(q[k - 1], q[k]) < 0:
            q[k] = -q[k]
    return q


def quats_to_gyro(poses):
    """Recover a gyro log from an orientation track by finite differences.

    Central differences at interior samples, forward/backward at the two
    ends; each derivative is mapped to a body rate with
    :func:`quat_deriv_to_omega`.
    """
    t = np.asarray(poses.t, dtype=np.float64)
    if len(t) < 2:
        raise DataError("at least two pose samples are needed to differentiate")
    if np.any(np.diff(t) <= 0):
        raise DataError("pose timestamps must be strictly increasing (duplicate or reversed stamp)")
    q = make_continuous(poses.q)
    qdot = np.empty_like(q)
    qdot[1:-1] = (q[2:] - q[:-2]) / (t[2:] - t[:-2])[:, None]
    qdot[0] = (q[1] - q[0]) / (t[1] - t[0])
    qdot[-1] = (q[-1] - q[-2]) / (t[-1] - t[-2])
    return GyroLog(t.copy(), quat_deriv_to_omega(q, qdot))


def integrate_gyro(gyro, R0=None):
    """Orientation at every gyro stamp, holding ``omega[k]`` over ``(t[k-1], t[k]]``."""
    R = np.eye(3) if R0 is None else np.asarray(R0, dtype=np.float64)
    steps = expm_so3(gyro.omega[1:], np.diff(gyro.t))
    out = np.empty((len(gyro), 3, 3))
    out[0] = R
    for k, S in enumerate(steps, start=1):
        R = R @ S
        out[k] = R
    return out
