import math

import numpy as np
import pytest


def taylor_expm(M, terms=30):
    """Truncated power series of the matrix exponential (independent oracle)."""
    M = np.asarray(M, dtype=np.float64)
    out = np.eye(len(M))
    term = np.eye(len(M))
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def axis_angle(axis, theta):
    """Rotation matrix about ``axis`` by ``theta`` via the Taylor oracle."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return taylor_expm(K * theta, terms=60)


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def rot_angle(R):
    return math.acos(max(-1.0, min(1.0, (np.trace(R) - 1.0) / 2.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
