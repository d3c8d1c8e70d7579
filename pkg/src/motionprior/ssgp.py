"""State-space form of the Matérn-3/2 GP: Kalman filtering and RTS smoothing.

The Matérn-3/2 prior over a one-dimensional index is the stationary
solution of a critically damped second-order SDE with state
``x = (f, df/ds)``.  Filtering and smoothing over sorted inputs then cost
O(N) per latent dimension instead of the O(N^3) batch solve.

All latent dimensions share the same inputs and noise level, so the 2x2
covariance recursion is run once and only the means are propagated for
each dimension.
"""
from collections import deque
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .gp import PosteriorResult

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class StateSpaceModel:
    lam: float
    gamma2: float

    @property
    def F(self):
        lam = self.lam
        return np.array([[0.0, 1.0], [-lam * lam, -2.0 * lam]])

    @property
    def Pinf(self):
        return np.diag([self.gamma2, self.lam ** 2 * self.gamma2])

    @property
    def H(self):
        return np.array([[1.0, 0.0]])

    @property
    def L(self):
        return np.array([[0.0], [1.0]])

    @property
    def q(self):
        """Spectral density of the driving white noise."""
        return 4.0 * self.lam ** 3 * self.gamma2

    def transition(self, delta):
        """Closed-form ``A = expm(F delta)`` and ``Q = Pinf - A Pinf A^T``."""
        return _transition(self.lam, self.gamma2, delta)


def matern32_ss(params):
    return StateSpaceModel(SQRT3 / params.ell, params.gamma2)


def _transition(lam, g2, d):
    """Entries of A and Q as Python floats (a00, a01, a10, a11, q00, q01, q11)."""
    if d == 0.0:
        return 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0
    x = lam * d
    e = np.exp(-x)
    a00 = e * (1.0 + x)
    a01 = e * d
    a10 = -e * lam * lam * d
    a11 = e * (1.0 - x)
    e2 = e * e
    # Q computed analytically; avoids cancellation in Pinf - A Pinf A^T for small d
    q00 = g2 * (1.0 - e2 * (1.0 + 2.0 * x + 2.0 * x * x))
    q01 = g2 * 2.0 * lam * x * x * e2
    q11 = g2 * lam * lam * (1.0 - e2 * (1.0 - 2.0 * x + 2.0 * x * x))
    return a00, a01, a10, a11, q00, q01, q11


def _check(inputs, Y, sigma2):
    s = np.asarray(inputs, dtype=np.float64).reshape(-1)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(s) != len(Y):
        raise DataError(f"{len(s)} inputs but {len(Y)} observations")
    if len(s) == 0:
        raise DataError("no observations")
    if np.any(np.diff(s) < 0):
        k = int(np.argmax(np.diff(s) < 0)) + 1
        raise DataError(f"state-space inputs must be nondecreasing (decrease at index {k})")
    if not sigma2 > 0:
        raise DataError("sigma2 must be positive")
    return s, Y


class _Filter:
    """Forward Kalman recursion; covariances as Python floats, means as D-vectors."""

    def __init__(self, model, sigma2, dim):
        self.lam = model.lam
        self.g2 = model.gamma2
        self.r = float(sigma2)
        self.dim = dim
        self.last = None
        self.m0 = None
        self.m1 = None
        self.P = None

    def step(self, s, y):
        """Predict to ``s`` then update with ``y``.

        Returns ``(m0, m1, P, A, Ppred)`` where ``A``/``Ppred`` describe the
        prediction into this step (``None`` for the first one).
        """
        if self.last is None:
            g2 = self.g2
            p00, p01, p11 = g2, 0.0, self.lam * self.lam * g2
            m0 = np.zeros(self.dim)
            m1 = np.zeros(self.dim)
            A = None
        else:
            a00, a01, a10, a11, q00, q01, q11 = _transition(self.lam, self.g2, s - self.last)
            P00, P01, P11 = self.P
            # A P A^T + Q
            t00 = a00 * P00 + a01 * P01
            t01 = a00 * P01 + a01 * P11
            t10 = a10 * P00 + a11 * P01
            t11 = a10 * P01 + a11 * P11
            p00 = t00 * a00 + t01 * a01 + q00
            p01 = t00 * a10 + t01 * a11 + q01
            p11 = t10 * a10 + t11 * a11 + q11
            m0 = a00 * self.m0 + a01 * self.m1
            m1 = a10 * self.m0 + a11 * self.m1
            A = (a00, a01, a10, a11)
        Ppred = (p00, p01, p11)
        S = p00 + self.r
        k0 = p00 / S
        k1 = p01 / S
        v = y - m0
        m0 = m0 + k0 * v
        m1 = m1 + k1 * v
        # Joseph-free update is fine for a scalar measurement; P - K S K^T
        P = (p00 - k0 * k0 * S, p01 - k0 * k1 * S, p11 - k1 * k1 * S)
        self.last = s
        self.m0, self.m1, self.P = m0, m1, P
        return m0, m1, P, A, Ppred


def _rts_step(mf0, mf1, Pf, A, Ppred, ms0, ms1, Ps):
    """One backward smoothing step from k+1 to k."""
    if A == (1.0, 0.0, 0.0, 1.0) and Ppred == Pf:
        # tie: identity transition, no process noise -> gain is the identity
        return ms0, ms1, Ps
    a00, a01, a10, a11 = A
    f00, f01, f11 = Pf
    p00, p01, p11 = Ppred
    det = p00 * p11 - p01 * p01
    i00, i01, i11 = p11 / det, -p01 / det, p00 / det
    # C = Pf A^T
    c00 = f00 * a00 + f01 * a01
    c01 = f00 * a10 + f01 * a11
    c10 = f01 * a00 + f11 * a01
    c11 = f01 * a10 + f11 * a11
    # G = C Ppred^-1
    g00 = c00 * i00 + c01 * i01
    g01 = c00 * i01 + c01 * i11
    g10 = c10 * i00 + c11 * i01
    g11 = c10 * i01 + c11 * i11
    # predicted means at k+1 from filtered means at k
    mp0 = a00 * mf0 + a01 * mf1
    mp1 = a10 * mf0 + a11 * mf1
    d0 = ms0 - mp0
    d1 = ms1 - mp1
    n0 = mf0 + g00 * d0 + g01 * d1
    n1 = mf1 + g10 * d0 + g11 * d1
    s00, s01, s11 = Ps
    e00, e01, e11 = s00 - p00, s01 - p01, s11 - p11
    # Pf + G E G^T
    h00 = g00 * e00 + g01 * e01
    h01 = g00 * e01 + g01 * e11
    h10 = g10 * e00 + g11 * e01
    h11 = g10 * e01 + g11 * e11
    q00 = f00 + h00 * g00 + h01 * g01
    q01 = f01 + 0.5 * ((h00 * g10 + h01 * g11) + (h10 * g00 + h11 * g01))
    q11 = f11 + h10 * g10 + h11 * g11
    return n0, n1, (q00, q01, q11)


def kalman_filter(model, inputs, Y, sigma2):
    """Filtered means and variances (first state component)."""
    s, Y = _check(inputs, Y, sigma2)
    kf = _Filter(model, sigma2, Y.shape[1])
    Z = np.empty_like(Y)
    var = np.empty(len(s))
    for k in range(len(s)):
        m0, _, P, _, _ = kf.step(s[k], Y[k])
        Z[k] = m0
        var[k] = P[0]
    return PosteriorResult(Z, np.clip(var, 0.0, None), {"solver": "kalman-filter"})


def kalman_rts(model, inputs, Y, sigma2):
    """Smoothed posterior means and marginal variances in O(N D)."""
    s, Y = _check(inputs, Y, sigma2)
    n, d = Y.shape
    kf = _Filter(model, sigma2, d)
    mf0 = np.empty((n, d))
    mf1 = np.empty((n, d))
    Pf = [None] * n
    As = [None] * n
    Ppreds = [None] * n
    for k in range(n):
        mf0[k], mf1[k], Pf[k], As[k], Ppreds[k] = kf.step(s[k], Y[k])
    Z = np.empty((n, d))
    var = np.empty(n)
    ms0, ms1, Ps = mf0[-1], mf1[-1], Pf[-1]
    Z[-1] = ms0
    var[-1] = Ps[0]
    for k in range(n - 2, -1, -1):
        ms0, ms1, Ps = _rts_step(mf0[k], mf1[k], Pf[k], As[k + 1], Ppreds[k + 1], ms0, ms1, Ps)
        Z[k] = ms0
        var[k] = Ps[0]
    return PosteriorResult(Z, np.clip(var, 0.0, None), {"solver": "statespace"})


class FixedLagSmoother:
    """Streaming smoother emitting frame ``k`` once frame ``k + lag`` is in.

    ``push`` returns the list of ``(index, mean, variance)`` tuples that
    became final; ``finish`` flushes the rest.  ``lag = 0`` is a plain
    Kalman filter and ``lag >= N - 1`` reproduces :func:`kalman_rts`.
    """

    def __init__(self, model, sigma2, dim, lag):
        if lag < 0:
            raise DataError("lag must be nonnegative")
        self.lag = int(lag)
        self._kf = _Filter(model, sigma2, dim)
        self._buf = deque()
        self._next = 0
        self._last_s = None

    def push(self, s, y):
        s = float(s)
        if self._last_s is not None and s < self._last_s:
            raise DataError(f"input {s} decreases (previous {self._last_s})")
        self._last_s = s
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        self._buf.append(self._kf.step(s, y))
        out = []
        if len(self._buf) > self.lag:
            out.append(self._smooth_oldest())
            self._buf.popleft()
        return out

    def _smooth_oldest(self):
        buf = self._buf
        ms0, ms1, Ps, _, _ = buf[-1]
        for k in range(len(buf) - 2, -1, -1):
            mf0, mf1, Pf, _, _ = buf[k]
            _, _, _, A, Ppred = buf[k + 1]
            ms0, ms1, Ps = _rts_step(mf0, mf1, Pf, A, Ppred, ms0, ms1, Ps)
        idx = self._next
        self._next += 1
        return idx, np.array(ms0), max(Ps[0], 0.0)

    def finish(self):
        buf = list(self._buf)
        self._buf.clear()
        if not buf:
            return []
        n = len(buf)
        results = [None] * n
        ms0, ms1, Ps, _, _ = buf[-1]
        results[-1] = (ms0, Ps)
        for k in range(n - 2, -1, -1):
            mf0, mf1, Pf, _, _ = buf[k]
            _, _, _, A, Ppred = buf[k + 1]
            ms0, ms1, Ps = _rts_step(mf0, mf1, Pf, A, Ppred, ms0, ms1, Ps)
            results[k] = (ms0, Ps)
        out = []
        for m, P in results:
            out.append((self._next, np.array(m), max(P[0], 0.0)))
            self._next += 1
        return out
