"""Exact GP regression over latent sequences and marginal-likelihood fitting.

Every latent dimension is an independent regression problem sharing one
covariance matrix, so a single factorisation of ``C + sigma2 I`` serves all
``D`` right-hand sides.
"""
import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack

from .exceptions import DataError, NumericalError
from .kernels import (
    KernelKind, KernelSpec, Matern32Params, covariance_from_distances,
    distance_matrix, matern32, matern32_dlogell,
)

log = logging.getLogger(__name__)

JITTER_START = 1e-9
JITTER_MAX = 1e-3


@dataclass(frozen=True)
class LatentSequence:
    """Per-frame latent vectors: ``Y`` has shape (N, D), one row per stamp."""

    timestamps: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        Y = np.asarray(self.Y)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.ndim != 2 or Y.shape[0] != len(t):
            raise DataError(f"latent matrix shape {Y.shape} does not match {len(t)} timestamps")
        if Y.shape[1] < 1:
            raise DataError("latent dimension must be at least 1")
        if np.any(np.diff(t) <= 0):
            raise DataError("latent timestamps must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(Y))):
            raise DataError("latent sequence contains non-finite values")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "Y", Y)

    @property
    def shape(self):
        return self.Y.shape


@dataclass(frozen=True)
class GPHyper:
    kernel: KernelSpec
    sigma2: float
    degraded: bool = False
    nlml: float = None
    grad_norm: float = None

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DataError(f"sigma2 must be positive, got {self.sigma2}")

    def to_dict(self):
        out = dict(self.kernel.to_dict(), sigma2=self.sigma2)
        if self.nlml is not None:
            out.update(nlml=self.nlml, grad_norm=self.grad_norm, degraded=self.degraded)
        return out


@dataclass
class PosteriorResult:
    Z: np.ndarray
    var: np.ndarray
    info: dict = field(default_factory=dict)


def robust_cholesky(A, scale):
    """Lower Cholesky factor of ``A``, adding jitter only if plain factorisation fails.

    Jitter starts at ``1e-9 * scale`` and grows tenfold up to ``1e-3 * scale``.
    Returns ``(L, jitter)``.
    """
    jitter = 0.0
    while True:
        try:
            L = linalg.cholesky(A + jitter * np.eye(len(A)), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except linalg.LinAlgError:
            pass
        jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * scale * (1 + 1e-12):
            eig = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
            raise NumericalError(
                f"Cholesky failed with jitter up to {JITTER_MAX * scale:.3g}; "
                f"smallest eigenvalue estimate {eig:.3g}")
        log.debug("cholesky retry with jitter %.3g", jitter)


def _check_inputs(C, sigma2, Y):
    C = np.asarray(C, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] != Y.shape[0]:
        raise DataError(f"covariance {C.shape} and latents {Y.shape} are inconsistent")
    if not sigma2 > 0:
        raise DataError("sigma2 must be positive")
    return C, Y


def posterior(C, sigma2, Y):
    """Posterior mean ``C (C + sigma2 I)^-1 Y`` and marginal variances."""
    C, Y = _check_inputs(C, sigma2, Y)
    scale = max(float(np.max(np.diag(C))), sigma2)
    A = C + sigma2 * np.eye(len(C))
    L, jitter = robust_cholesky(A, scale)
    noise = sigma2 + jitter
    alpha = linalg.cho_solve((L, True), Y, check_finite=False)
    # C A^-1 Y == Y - noise * A^-1 Y; this form stays accurate as noise -> 0
    Z = Y - noise * alpha
    V = linalg.solve_triangular(L, C, lower=True, check_finite=False)
    var = np.clip(np.diag(C) - np.sum(V * V, axis=0), 0.0, None)
    return PosteriorResult(Z, var, {"jitter": jitter})


def nlml(C, sigma2, Y, dA=None):
    """Negative log marginal likelihood summed over the columns of ``Y``.

    ``dA`` is an optional sequence of derivative matrices of ``C + sigma2 I``
    with respect to the free parameters; when given, returns ``(value, grad)``.
    """
    C, Y = _check_inputs(C, sigma2, Y)
    n, d = Y.shape
    A = C + sigma2 * np.eye(n)
    L, _ = robust_cholesky(A, max(float(np.max(np.diag(C))), sigma2))
    alpha = linalg.cho_solve((L, True), Y, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    value = 0.5 * (np.sum(Y * alpha) + d * logdet + n * d * np.log(2 * np.pi))
    if dA is None:
        return value
    Linv, info = lapack.dtrtri(L, lower=1)
    if info != 0:
        raise NumericalError("triangular inverse failed")
    Ainv = Linv.T @ Linv
    W = d * Ainv - alpha @ alpha.T
    grad = np.array([0.5 * np.sum(W * M) for M in dA])
    return value, grad


# -- hyperparameter fitting --------------------------------------------------

class _Objective:
    """nlml as a function of log hyperparameters for one kernel kind.

    Parameter vectors:
      single kernels: [log gamma2, log ell, log sigma2]
      product:        [log gamma2_t, log ell_t, log ell_g, log sigma2]
                      (gyro magnitude fixed to 1)
    """

    def __init__(self, kind, Y, D, D_time=None):
        self.kind = KernelKind(kind)
        self.Y = np.asarray(Y, dtype=np.float64)
        self.D = D
        self.D_time = D_time

    def kernel(self, x):
        x = np.exp(x)
        if self.kind is KernelKind.PRODUCT:
            return (KernelSpec(self.kind, Matern32Params(1.0, x[2]), Matern32Params(x[0], x[1])),
                    x[3])
        return KernelSpec(self.kind, Matern32Params(x[0], x[1])), x[2]

    def value(self, x):
        kernel, sigma2 = self.kernel(x)
        C = matern32(self.D, kernel.params)
        if self.kind is KernelKind.PRODUCT:
            C = C * matern32(self.D_time, kernel.time_params)
        try:
            return nlml(C, sigma2, self.Y)
        except NumericalError:
            return np.inf

    def __call__(self, x):
        kernel, sigma2 = self.kernel(x)
        n = len(self.Y)
        if self.kind is KernelKind.PRODUCT:
            Kg = matern32(self.D, kernel.params)
            Kt = matern32(self.D_time, kernel.time_params)
            C = Kg * Kt
            dA = [C, Kg * matern32_dlogell(self.D_time, kernel.time_params),
                  Kt * matern32_dlogell(self.D, kernel.params), sigma2 * np.eye(n)]
        else:
            C = matern32(self.D, kernel.params)
            dA = [C, matern32_dlogell(self.D, kernel.params), sigma2 * np.eye(n)]
        try:
            return nlml(C, sigma2, self.Y, dA)
        except NumericalError:
            return np.inf, np.zeros_like(x)


def initial_hyper(kind, inputs_range, Y, time_range=None):
    """Scale-aware starting point: sample variance, half the input range, 10% noise."""
    kind = KernelKind(kind)
    Y = np.asarray(Y, dtype=np.float64)
    gamma2 = float(np.mean(np.var(Y, axis=0))) if len(Y) > 1 else float(np.mean(Y * Y))
    if not gamma2 > 0:
        gamma2 = 1.0
    ell = inputs_range / 2.0 if inputs_range > 0 else 1.0
    if kind is KernelKind.PRODUCT:
        ell_t = time_range / 2.0 if time_range and time_range > 0 else 1.0
        kernel = KernelSpec(kind, Matern32Params(1.0, ell), Matern32Params(gamma2, ell_t))
    else:
        kernel = KernelSpec(kind, Matern32Params(gamma2, ell))
    return GPHyper(kernel, 0.1 * gamma2)


def _to_vector(hyper):
    k = hyper.kernel
    if k.kind is KernelKind.PRODUCT:
        # fold any gyro magnitude into the time factor
        return np.log([k.params.gamma2 * k.time_params.gamma2, k.time_params.ell,
                       k.params.ell, hyper.sigma2])
    return np.log([k.params.gamma2, k.params.ell, hyper.sigma2])


GRID_FACTORS = (0.1, 1.0, 10.0)


def fit_from_distances(kind, Y, D, D_time=None, init=None, n_local=3, gtol=1e-4,
                       max_workers=1):
    """Fit hyperparameters given precomputed distance matrices.

    A 3x3x3 multiplicative grid (factors 0.1, 1, 10 on gamma2, ell and
    sigma2) around ``init`` is scored, then L-BFGS-B in log space is run
    from the ``n_local`` best grid points.  The best optimum is returned;
    ``degraded`` is set when its projected gradient norm exceeds ``gtol``.
    """
    kind = KernelKind(kind)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if init is None:
        rng_in = float(np.max(D)) if D.size else 0.0
        rng_t = float(np.max(D_time)) if D_time is not None and D_time.size else None
        init = initial_hyper(kind, rng_in, Y, rng_t)
    obj = _Objective(kind, Y, D, D_time)
    x0 = _to_vector(init)
    # grid over (magnitude, length-scale(s), noise); product moves both scales together
    lg = np.log(GRID_FACTORS)
    starts = []
    for a, b, c in product(lg, lg, lg):
        step = np.array([a, b, b, c]) if kind is KernelKind.PRODUCT else np.array([a, b, c])
        starts.append(x0 + step)
    scores = [obj.value(x) for x in starts]
    order = np.argsort(scores, kind="stable")
    bounds = [(x - np.log(1e4), x + np.log(1e4)) for x in x0]

    def local(x):
        res = optimize.minimize(obj, x, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 1000, "ftol": 1e-15, "gtol": 1e-8})
        return res

    chosen = [starts[i] for i in order[:n_local] if np.isfinite(scores[i])]
    if not chosen:
        raise NumericalError("nlml is not finite at any starting point")
    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers) as ex:
            results = list(ex.map(local, chosen))
    else:
        results = [local(x) for x in chosen]
    best = min(results, key=lambda r: r.fun)
    x = best.x
    value, grad = obj(x)
    # projected gradient: components pushing against an active bound are not stationarity violations
    pg = grad.copy()
    for i, (lo, hi) in enumerate(bounds):
        if (x[i] <= lo + 1e-12 and grad[i] > 0) or (x[i] >= hi - 1e-12 and grad[i] < 0):
            pg[i] = 0.0
    gnorm = float(np.linalg.norm(pg))
    init_value = obj.value(x0)
    if value > init_value:
        x, value, gnorm = x0, init_value, float(np.linalg.norm(obj(x0)[1]))
    kernel, sigma2 = obj.kernel(x)
    return GPHyper(kernel, sigma2, degraded=gnorm > gtol, nlml=float(value), grad_norm=gnorm)


def fit_hyperparams(kind, frames, Y, gyro=None, poses=None, init=None, **kwargs):
    """Maximum marginal likelihood hyperparameters for ``kind`` on a sequence."""
    kind = KernelKind(kind)
    if kind is KernelKind.PRODUCT:
        D = distance_matrix(KernelKind.GYRO, frames, gyro, poses)
        D_time = distance_matrix(KernelKind.TIME, frames)
    else:
        D = distance_matrix(kind, frames, gyro, poses)
        D_time = None
    return fit_from_distances(kind, Y, D, D_time, init=init, **kwargs)


def hyper_covariance(hyper, D, D_time=None):
    return covariance_from_distances(hyper.kernel, D, D_time)
