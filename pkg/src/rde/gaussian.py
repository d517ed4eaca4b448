"""Multivariate Gaussian estimation, log-density evaluation and spectra.

Every covariance used for scoring goes through one shared Cholesky
routine that escalates a diagonal jitter in decade steps (0, then 1e-12
up to 1e-6) until the factorization succeeds; the jitter actually
applied is recorded on the fitted parameters.  Density evaluation never
forms an explicit inverse: squared Mahalanobis distances come from a
triangular solve against the cached factor, so a fit is factorized once
and scored many times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    InsufficientData,
    NonSymmetric,
    SingularCovariance,
    ValidationError,
)

LOG_2PI = math.log(2.0 * math.pi)

#: Diagonal jitter values tried in order until the Cholesky succeeds.
JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

#: Relative tolerance for symmetry checks.
SYMMETRY_RTOL = 1e-10

#: Eigenvalues below this fraction of the largest one count as near-zero.
NEAR_ZERO_EIGENVALUE_RTOL = 1e-12


@dataclass(frozen=True)
class GaussianParams:
    """Fitted Gaussian: moments plus the factorization used for scoring.

    ``covariance`` is the estimate itself, without jitter.  ``chol_lower``
    is the lower-triangular Cholesky factor of ``covariance + jitter * I``
    and ``log_det`` is the log-determinant of that (possibly jittered)
    matrix.  Instances are immutable; the arrays are marked read-only so
    a fitted model can be shared freely across threads.
    """

    mean: NDArray[np.float64]
    covariance: NDArray[np.float64]
    chol_lower: NDArray[np.float64]
    log_det: float
    jitter: float

    def __post_init__(self) -> None:
        for arr in (self.mean, self.covariance, self.chol_lower):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalue diagnostics of a symmetric covariance matrix.

    ``condition_number`` and ``condition_bound_scale`` (1 / smallest
    eigenvalue, the factor by which input perturbations can be amplified
    through the inverse) are ``inf`` when the smallest eigenvalue is not
    strictly positive.  ``n_near_zero`` counts eigenvalues below
    ``NEAR_ZERO_EIGENVALUE_RTOL`` times the largest eigenvalue.
    """

    eigenvalues: NDArray[np.float64]
    lambda_max: float
    lambda_min: float
    condition_number: float
    condition_bound_scale: float
    n_near_zero: int

    def __post_init__(self) -> None:
        self.eigenvalues.setflags(write=False)


def _as_matrix(features, *, name: str = "features") -> NDArray[np.float64]:
    """Coerce to a finite 2-D float64 array or raise."""
    try:
        arr = np.asarray(features, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DimensionMismatch(f"{name} is not a rectangular numeric array: {exc}") from exc
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def _as_vector(z, dim: int) -> NDArray[np.float64]:
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise DimensionMismatch(f"expected vector of length {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("vector contains non-finite entries")
    return arr


def check_symmetric(matrix: NDArray[np.float64], *, rtol: float = SYMMETRY_RTOL) -> None:
    """Raise :class:`NonSymmetric` if ``matrix`` deviates from its transpose.

    The deviation is measured entrywise and compared against ``rtol``
    times the largest absolute entry (with an absolute floor so the zero
    matrix passes).
    """
    asym = float(np.max(np.abs(matrix - matrix.T))) if matrix.size else 0.0
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if asym > rtol * max(scale, 1e-300):
        raise NonSymmetric(f"matrix asymmetry {asym:g} exceeds tolerance at scale {scale:g}")


def _factorize(covariance: NDArray[np.float64]) -> tuple[NDArray[np.float64], float, float]:
    """Cholesky with jitter escalation.

    Returns ``(chol_lower, log_det, jitter)`` where ``log_det`` is the
    log-determinant of the jittered matrix actually factorized.  Raises
    :class:`SingularCovariance` when even the largest jitter fails.
    """
    eye = np.eye(covariance.shape[0])
    for jitter in JITTER_LADDER:
        try:
            chol = np.linalg.cholesky(covariance + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return chol, log_det, jitter
    raise SingularCovariance(
        f"covariance of dimension {covariance.shape[0]} could not be factorized "
        f"even with jitter {JITTER_LADDER[-1]:g}"
    )


def from_moments(mean, covariance) -> GaussianParams:
    """Build :class:`GaussianParams` from explicit moments.

    The covariance must be symmetric (within ``SYMMETRY_RTOL``); it is
    factorized through the shared jitter ladder exactly as a fitted one
    would be.
    """
    mean_arr = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(covariance, dtype=np.float64)
    if mean_arr.ndim != 1:
        raise DimensionMismatch(f"mean must be 1-D, got shape {mean_arr.shape}")
    dim = mean_arr.shape[0]
    if cov.shape != (dim, dim):
        raise DimensionMismatch(f"covariance shape {cov.shape} does not match mean length {dim}")
    check_symmetric(cov)
    chol, log_det, jitter = _factorize(cov)
    return GaussianParams(mean_arr.copy(), cov.copy(), chol, log_det, jitter)


def fit_mle(features, *, ddof: int = 1) -> GaussianParams:
    """Fit mean and covariance of a Gaussian to ``features`` (N x P).

    ``ddof=1`` (default) uses the unbiased 1/(N-1) covariance
    normalization; ``ddof=0`` the 1/N maximum-likelihood one.  Needs at
    least two samples.  The covariance is symmetrized before
    factorization so rounding noise cannot break the symmetry invariant.
    """
    if ddof not in (0, 1):
        raise ValidationError(f"ddof must be 0 or 1, got {ddof}")
    X = _as_matrix(features)
    n = X.shape[0]
    if n < 2:
        raise InsufficientData(f"need at least 2 samples to fit a Gaussian, got {n}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - ddof)
    cov = 0.5 * (cov + cov.T)
    chol, log_det, jitter = _factorize(cov)
    return GaussianParams(mean, cov, chol, log_det, jitter)


def mahalanobis_sq(params: GaussianParams, z) -> float:
    """Squared Mahalanobis distance of ``z`` from the fitted mean.

    Computed as the squared norm of the triangular solve
    ``L y = z - mean``; no inverse is ever formed.
    """
    vec = _as_vector(z, params.dim)
    diff = vec - params.mean
    y = solve_triangular(params.chol_lower, diff, lower=True, check_finite=False)
    return float(y @ y)


def mahalanobis_sq_rows(params: GaussianParams, features) -> NDArray[np.float64]:
    """Squared Mahalanobis distance of every row of ``features``."""
    X = _as_matrix(features)
    if X.shape[1] != params.dim:
        raise DimensionMismatch(
            f"features have {X.shape[1]} columns, parameters have dimension {params.dim}"
        )
    diff = (X - params.mean).T
    y = solve_triangular(params.chol_lower, diff, lower=True, check_finite=False)
    return (y * y).sum(axis=0)


def log_density(params: GaussianParams, z) -> float:
    """Gaussian log-density of ``z`` under ``params``.

    -(P/2) log 2pi - (1/2) log det - (1/2) d^2, with the log-determinant
    taken from the cached factorization.
    """
    m2 = mahalanobis_sq(params, z)
    return -0.5 * params.dim * LOG_2PI - 0.5 * params.log_det - 0.5 * m2


def differential_entropy(params: GaussianParams) -> float:
    """Differential entropy (P/2)(log 2pi + 1) + (1/2) log det."""
    return 0.5 * params.dim * (LOG_2PI + 1.0) + 0.5 * params.log_det


def spectrum_diagnostics(covariance) -> SpectrumReport:
    """Eigenvalue spectrum and conditioning summary of a covariance.

    Eigenvalues are reported in descending order.  When the smallest
    eigenvalue is zero or negative both the condition number and the
    perturbation-amplification scale are reported as ``inf``.
    """
    cov = np.asarray(covariance, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got shape {cov.shape}")
    if cov.shape[0] == 0:
        raise DimensionMismatch("covariance must be at least 1 x 1")
    check_symmetric(cov)
    eigenvalues = np.linalg.eigvalsh(cov)[::-1].copy()
    lambda_max = float(eigenvalues[0])
    lambda_min = float(eigenvalues[-1])
    if lambda_min <= 0.0:
        condition_number = math.inf
        condition_bound_scale = math.inf
    else:
        condition_number = lambda_max / lambda_min
        condition_bound_scale = 1.0 / lambda_min
    n_near_zero = int(np.sum(eigenvalues < NEAR_ZERO_EIGENVALUE_RTOL * max(lambda_max, 0.0)))
    return SpectrumReport(
        eigenvalues=eigenvalues,
        lambda_max=lambda_max,
        lambda_min=lambda_min,
        condition_number=condition_number,
        condition_bound_scale=condition_bound_scale,
        n_near_zero=n_near_zero,
    )
