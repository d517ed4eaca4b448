"""Kernel PCA with RBF and linear kernels.

Fitting builds the training kernel matrix, double-centers it in feature
space (K' = K - 1K - K1 + 1K1) and solves the symmetric eigenproblem of
the centered matrix for the top components.  Stored coefficient columns
are the eigenvectors scaled by 1/sqrt(eigenvalue), so each principal
axis has unit norm in feature space (eigenvalue times the squared
coefficient norm equals one) and the variance of the training
projections along axis k is eigenvalue_k divided by the number of
training rows.

Projection of a new point centers its kernel row against the stored
training row means and total mean, then applies the coefficient matrix.
Projecting a batch is defined as the row-by-row loop, so batch and
single-point results are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import eigh
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, InsufficientRank, ValidationError
from .gaussian import _as_matrix, _as_vector, check_symmetric

#: Eigenvalues must exceed this fraction of the largest one to be retained.
POSITIVE_EIGENVALUE_RTOL = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    """Kernel choice: ``"rbf"`` (needs ``gamma > 0``) or ``"linear"``.

    ``gamma`` is ignored for the linear kernel.
    """

    kind: str
    gamma: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("rbf", "linear"):
            raise ValidationError(f"unknown kernel kind {self.kind!r}; expected 'rbf' or 'linear'")
        if self.kind == "rbf":
            if self.gamma is None or not math.isfinite(self.gamma) or self.gamma <= 0.0:
                raise ValidationError(f"rbf kernel requires a finite gamma > 0, got {self.gamma!r}")


@dataclass(frozen=True)
class KpcaModel:
    """Fitted projection: training rows, centering statistics, axes.

    ``eigenvalues`` are the strictly positive eigenvalues of the centered
    training kernel matrix, descending; ``p`` is their count (the
    effective number of components, which may be below the requested one
    when the kernel matrix is rank-deficient).  Immutable after fitting.
    """

    train_vectors: NDArray[np.float64]
    kernel: KernelConfig
    p: int
    eigenvalues: NDArray[np.float64]
    coefficients: NDArray[np.float64]
    center_row_means: NDArray[np.float64]
    center_total_mean: float

    def __post_init__(self) -> None:
        for arr in (self.train_vectors, self.eigenvalues, self.coefficients, self.center_row_means):
            arr.setflags(write=False)

    @property
    def input_dim(self) -> int:
        return self.train_vectors.shape[1]


def kernel_eval(config: KernelConfig, x, y) -> float:
    """Evaluate the kernel on two vectors of equal length."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatch(f"kernel arguments must be equal-length vectors, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("kernel arguments must be finite")
    if config.kind == "rbf":
        d = a - b
        return float(np.exp(-config.gamma * np.dot(d, d)))
    return float(np.dot(a, b))


def _kernel_matrix(config: KernelConfig, X: NDArray[np.float64]) -> NDArray[np.float64]:
    if config.kind == "rbf":
        return np.exp(-config.gamma * cdist(X, X, metric="sqeuclidean"))
    K = X @ X.T
    return 0.5 * (K + K.T)


def _kernel_row(config: KernelConfig, train: NDArray[np.float64], z: NDArray[np.float64]) -> NDArray[np.float64]:
    if config.kind == "rbf":
        return np.exp(-config.gamma * cdist(z[None, :], train, metric="sqeuclidean")[0])
    return train @ z


def center_kernel(K) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """Double-center a symmetric kernel matrix.

    Returns ``(centered, row_means, total_mean)`` where
    ``centered[i, j] = K[i, j] - row_means[i] - row_means[j] + total_mean``.
    """
    mat = np.asarray(K, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"kernel matrix must be square, got shape {mat.shape}")
    check_symmetric(mat)
    row_means = mat.mean(axis=1)
    total_mean = float(mat.mean())
    centered = mat - row_means[:, None] - row_means[None, :] + total_mean
    return centered, row_means, total_mean


def fit_kpca(features, kernel: KernelConfig, p: int) -> KpcaModel:
    """Fit a kernel PCA projection with up to ``p`` components.

    Only strictly positive eigenvalues of the centered kernel matrix are
    retained (above ``POSITIVE_EIGENVALUE_RTOL`` relative to the largest),
    so the effective component count recorded on the model may be smaller
    than requested.  Raises :class:`InsufficientRank` when no eigenvalue
    is positive, e.g. when all training rows coincide.

    Component signs are fixed deterministically: the entry of largest
    magnitude in each coefficient column is made positive.
    """
    X = _as_matrix(features)
    m = X.shape[0]
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ValidationError(f"p must be a positive integer, got {p!r}")
    if p > m:
        raise DimensionMismatch(f"requested p={p} exceeds the {m} training rows")

    K = _kernel_matrix(kernel, X)
    centered, row_means, total_mean = center_kernel(K)
    w, v = eigh(centered, subset_by_index=(m - p, m - 1))
    w = w[::-1]
    v = v[:, ::-1]

    floor = max(float(w[0]), 0.0) * POSITIVE_EIGENVALUE_RTOL
    keep = w > floor
    if not bool(np.any(keep)):
        raise InsufficientRank("centered kernel matrix has no positive eigenvalues")
    w = np.ascontiguousarray(w[keep])
    v = v[:, keep]

    coefficients = v / np.sqrt(w)[None, :]
    for k in range(coefficients.shape[1]):
        j = int(np.argmax(np.abs(coefficients[:, k])))
        if coefficients[j, k] < 0.0:
            coefficients[:, k] = -coefficients[:, k]

    return KpcaModel(
        train_vectors=X.copy(),
        kernel=kernel,
        p=int(coefficients.shape[1]),
        eigenvalues=w,
        coefficients=np.ascontiguousarray(coefficients),
        center_row_means=row_means,
        center_total_mean=total_mean,
    )


def _transform_row(model: KpcaModel, z: NDArray[np.float64]) -> NDArray[np.float64]:
    k = _kernel_row(model.kernel, model.train_vectors, z)
    k_centered = k - k.mean() - model.center_row_means + model.center_total_mean
    return k_centered @ model.coefficients


def transform(model: KpcaModel, z) -> NDArray[np.float64]:
    """Project one vector (1-D) or a batch of rows (2-D).

    The batch path is the per-row loop, so the two are bit-identical.
    """
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim == 1:
        vec = _as_vector(arr, model.input_dim)
        return _transform_row(model, vec)
    if arr.ndim == 2:
        if arr.shape[1] != model.input_dim:
            raise DimensionMismatch(
                f"rows have {arr.shape[1]} columns, model expects {model.input_dim}"
            )
        out = np.empty((arr.shape[0], model.p), dtype=np.float64)
        for i in range(arr.shape[0]):
            out[i] = _transform_row(model, _as_vector(arr[i], model.input_dim))
        return out
    raise DimensionMismatch(f"expected a vector or matrix, got shape {arr.shape}")
