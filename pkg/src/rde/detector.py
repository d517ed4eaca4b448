"""End-to-end detectors over classifier feature vectors.

Three variants share one scoring interface:

* ``mle`` fits a per-class Gaussian directly on the raw features;
* ``rde_minus_mcd`` first projects every vector through a kernel-PCA
  model fitted on a seeded, size-capped subsample of the training rows,
  then fits per-class Gaussians on the projections;
* ``rde`` additionally replaces the per-class sample covariance with the
  minimum-covariance-determinant estimate, making the densities robust
  to contaminated training data.

A sample is scored by the Gaussian log-density under its *predicted*
class; low scores mark likely adversarial inputs.  Scoring a batch is
the per-row loop, so batch and single-row results are bit-identical,
and fitted models are immutable so they can be scored concurrently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import kpca as kpca_mod
from .errors import ClassTooSmall, DimensionMismatch, RdeError, UnknownClass, ValidationError
from .gaussian import GaussianParams, _as_matrix, fit_mle, log_density
from .kpca import KernelConfig, KpcaModel, fit_kpca
from .mcd import McdConfig, fast_mcd

VARIANTS = ("rde", "rde_minus_mcd", "mle")


@dataclass(frozen=True)
class DetectorConfig:
    """Fit-time choices.

    ``kernel`` of ``None`` selects an RBF kernel with gamma = 1 over the
    feature dimension, resolved when the data is seen.  ``seed`` drives
    the training subsample used to fit the projection (the robust
    covariance search has its own seed inside ``mcd``).
    """

    variant: str = "rde"
    p: int = 100
    kernel: KernelConfig | None = None
    mcd: McdConfig = field(default_factory=McdConfig)
    train_subsample_cap: int = 8000
    stratified_subsample: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not isinstance(self.p, (int, np.integer)) or self.p < 1:
            raise ValidationError(f"p must be a positive integer, got {self.p!r}")
        if (
            not isinstance(self.train_subsample_cap, (int, np.integer))
            or self.train_subsample_cap < self.p
        ):
            raise ValidationError(
                f"train_subsample_cap must be an integer >= p, got {self.train_subsample_cap!r}"
            )
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass(frozen=True)
class RdeModel:
    """Fitted detector: optional projection plus per-class densities."""

    config: DetectorConfig
    kpca: KpcaModel | None
    class_params: dict[int, GaussianParams]
    class_counts: dict[int, int]
    fit_seconds: float = 0.0

    @property
    def classes(self) -> list[int]:
        return sorted(self.class_params)

    @property
    def input_dim(self) -> int:
        """Width of the raw feature vectors this model scores."""
        if self.kpca is not None:
            return self.kpca.input_dim
        return next(iter(self.class_params.values())).dim

    @property
    def gaussian_dim(self) -> int:
        """Dimension the per-class Gaussians live in."""
        return next(iter(self.class_params.values())).dim


def _class_minimum(config: DetectorConfig) -> int:
    if config.variant == "rde":
        # the robust covariance search needs strictly more than p + 1
        # rows per class in the p-dimensional projection space
        return config.p + 2
    return 2


def _subsample_indices(
    labels: NDArray[np.int64], cap: int, stratified: bool, rng: np.random.Generator
) -> NDArray[np.int64]:
    """Seeded choice of at most ``cap`` training rows, returned sorted."""
    n = labels.shape[0]
    if n <= cap:
        return np.arange(n)
    if not stratified:
        return np.sort(rng.choice(n, size=cap, replace=False))
    # proportional per-class quotas, largest remainder first
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * (cap / n)
    quotas = np.floor(exact).astype(np.int64)
    remainder = cap - int(quotas.sum())
    for i in np.argsort(-(exact - quotas), kind="stable")[:remainder]:
        quotas[i] += 1
    chosen = []
    for cls, quota in zip(classes, quotas):
        rows = np.flatnonzero(labels == cls)
        if quota >= rows.size:
            chosen.append(rows)
        else:
            chosen.append(rows[rng.choice(rows.size, size=int(quota), replace=False)])
    return np.sort(np.concatenate(chosen))


def _as_labels(labels, n_rows: int) -> NDArray[np.int64]:
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.shape[0] != n_rows:
        raise DimensionMismatch(f"labels must be 1-D with {n_rows} entries, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        cast = arr.astype(np.int64, copy=True)
        if arr.dtype.kind == "f" and not np.array_equal(cast, arr):
            raise ValidationError("labels must be integers")
        arr = cast
    return arr.astype(np.int64)


def fit(train_features, train_labels, config: DetectorConfig | None = None) -> RdeModel:
    """Fit a detector on labeled training features.

    Class sizes are checked up front (``rde`` needs at least p + 2 rows
    per class, the other variants at least 2).  For the projection
    variants the kernel-PCA basis is fitted on a seeded subsample of at
    most ``train_subsample_cap`` rows and the per-class densities on the
    projections of *all* training rows.
    """
    if config is None:
        config = DetectorConfig()
    X = _as_matrix(train_features)
    labels = _as_labels(train_labels, X.shape[0])
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 1:
        raise ValidationError("training set is empty")
    minimum = _class_minimum(config)
    for cls, count in zip(classes, counts):
        if count < minimum:
            raise ClassTooSmall(
                f"class {int(cls)} has {int(count)} training rows; "
                f"variant {config.variant!r} needs at least {minimum}"
            )

    started = time.perf_counter()
    if config.variant == "mle":
        projection = None
        projected = X
    else:
        kernel = config.kernel
        if kernel is None:
            kernel = KernelConfig("rbf", gamma=1.0 / X.shape[1])
        rng = np.random.default_rng(config.seed)
        subsample = _subsample_indices(labels, config.train_subsample_cap, config.stratified_subsample, rng)
        requested_p = min(config.p, subsample.size)
        projection = fit_kpca(X[subsample], kernel, requested_p)
        projected = kpca_mod.transform(projection, X)

    class_params: dict[int, GaussianParams] = {}
    for cls in classes:
        rows = projected[labels == cls]
        try:
            if config.variant == "rde":
                class_params[int(cls)] = fast_mcd(rows, config.mcd).final_params
            else:
                class_params[int(cls)] = fit_mle(rows)
        except RdeError as exc:
            raise type(exc)(f"class {int(cls)}: {exc}") from exc
    fit_seconds = time.perf_counter() - started

    return RdeModel(
        config=config,
        kpca=projection,
        class_params=class_params,
        class_counts={int(c): int(k) for c, k in zip(classes, counts)},
        fit_seconds=fit_seconds,
    )


def score(model: RdeModel, features, predicted_labels) -> NDArray[np.float64]:
    """Class-conditional log-density of each row under its predicted label.

    Every predicted label must have been seen at fit time.  Rows are
    scored one at a time (projection included), so scoring a batch is
    bit-identical to scoring its rows individually.
    """
    X = _as_matrix(features)
    if X.shape[1] != model.input_dim:
        raise DimensionMismatch(
            f"features have {X.shape[1]} columns, model expects {model.input_dim}"
        )
    labels = _as_labels(predicted_labels, X.shape[0])
    known = set(model.class_params)
    unknown = sorted(set(labels.tolist()) - known)
    if unknown:
        raise UnknownClass(f"predicted label {unknown[0]} was not seen during fitting")
    out = np.empty(X.shape[0], dtype=np.float64)
    for i in range(X.shape[0]):
        vec = X[i]
        if model.kpca is not None:
            vec = kpca_mod.transform(model.kpca, vec)
        out[i] = log_density(model.class_params[int(labels[i])], vec)
    return out


def detect(scores, threshold: float) -> NDArray[np.bool_]:
    """Flag scores strictly below the threshold.

    Scores must be finite; the threshold may be infinite (``-inf`` flags
    nothing, ``+inf`` everything).
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"scores must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("scores contain non-finite values")
    if np.isnan(threshold):
        raise ValidationError("threshold must not be NaN")
    return arr < threshold
