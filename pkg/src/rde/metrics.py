"""Detection metrics over clean / adversarial score samples.

Convention throughout: adversarial is the positive class and LOW scores
are flagged, i.e. a sample is detected when ``score < threshold``.  AUC
is the Mann-Whitney statistic -- the probability that a random clean
score exceeds a random adversarial one, counting ties as one half --
computed from average ranks so it matches the quadratic pairwise count
exactly.

``threshold_at_fpr`` picks the clean-score order statistic at index
floor(target_fpr * n), which guarantees the realized false-positive
rate never exceeds the target and falls within 1/n of it when the
scores are distinct.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.stats import rankdata

from .errors import DimensionMismatch, EmptyInput, InvalidFpr, ValidationError


@dataclass(frozen=True)
class DetectionReport:
    """Threshold-based detection summary at a target false-positive rate."""

    auc: float
    threshold: float
    fpr_target: float
    realized_fpr: float
    tpr_at_fpr: float
    f1_at_fpr: float
    n_clean: int
    n_adv: int
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class RocCurve:
    """Full operating curve.

    ``thresholds`` are negated-score cutoffs, strictly descending; the
    point at index i flags exactly the samples whose negated score is at
    least ``thresholds[i]``.  ``fpr`` and ``tpr`` are non-decreasing and
    run from 0 to 1.  ``auc`` equals the trapezoidal area under the
    stored points.
    """

    thresholds: NDArray[np.float64]
    fpr: NDArray[np.float64]
    tpr: NDArray[np.float64]
    auc: float

    def __post_init__(self) -> None:
        for arr in (self.thresholds, self.fpr, self.tpr):
            arr.setflags(write=False)


def _as_scores(values, name: str) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyInput(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def auc(clean_scores, adv_scores) -> float:
    """Mann-Whitney AUC: P(clean score > adversarial score), ties at 1/2.

    Computed via the rank-sum identity U = R_clean - n_c (n_c + 1) / 2
    on average ranks, which reproduces the pairwise count exactly
    (including ties) without the quadratic loop.
    """
    clean = _as_scores(clean_scores, "clean_scores")
    adv = _as_scores(adv_scores, "adv_scores")
    n_clean, n_adv = clean.size, adv.size
    ranks = rankdata(np.concatenate([clean, adv]), method="average")
    rank_sum = float(ranks[:n_clean].sum())
    u_clean = rank_sum - n_clean * (n_clean + 1) / 2.0
    return u_clean / (n_clean * n_adv)


def threshold_at_fpr(clean_scores, target_fpr: float) -> float:
    """Largest threshold whose realized false-positive rate stays at or
    below ``target_fpr``: the clean order statistic at floor(target * n)."""
    clean = _as_scores(clean_scores, "clean_scores")
    if not 0.0 < float(target_fpr) < 1.0:
        raise InvalidFpr(f"target_fpr must lie strictly between 0 and 1, got {target_fpr!r}")
    ordered = np.sort(clean)
    index = int(np.floor(float(target_fpr) * clean.size))
    return float(ordered[index])


def evaluate(clean_scores, adv_scores, target_fpr: float) -> DetectionReport:
    """Threshold at the target FPR, then report rates, F1 and AUC.

    Detection is strict: flagged iff ``score < threshold``.  F1 is
    2 tp / (2 tp + fp + fn), defined as 0 when that denominator is 0.
    """
    clean = _as_scores(clean_scores, "clean_scores")
    adv = _as_scores(adv_scores, "adv_scores")
    threshold = threshold_at_fpr(clean, target_fpr)
    fp = int(np.sum(clean < threshold))
    tp = int(np.sum(adv < threshold))
    tn = clean.size - fp
    fn = adv.size - tp
    denom = 2 * tp + fp + fn
    return DetectionReport(
        auc=auc(clean, adv),
        threshold=threshold,
        fpr_target=float(target_fpr),
        realized_fpr=fp / clean.size,
        tpr_at_fpr=tp / adv.size,
        f1_at_fpr=(2.0 * tp / denom) if denom > 0 else 0.0,
        n_clean=clean.size,
        n_adv=adv.size,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def roc_curve(clean_scores, adv_scores) -> RocCurve:
    """Operating points swept over every distinct score.

    Starts at (0, 0) with threshold +inf, then adds one point per
    distinct score value v in ascending order: the rates of
    ``score <= v`` among clean and adversarial samples (cutoff stored as
    ``-v``).  Ends at (1, 1).
    """
    clean = np.sort(_as_scores(clean_scores, "clean_scores"))
    adv = np.sort(_as_scores(adv_scores, "adv_scores"))
    values = np.unique(np.concatenate([clean, adv]))
    fpr = np.concatenate([[0.0], np.searchsorted(clean, values, side="right") / clean.size])
    tpr = np.concatenate([[0.0], np.searchsorted(adv, values, side="right") / adv.size])
    thresholds = np.concatenate([[np.inf], -values])
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=area)
