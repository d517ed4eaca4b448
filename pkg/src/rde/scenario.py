"""Evaluation-set assembly from attack-outcome manifests.

A manifest row describes one upstream classification attempt: the true
label, the model's prediction on the clean input, whether an attack was
attempted and whether it flipped the prediction, plus row indices into
the companion feature pack for the clean (and, when present, the
adversarial) feature vector.

Three samplers turn a record pool into a clean/adversarial evaluation
split:

* scenario one -- disjoint record sets: successful attacks from a first
  slice of a seeded shuffle become the adversarial side, a second slice
  (all of it, including misclassified records) the clean side, with the
  slice sizes walked down until the adversarial fraction lands within
  ``RATIO_TOLERANCE`` of the target ratio;
* scenario two -- one record set scored both ways: every selected record
  contributes its clean features, the successful attacks among them the
  adversarial ones;
* failed included -- scenario one's layout, but failed attempts join the
  adversarial side too (they need adversarial feature rows to do so).

Samplers draw from the *test* half of :func:`split_test_val`; the
validation half is reserved for threshold selection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientRecords,
    MalformedManifest,
    MissingFailedFeatures,
    ValidationError,
)

#: Accepted deviation between the achieved and requested adversarial fraction.
RATIO_TOLERANCE = 0.15

MANIFEST_COLUMNS = (
    "id",
    "ground_truth",
    "clean_pred",
    "attack_attempted",
    "attack_success",
    "adv_pred",
    "clean_row",
    "adv_row",
)


@dataclass(frozen=True)
class AttackRecord:
    """One manifest row.  Field names mirror the manifest columns.

    Invariants enforced on construction: success implies attempted;
    success implies the adversarial prediction and feature row are
    present; attempted implies the clean prediction was correct (attacks
    only target correctly classified inputs).
    """

    id: str
    ground_truth: int
    clean_pred: int
    attack_attempted: bool
    attack_success: bool
    clean_row: int
    adv_pred: int | None = None
    adv_row: int | None = None

    def __post_init__(self) -> None:
        if self.attack_success and not self.attack_attempted:
            raise MalformedManifest(f"record {self.id!r}: attack_success without attack_attempted")
        if self.attack_success and (self.adv_pred is None or self.adv_row is None):
            raise MalformedManifest(
                f"record {self.id!r}: successful attack needs adv_pred and adv_row"
            )
        if self.attack_attempted and self.clean_pred != self.ground_truth:
            raise MalformedManifest(
                f"record {self.id!r}: attack attempted on a misclassified input "
                f"(clean_pred {self.clean_pred} != ground_truth {self.ground_truth})"
            )
        if self.clean_row < 0 or (self.adv_row is not None and self.adv_row < 0):
            raise MalformedManifest(f"record {self.id!r}: negative feature row index")


@dataclass(frozen=True)
class ScenarioConfig:
    """Sampling knobs; defaults follow the standard benchmark setup."""

    scenario: str = "one"
    max_adv: int = 2000
    target_ratio: float = 0.5
    val_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in ("one", "two", "failed_included"):
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        if not isinstance(self.max_adv, (int, np.integer)) or self.max_adv < 1:
            raise ValidationError(f"max_adv must be a positive integer, got {self.max_adv!r}")
        if not 0.0 < self.target_ratio < 1.0:
            raise ValidationError(f"target_ratio must lie in (0, 1), got {self.target_ratio!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError(f"val_fraction must lie in [0, 1), got {self.val_fraction!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass(frozen=True)
class EvalEntry:
    """One scored sample: a feature row, the label to score it under,
    and where it came from."""

    feature_row: int
    predicted_label: int
    record_id: str
    origin: str  # "clean" | "adv_success" | "adv_failed"


@dataclass(frozen=True)
class EvalSet:
    """Assembled evaluation split."""

    clean: tuple[EvalEntry, ...]
    adv: tuple[EvalEntry, ...]

    @property
    def provenance(self) -> list[tuple[str, str]]:
        """(record id, origin) for every entry, clean side first."""
        return [(e.record_id, e.origin) for e in (*self.clean, *self.adv)]


# --- manifest I/O ------------------------------------------------------

def _parse_int(text: str, column: str, line: int) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise MalformedManifest(f"line {line}: column {column!r} is not an integer: {text!r}") from exc


def _parse_bool(text: str, column: str, line: int) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise MalformedManifest(f"line {line}: column {column!r} must be 0 or 1, got {text!r}")


def read_manifest(path) -> list[AttackRecord]:
    """Parse a manifest CSV into validated records."""
    records: list[AttackRecord] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(cell.strip() for cell in header) != MANIFEST_COLUMNS:
            raise MalformedManifest(
                f"manifest header must be exactly {','.join(MANIFEST_COLUMNS)}"
            )
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise MalformedManifest(
                    f"line {line_number}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}"
                )
            (rid, truth, clean_pred, attempted, success, adv_pred, clean_row, adv_row) = (
                cell.strip() for cell in row
            )
            if not rid:
                raise MalformedManifest(f"line {line_number}: empty id")
            records.append(
                AttackRecord(
                    id=rid,
                    ground_truth=_parse_int(truth, "ground_truth", line_number),
                    clean_pred=_parse_int(clean_pred, "clean_pred", line_number),
                    attack_attempted=_parse_bool(attempted, "attack_attempted", line_number),
                    attack_success=_parse_bool(success, "attack_success", line_number),
                    adv_pred=_parse_int(adv_pred, "adv_pred", line_number) if adv_pred else None,
                    clean_row=_parse_int(clean_row, "clean_row", line_number),
                    adv_row=_parse_int(adv_row, "adv_row", line_number) if adv_row else None,
                )
            )
    return records


def write_manifest(records, path) -> None:
    """Write records back out in the canonical column order (LF endings,
    empty cells for absent optional fields)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for record in records:
            writer.writerow(
                [
                    record.id,
                    record.ground_truth,
                    record.clean_pred,
                    int(record.attack_attempted),
                    int(record.attack_success),
                    "" if record.adv_pred is None else record.adv_pred,
                    record.clean_row,
                    "" if record.adv_row is None else record.adv_row,
                ]
            )


# --- splitting and sampling -------------------------------------------

def split_test_val(records, val_fraction: float, seed: int) -> tuple[list[AttackRecord], list[AttackRecord]]:
    """Seeded uniform shuffle; the first ceil(val_fraction * N) shuffled
    records become the validation pool.  Returns (test, val)."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValidationError(f"val_fraction must lie in [0, 1), got {val_fraction!r}")
    pool = list(records)
    order = np.random.default_rng(seed).permutation(len(pool))
    n_val = int(math.ceil(val_fraction * len(pool)))
    val = [pool[i] for i in order[:n_val]]
    test = [pool[i] for i in order[n_val:]]
    return test, val


def _pool_stats(records) -> tuple[float, float]:
    """(accuracy, success rate among attempted attacks)."""
    n = len(records)
    correct = sum(1 for r in records if r.clean_pred == r.ground_truth)
    attempted = sum(1 for r in records if r.attack_attempted)
    successes = sum(1 for r in records if r.attack_success)
    accuracy = correct / n if n else 0.0
    success_rate = successes / attempted if attempted else 0.0
    return accuracy, success_rate


def _clean_entry(record: AttackRecord) -> EvalEntry:
    return EvalEntry(record.clean_row, record.clean_pred, record.id, "clean")


def _adv_entry(record: AttackRecord) -> EvalEntry:
    if record.attack_success:
        return EvalEntry(record.adv_row, record.adv_pred, record.id, "adv_success")
    if record.adv_row is None:
        raise MissingFailedFeatures(
            f"record {record.id!r}: failed attack selected but no adversarial feature row"
        )
    label = record.adv_pred if record.adv_pred is not None else record.clean_pred
    return EvalEntry(record.adv_row, label, record.id, "adv_failed")


def _sample_disjoint(records, config: ScenarioConfig, *, include_failed: bool) -> EvalSet:
    """Shared core of scenario one and the failed-included variant."""
    pool = list(records)
    n = len(pool)
    if n == 0:
        raise InsufficientRecords("record pool is empty")
    if include_failed:
        if not any(r.attack_attempted for r in pool):
            raise InsufficientRecords("no attempted attacks in the record pool")
    elif not any(r.attack_success for r in pool):
        raise InsufficientRecords("no successful attacks in the record pool")
    # attempted attacks only target correctly classified records, so both
    # factors below are strictly positive once the checks above pass
    accuracy, success_rate = _pool_stats(pool)
    eligible_rate = 1.0 if include_failed else success_rate

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    shuffled = [pool[i] for i in order]

    def is_candidate(record: AttackRecord) -> bool:
        return record.attack_attempted if include_failed else record.attack_success

    # Prefix counts of adversarial candidates along the shuffled order so
    # the size walk below is O(1) per step.
    prefix = np.zeros(n + 1, dtype=np.int64)
    for i, record in enumerate(shuffled):
        prefix[i + 1] = prefix[i] + (1 if is_candidate(record) else 0)

    ratio = config.target_ratio
    n_first = min(n, int(math.ceil(config.max_adv / (eligible_rate * accuracy))))
    best_deviation = math.inf
    while n_first >= 1:
        n_adv = min(int(prefix[n_first]), config.max_adv)
        if n_adv > 0:
            wanted_clean = int(round(n_adv * (1.0 - ratio) / ratio))
            n_clean = min(wanted_clean, n - n_first)
            achieved = n_adv / (n_adv + n_clean)
            deviation = abs(achieved - ratio)
            best_deviation = min(best_deviation, deviation)
            if deviation <= RATIO_TOLERANCE:
                adv_entries = []
                for record in shuffled[:n_first]:
                    if is_candidate(record):
                        adv_entries.append(_adv_entry(record))
                        if len(adv_entries) == n_adv:
                            break
                clean_entries = [_clean_entry(r) for r in shuffled[n_first:n_first + n_clean]]
                return EvalSet(clean=tuple(clean_entries), adv=tuple(adv_entries))
        n_first -= 1
    raise InsufficientRecords(
        f"cannot reach adversarial fraction {ratio:g} within {RATIO_TOLERANCE:g}; "
        f"best deviation achieved was {best_deviation:g}"
    )


def sample_scenario1(records, config: ScenarioConfig) -> EvalSet:
    """Disjoint clean/adversarial record sets at the target mix ratio.

    The adversarial side holds successful attacks (capped at
    ``max_adv``) drawn from a first slice of the seeded shuffle; the
    clean side is a disjoint second slice taken whole, misclassified
    records included.  The first slice size starts at
    max_adv / (success_rate * accuracy) and walks down by one until the
    achieved adversarial fraction lands within ``RATIO_TOLERANCE`` of
    the target.
    """
    return _sample_disjoint(records, config, include_failed=False)


def sample_failed_included(records, config: ScenarioConfig) -> EvalSet:
    """Scenario one's layout with failed attempts on the adversarial side.

    Every *attempted* attack in the first slice contributes adversarial
    features (so failed attempts must carry an adversarial feature row);
    failed entries are scored under their post-attack prediction when
    recorded, else under the clean prediction.  When every attempted
    attack succeeded this reduces exactly to :func:`sample_scenario1`.
    """
    return _sample_disjoint(records, config, include_failed=True)


def sample_scenario2(records, config: ScenarioConfig) -> EvalSet:
    """One record set scored both ways.

    A single slice of the seeded shuffle sized by the expected
    adversarial yield: each selected record contributes its clean
    features, and every successful attack among them (capped at
    ``max_adv``) its adversarial features.  No ratio forcing: with a
    fully successful attack the mix is 1:1 by construction, while low
    success rates naturally give an adversarial-light mix.
    """
    pool = list(records)
    n = len(pool)
    if n == 0:
        raise InsufficientRecords("record pool is empty")
    if not any(r.attack_success for r in pool):
        raise InsufficientRecords("no successful attacks in the record pool")
    accuracy, success_rate = _pool_stats(pool)

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    shuffled = [pool[i] for i in order]

    n_take = min(n, int(math.ceil(config.max_adv / (success_rate * accuracy))))
    selected = shuffled[:n_take]
    adv_entries = []
    for record in selected:
        if record.attack_success:
            adv_entries.append(_adv_entry(record))
            if len(adv_entries) == config.max_adv:
                break
    if not adv_entries:
        raise InsufficientRecords("selected slice contains no successful attacks")
    clean_entries = [_clean_entry(r) for r in selected]
    return EvalSet(clean=tuple(clean_entries), adv=tuple(adv_entries))
