"""On-disk formats: feature packs and fitted detector models.

A *feature pack* is a small JSON manifest next to a raw binary payload:
``<name>`` holds the manifest, ``<name>.bin`` the float32 little-endian
row-major matrix, and (optionally) ``<name>.labels`` one integer label
per line.  The manifest records the shape, dtype tag, payload SHA-256
and creator, so a reader can verify integrity before touching a byte of
data.

A *model file* is self-contained: a single-line JSON header (format
tag, version, detector configuration, per-class scalar metadata and a
section table with shapes and SHA-256 digests) followed by the
concatenated float64 little-endian section payloads in table order.
Floats that live in the header (log-determinants, jitters, kernel
gamma, centering mean) round-trip exactly through JSON's shortest-repr
encoding, and the Cholesky factors are serialized rather than
recomputed, so a loaded model scores bit-identically to the fitted one.

All writes go through a temporary file in the destination directory
followed by an atomic rename, so a crash cannot leave a half-written
artifact under the final name.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .detector import DetectorConfig, RdeModel
from .errors import (
    DigestMismatch,
    DimensionMismatch,
    IoFailure,
    MalformedManifest,
    SizeMismatch,
    TruncatedSection,
    UnknownDtype,
    ValidationError,
    VersionMismatch,
)
from .gaussian import GaussianParams
from .kpca import KernelConfig, KpcaModel
from .mcd import McdConfig

PACK_FORMAT = "feature-pack"
PACK_VERSION = 1
MODEL_FORMAT = "rde-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class FeatureMatrix:
    """In-memory view of a feature pack: float32 rows plus optional labels.

    ``sha256`` is the digest of the binary payload (filled in by the
    reader and writer; ``None`` for matrices that never touched disk).
    """

    features: NDArray[np.float32]
    labels: NDArray[np.int64] | None = None
    sha256: str | None = None

    def __post_init__(self) -> None:
        self.features.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a sibling temp file and rename."""
    path = Path(path)
    handle = None
    try:
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        handle = os.fdopen(fd, "wb")
        handle.write(payload)
        handle.close()
        handle = None
        os.replace(tmp_name, path)
    except OSError as exc:
        if handle is not None:
            handle.close()
        try:
            os.unlink(tmp_name)
        except (OSError, UnboundLocalError):
            pass
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


# --- feature packs -----------------------------------------------------

def write_feature_pack(features, path, labels=None, creator: str = "rde") -> str:
    """Write a feature pack; returns the payload SHA-256.

    ``features`` is coerced to float32; ``labels``, when given, must
    have one integer per row.
    """
    arr = np.asarray(features)
    if arr.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("features contain non-finite entries after float32 conversion")

    label_arr = None
    if labels is not None:
        label_arr = np.asarray(labels)
        if label_arr.ndim != 1 or label_arr.shape[0] != arr.shape[0]:
            raise DimensionMismatch(
                f"labels must be 1-D with {arr.shape[0]} entries, got shape {label_arr.shape}"
            )
        label_arr = label_arr.astype(np.int64)

    path = Path(path)
    payload = arr.tobytes(order="C")
    digest = hashlib.sha256(payload).hexdigest()
    manifest = {
        "format": PACK_FORMAT,
        "version": PACK_VERSION,
        "creator": creator,
        "n_rows": int(arr.shape[0]),
        "n_cols": int(arr.shape[1]),
        "dtype": "f32",
        "data_file": path.name + ".bin",
        "sha256": digest,
        "labels_file": path.name + ".labels" if label_arr is not None else None,
    }
    _atomic_write_bytes(path.with_name(path.name + ".bin"), payload)
    if label_arr is not None:
        lines = "".join(f"{int(v)}\n" for v in label_arr)
        _atomic_write_bytes(path.with_name(path.name + ".labels"), lines.encode("ascii"))
    _atomic_write_bytes(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return digest


def read_labels_file(path) -> NDArray[np.int64]:
    """Read a labels file: one integer per line."""
    text = _read_bytes(Path(path)).decode("utf-8")
    values = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(int(line))
        except ValueError as exc:
            raise MalformedManifest(f"{path}: line {line_number} is not an integer: {line!r}") from exc
    return np.asarray(values, dtype=np.int64)


def read_feature_pack(path) -> FeatureMatrix:
    """Read and verify a feature pack."""
    path = Path(path)
    raw = _read_bytes(path)
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"{path}: manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != PACK_FORMAT:
        raise MalformedManifest(f"{path}: not a feature-pack manifest")
    if manifest.get("version") != PACK_VERSION:
        raise VersionMismatch(f"{path}: unsupported feature-pack version {manifest.get('version')!r}")
    for key in ("n_rows", "n_cols", "dtype", "data_file", "sha256"):
        if key not in manifest:
            raise MalformedManifest(f"{path}: manifest is missing key {key!r}")
    if manifest["dtype"] != "f32":
        raise UnknownDtype(f"{path}: unsupported dtype {manifest['dtype']!r}")
    n_rows, n_cols = int(manifest["n_rows"]), int(manifest["n_cols"])
    if n_rows < 0 or n_cols < 0:
        raise MalformedManifest(f"{path}: negative shape {n_rows} x {n_cols}")

    payload = _read_bytes(path.with_name(str(manifest["data_file"])))
    expected = n_rows * n_cols * 4
    if len(payload) != expected:
        raise SizeMismatch(
            f"{path}: data file holds {len(payload)} bytes, manifest implies {expected}"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["sha256"]:
        raise DigestMismatch(f"{path}: data digest {digest} != manifest {manifest['sha256']}")
    features = np.frombuffer(payload, dtype="<f4").reshape(n_rows, n_cols).copy()

    labels = None
    if manifest.get("labels_file"):
        labels = read_labels_file(path.with_name(str(manifest["labels_file"])))
        if labels.shape[0] != n_rows:
            raise SizeMismatch(
                f"{path}: labels file has {labels.shape[0]} entries for {n_rows} rows"
            )
    return FeatureMatrix(features=features, labels=labels, sha256=digest)


# --- model files -------------------------------------------------------

def _kernel_to_json(kernel: KernelConfig | None):
    if kernel is None:
        return None
    return {"kind": kernel.kind, "gamma": kernel.gamma}


def _kernel_from_json(blob) -> KernelConfig | None:
    if blob is None:
        return None
    return KernelConfig(kind=blob["kind"], gamma=blob["gamma"])


def _config_to_json(config: DetectorConfig) -> dict:
    return {
        "variant": config.variant,
        "p": config.p,
        "kernel": _kernel_to_json(config.kernel),
        "mcd": {
            "h": config.mcd.h,
            "n_initial_subsets": config.mcd.n_initial_subsets,
            "n_cstep_short": config.mcd.n_cstep_short,
            "n_finalists": config.mcd.n_finalists,
            "max_csteps": config.mcd.max_csteps,
            "seed": config.mcd.seed,
            "apply_correction": config.mcd.apply_correction,
            "apply_reweighting": config.mcd.apply_reweighting,
        },
        "train_subsample_cap": config.train_subsample_cap,
        "stratified_subsample": config.stratified_subsample,
        "seed": config.seed,
    }


def _config_from_json(blob: dict) -> DetectorConfig:
    mcd = blob["mcd"]
    return DetectorConfig(
        variant=blob["variant"],
        p=blob["p"],
        kernel=_kernel_from_json(blob["kernel"]),
        mcd=McdConfig(
            h=mcd["h"],
            n_initial_subsets=mcd["n_initial_subsets"],
            n_cstep_short=mcd["n_cstep_short"],
            n_finalists=mcd["n_finalists"],
            max_csteps=mcd["max_csteps"],
            seed=mcd["seed"],
            apply_correction=mcd["apply_correction"],
            apply_reweighting=mcd["apply_reweighting"],
        ),
        train_subsample_cap=blob["train_subsample_cap"],
        stratified_subsample=blob["stratified_subsample"],
        seed=blob["seed"],
    )


def save_model(model: RdeModel, path) -> None:
    """Serialize a fitted detector to one self-contained file.

    The wall-clock fit time is deliberately not stored: serialized
    bytes are a pure function of the fitted parameters, so refitting
    with the same data and config reproduces the file exactly.
    """
    sections: list[tuple[str, NDArray[np.float64]]] = []
    kpca_meta = None
    if model.kpca is not None:
        kpca_meta = {
            "effective_p": model.kpca.p,
            "kernel": _kernel_to_json(model.kpca.kernel),
            "center_total_mean": model.kpca.center_total_mean,
        }
        sections.append(("kpca.train_vectors", model.kpca.train_vectors))
        sections.append(("kpca.eigenvalues", model.kpca.eigenvalues))
        sections.append(("kpca.coefficients", model.kpca.coefficients))
        sections.append(("kpca.center_row_means", model.kpca.center_row_means))

    class_meta = {}
    for cls in model.classes:
        params = model.class_params[cls]
        class_meta[str(cls)] = {
            "count": model.class_counts.get(cls, 0),
            "log_det": params.log_det,
            "jitter": params.jitter,
        }
        sections.append((f"class.{cls}.mean", params.mean))
        sections.append((f"class.{cls}.covariance", params.covariance))
        sections.append((f"class.{cls}.chol_lower", params.chol_lower))

    payloads = []
    table = []
    for name, array in sections:
        blob = np.ascontiguousarray(array, dtype="<f8").tobytes(order="C")
        payloads.append(blob)
        table.append(
            {
                "name": name,
                "shape": list(array.shape),
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        )

    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": _config_to_json(model.config),
        "classes": model.classes,
        "input_dim": model.input_dim,
        "gaussian_dim": model.gaussian_dim,
        "kpca": kpca_meta,
        "class_meta": class_meta,
        "sections": table,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    _atomic_write_bytes(Path(path), line.encode("utf-8") + b"".join(payloads))


def load_model(path) -> RdeModel:
    """Read a model file back; inverse of :func:`save_model`.

    Stored factors are used as-is (no refactorization), so the loaded
    model scores bit-identically to the one that was saved.
    """
    raw = _read_bytes(Path(path))
    newline = raw.find(b"\n")
    if newline < 0:
        raise MalformedManifest(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != MODEL_FORMAT:
        raise MalformedManifest(f"{path}: not a model file")
    if header.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"{path}: unsupported model version {header.get('version')!r}")

    body = raw[newline + 1:]
    offset = 0
    arrays: dict[str, NDArray[np.float64]] = {}
    for entry in header.get("sections", []):
        name = entry["name"]
        shape = tuple(int(v) for v in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise TruncatedSection(f"{path}: section {name!r} needs {nbytes} bytes, got {len(chunk)}")
        digest = hashlib.sha256(chunk).hexdigest()
        if digest != entry["sha256"]:
            raise DigestMismatch(f"{path}: section {name!r} digest mismatch")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise MalformedManifest(f"{path}: {len(body) - offset} trailing bytes after last section")

    def take(name: str) -> NDArray[np.float64]:
        if name not in arrays:
            raise MalformedManifest(f"{path}: missing section {name!r}")
        return arrays[name]

    try:
        config = _config_from_json(header["config"])
        kpca_model = None
        if header.get("kpca") is not None:
            meta = header["kpca"]
            kpca_model = KpcaModel(
                train_vectors=take("kpca.train_vectors"),
                kernel=_kernel_from_json(meta["kernel"]),
                p=int(meta["effective_p"]),
                eigenvalues=take("kpca.eigenvalues"),
                coefficients=take("kpca.coefficients"),
                center_row_means=take("kpca.center_row_means"),
                center_total_mean=float(meta["center_total_mean"]),
            )
        class_params: dict[int, GaussianParams] = {}
        class_counts: dict[int, int] = {}
        for cls in header["classes"]:
            meta = header["class_meta"][str(cls)]
            class_params[int(cls)] = GaussianParams(
                mean=take(f"class.{cls}.mean"),
                covariance=take(f"class.{cls}.covariance"),
                chol_lower=take(f"class.{cls}.chol_lower"),
                log_det=float(meta["log_det"]),
                jitter=float(meta["jitter"]),
            )
            class_counts[int(cls)] = int(meta["count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifest(f"{path}: malformed header: {exc!r}") from exc

    return RdeModel(
        config=config,
        kpca=kpca_model,
        class_params=class_params,
        class_counts=class_counts,
        fit_seconds=0.0,
    )
