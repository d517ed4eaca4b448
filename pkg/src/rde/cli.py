"""Command-line interface.

Six subcommands cover the detector lifecycle: ``fit`` a model from a
feature pack, ``score`` rows through a fitted model, ``eval`` clean and
adversarial score files into detection metrics, ``sample`` evaluation
sets from an attack manifest, ``diagnose`` covariance spectra of packs
and models, ``aggregate`` per-seed report files into mean and standard
error.

Reported results (scores, reports, index files, model files) go to
files or stdout and are deterministic given the inputs and flags;
timing and progress go to stderr only.  Exit codes: 0 on success, 2 for
validation problems (bad inputs, malformed files), 3 for numerical
failures.  ``--threads`` is accepted on every subcommand for interface
compatibility; the implementation is single-threaded, so the flag does
not affect any output byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, detector, io_formats, metrics, scenario
from .detector import DetectorConfig
from .errors import MalformedManifest, NumericError, RdeError, ValidationError
from .gaussian import spectrum_diagnostics
from .kpca import KernelConfig
from .mcd import McdConfig, resolve_h

log = logging.getLogger("rde")


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _write_text(path, text: str) -> None:
    io_formats._atomic_write_bytes(Path(path), text.encode("utf-8"))


def _read_score_file(path) -> np.ndarray:
    text = io_formats._read_bytes(Path(path)).decode("utf-8")
    values = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise ValidationError(f"{path}: line {line_number} is not a number: {line!r}") from exc
    return np.asarray(values, dtype=np.float64)


def _resolve_labels(args, pack: io_formats.FeatureMatrix) -> np.ndarray:
    if getattr(args, "labels", None):
        labels = io_formats.read_labels_file(args.labels)
        if labels.shape[0] != pack.features.shape[0]:
            raise ValidationError(
                f"{args.labels}: {labels.shape[0]} labels for {pack.features.shape[0]} rows"
            )
        return labels
    if pack.labels is None:
        raise ValidationError("no labels available: pass --labels or use a labeled pack")
    return pack.labels


# --- fit ---------------------------------------------------------------

def _cmd_fit(args) -> int:
    pack = io_formats.read_feature_pack(args.pack)
    labels = _resolve_labels(args, pack)
    if args.kernel == "linear":
        kernel = KernelConfig("linear")
    elif args.gamma is not None:
        kernel = KernelConfig("rbf", gamma=args.gamma)
    else:
        kernel = None  # rbf with gamma = 1 / n_features, resolved at fit time
    config = DetectorConfig(
        variant=args.variant,
        p=args.p,
        kernel=kernel,
        mcd=McdConfig(
            h=args.h,
            seed=args.seed,
            apply_correction=not args.no_correction,
            apply_reweighting=not args.no_reweighting,
        ),
        train_subsample_cap=args.subsample_cap,
        stratified_subsample=args.stratified,
        seed=args.seed,
    )
    model = detector.fit(pack.features, labels, config)
    io_formats.save_model(model, args.output)
    effective_p = model.kpca.p if model.kpca is not None else model.gaussian_dim
    print(
        f"fit: variant={config.variant} classes={len(model.classes)} "
        f"effective_p={effective_p} fit_seconds={model.fit_seconds:.3f}",
        file=sys.stderr,
    )
    for cls in model.classes:
        count = model.class_counts[cls]
        line = f"fit: class={cls} count={count}"
        if config.variant == "rde":
            applied_h = config.mcd.h if config.mcd.h is not None else resolve_h(count, model.gaussian_dim)
            line += f" h={applied_h}"
        print(line, file=sys.stderr)
    return 0


# --- score -------------------------------------------------------------

def _read_rows_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Index file: one 'feature_row predicted_label' pair per line."""
    text = io_formats._read_bytes(Path(path)).decode("utf-8")
    rows, labels = [], []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"{path}: line {line_number} must be 'row label', got {line!r}")
        try:
            rows.append(int(parts[0]))
            labels.append(int(parts[1]))
        except ValueError as exc:
            raise ValidationError(f"{path}: line {line_number} is not an integer pair: {line!r}") from exc
    return np.asarray(rows, dtype=np.int64), np.asarray(labels, dtype=np.int64)


def _cmd_score(args) -> int:
    started = time.perf_counter()
    model = io_formats.load_model(args.model)
    pack = io_formats.read_feature_pack(args.pack)
    if args.rows:
        rows, labels = _read_rows_file(args.rows)
        if rows.size and (rows.min() < 0 or rows.max() >= pack.features.shape[0]):
            raise ValidationError(
                f"{args.rows}: row index out of range for a pack with {pack.features.shape[0]} rows"
            )
        features = pack.features[rows]
    else:
        labels = _resolve_labels(args, pack)
        features = pack.features
    if features.shape[0] == 0:
        _write_text(args.output, "")
        print("score: warning: no rows to score", file=sys.stderr)
        return 0
    scores = detector.score(model, features, labels)
    _write_text(args.output, "".join(_fmt(s) + "\n" for s in scores))
    print(
        f"score: rows={scores.shape[0]} model={args.model} pack_sha256={pack.sha256} "
        f"seconds={time.perf_counter() - started:.3f}",
        file=sys.stderr,
    )
    return 0


# --- eval --------------------------------------------------------------

def _cmd_eval(args) -> int:
    clean = _read_score_file(args.clean_scores)
    adv = _read_score_file(args.adv_scores)
    report = metrics.evaluate(clean, adv, args.fpr)
    if args.roc:
        curve = metrics.roc_curve(clean, adv)
        lines = "".join(f"{_fmt(f)} {_fmt(t)}\n" for f, t in zip(curve.fpr, curve.tpr))
        _write_text(args.roc, lines)
    out = [
        f"n_clean={report.n_clean}",
        f"n_adv={report.n_adv}",
        f"fpr_target={_fmt(report.fpr_target)}",
        f"threshold={_fmt(report.threshold)}",
        f"realized_fpr={_fmt(report.realized_fpr)}",
        f"tpr_at_fpr={_fmt(report.tpr_at_fpr)}",
        f"f1_at_fpr={_fmt(report.f1_at_fpr)}",
        f"auc={_fmt(report.auc)}",
        f"tp={report.tp}",
        f"fp={report.fp}",
        f"tn={report.tn}",
        f"fn={report.fn}",
    ]
    sys.stdout.write("\n".join(out) + "\n")
    return 0


# --- sample ------------------------------------------------------------

_SCENARIOS = {
    "1": ("one", scenario.sample_scenario1),
    "2": ("two", scenario.sample_scenario2),
    "failed": ("failed_included", scenario.sample_failed_included),
}


def _cmd_sample(args) -> int:
    records = scenario.read_manifest(args.manifest)
    name, sampler = _SCENARIOS[args.scenario]
    config = scenario.ScenarioConfig(
        scenario=name,
        max_adv=args.max_adv,
        target_ratio=args.target_ratio,
        val_fraction=args.val_fraction,
        seed=args.seed,
    )
    test_records, val_records = scenario.split_test_val(records, args.val_fraction, args.seed)
    evalset = sampler(test_records, config)

    def index_lines(entries):
        return "".join(f"{e.feature_row} {e.predicted_label}\n" for e in entries)

    _write_text(args.output + ".clean", index_lines(evalset.clean))
    _write_text(args.output + ".adv", index_lines(evalset.adv))
    _write_text(
        args.output + ".provenance",
        "".join(f"{rid} {origin}\n" for rid, origin in evalset.provenance),
    )
    n_failed = sum(1 for e in evalset.adv if e.origin == "adv_failed")
    out = [
        f"n_records={len(records)}",
        f"n_test_records={len(test_records)}",
        f"n_val_records={len(val_records)}",
        f"n_clean={len(evalset.clean)}",
        f"n_adv={len(evalset.adv)}",
        f"n_adv_success={len(evalset.adv) - n_failed}",
        f"n_adv_failed={n_failed}",
    ]
    sys.stdout.write("\n".join(out) + "\n")
    return 0


# --- diagnose ----------------------------------------------------------

def _spectrum_fields(report) -> str:
    return (
        f"lambda_max={_fmt(report.lambda_max)} lambda_min={_fmt(report.lambda_min)} "
        f"condition_number={_fmt(report.condition_number)} "
        f"condition_bound_scale={_fmt(report.condition_bound_scale)} "
        f"n_near_zero={report.n_near_zero}"
    )


def _sniff_kind(path) -> str:
    raw = io_formats._read_bytes(Path(path))
    try:
        whole = json.loads(raw.decode("utf-8"))
        if isinstance(whole, dict) and whole.get("format") == io_formats.PACK_FORMAT:
            return "pack"
    except (UnicodeDecodeError, json.JSONDecodeError):
        pass
    newline = raw.find(b"\n")
    if newline >= 0:
        try:
            header = json.loads(raw[:newline].decode("utf-8"))
            if isinstance(header, dict) and header.get("format") == io_formats.MODEL_FORMAT:
                return "model"
        except (UnicodeDecodeError, json.JSONDecodeError):
            pass
    raise MalformedManifest(f"{path}: neither a feature pack nor a model file")


def _cmd_diagnose(args) -> int:
    lines = []
    for path in args.targets:
        kind = _sniff_kind(path)
        if kind == "pack":
            pack = io_formats.read_feature_pack(path)
            X = np.asarray(pack.features, dtype=np.float64)
            if X.shape[0] < 2:
                raise ValidationError(f"{path}: need at least 2 rows to diagnose a pack")
            centered = X - X.mean(axis=0)
            cov = centered.T @ centered / (X.shape[0] - 1)
            cov = 0.5 * (cov + cov.T)
            report = spectrum_diagnostics(cov)
            lines.append(
                f"target={path} kind=pack n_rows={X.shape[0]} n_cols={X.shape[1]} "
                + _spectrum_fields(report)
            )
        else:
            model = io_formats.load_model(path)
            for cls in model.classes:
                params = model.class_params[cls]
                report = spectrum_diagnostics(params.covariance)
                lines.append(
                    f"target={path} kind=model class={cls} dim={params.dim} "
                    + _spectrum_fields(report)
                    + f" jitter={_fmt(params.jitter)} log_det={_fmt(params.log_det)}"
                )
    sys.stdout.write("".join(line + "\n" for line in lines))
    return 0


# --- aggregate ---------------------------------------------------------

def _read_report(path) -> dict[str, float]:
    text = io_formats._read_bytes(Path(path)).decode("utf-8")
    table: dict[str, float] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            table[key] = float(value.strip())
        except ValueError as exc:
            raise ValidationError(f"{path}: line {line_number} has non-numeric value: {line!r}") from exc
    if not table:
        raise ValidationError(f"{path}: no key=value lines found")
    return table


def _cmd_aggregate(args) -> int:
    tables = [_read_report(path) for path in args.reports]
    keys = list(tables[0])
    for path, table in zip(args.reports[1:], tables[1:]):
        if set(table) != set(keys):
            raise ValidationError(f"{path}: report keys differ from {args.reports[0]}")
    out = [f"n_reports={len(tables)}"]
    for key in keys:
        values = np.asarray([table[key] for table in tables], dtype=np.float64)
        mean = float(values.mean())
        se = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        out.append(f"{key}.mean={_fmt(mean)}")
        out.append(f"{key}.se={_fmt(se)}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


# --- parser ------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="accepted for compatibility; computation is single-threaded and results do not depend on this",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rde",
        description="Adversarial input detection via robust density estimation over classifier features.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_fit = sub.add_parser("fit", help="fit a detector on a labeled feature pack")
    p_fit.add_argument("pack", help="feature-pack manifest of training rows")
    p_fit.add_argument("--labels", help="labels file overriding the pack's own labels")
    p_fit.add_argument("-o", "--output", required=True, help="model file to write")
    p_fit.add_argument("--variant", choices=detector.VARIANTS, default="rde")
    p_fit.add_argument("--p", type=int, default=100, help="projection components (default 100)")
    p_fit.add_argument("--kernel", choices=("rbf", "linear"), default="rbf")
    p_fit.add_argument("--gamma", type=float, default=None, help="RBF width (default 1 / n_features)")
    p_fit.add_argument("--subsample-cap", type=int, default=8000, help="max rows used to fit the projection")
    p_fit.add_argument("--stratified", action="store_true", help="stratify the projection subsample by class")
    p_fit.add_argument("--h", type=int, default=None, help="robust support size (default ceil((n+p+1)/2))")
    p_fit.add_argument("--no-correction", action="store_true", help="skip the consistency correction")
    p_fit.add_argument("--no-reweighting", action="store_true", help="skip the reweighting refit")
    _add_common(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_score = sub.add_parser("score", help="score pack rows through a fitted model")
    p_score.add_argument("model", help="model file from 'fit'")
    p_score.add_argument("pack", help="feature pack holding the rows to score")
    p_score.add_argument("--labels", help="labels file with one predicted label per pack row")
    p_score.add_argument("--rows", help="index file with 'feature_row predicted_label' lines")
    p_score.add_argument("-o", "--output", required=True, help="score file to write (one score per line)")
    _add_common(p_score)
    p_score.set_defaults(func=_cmd_score)

    p_eval = sub.add_parser("eval", help="detection metrics from clean and adversarial score files")
    p_eval.add_argument("clean_scores", help="score file for clean samples")
    p_eval.add_argument("adv_scores", help="score file for adversarial samples")
    p_eval.add_argument("--fpr", type=float, default=0.1, help="target false-positive rate (default 0.1)")
    p_eval.add_argument("--roc", help="also write the ROC curve ('fpr tpr' lines) to this file")
    _add_common(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_sample = sub.add_parser("sample", help="assemble evaluation sets from an attack manifest")
    p_sample.add_argument("manifest", help="attack-outcome manifest CSV")
    p_sample.add_argument("--scenario", choices=tuple(_SCENARIOS), default="1")
    p_sample.add_argument("--max-adv", type=int, default=2000, help="cap on adversarial samples (default 2000)")
    p_sample.add_argument("--target-ratio", type=float, default=0.5, help="adversarial fraction target (default 0.5)")
    p_sample.add_argument("--val-fraction", type=float, default=0.3, help="validation split fraction (default 0.3)")
    p_sample.add_argument("-o", "--output", required=True, help="prefix for .clean/.adv/.provenance index files")
    _add_common(p_sample)
    p_sample.set_defaults(func=_cmd_sample)

    p_diag = sub.add_parser("diagnose", help="covariance spectrum reports for packs and models")
    p_diag.add_argument("targets", nargs="+", help="feature packs and/or model files")
    _add_common(p_diag)
    p_diag.set_defaults(func=_cmd_diagnose)

    p_agg = sub.add_parser("aggregate", help="mean and standard error across key=value report files")
    p_agg.add_argument("reports", nargs="+", help="report files from 'eval' runs with different seeds")
    _add_common(p_agg)
    p_agg.set_defaults(func=_cmd_aggregate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 2
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
