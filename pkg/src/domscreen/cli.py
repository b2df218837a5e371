"""Command line entry point: ``domscreen <subcommand> [options]``.

Exit status is 0 on success, 2 when the input fails validation and 3 on any
other error. Diagnostics go to stderr, data to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import __version__
from .clustering import (
    FeatureMatrix, TiedColumnWarning, constant_columns, correlation_matrix, cut, format_dendrogram, hcluster,
    name_groups,
)
from .dataset import (
    REQUIRED_COLUMNS, LabeledSet, auction_ok, diversity_split, parse_csv, parse_row, write_csv,
    write_error_report,
)
from .enrichment import build_providers, enrich
from .errors import ConfigurationError, DomscreenError, ModelFormatError, ValidationError
from .features import DESCRIPTOR_NAMES, NON_VALUABLE, VALUABLE, apply_scaling, current_year, descriptor_matrix, fit_scaling
from .metrics import REPORT_COLUMNS, confusion, format_table, report_row
from .svm import KernelSpec, SvmModel, TrainConfig, classify, grid_search, load_model, save_model, smo_train
from .synth import synth_generate

log = logging.getLogger("domscreen")

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 2, 3
DEFAULT_BATCH = 10_000
# option values that look like negative numbers to argparse
_GRID_FLAGS = ("--c-grid", "--gamma-grid")


def parse_grid(text: str) -> tuple[int, ...]:
    """``"start:end:step"`` to the inclusive exponent sequence."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigurationError(f"grid {text!r} is not of the form start:end:step")
    try:
        start, end, step = (int(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"grid {text!r} must contain integers") from None
    if step == 0:
        raise ConfigurationError(f"grid {text!r} has a zero step")
    values = tuple(range(start, end + (1 if step > 0 else -1), step))
    if not values:
        raise ConfigurationError(f"grid {text!r} is empty")
    return values


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    input: Path | None = None
    output: Path | None = None
    model: Path | None = None
    c_grid: tuple[int, ...] = parse_grid("-5:15:2")
    gamma_grid: tuple[int, ...] = parse_grid("-15:3:2")
    folds: int = 5
    seed: int = 0
    reference_year: int | None = None
    providers: str = ""
    width: int = 1
    batch_size: int = DEFAULT_BATCH
    all_rows: bool = False
    filter_auctions: bool = False

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigurationError(f"--folds must be at least 2, got {self.folds}")
        if self.width < 1:
            raise ConfigurationError(f"--width must be at least 1, got {self.width}")
        if self.batch_size < 1:
            raise ConfigurationError(f"--batch-size must be at least 1, got {self.batch_size}")

    @property
    def year(self) -> int:
        return current_year() if self.reference_year is None else self.reference_year


def _require(path: Path | None, flag: str) -> Path:
    if path is None:
        raise ConfigurationError(f"{flag} is required")
    return path


def _existing(path: Path | None, flag: str) -> Path:
    path = _require(path, flag)
    if not path.is_file():
        raise ValidationError(f"{flag} {path} does not exist")
    return path


def _overlay(cfg: RunConfig):
    if not cfg.providers:
        return None
    providers = build_providers(cfg.providers, cache_dir=os.environ.get("DOMSCREEN_CACHE"))
    return lambda domain: enrich(domain, providers)


def _load_labeled(cfg: RunConfig, report_path: Path) -> LabeledSet:
    """Parse a labelled CSV; any invalid row aborts after writing the row report."""
    parsed = parse_csv(_existing(cfg.input, "--input"), cfg.year, _overlay(cfg))
    for w in parsed.warnings:
        log.debug("line %d (%s): %s", w.line, w.domain, w.message)
    if parsed.errors:
        write_error_report(parsed.errors, report_path)
        raise ValidationError(f"{len(parsed.errors)} invalid rows in {cfg.input}; see {report_path}")
    records = parsed.filtered(cfg.filter_auctions)
    if not records:
        raise ValidationError(f"{cfg.input} contains no usable records")
    return LabeledSet.from_records(records)


# --------------------------------------------------------------------------- subcommands


def cmd_ingest(cfg: RunConfig) -> int:
    source = _existing(cfg.input, "--input")
    output = _require(cfg.output, "--output")
    parsed = parse_csv(source, cfg.year, _overlay(cfg))
    records = parsed.filtered(cfg.filter_auctions)
    write_csv(records, output)
    print(f"{len(records)} valid, {len(parsed.errors)} invalid, {len(parsed.warnings)} warnings", file=sys.stderr)
    if parsed.errors:
        report = output.with_name(output.name + ".errors.csv")
        write_error_report(parsed.errors, report)
        print(f"row-level report: {report}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _numeric_matrix(path: Path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = [c for c in (reader.fieldnames or []) if c != "domain"]
        rows = []
        for row in reader:
            try:
                rows.append([float(row[c]) for c in names])
            except (TypeError, ValueError):
                raise ValidationError(f"line {reader.line_num}: non-numeric cell") from None
    return FeatureMatrix(np.array(rows).reshape(len(rows), len(names)), tuple(names))


def cmd_cluster_report(cfg: RunConfig) -> int:
    source = _existing(cfg.input, "--input")
    with open(source, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    records_mode = all(c in header for c in REQUIRED_COLUMNS)
    if records_mode:
        parsed = parse_csv(source, cfg.year)
        if parsed.errors:
            raise ValidationError(f"{len(parsed.errors)} invalid rows in {source}")
        matrix = FeatureMatrix.from_records(parsed.filtered(cfg.filter_auctions))
    else:
        matrix = _numeric_matrix(source)
    for name in constant_columns(matrix):
        print(f"warning: column {name} is constant; its correlations are reported as 0", file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TiedColumnWarning)
        rho = correlation_matrix(matrix)
        tree = hcluster(matrix)
    print(format_dendrogram(tree))
    k = min(5, len(matrix.names))
    groups = cut(tree, k)
    labels = name_groups(groups, matrix.names) if records_mode else [None] * len(groups)
    print(f"\nk={k} cut:")
    for i, (group, label) in enumerate(zip(groups, labels), 1):
        members = ", ".join(matrix.names[j] for j in group)
        print(f"  {i}. {label or 'group ' + str(i)}: {members}")
    if cfg.output is not None:
        with open(cfg.output, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("feature",) + matrix.names)
            for name, row in zip(matrix.names, rho):
                writer.writerow([name] + [format(v, ".6f") for v in row])
    return EXIT_OK


def _check_classes(data: LabeledSet) -> None:
    present = set(data.labels)
    for cls in (VALUABLE, NON_VALUABLE):
        if cls not in present:
            raise ValidationError(f"training data has no {cls} records; both classes are required")


def cmd_train(cfg: RunConfig) -> int:
    model_path = _require(cfg.model, "--model")
    data = _load_labeled(cfg, model_path.with_name(model_path.name + ".errors.csv"))
    _check_classes(data)
    descriptors = descriptor_matrix(data.records, cfg.year)
    scaling = fit_scaling(descriptors, cfg.year)
    X = apply_scaling(scaling, descriptors)
    y = data.y
    grid = grid_search(X, y, cfg.c_grid, cfg.gamma_grid, folds=cfg.folds, seed=cfg.seed, workers=cfg.width)
    log.info("best C=%g gamma=%g cv accuracy %.4f", grid.best_C, grid.best_gamma, grid.best_accuracy)
    model = smo_train(X, y, TrainConfig(C=grid.best_C, kernel=KernelSpec("rbf", gamma=grid.best_gamma)), scaling)
    save_model(model, model_path)
    cv_path = cfg.output or model_path.with_name(model_path.name + ".cv.csv")
    with open(cv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("log2_C", "log2_gamma", "C", "gamma", "cv_accuracy"))
        for a, b, C, gamma, acc in grid.table:
            writer.writerow((a, b, repr(C), repr(gamma), format(acc, ".6f")))
    print(f"trained on {len(data)} records: C=2^{int(np.log2(grid.best_C))} gamma=2^{int(np.log2(grid.best_gamma))} "
          f"cv accuracy {grid.best_accuracy:.4f}, {len(model.dual_coeffs)} support vectors", file=sys.stderr)
    return EXIT_OK


def _load(path: Path | None) -> SvmModel:
    model = load_model(_existing(path, "--model"))
    if model.scaling is None:
        raise ValidationError("model has no scaling parameters")
    return model


def cmd_evaluate(cfg: RunConfig) -> int:
    model = _load(cfg.model)
    source = _existing(cfg.input, "--input")
    cfg = replace(cfg, reference_year=cfg.reference_year or model.scaling.reference_year)
    data = _load_labeled(cfg, source.with_name(source.stem + ".errors.csv") if cfg.output is None
                         else cfg.output.with_name(cfg.output.name + ".errors.csv"))
    X = apply_scaling(model.scaling, descriptor_matrix(data.records, cfg.year))
    predictions = [classify(v) for v in model.decision_values(X)]
    counts = confusion(predictions, data.labels)
    name = source.stem
    print(format_table({name: counts}))
    if cfg.output is not None:
        row = report_row(counts)
        with open(cfg.output, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("set",) + REPORT_COLUMNS)
            writer.writerow([name] + ["" if row[c] is None else (row[c] if isinstance(row[c], int)
                                                                  else format(row[c], ".6f"))
                                      for c in REPORT_COLUMNS])
    return EXIT_OK


# screening runs in worker processes; the model is shipped once per worker
_WORKER_MODEL: SvmModel | None = None
_WORKER_YEAR = 0


def _init_worker(model: SvmModel, year: int) -> None:
    global _WORKER_MODEL, _WORKER_YEAR
    _WORKER_MODEL, _WORKER_YEAR = model, year


def _screen_batch(rows: list[dict], filter_auctions: bool) -> tuple[np.ndarray, list[str], np.ndarray, int, int]:
    """Classify one batch: returns input positions, domains, [value, 5 descriptors], skipped, filtered."""
    model, year = _WORKER_MODEL, _WORKER_YEAR
    kept, records, skipped, filtered = [], [], 0, 0
    for pos, row in enumerate(rows):
        if filter_auctions and not auction_ok(row):
            filtered += 1
            continue
        try:
            record, _ = parse_row(row, year)
        except ValidationError:
            skipped += 1
            continue
        kept.append(pos)
        records.append(record)
    if not records:
        return np.empty(0, dtype=np.int64), [], np.empty((0, 6)), skipped, filtered
    X = apply_scaling(model.scaling, descriptor_matrix(records, year))
    values = model.decision_values(X)
    return np.array(kept, dtype=np.int64), [r.name for r in records], np.column_stack([values, X]), skipped, filtered


def _row_batches(path: Path, size: int) -> Iterator[list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"missing required columns: {', '.join(missing)}")
        while True:
            batch = list(itertools.islice(reader, size))
            if not batch:
                return
            yield batch


def cmd_screen(cfg: RunConfig) -> int:
    model = _load(cfg.model)
    source = _existing(cfg.input, "--input")
    output = _require(cfg.output, "--output")
    year = cfg.reference_year or model.scaling.reference_year
    batches = _row_batches(source, cfg.batch_size)
    if cfg.width > 1:
        pool = ProcessPoolExecutor(cfg.width, initializer=_init_worker, initargs=(model, year))
        results = pool.map(_screen_batch, batches, itertools.repeat(cfg.filter_auctions))
    else:
        pool = None
        _init_worker(model, year)
        results = (_screen_batch(b, cfg.filter_auctions) for b in batches)

    keys, domains, table = [], [], []
    screened = skipped = filtered = 0
    offset = 0
    try:
        # map() yields in submission order, so positions stay in input order
        for positions, names, values, bad, dropped in results:
            screened += len(names)
            skipped += bad
            filtered += dropped
            keep = slice(None) if cfg.all_rows else values[:, 0] > 0
            keys.append(positions[keep] + offset)
            domains.extend(itertools.compress(names, values[:, 0] > 0) if not cfg.all_rows else names)
            table.append(values[keep])
            offset += len(positions) + bad + dropped
    finally:
        if pool is not None:
            pool.shutdown()

    positions = np.concatenate(keys) if keys else np.empty(0, dtype=np.int64)
    values = np.concatenate(table) if table else np.empty((0, 6))
    # descending decision value, input order on ties
    order = np.lexsort((positions, -values[:, 0])) if len(values) else np.empty(0, dtype=np.int64)
    valuable = int(np.count_nonzero(values[:, 0] > 0)) if not cfg.all_rows else None
    with open(output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["domain", "decision_value", *DESCRIPTOR_NAMES]
        writer.writerow(header + (["label"] if cfg.all_rows else []))
        for i in order:
            row = [domains[i], *(format(v, ".10g") for v in values[i])]
            if cfg.all_rows:
                row.append(classify(values[i, 0]))
            writer.writerow(row)
    if valuable is None:
        valuable = int(np.count_nonzero(values[:, 0] > 0))
    summary = f"{screened} screened, {valuable} valuable"
    if skipped:
        summary += f", {skipped} invalid rows skipped"
    if filtered:
        summary += f", {filtered} excluded by the auction filter"
    print(summary, file=sys.stderr)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, n: int, split: bool, unlabeled: bool) -> int:
    output = _require(cfg.output, "--output")
    data = synth_generate(n, seed=cfg.seed, with_prices=not unlabeled)
    if not split:
        write_csv(data.records, output, include_price=not unlabeled)
        print(f"wrote {len(data)} records to {output}", file=sys.stderr)
        return EXIT_OK
    if unlabeled:
        raise ConfigurationError("--split needs labels; drop --unlabeled")
    output.mkdir(parents=True, exist_ok=True)
    parts = diversity_split(data, seed=cfg.seed, reference_year=cfg.year)
    for name, part in (("training", parts.training), ("test", parts.test), ("external", parts.external)):
        write_csv(part.records, output / f"{name}.csv")
    print(f"wrote {len(parts.training)}/{len(parts.test)}/{len(parts.external)} "
          f"training/test/external records to {output}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------- argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="domscreen", description="Screen expiring domain names for resale value.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, output_help):
        p.add_argument("--input", type=Path, help="input CSV")
        p.add_argument("--output", type=Path, help=output_help)
        p.add_argument("--reference-year", type=int, help="year that domain age is measured against")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = common(sub.add_parser("ingest", help="validate (and optionally enrich) a CSV"), "cleaned CSV")
    p.add_argument("--providers", default="", help="comma separated provider list, e.g. moz,semrush,wayback")
    p.add_argument("--filter-auctions", action="store_true", help="keep only no-reserve auctions with 2+ bidders")

    p = common(sub.add_parser("cluster-report", help="feature correlation dendrogram"), "correlation matrix CSV")
    p.add_argument("--filter-auctions", action="store_true")

    p = common(sub.add_parser("train", help="grid search and fit a model"), "CV accuracy CSV (default MODEL.cv.csv)")
    p.add_argument("--model", type=Path, help="model file to write")
    p.add_argument("--c-grid", default="-5:15:2", help="log2 C exponents start:end:step")
    p.add_argument("--gamma-grid", default="-15:3:2", help="log2 gamma exponents start:end:step")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--width", type=int, default=1, help="worker processes for the grid search")
    p.add_argument("--providers", default="")
    p.add_argument("--filter-auctions", action="store_true")

    p = common(sub.add_parser("evaluate", help="confusion metrics on a labelled CSV"), "metrics CSV")
    p.add_argument("--model", type=Path)
    p.add_argument("--filter-auctions", action="store_true")

    p = common(sub.add_parser("screen", help="rank unlabelled candidates"), "ranked CSV")
    p.add_argument("--model", type=Path)
    p.add_argument("--width", type=int, default=1, help="worker processes")
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    p.add_argument("--all", dest="all_rows", action="store_true", help="emit every row with its label")
    p.add_argument("--filter-auctions", action="store_true")

    p = common(sub.add_parser("synth", help="generate calibrated synthetic auction data"),
               "CSV file, or a directory with --split")
    p.add_argument("--n", type=int, default=903)
    p.add_argument("--split", action="store_true", help="write training/test/external CSVs")
    p.add_argument("--unlabeled", action="store_true", help="omit the price column")
    return parser


def _join_grid_values(argv: Sequence[str]) -> list[str]:
    out, it = [], iter(argv)
    for token in it:
        if token in _GRID_FLAGS:
            out.append(f"{token}={next(it, '')}")
        else:
            out.append(token)
    return out


def _config(ns: argparse.Namespace) -> RunConfig:
    kwargs = {k: v for k, v in vars(ns).items() if k in RunConfig.__dataclass_fields__ and v is not None}
    for key in ("c_grid", "gamma_grid"):
        if key in kwargs:
            kwargs[key] = parse_grid(kwargs[key])
    return RunConfig(**kwargs)


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(_join_grid_values(sys.argv[1:] if argv is None else argv))
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(ns)
        if cfg.subcommand == "synth":
            return cmd_synth(cfg, ns.n, ns.split, ns.unlabeled)
        handler = {
            "ingest": cmd_ingest, "cluster-report": cmd_cluster_report, "train": cmd_train,
            "evaluate": cmd_evaluate, "screen": cmd_screen,
        }[cfg.subcommand]
        return handler(cfg)
    except (ValidationError, ConfigurationError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DomscreenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last line of defence for the exit-code contract
        log.debug("unhandled error", exc_info=True)
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
