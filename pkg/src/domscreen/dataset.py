"""CSV ingestion, price labelling and the diversity-maximising three-way split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ValidationError
from .features import (
    NON_VALUABLE, RANK_CAP, RANK_KINDS, VALUABLE, VALUE_THRESHOLD_USD, DomainRecord,
    apply_scaling, compute_descriptors, current_year, descriptor_matrix, fit_scaling,
)

FEATURE_COLUMNS = (
    "pr", "da", "pa", "bl", "dp", "acr", "alexa", "similarweb", "dob", "sv", "te", "le", "hy", "nu", "sb", "pb", "ab",
)
CSV_COLUMNS = ("domain", "price_usd") + FEATURE_COLUMNS
# derived from the domain string when the column or cell is missing
NAME_DERIVED = ("le", "hy", "nu")
REQUIRED_COLUMNS = ("domain",) + tuple(c for c in FEATURE_COLUMNS if c not in NAME_DERIVED)
AUCTION_COLUMNS = ("reserve_price_flag", "bidder_count")


@dataclass(frozen=True)
class RowIssue:
    line: int
    domain: str
    message: str


@dataclass
class ParseResult:
    """Records that passed validation plus everything that was wrong on the way."""

    records: list[DomainRecord] = field(default_factory=list)
    errors: list[RowIssue] = field(default_factory=list)
    warnings: list[RowIssue] = field(default_factory=list)
    # per record: True when the auction-source rule admits it
    auction_ok: list[bool] = field(default_factory=list)
    lines: list[int] = field(default_factory=list)

    def filtered(self, auctions_only: bool) -> list[DomainRecord]:
        if not auctions_only:
            return list(self.records)
        return [r for r, ok in zip(self.records, self.auction_ok) if ok]


def _parse_int(text: str, column: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"{column}={text!r} is not a number") from None
    if not math.isfinite(value) or value != int(value):
        raise ValidationError(f"{column}={text!r} is not an integer")
    return int(value)


def auction_ok(row: dict) -> bool:
    """No reserve price and at least two bidders; absent columns pass."""
    reserve = (row.get("reserve_price_flag") or "").strip()
    bidders = (row.get("bidder_count") or "").strip()
    try:
        if reserve and _parse_int(reserve, "reserve_price_flag") != 0:
            return False
        if bidders and _parse_int(bidders, "bidder_count") < 2:
            return False
    except ValidationError:
        return False
    return True


def parse_row(row: dict, reference_year: int) -> tuple[DomainRecord, list[str]]:
    """One CSV row to a validated record; returns the record and its warnings."""
    notes: list[str] = []
    domain = (row.get("domain") or "").strip().lower()
    if not domain:
        raise ValidationError("domain is empty")
    values: dict = {}
    for column in FEATURE_COLUMNS:
        text = (row.get(column) or "").strip()
        if text:
            values[column] = _parse_int(text, column)
        elif column in RANK_KINDS:
            values[column] = RANK_CAP
        elif column in NAME_DERIVED:
            notes.append(f"{column} missing, derived from the domain name")
        else:
            values[column] = 0
            notes.append(f"{column} missing, set to 0")
    price_text = (row.get("price_usd") or "").strip()
    if price_text:
        try:
            price = float(price_text)
        except ValueError:
            raise ValidationError(f"price_usd={price_text!r} is not a number") from None
        if not math.isfinite(price):
            raise ValidationError(f"price_usd={price_text!r} is not finite")
        values["price_usd"] = price
    record = DomainRecord.from_name(domain, **values)
    record.validate(reference_year)
    return record, notes


def _open_reader(fh) -> csv.DictReader:
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ValidationError(f"missing required columns: {', '.join(missing)}")
    return reader


def iter_csv(path, reference_year: int | None = None, overlay: Callable[[str], dict] | None = None,
             ) -> Iterator[tuple[int, DomainRecord | None, dict, list[str], str | None]]:
    """Stream ``(line, record, raw row, warnings, error)``; exactly one of record/error is set.

    ``overlay(domain)`` may return extra field values that replace the CSV cells.
    """
    year = current_year() if reference_year is None else reference_year
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _open_reader(fh)
        for row in reader:
            line = reader.line_num
            if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
                continue
            try:
                if overlay is not None:
                    extra = overlay((row.get("domain") or "").strip().lower())
                    row = {**row, **{k: str(v) for k, v in extra.items()}}
                record, notes = parse_row(row, year)
            except ValidationError as exc:
                yield line, None, row, [], str(exc)
            else:
                yield line, record, row, notes, None


def parse_csv(path, reference_year: int | None = None, overlay: Callable[[str], dict] | None = None) -> ParseResult:
    result = ParseResult()
    for line, record, row, notes, error in iter_csv(path, reference_year, overlay):
        domain = (row.get("domain") or "").strip()
        if error is not None:
            result.errors.append(RowIssue(line, domain, error))
            continue
        result.records.append(record)
        result.auction_ok.append(auction_ok(row))
        result.lines.append(line)
        result.warnings.extend(RowIssue(line, domain, note) for note in notes)
    return result


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if value != int(value) else f"{value:.2f}"
    return str(value)


def write_csv(records: Iterable[DomainRecord], path, include_price: bool = True) -> int:
    columns = CSV_COLUMNS if include_price else tuple(c for c in CSV_COLUMNS if c != "price_usd")
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in records:
            row = [r.name if c == "domain" else _cell(getattr(r, c)) for c in columns]
            writer.writerow(row)
            count += 1
    return count


def write_error_report(issues: Sequence[RowIssue], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("row", "domain", "violation"))
        for issue in issues:
            writer.writerow((issue.line, issue.domain, issue.message))


# --------------------------------------------------------------------------- labels


def label(record: DomainRecord) -> str:
    """Valuable means sold for strictly more than 100 USD; unsold closeouts are not."""
    if record.price_usd is not None and record.price_usd > VALUE_THRESHOLD_USD:
        return VALUABLE
    return NON_VALUABLE


@dataclass
class LabeledSet:
    records: list[DomainRecord]
    labels: list[str]

    def __post_init__(self):
        if len(self.records) != len(self.labels):
            raise ValidationError(f"{len(self.records)} records but {len(self.labels)} labels")

    @classmethod
    def from_records(cls, records: Sequence[DomainRecord]) -> "LabeledSet":
        return cls(list(records), [label(r) for r in records])

    def __len__(self) -> int:
        return len(self.records)

    @property
    def y(self) -> np.ndarray:
        return np.array([1.0 if lab == VALUABLE else -1.0 for lab in self.labels])

    def subset(self, indices: Iterable[int]) -> "LabeledSet":
        idx = list(indices)
        return LabeledSet([self.records[i] for i in idx], [self.labels[i] for i in idx])


@dataclass
class SplitResult:
    training: LabeledSet
    test: LabeledSet
    external: LabeledSet
    seed: int
    # original indices of each part, in the order they were assigned
    indices: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]] = ((), (), ())


def kennard_stone(points: np.ndarray, k: int, priority: Sequence[int] | None = None) -> list[int]:
    """Maximin selection of ``k`` row indices, seeded by the two mutually farthest points.

    Exact distance ties go to the smaller ``priority`` value (defaults to the index).
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if not 0 <= k <= n:
        raise ValidationError(f"cannot select {k} of {n} points")
    if k == 0:
        return []
    prio = np.arange(n) if priority is None else np.asarray(priority)
    sq = (X * X).sum(1)
    dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))
    np.fill_diagonal(dist, 0.0)
    if n == 1:
        return [0]
    best = dist.max()
    pairs = np.argwhere(dist == best)
    pairs = [(int(a), int(b)) for a, b in pairs if a < b] or [(0, 1)]
    # order each pair by priority, then pick the pair with the smallest priorities
    pairs = [tuple(sorted(p, key=lambda i: prio[i])) for p in pairs]
    first, second = min(pairs, key=lambda p: (prio[p[0]], prio[p[1]]))
    chosen = [first] if k == 1 else [first, second]
    if k <= 2:
        return chosen
    nearest = np.minimum(dist[first], dist[second])
    taken = np.zeros(n, dtype=bool)
    taken[chosen] = True
    while len(chosen) < k:
        candidates = np.where(taken, -np.inf, nearest)
        top = candidates.max()
        tied = np.flatnonzero(candidates == top)
        pick = int(tied[np.argmin(prio[tied])])
        chosen.append(pick)
        taken[pick] = True
        nearest = np.minimum(nearest, dist[pick])
    return chosen


def diversity_split(data: LabeledSet, seed: int = 0, reference_year: int | None = None) -> SplitResult:
    """Three-way split whose training third covers descriptor space as widely as possible.

    Training gets ceil(n/3) records chosen per class by Kennard-Stone maximin in
    scaled descriptor space; the rest alternate test/external in order of
    descriptor norm so both remaining parts span the same range.
    """
    n = len(data)
    if n < 9:
        raise ValidationError(f"diversity split needs at least 9 records, got {n}")
    classes = (VALUABLE, NON_VALUABLE)
    members = {c: [i for i, lab in enumerate(data.labels) if lab == c] for c in classes}
    for c in classes:
        if len(members[c]) < 3:
            raise ValidationError(f"class {c} has {len(members[c])} records; at least 3 are needed")
    year = current_year() if reference_year is None else reference_year
    descriptors = descriptor_matrix(data.records, year)
    scaled = apply_scaling(fit_scaling(descriptors, year), descriptors)
    priority = np.random.default_rng(seed).permutation(n)

    n_train = math.ceil(n / 3)
    k_valuable = round(n_train * len(members[VALUABLE]) / n)
    quota = {VALUABLE: k_valuable, NON_VALUABLE: n_train - k_valuable}

    training: list[int] = []
    rest: dict[str, list[int]] = {}
    for c in classes:
        idx = np.array(members[c])
        picked = kennard_stone(scaled[idx], quota[c], priority[idx])
        training.extend(int(idx[p]) for p in picked)
        picked_set = set(int(idx[p]) for p in picked)
        remaining = [i for i in members[c] if i not in picked_set]
        norms = np.linalg.norm(scaled[remaining], axis=1) if remaining else np.empty(0)
        rest[c] = [i for _, _, i in sorted(zip(norms.tolist(), priority[remaining].tolist(), remaining))]

    test: list[int] = []
    external: list[int] = []
    toggle = 0
    for c in classes:
        for i in rest[c]:
            (test if toggle == 0 else external).append(i)
            toggle ^= 1
    return SplitResult(
        data.subset(training), data.subset(test), data.subset(external), seed,
        (tuple(training), tuple(test), tuple(external)),
    )


def descriptors_for(records: Sequence[DomainRecord], reference_year: int) -> np.ndarray:
    """Per-record descriptor rows computed one at a time (the reference path)."""
    return np.array([compute_descriptors(r, reference_year).as_tuple() for r in records]).reshape(len(records), 5)
