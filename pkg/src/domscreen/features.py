"""Raw domain properties and the five composite descriptors built from them.

Every raw property is first mapped to a strictly positive "goodness" score
(bigger is better) and the scores belonging to one descriptor group are
combined with a geometric mean.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError

EPSILON = 1e-6
RANK_CAP = 40_000_000
MIN_DOB = 1995
BLOCKED_SCORE = 0.1

COUNT_KINDS = ("pr", "da", "pa", "bl", "dp", "acr", "sv", "te")
RANK_KINDS = ("alexa", "similarweb")
FLAG_KINDS = ("sb", "pb", "ab")
FEATURE_KINDS = COUNT_KINDS + RANK_KINDS + ("dob",) + FLAG_KINDS

VALUABLE = "valuable"
NON_VALUABLE = "non_valuable"
VALUE_THRESHOLD_USD = 100.0

DESCRIPTOR_NAMES = ("authority", "traffic", "age", "health", "name_quality")

# Descriptor membership; acr and dob are deliberately listed twice.
DESCRIPTOR_GROUPS: dict[str, tuple[str, ...]] = {
    "authority": ("pr", "da", "pa", "bl", "dp", "acr"),
    "traffic": ("alexa", "similarweb", "acr"),
    "age": ("dob", "acr"),
    "health": ("sb", "ab", "pb"),
    "name_quality": ("sv", "te", "dob"),
}

_BOUNDED = {"pr": 10, "da": 100, "pa": 100, "te": 6}


def current_year() -> int:
    return _dt.datetime.now(_dt.timezone.utc).year


def name_label(name: str) -> str:
    """The registrable label of a domain, i.e. ``"example"`` for ``"example.com"``."""
    return name.split(".", 1)[0]


@dataclass(frozen=True, slots=True)
class DomainRecord:
    name: str
    pr: int = 0
    da: int = 0
    pa: int = 0
    bl: int = 0
    dp: int = 0
    acr: int = 0
    alexa: int = RANK_CAP
    similarweb: int = RANK_CAP
    dob: int = MIN_DOB
    sv: int = 0
    te: int = 0
    le: int = 0
    hy: int = 0
    nu: int = 0
    sb: int = 0
    pb: int = 0
    ab: int = 0
    price_usd: float | None = None

    @classmethod
    def from_name(cls, name: str, **values) -> "DomainRecord":
        """Build a record, deriving ``le``/``hy``/``nu`` from the name unless given."""
        label = name_label(name)
        values.setdefault("le", len(label))
        values.setdefault("hy", int("-" in label))
        values.setdefault("nu", int(any(ch.isdigit() for ch in label)))
        return cls(name=name, **values)

    def feature(self, kind: str):
        return getattr(self, kind)

    def violations(self, reference_year: int | None = None) -> list[str]:
        """Every invariant this record breaks, as human readable strings."""
        year = current_year() if reference_year is None else reference_year
        problems = []
        if not self.name or "." not in self.name:
            problems.append(f"name {self.name!r} has no extension")
        for kind, upper in _BOUNDED.items():
            value = getattr(self, kind)
            if not 0 <= value <= upper:
                problems.append(f"{kind}={value} outside [0, {upper}]")
        for kind in ("bl", "dp", "acr", "sv"):
            if getattr(self, kind) < 0:
                problems.append(f"{kind}={getattr(self, kind)} is negative")
        for kind in RANK_KINDS:
            value = getattr(self, kind)
            if not 1 <= value <= RANK_CAP:
                problems.append(f"{kind}={value} outside [1, {RANK_CAP}]")
        if not MIN_DOB <= self.dob <= year:
            problems.append(f"dob={self.dob} outside [{MIN_DOB}, {year}]")
        for kind in ("hy", "nu") + FLAG_KINDS:
            if getattr(self, kind) not in (0, 1):
                problems.append(f"{kind}={getattr(self, kind)} is not a 0/1 flag")
        if self.name and self.le != len(name_label(self.name)):
            problems.append(f"le={self.le} but name label has {len(name_label(self.name))} characters")
        if self.price_usd is not None and not self.price_usd >= 0:
            problems.append(f"price_usd={self.price_usd} is negative")
        return problems

    def validate(self, reference_year: int | None = None) -> "DomainRecord":
        problems = self.violations(reference_year)
        if problems:
            raise ValidationError(f"{self.name}: " + "; ".join(problems))
        return self


RECORD_FIELDS = tuple(f.name for f in fields(DomainRecord))


@dataclass(frozen=True, slots=True)
class DescriptorVector:
    authority: float
    traffic: float
    age: float
    health: float
    name_quality: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.authority, self.traffic, self.age, self.health, self.name_quality)


@dataclass(frozen=True)
class ScalingParams:
    """Per-descriptor min/max fitted on a training set."""

    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    reference_year: int
    _lo: np.ndarray = field(init=False, repr=False, compare=False)
    _span: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.mins) != 5 or len(self.maxs) != 5:
            raise ValidationError("scaling needs exactly five min and five max values")
        if any(hi < lo for lo, hi in zip(self.mins, self.maxs)):
            raise ValidationError("scaling max must be >= min in every dimension")
        lo = np.asarray(self.mins, dtype=float)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_span", np.asarray(self.maxs, dtype=float) - lo)


def transform_feature(value, kind: str, reference_year: int) -> float:
    """Map one raw property onto a strictly positive score where larger is better."""
    if kind in COUNT_KINDS:
        score = math.log1p(value)
    elif kind in RANK_KINDS:
        if value <= 0:
            raise ValidationError(f"{kind} rank must be positive, got {value}")
        score = math.log1p(RANK_CAP / value)
    elif kind == "dob":
        score = math.log1p(reference_year - value + 1)
    elif kind in FLAG_KINDS:
        return BLOCKED_SCORE if value else 1.0
    else:
        raise ConfigurationError(f"unknown feature kind {kind!r}")
    return max(score, EPSILON)


def geometric_mean(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValidationError("geometric mean of an empty list")
    if any(not v > 0 for v in values):
        raise ValidationError("geometric mean needs strictly positive values")
    return math.exp(math.fsum(math.log(v) for v in values) / len(values))


def compute_descriptors(record: DomainRecord, reference_year: int) -> DescriptorVector:
    scores = {kind: transform_feature(getattr(record, kind), kind, reference_year) for kind in FEATURE_KINDS}
    return DescriptorVector(
        *(geometric_mean([scores[k] for k in DESCRIPTOR_GROUPS[name]]) for name in DESCRIPTOR_NAMES)
    )


def fit_scaling(descriptors: Iterable[DescriptorVector], reference_year: int) -> ScalingParams:
    rows = [d.as_tuple() if isinstance(d, DescriptorVector) else tuple(d) for d in descriptors]
    if not rows:
        raise ValidationError("cannot fit scaling on an empty descriptor list")
    mins, maxs = [], []
    for column in zip(*rows):
        lo, hi = min(column), max(column)
        mins.append(lo)
        # degenerate dimension: everything maps to 0
        maxs.append(hi if hi > lo else lo + 1.0)
    return ScalingParams(tuple(mins), tuple(maxs), reference_year)


def apply_scaling(params: ScalingParams, v) -> np.ndarray:
    """Min-max scale one descriptor vector (or an ``(n, 5)`` array of them).

    Out-of-range inputs seen at screening time are clamped to [-0.5, 1.5].
    """
    x = np.asarray(v.as_tuple() if isinstance(v, DescriptorVector) else v, dtype=float)
    return np.clip((x - params._lo) / params._span, -0.5, 1.5)


def descriptor_matrix(records: Sequence[DomainRecord], reference_year: int) -> np.ndarray:
    """Vectorised ``compute_descriptors`` over many records; returns shape ``(n, 5)``."""
    n = len(records)
    if n == 0:
        return np.empty((0, 5))
    raw = np.array([[getattr(r, k) for k in FEATURE_KINDS] for r in records], dtype=float)
    cols = dict(zip(FEATURE_KINDS, raw.T))
    logs = {}
    for kind in COUNT_KINDS:
        logs[kind] = np.log(np.maximum(np.log1p(cols[kind]), EPSILON))
    for kind in RANK_KINDS:
        if np.any(cols[kind] <= 0):
            raise ValidationError(f"{kind} rank must be positive")
        logs[kind] = np.log(np.maximum(np.log1p(RANK_CAP / cols[kind]), EPSILON))
    logs["dob"] = np.log(np.maximum(np.log1p(reference_year - cols["dob"] + 1), EPSILON))
    for kind in FLAG_KINDS:
        logs[kind] = np.where(cols[kind] != 0, math.log(BLOCKED_SCORE), 0.0)
    out = np.empty((n, 5))
    for j, name in enumerate(DESCRIPTOR_NAMES):
        group = DESCRIPTOR_GROUPS[name]
        out[:, j] = np.exp(sum(logs[k] for k in group) / len(group))
    return out
