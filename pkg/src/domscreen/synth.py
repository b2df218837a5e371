"""Synthetic auction data calibrated to the published class-conditional summaries.

Each class draws five independent latent factors, one per feature group
(authority, traffic, age, health, name). Features inside a group are noisy
monotone functions of their factor, so groups correlate internally and are
independent of each other within a class. Medians and ranges follow the
per-class table of the real 903-domain auction sample.
"""

from __future__ import annotations

import math
import string

import numpy as np

from .dataset import LabeledSet
from .features import RANK_CAP, DomainRecord

# ground truth for cluster-recovery checks (oriented raw columns)
PLANTED_GROUPS: dict[str, tuple[str, ...]] = {
    "authority": ("pr", "da", "pa", "bl", "dp"),
    "traffic": ("alexa", "similarweb"),
    "age": ("dob", "acr"),
    "health": ("sb", "pb", "ab"),
    "name": ("sv", "te"),
}

# noise added to the group factor per feature; smaller means tighter groups
_FEATURE_NOISE = {"authority": 0.2, "traffic": 0.35, "age": 0.3, "health": 0.25, "name": 0.35}

# Class-conditional summary of the 903 real auctions: (min, max, average, median)
# for domains sold above 100 USD, then for the rest.
TABLE2: dict[str, tuple[tuple[float, float, float, float], tuple[float, float, float, float]]] = {
    "pr": ((0, 7, 3.29, 4), (0, 7, 1.06, 0)),
    "pa": ((1, 72, 42.23, 46), (1, 56, 16.51, 18.5)),
    "da": ((1, 70, 33.98, 37), (1, 59, 15.02, 13)),
    "bl": ((0, 322600, 5369.22, 331), (0, 33808, 1376.34, 0)),
    "dp": ((0, 2741, 278.70, 156), (0, 2126, 122.35, 6)),
    "acr": ((0, 47256, 396.27, 201), (0, 19035, 125.34, 15)),
    "alexa": ((24476, 40000000, 17062231, 10249830), (51330, 40000000, 33055530, 40000000)),
    "similarweb": ((28459, 40000000, 20912188, 18731855), (617889, 40000000, 35280489, 40000000)),
    "dob": ((1995, 2016, 2003, 2002), (1996, 2016, 2010, 2011)),
    "pb": ((0, 1, 0.10, 0), (0, 1, 0.12, 0)),
    "sb": ((0, 1, 0.12, 0), (0, 1, 0.25, 0)),
    "ab": ((0, 1, 0.07, 0), (0, 1, 0.09, 0)),
    "te": ((0, 6, 2.87, 2), (1, 6, 2.07, 1)),
    "sv": ((0, 450000, 3394, 10), (0, 1000000, 21435, 0)),
    "le": ((6, 32, 13.91, 13), (6, 33, 16, 15)),
}

# the published extreme sits this many latent standard deviations from the median
_TAIL_Z = 3.0
LINEAR_FEATURES = ("pr", "da", "pa", "te")
LOG_FEATURES = ("bl", "dp", "acr", "sv")
_EXTENSIONS = (".com",) * 8 + (".net", ".org")


def _normal_quantile(p: float) -> float:
    # inverse CDF by bisection on erf; only called a handful of times
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def _group_draws(rng: np.random.Generator, n: int, group: str, features) -> dict[str, np.ndarray]:
    factor = rng.standard_normal(n)
    noise = _FEATURE_NOISE[group]
    scale = math.sqrt(1 + noise * noise)
    draws = {f: (factor + noise * rng.standard_normal(n)) / scale for f in features}
    # centring on the sample median pins every feature's median to its table value
    return {f: d - np.median(d) for f, d in draws.items()}


def _linear(u, lo, hi, median, z_at_max):
    # integer scores: median at u=0, the table maximum at u=z_at_max
    if median <= lo:
        # a zero-inflated column, put the median half a step inside the floor
        median = lo - 0.5
    spread = (hi - median) / z_at_max
    return np.clip(np.rint(median + spread * u), lo, hi)


def _log_count(u, hi, median):
    centre = math.log1p(median)
    spread = (math.log1p(hi) - centre) / _TAIL_Z
    return np.clip(np.rint(np.expm1(centre + spread * u)), 0, hi)


def _rank(u, best, median):
    # capped columns get their centre just past the cap so the cap is the median
    centre = math.log(median) + (0.1 if median >= RANK_CAP else 0.0)
    spread = (centre - math.log(best)) / _TAIL_Z
    return np.clip(np.rint(np.exp(centre - spread * u)), best, RANK_CAP)


def _class_block(rng: np.random.Generator, n: int, cls: int) -> dict[str, np.ndarray]:
    """Raw feature columns for ``n`` records of one class (0 valuable, 1 non-valuable)."""
    u = {}
    for group, feats in PLANTED_GROUPS.items():
        u.update(_group_draws(rng, n, group, feats))
    cols: dict[str, np.ndarray] = {}
    for f in LINEAR_FEATURES:
        lo, hi, _, median = TABLE2[f][cls]
        cols[f] = _linear(u[f], lo, hi, median, _TAIL_Z)
    for f in LOG_FEATURES:
        _, hi, _, median = TABLE2[f][cls]
        cols[f] = _log_count(u[f], hi, median)
    for f in ("alexa", "similarweb"):
        best, _, _, median = TABLE2[f][cls]
        cols[f] = _rank(u[f], best, median)
    oldest, newest, _, median = TABLE2["dob"][cls]
    # older is better, so the oldest year is the favourable extreme
    cols["dob"] = np.clip(np.rint(median - (median - oldest) / _TAIL_Z * u["dob"]), oldest, newest)
    for f in ("pb", "sb", "ab"):
        rate = TABLE2[f][cls][2]
        # high factor = healthy, so a block is the lower tail
        cols[f] = (u[f] < _normal_quantile(rate)).astype(float)
    return cols


def _names(rng: np.random.Generator, lengths: np.ndarray, taken: set[str]) -> list[str]:
    letters = np.array(list(string.ascii_lowercase))
    out = []
    for length in lengths.astype(int):
        while True:
            chars = list(rng.choice(letters, size=length))
            roll = rng.random()
            if roll < 0.05 and length > 2:
                chars[int(rng.integers(1, length - 1))] = "-"
            elif roll < 0.10:
                chars[int(rng.integers(0, length))] = str(int(rng.integers(0, 10)))
            name = "".join(chars) + _EXTENSIONS[int(rng.integers(0, len(_EXTENSIONS)))]
            if name not in taken:
                taken.add(name)
                out.append(name)
                break
    return out


def _prices(rng: np.random.Generator, n: int, cls: int) -> list[float | None]:
    if cls == 0:
        return [round(float(p), 2) for p in 100.0 + np.exp(rng.normal(math.log(250), 1.2, n)) + 1.0]
    prices: list[float | None] = []
    for closeout, p in zip(rng.random(n) < 0.3, rng.uniform(5.0, 100.0, n)):
        prices.append(None if closeout else round(float(p), 2))
    return prices


def synth_generate(n: int, seed: int = 0, with_prices: bool = True) -> LabeledSet:
    """``n`` records (at least 10), valuable first half rounded up, then non-valuable.

    Records are interleaved by a seeded shuffle so file order carries no label signal.
    """
    if n < 10:
        raise ValueError(f"need at least 10 records, got {n}")
    rng = np.random.default_rng(seed)
    sizes = ((n + 1) // 2, n // 2)
    records: list[DomainRecord] = []
    taken: set[str] = set()
    for cls, size in enumerate(sizes):
        cols = _class_block(rng, size, cls)
        lo, hi, _, median = TABLE2["le"][cls]
        lengths = _linear(rng.standard_normal(size), lo, hi, median, 3.0)
        names = _names(rng, lengths, taken)
        prices = _prices(rng, size, cls) if with_prices else [None] * size
        keys = list(cols)
        table = np.column_stack([cols[k] for k in keys]).astype(np.int64).tolist()
        for name, price, row in zip(names, prices, table):
            records.append(DomainRecord.from_name(name, price_usd=price, **dict(zip(keys, row))))
    order = rng.permutation(n)
    records = [records[i] for i in order]
    labels = ["valuable" if i < sizes[0] else "non_valuable" for i in order]
    return LabeledSet(records, labels)
