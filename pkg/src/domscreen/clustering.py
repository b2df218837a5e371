"""Spearman correlation and average-linkage clustering of raw domain features."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .features import DomainRecord

CLUSTER_COLUMNS = (
    "pr", "da", "pa", "bl", "dp", "acr", "alexa", "similarweb", "dob", "sv", "te", "sb", "pb", "ab",
)
# Columns where a smaller raw value is the better one. Negating them keeps the
# sign of every correlation equal to that of the log-scored features.
LOWER_IS_BETTER = ("alexa", "similarweb", "dob", "sb", "pb", "ab")

REFERENCE_CLUSTERS: dict[str, tuple[str, ...]] = {
    "Domain Authority": ("pr", "da", "pa", "bl", "dp"),
    "Domain Traffic": ("alexa", "similarweb"),
    "Active Domain Age": ("dob", "acr"),
    "Domain Health": ("sb", "pb", "ab"),
    "Name Quality": ("sv", "te"),
}


class TiedColumnWarning(UserWarning):
    """A column has zero rank variance; its correlations are reported as 0."""


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError("feature matrix must be two dimensional")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise ValidationError(f"feature matrix needs >= 2 rows and columns, got {v.shape}")
        if v.shape[1] != len(self.names):
            raise ValidationError("column names do not match the matrix width")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature matrix contains missing or non-finite cells")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def from_records(cls, records: Sequence[DomainRecord], oriented: bool = True) -> "FeatureMatrix":
        """Raw feature columns; with ``oriented`` the lower-is-better ones are negated."""
        values = np.array([[getattr(r, c) for c in CLUSTER_COLUMNS] for r in records], dtype=float)
        if oriented and len(records):
            for j, name in enumerate(CLUSTER_COLUMNS):
                if name in LOWER_IS_BETTER:
                    values[:, j] = -values[:, j]
        return cls(values.reshape(len(records), len(CLUSTER_COLUMNS)), CLUSTER_COLUMNS)


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of their rank span."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(len(x))
    start = 0
    n = len(x)
    while start < n:
        stop = start + 1
        while stop < n and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def _centered_doubled_ranks(x) -> np.ndarray:
    # 2*rank is an integer, so centred sums are exact and row order can't change them
    r2 = np.rint(2 * average_ranks(x)).astype(np.int64)
    return r2 * len(r2) - int(r2.sum())


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise ValidationError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValidationError("spearman correlation needs at least two observations")
    return _rho_from_centered(_centered_doubled_ranks(x), _centered_doubled_ranks(y))


def _rho_from_centered(a: np.ndarray, b: np.ndarray) -> float:
    saa, sbb = _exact_dot(a, a), _exact_dot(b, b)
    if saa == 0 or sbb == 0:
        warnings.warn("constant input: spearman correlation defined as 0", TiedColumnWarning, stacklevel=3)
        return 0.0
    rho = _exact_dot(a, b) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, rho))


def _exact_dot(a: np.ndarray, b: np.ndarray) -> int:
    # centred values can reach 2n^2, so int64 products overflow past a few thousand rows
    if len(a) <= 1000:
        return int(np.dot(a, b))
    return sum(int(u) * int(v) for u, v in zip(a.tolist(), b.tolist()))


def correlation_matrix(m: FeatureMatrix) -> np.ndarray:
    cols = [_centered_doubled_ranks(m.values[:, j]) for j in range(m.values.shape[1])]
    k = len(cols)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = _rho_from_centered(cols[i], cols[j])
    return out


def constant_columns(m: FeatureMatrix) -> list[str]:
    return [name for name, col in zip(m.names, m.values.T) if np.all(col == col[0])]


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    distance: float


@dataclass(frozen=True)
class Dendrogram:
    """Merge history; leaves are ``0..n_leaves-1`` and merge ``i`` creates node ``n_leaves+i``."""

    n_leaves: int
    merges: tuple[Merge, ...]
    names: tuple[str, ...] = ()

    def leaves(self, node: int) -> list[int]:
        if node < self.n_leaves:
            return [node]
        merge = self.merges[node - self.n_leaves]
        return sorted(self.leaves(merge.left) + self.leaves(merge.right))


def hcluster(m: FeatureMatrix) -> Dendrogram:
    """Average-linkage agglomeration on ``1 - spearman`` distances between columns."""
    n = m.values.shape[1]
    if n < 2:
        raise ValidationError("need at least two columns to cluster")
    dist = 1.0 - correlation_matrix(m)
    return _average_linkage(dist, m.names)


def _average_linkage(dist: np.ndarray, names: Sequence[str] = ()) -> Dendrogram:
    n = dist.shape[0]
    # active clusters: node id -> sorted leaf ids
    active: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges = []
    next_id = n
    while len(active) > 1:
        best = None
        ids = list(active)
        for a_pos, a in enumerate(ids):
            for b in ids[a_pos + 1:]:
                la, lb = active[a], active[b]
                d = float(np.mean(dist[np.ix_(la, lb)]))
                lo, hi = sorted((la[0], lb[0]))
                key = (d, lo, hi)
                if best is None or key < best[0]:
                    best = (key, a, b)
        (d, _, _), a, b = best
        if active[a][0] > active[b][0]:
            a, b = b, a
        merges.append(Merge(a, b, d))
        active[next_id] = sorted(active.pop(a) + active.pop(b))
        next_id += 1
    return Dendrogram(n, tuple(merges), tuple(names))


def cut(d: Dendrogram, k: int) -> list[list[int]]:
    """Partition obtained by undoing the last ``k - 1`` merges, groups ordered by smallest leaf."""
    if not 1 <= k <= d.n_leaves:
        raise ValidationError(f"k={k} outside [1, {d.n_leaves}]")
    keep = len(d.merges) - (k - 1)
    parent = list(range(d.n_leaves + len(d.merges)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for idx, merge in enumerate(d.merges[:keep]):
        node = d.n_leaves + idx
        parent[find(merge.left)] = node
        parent[find(merge.right)] = node
    groups: dict[int, list[int]] = {}
    for leaf in range(d.n_leaves):
        groups.setdefault(find(leaf), []).append(leaf)
    return sorted(groups.values(), key=lambda g: g[0])


def name_groups(groups: list[list[int]], names: Sequence[str],
                reference: dict[str, tuple[str, ...]] = REFERENCE_CLUSTERS) -> list[str | None]:
    """Attach reference cluster names to groups by maximum total Jaccard overlap."""
    sets = [{names[i] for i in g} for g in groups]
    labels = list(reference)
    ref_sets = [set(reference[name]) for name in labels]

    def jaccard(a, b):
        return len(a & b) / len(a | b)

    best_score, best_assign = -1.0, None
    slots = labels + [None] * max(0, len(sets) - len(labels))
    for assign in permutations(slots, len(sets)):
        score = sum(jaccard(s, ref_sets[labels.index(a)]) for s, a in zip(sets, assign) if a is not None)
        if score > best_score + 1e-12:
            best_score, best_assign = score, assign
    return list(best_assign)


def format_dendrogram(d: Dendrogram) -> str:
    """Indented tree, root first; each inner node shows its merge distance."""
    names = d.names or tuple(str(i) for i in range(d.n_leaves))
    lines: list[str] = []

    def walk(node, depth):
        pad = "  " * depth
        if node < d.n_leaves:
            lines.append(f"{pad}- {names[node]}")
            return
        merge = d.merges[node - d.n_leaves]
        lines.append(f"{pad}+ [{merge.distance:.4f}]")
        walk(merge.left, depth + 1)
        walk(merge.right, depth + 1)

    walk(d.n_leaves + len(d.merges) - 1 if d.merges else 0, 0)
    return "\n".join(lines)
