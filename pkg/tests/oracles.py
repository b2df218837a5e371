"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def kernel_matrix(kind, X, Y, gamma=1.0, degree=3, coef0=0.0):
    # written out longhand, no shared code with the package
    out = np.empty((len(X), len(Y)))
    for i, x in enumerate(X):
        for j, z in enumerate(Y):
            if kind == "linear":
                out[i, j] = float(np.dot(x, z))
            elif kind == "polynomial":
                out[i, j] = (gamma * float(np.dot(x, z)) + coef0) ** degree
            else:
                out[i, j] = math.exp(-gamma * float(np.sum((np.asarray(x) - np.asarray(z)) ** 2)))
    return out


class QPSolution:
    def __init__(self, alpha, bias_lo, bias_hi, objective):
        self.alpha = alpha
        self.bias_lo = bias_lo
        self.bias_hi = bias_hi
        self.objective = objective

    @property
    def bias(self):
        return 0.5 * (self.bias_lo + self.bias_hi)


def brute_force_svm_dual(K, y, C, tol=1e-9):
    """Exact C-SVC dual by enumerating every (at-zero, free, at-C) assignment.

    For each assignment the free multipliers and the bias solve the linear
    KKT system; an assignment that is feasible and meets every KKT inequality
    is optimal because the problem is convex. Several assignments can be
    optimal at once, so the returned bias range is the union over all of them.
    Only usable for a handful of points: 3^n systems.
    """
    n = len(y)
    y = np.asarray(y, dtype=float)
    Q = (y[:, None] * y[None, :]) * K
    found = []
    # the KKT matrix depends only on which multipliers are free, so every
    # at-zero/at-C pattern of the others is solved in one batch
    for free_mask in itertools.product((False, True), repeat=n):
        is_free = np.array(free_mask)
        free = np.flatnonzero(is_free)
        bound = np.flatnonzero(~is_free)
        at_c = np.array(list(itertools.product((False, True), repeat=bound.size)), dtype=bool).reshape(2 ** bound.size, bound.size)
        k = at_c.shape[0]
        alpha = np.zeros((k, n))
        alpha[:, bound] = np.where(at_c, C, 0.0)
        ok = np.ones(k, dtype=bool)
        if free.size:
            m = free.size
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = Q[np.ix_(free, free)]
            A[:m, m] = y[free]
            A[m, :m] = y[free]
            rhs = np.empty((m + 1, k))
            rhs[:m] = 1.0 - Q[np.ix_(free, bound)] @ alpha[:, bound].T
            rhs[m] = -(alpha[:, bound] @ y[bound])
            sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
            ok &= np.max(np.abs(A @ sol - rhs), axis=0) <= 1e-8
            a_free = sol[:m].T
            ok &= (a_free.min(axis=1) >= -tol) & (a_free.max(axis=1) <= C + tol)
            alpha[:, free] = a_free
            lo = sol[m].copy()
            hi = sol[m].copy()
        else:
            ok &= np.abs(alpha @ y) <= tol
            lo = np.full(k, -np.inf)
            hi = np.full(k, np.inf)
        if bound.size:
            g = (alpha * y) @ K[bound].T  # f without bias at the bound points
            t = (1.0 - y[bound] * g) * y[bound]
            # at zero y_i b >= 1 - y_i g_i, at C the reverse; dividing by y_i flips negatives
            lower = (~at_c) == (y[bound] > 0)
            lo = np.maximum(lo, np.where(lower, t, -np.inf).max(axis=1))
            hi = np.minimum(hi, np.where(lower, np.inf, t).min(axis=1))
        ok &= lo <= hi + 1e-7
        for i in np.flatnonzero(ok):
            a = alpha[i]
            found.append((float(a.sum() - 0.5 * a @ Q @ a), a, float(lo[i]), float(hi[i])))
    if not found:
        raise RuntimeError("no KKT point found")
    top = max(f[0] for f in found)
    optimal = [f for f in found if f[0] >= top - 1e-9]
    return QPSolution(optimal[0][1], min(f[2] for f in optimal), max(f[3] for f in optimal), top)


def adjusted_rand(a, b):
    """Adjusted Rand index from the contingency table."""
    a = list(a)
    b = list(b)
    pairs = lambda k: k * (k - 1) / 2
    labels_a, labels_b = sorted(set(a)), sorted(set(b))
    table = np.array([[sum(1 for x, z in zip(a, b) if x == p and z == q) for q in labels_b] for p in labels_a])
    index = sum(pairs(v) for v in table.ravel())
    sum_a = sum(pairs(v) for v in table.sum(1))
    sum_b = sum(pairs(v) for v in table.sum(0))
    expected = sum_a * sum_b / pairs(len(a))
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def descriptor_oracle(record: dict, year: int) -> tuple[float, ...]:
    """Five descriptors written directly from the scoring rules."""
    cap = 40_000_000

    def score(kind, v):
        if kind in ("alexa", "similarweb"):
            s = math.log(1 + cap / v)
        elif kind == "dob":
            s = math.log(year - v + 2)
        elif kind in ("sb", "pb", "ab"):
            return 0.1 if v else 1.0
        else:
            s = math.log(1 + v)
        return max(s, 1e-6)

    groups = (
        ("pr", "da", "pa", "bl", "dp", "acr"),
        ("alexa", "similarweb", "acr"),
        ("dob", "acr"),
        ("sb", "ab", "pb"),
        ("sv", "te", "dob"),
    )
    out = []
    for g in groups:
        prod = 1.0
        for k in g:
            prod *= score(k, record[k])
        out.append(prod ** (1.0 / len(g)))
    return tuple(out)
