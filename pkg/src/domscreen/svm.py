"""Soft-margin binary SVM trained with a two-variable SMO solver.

Labels are +1 (valuable) / -1 (non-valuable). Models carry the descriptor
scaling they were trained with so they can classify raw records directly.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .errors import ConfigurationError, ModelFormatError, ValidationError
from .features import NON_VALUABLE, VALUABLE, DomainRecord, ScalingParams, apply_scaling, compute_descriptors

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
KERNELS = ("linear", "polynomial", "rbf")
_TAU = 1e-12
# a full Gram matrix is built up to this many points, past it rows are cached lazily
_DENSE_GRAM_LIMIT = 4000


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = 1.0
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigurationError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.kind != "linear" and not self.gamma > 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigurationError(f"degree must be a positive integer, got {self.degree}")

    def matrix(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Kernel values between every row of ``X`` and every row of ``Y``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.kind == "rbf":
            sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
            return np.exp(-self.gamma * np.maximum(sq, 0.0))
        dots = X @ Y.T
        if self.kind == "linear":
            return dots
        return (self.gamma * dots + self.coef0) ** int(self.degree)


def kernel_eval(spec: KernelSpec, x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "rbf":
        diff = x - y
        return math.exp(-spec.gamma * float(diff @ diff))
    dot = float(x @ y)
    if spec.kind == "linear":
        return dot
    return (spec.gamma * dot + spec.coef0) ** int(spec.degree)


@dataclass(frozen=True)
class TrainConfig:
    C: float
    kernel: KernelSpec = field(default_factory=KernelSpec)
    tolerance: float = 1e-3
    max_passes: int = 10_000
    alpha_epsilon: float = 1e-12

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigurationError(f"C must be positive, got {self.C}")
        if not self.tolerance > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.max_passes < 1:
            raise ConfigurationError("max_passes must be at least 1")


@dataclass
class SvmModel:
    kernel: KernelSpec
    C: float
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray
    bias: float
    scaling: ScalingParams | None = None
    format_version: int = FORMAT_VERSION
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=float))
        self.dual_coeffs = np.asarray(self.dual_coeffs, dtype=float).reshape(-1)

    def check_invariants(self):
        n = len(self.dual_coeffs)
        if n < 1 or self.support_vectors.shape[0] != n:
            raise ValidationError("model needs at least one support vector with a matching coefficient")
        if abs(math.fsum(self.dual_coeffs)) > 1e-6:
            raise ValidationError(f"dual coefficients sum to {math.fsum(self.dual_coeffs)!r}, expected 0")
        magnitude = np.abs(self.dual_coeffs)
        if np.any(magnitude <= 0) or np.any(magnitude > self.C * (1 + 1e-12)):
            raise ValidationError("every |dual coefficient| must lie in (0, C]")

    def decision_values(self, X) -> np.ndarray:
        """Decision values for already-scaled points, shape ``(n,)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] == 0:
            return np.empty(0)
        return self.kernel.matrix(X, self.support_vectors) @ self.dual_coeffs + self.bias


def decision_value(model: SvmModel, x: Sequence[float]) -> float:
    """Σ coeff_i · K(sv_i, x) + bias for one scaled point."""
    k = [kernel_eval(model.kernel, sv, x) for sv in model.support_vectors]
    return math.fsum(c * kv for c, kv in zip(model.dual_coeffs, k)) + model.bias


def dual_objective(alphas: np.ndarray, labels: np.ndarray, gram: np.ndarray) -> float:
    ay = alphas * labels
    return float(alphas.sum() - 0.5 * ay @ gram @ ay)


@dataclass
class SmoResult:
    """Full solver state, useful for diagnostics and oracle comparisons."""

    alphas: np.ndarray
    bias: float
    converged: bool
    iterations: int
    gap: float


def _check_training_input(points, labels):
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(labels, dtype=float).reshape(-1)
    if X.shape[0] < 2:
        raise ValidationError("SMO needs at least two training points")
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"{X.shape[0]} points but {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise ValidationError("training points must be finite")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValidationError("labels must be +1 or -1")
    if np.all(y == 1) or np.all(y == -1):
        missing = "non_valuable (-1)" if np.all(y == 1) else "valuable (+1)"
        raise ValidationError(f"training labels contain a single class; missing {missing}")
    return X, y


class _GramRows:
    """Kernel rows computed on demand and kept for the rest of one training run."""

    def __init__(self, kernel: KernelSpec, X: np.ndarray):
        self.kernel = kernel
        self.X = X
        self.cache: dict[int, np.ndarray] = {}
        self.diag = np.array([kernel_eval(kernel, x, x) for x in X])

    def row(self, i: int) -> np.ndarray:
        r = self.cache.get(i)
        if r is None:
            r = self.kernel.matrix(self.X[i:i + 1], self.X)[0]
            self.cache[i] = r
        return r


@njit(cache=True)
def _pair_step(ai, aj, yi, yj, Fi, Fj, quad, C):
    """Analytic two-variable optimum clipped to the box and the equality constraint."""
    # gradient of the minimisation form is G_t = -y_t F_t
    Gi = -yi * Fi
    Gj = -yj * Fj
    if yi != yj:
        delta = (-Gi - Gj) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0:
            if aj < 0:
                aj = 0.0
                ai = diff
        elif ai < 0:
            ai = 0.0
            aj = -diff
        if diff > 0:
            if ai > C:
                ai = C
                aj = C - diff
        elif aj > C:
            aj = C
            ai = C + diff
    else:
        delta = (Gi - Gj) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > C:
            if ai > C:
                ai = C
                aj = total - C
        elif aj < 0:
            aj = 0.0
            ai = total
        if total > C:
            if aj > C:
                aj = C
                ai = total - C
        elif ai < 0:
            ai = 0.0
            aj = total
    return ai, aj


@njit(cache=True)
def _smo_dense(K, y, C, tol, max_iter, alpha, F):
    n = y.shape[0]
    iterations = 0
    gap = np.inf
    while iterations < max_iter:
        i = -1
        j = -1
        best_up = -np.inf
        best_low = np.inf
        for t in range(n):
            a = alpha[t]
            if (y[t] > 0 and a < C) or (y[t] < 0 and a > 0):
                if F[t] > best_up:
                    best_up = F[t]
                    i = t
            if (y[t] > 0 and a > 0) or (y[t] < 0 and a < C):
                if F[t] < best_low:
                    best_low = F[t]
                    j = t
        if i < 0 or j < 0:
            gap = 0.0
            return iterations, gap, True
        gap = best_up - best_low
        if gap <= tol:
            return iterations, gap, True
        iterations += 1
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = 1e-12
        ai, aj = _pair_step(alpha[i], alpha[j], y[i], y[j], F[i], F[j], quad, C)
        d_i = (ai - alpha[i]) * y[i]
        d_j = (aj - alpha[j]) * y[j]
        alpha[i] = ai
        alpha[j] = aj
        for t in range(n):
            F[t] -= d_i * K[i, t] + d_j * K[j, t]
    return iterations, gap, False


def _smo_rows(gram, y, C, tol, max_iter, alpha, F):
    """Same iteration as ``_smo_dense`` for training sets too large for a dense Gram matrix."""
    n = y.shape[0]
    pos = y > 0
    up = pos.copy()  # alpha=0: +1 can increase, -1 can decrease
    low = ~pos
    neg_inf = np.full(n, -np.inf)
    pos_inf = np.full(n, np.inf)
    iterations = 0
    gap = np.inf
    while iterations < max_iter:
        if not (up.any() and low.any()):
            return iterations, 0.0, True
        i = int(np.argmax(np.where(up, F, neg_inf)))
        j = int(np.argmin(np.where(low, F, pos_inf)))
        gap = float(F[i] - F[j])
        if gap <= tol:
            return iterations, gap, True
        iterations += 1
        Ki, Kj = gram.row(i), gram.row(j)
        quad = gram.diag[i] + gram.diag[j] - 2.0 * Ki[j]
        if quad <= 0:
            quad = _TAU
        ai, aj = _pair_step(alpha[i], alpha[j], y[i], y[j], F[i], F[j], quad, C)
        d_i, d_j = (ai - alpha[i]) * y[i], (aj - alpha[j]) * y[j]
        alpha[i], alpha[j] = ai, aj
        F -= d_i * Ki + d_j * Kj
        for t in (i, j):
            if y[t] > 0:
                up[t], low[t] = alpha[t] < C, alpha[t] > 0
            else:
                up[t], low[t] = alpha[t] > 0, alpha[t] < C
    return iterations, gap, False


def smo_solve(points, labels, cfg: TrainConfig, dense: bool | None = None) -> SmoResult:
    """Solve the C-SVC dual and return every multiplier.

    Works on F_t = y_t - f_t (f without bias), which equals b - E_t. The first
    index is the largest violator in the "can move up" set (lowest index on
    ties), the second the index in the "can move down" set furthest from it
    in error, so the pair maximises |E_i - E_j|. Stops once the gap between
    the two is within tolerance, which bounds every KKT violation by it.
    """
    X, y = _check_training_input(points, labels)
    n = X.shape[0]
    C = float(cfg.C)
    alpha = np.zeros(n)
    F = y.copy()
    max_iter = cfg.max_passes * n
    if dense is None:
        dense = n <= _DENSE_GRAM_LIMIT
    if dense:
        K = cfg.kernel.matrix(X, X)
        iterations, gap, converged = _smo_dense(K, y, C, float(cfg.tolerance), max_iter, alpha, F)
    else:
        gram = _GramRows(cfg.kernel, X)
        iterations, gap, converged = _smo_rows(gram, y, C, float(cfg.tolerance), max_iter, alpha, F)

    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        bias = float(F[free].mean())
    else:
        up = np.where(y > 0, alpha < C, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < C)
        m = F[up].max() if np.any(up) else F[low].min()
        M = F[low].min() if np.any(low) else F[up].max()
        bias = float((m + M) / 2.0)
    if not converged:
        log.warning("SMO stopped after %d iterations with gap %.3g > tol %.3g", iterations, gap, cfg.tolerance)
    return SmoResult(alpha, bias, bool(converged), int(iterations), float(gap))


def smo_train(points, labels, cfg: TrainConfig, scaling: ScalingParams | None = None) -> SvmModel:
    X, y = _check_training_input(points, labels)
    result = smo_solve(X, y, cfg)
    keep = result.alphas >= cfg.alpha_epsilon
    return SvmModel(
        kernel=cfg.kernel,
        C=float(cfg.C),
        support_vectors=X[keep].copy(),
        dual_coeffs=(result.alphas * y)[keep],
        bias=result.bias,
        scaling=scaling,
        converged=result.converged,
        iterations=result.iterations,
    )


def classify(value: float) -> str:
    # an exact zero is treated as non-valuable: a false positive costs a backorder
    return VALUABLE if value > 0 else NON_VALUABLE


def predict(model: SvmModel, record: DomainRecord, reference_year: int | None = None) -> tuple[str, float]:
    """Classify one raw record; returns ``(label, decision value)``."""
    if model.scaling is None:
        raise ConfigurationError("model has no scaling parameters; cannot classify raw records")
    year = model.scaling.reference_year if reference_year is None else reference_year
    record.validate(year)
    x = apply_scaling(model.scaling, compute_descriptors(record, year))
    value = float(model.decision_values(x)[0])
    return classify(value), value


# --------------------------------------------------------------------------- grid search

DEFAULT_C_EXPONENTS = tuple(range(-5, 16, 2))
DEFAULT_GAMMA_EXPONENTS = tuple(range(-15, 4, 2))


def stratified_folds(labels: Sequence[int], folds: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is shuffled by ``seed`` then dealt round robin."""
    y = np.asarray(labels)
    if folds < 2:
        raise ValidationError("cross-validation needs at least two folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=int)
    offset = 0
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < folds:
            raise ValidationError(f"class {cls:+d} has {len(idx)} members, fewer than {folds} folds")
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return assignment


@dataclass(frozen=True)
class GridResult:
    best_C: float
    best_gamma: float
    best_accuracy: float
    # rows of (c_exponent, gamma_exponent, C, gamma, mean accuracy) in grid order
    table: tuple[tuple[int, int, float, float, float], ...]


def _cv_accuracy(X, y, fold_of, folds, C, gamma, tolerance, max_passes) -> float:
    spec = KernelSpec("rbf", gamma=gamma)
    cfg = TrainConfig(C=C, kernel=spec, tolerance=tolerance, max_passes=max_passes)
    scores = []
    for k in range(folds):
        test = fold_of == k
        model = smo_train(X[~test], y[~test], cfg)
        pred = np.where(model.decision_values(X[test]) > 0, 1.0, -1.0)
        scores.append(float(np.mean(pred == y[test])))
    return math.fsum(scores) / folds


def _cv_cell(args):
    return _cv_accuracy(*args)


def grid_search(
    points,
    labels,
    c_exponents: Sequence[int] = DEFAULT_C_EXPONENTS,
    gamma_exponents: Sequence[int] = DEFAULT_GAMMA_EXPONENTS,
    folds: int = 5,
    seed: int = 0,
    workers: int = 1,
    tolerance: float = 1e-3,
    max_passes: int = 10_000,
) -> GridResult:
    """Stratified k-fold CV accuracy over (C, gamma) = (2^a, 2^b) with an RBF kernel.

    Ties go to the smallest C, then the smallest gamma.
    """
    if not c_exponents or not gamma_exponents:
        raise ConfigurationError("grid search needs non-empty C and gamma grids")
    X, y = _check_training_input(points, labels)
    fold_of = stratified_folds(y, folds, seed)
    cells = [(a, b) for a in sorted(c_exponents) for b in sorted(gamma_exponents)]
    jobs = [(X, y, fold_of, folds, 2.0 ** a, 2.0 ** b, tolerance, max_passes) for a, b in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1)) as pool:
            scores = list(pool.map(_cv_cell, jobs))
    else:
        scores = [_cv_cell(job) for job in jobs]
    table = tuple((a, b, 2.0 ** a, 2.0 ** b, s) for (a, b), s in zip(cells, scores))
    best = max(table, key=lambda row: (row[4], -row[0], -row[1]))
    return GridResult(best[2], best[3], best[4], table)


# --------------------------------------------------------------------------- persistence

_HEADER_KEYS = ("version", "kernel", "gamma", "degree", "coef0", "C", "bias", "n_sv",
                "scaling_min", "scaling_max", "reference_year")


def _num(x: float) -> str:
    return format(float(x), ".17g")


def dumps_model(model: SvmModel) -> str:
    if model.scaling is None:
        raise ConfigurationError("only models with scaling parameters can be saved")
    model.check_invariants()
    lines = [
        f"version {model.format_version}",
        f"kernel {model.kernel.kind}",
        f"gamma {_num(model.kernel.gamma)}",
        f"degree {int(model.kernel.degree)}",
        f"coef0 {_num(model.kernel.coef0)}",
        f"C {_num(model.C)}",
        f"bias {_num(model.bias)}",
        f"n_sv {len(model.dual_coeffs)}",
        "scaling_min " + " ".join(_num(v) for v in model.scaling.mins),
        "scaling_max " + " ".join(_num(v) for v in model.scaling.maxs),
        f"reference_year {model.scaling.reference_year}",
    ]
    for coeff, sv in zip(model.dual_coeffs, model.support_vectors):
        lines.append(" ".join(_num(v) for v in (coeff, *sv)))
    return "\n".join(lines) + "\n"


def save_model(model: SvmModel, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dumps_model(model))


def _floats(tokens, lineno, what):
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise ModelFormatError(f"{what}: expected numbers, got {' '.join(tokens)!r}", lineno) from None
    if not all(math.isfinite(v) for v in values):
        raise ModelFormatError(f"{what}: non-finite value", lineno)
    return values


def loads_model(text: str) -> SvmModel:
    lines = text.splitlines()
    header = {}
    for idx, key in enumerate(_HEADER_KEYS):
        lineno = idx + 1
        if idx >= len(lines):
            raise ModelFormatError(f"truncated header: missing '{key}' line", lineno)
        tokens = lines[idx].split()
        if not tokens or tokens[0] != key:
            raise ModelFormatError(f"expected '{key}' header, got {lines[idx]!r}", lineno)
        values = tokens[1:]
        if key in ("scaling_min", "scaling_max"):
            if len(values) != 5:
                raise ModelFormatError(f"{key} needs 5 values, got {len(values)}", lineno)
            header[key] = _floats(values, lineno, key)
            continue
        if len(values) != 1:
            raise ModelFormatError(f"{key} needs exactly one value", lineno)
        value = values[0]
        if key == "kernel":
            header[key] = value
        elif key in ("version", "degree", "n_sv", "reference_year"):
            try:
                header[key] = int(value)
            except ValueError:
                raise ModelFormatError(f"{key} must be an integer, got {value!r}", lineno) from None
        else:
            header[key] = _floats([value], lineno, key)[0]
        if key == "version" and header[key] != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model version {header[key]} (expected {FORMAT_VERSION})", lineno)

    n_sv = header["n_sv"]
    body = lines[len(_HEADER_KEYS):]
    while body and not body[-1].strip():
        body.pop()
    if len(body) < n_sv:
        raise ModelFormatError(
            f"truncated support vector section: expected {n_sv} lines, found {len(body)}",
            len(_HEADER_KEYS) + len(body) + 1,
        )
    if len(body) > n_sv:
        raise ModelFormatError("unexpected lines after support vector section", len(_HEADER_KEYS) + n_sv + 1)
    coeffs, svs = [], []
    for offset, line in enumerate(body):
        lineno = len(_HEADER_KEYS) + offset + 1
        tokens = line.split()
        if len(tokens) != 6:
            raise ModelFormatError(f"support vector line needs 6 numbers, got {len(tokens)}", lineno)
        values = _floats(tokens, lineno, "support vector")
        coeffs.append(values[0])
        svs.append(values[1:])
    try:
        kernel = KernelSpec(header["kernel"], header["gamma"], header["degree"], header["coef0"])
        scaling = ScalingParams(tuple(header["scaling_min"]), tuple(header["scaling_max"]), header["reference_year"])
        model = SvmModel(kernel, header["C"], np.array(svs).reshape(n_sv, 5), np.array(coeffs),
                         header["bias"], scaling, header["version"])
        model.check_invariants()
    except (ConfigurationError, ValidationError) as exc:
        raise ModelFormatError(f"invalid model: {exc}") from exc
    return model


def load_model(path) -> SvmModel:
    with open(path, encoding="ascii") as fh:
        return loads_model(fh.read())
