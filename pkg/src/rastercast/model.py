"""L1-penalized logistic regression.

The objective is

    L(w) = c * ||w||_1 + sum_i [softplus(a_i) - y_i * a_i],   a_i = w0 + x_i . w[1:]

i.e. the negative log-likelihood of a logistic model with intercept plus an
L1 penalty. By default the penalty covers the intercept too; pass
``penalize_intercept=False`` to exempt it.

Two solvers minimize it: :func:`fit_saga` (stochastic, the production
path) and :func:`fit_reference` (accelerated proximal gradient with
backtracking, used to validate SAGA).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ContractError, FoldError, SolverError
from .seeding import derive_seed

_P_MIN = np.finfo(np.float64).tiny
_P_MAX = np.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class Design:
    """Feature matrix (one row per cell) and 0/1 labels; the intercept column is implicit."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractError(f"design rows {X.shape} do not match labels {y.shape}")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ContractError("labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Design":
        return Design(self.X[idx], self.y[idx])


@dataclass(frozen=True, eq=False)
class FitResult:
    w: np.ndarray
    c: float
    loss: float
    epochs: int
    converged: bool
    penalize_intercept: bool = True
    nonzero: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "nonzero", np.flatnonzero(self.w[1:]))

    @property
    def dim(self) -> int:
        return self.w.size - 1


def sigmoid(a):
    """Logistic function without overflow, clamped to ``[tiny, 1 - eps/2]``."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _P_MIN, _P_MAX)


def linear_predictor(w, X) -> np.ndarray:
    """``w0 + X @ w[1:]`` using only the nonzero weights."""
    w = np.asarray(w, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if w.size != X.shape[1] + 1:
        raise ContractError(f"weights of length {w.size} do not fit {X.shape[1]} features")
    nz = np.flatnonzero(w[1:])
    a = np.full(X.shape[0], w[0])
    if nz.size:
        a = a + X[:, nz] @ w[1:][nz]
    return a


def predict_proba(w, x):
    """Probability of the flooded class for one feature vector or a matrix of rows."""
    single = np.ndim(x) == 1
    p = sigmoid(linear_predictor(w, x))
    return float(p[0]) if single else p


def classify(proba, rng=None) -> np.ndarray:
    """Threshold probabilities at 0.5.

    A probability of exactly 0.5 carries no information; such ties are
    settled by a fair coin from ``rng`` (or counted as dry without one).
    """
    proba = np.asarray(proba)
    pred = (proba > 0.5).astype(np.int8)
    ties = np.flatnonzero(proba == 0.5)
    if ties.size and rng is not None:
        pred[ties] = rng.random(ties.size) < 0.5
    return pred


def _penalty(w, penalize_intercept):
    return math.fsum(np.abs(w if penalize_intercept else w[1:]).tolist())


def _nll(a, y) -> float:
    return math.fsum((np.logaddexp(0.0, a) - y * a).tolist())


def loss(w, design: Design, c: float, penalize_intercept=True) -> float:
    """L1 penalty plus negative log-likelihood, summed over rows."""
    if c < 0:
        raise ContractError("regularization constant must be non-negative")
    w = np.asarray(w, dtype=np.float64)
    return c * _penalty(w, penalize_intercept) + _nll(linear_predictor(w, design.X), design.y)


def _epoch_objective(w, X, y, c, penalize_intercept) -> float:
    # dense matvec: cheaper than the nonzero-only path for the per-epoch stopping test
    return c * _penalty(w, penalize_intercept) + _nll(X @ w[1:] + w[0], y)


def grad_smooth(w, design: Design) -> np.ndarray:
    """Gradient of the negative log-likelihood: ``sum_i (sigma(a_i) - y_i) * (1, x_i)``."""
    r = sigmoid(linear_predictor(w, design.X)) - design.y
    g = np.empty(design.dim + 1)
    g[0] = math.fsum(r.tolist())
    g[1:] = design.X.T @ r
    return g


def c_max(design: Design, penalize_intercept=True) -> float:
    """Smallest ``c`` at which every penalized coefficient is zero at the optimum."""
    if penalize_intercept:
        g = grad_smooth(np.zeros(design.dim + 1), design)
        return float(np.abs(g).max())
    ybar = design.y.mean()
    if ybar in (0.0, 1.0):
        return 0.0
    w = np.zeros(design.dim + 1)
    w[0] = math.log(ybar / (1 - ybar))
    return float(np.abs(grad_smooth(w, design)[1:]).max())


def default_step_size(design: Design) -> float:
    """``1 / (3 L)`` with ``L = max_i ||(1, x_i)||^2 / 4``."""
    lip = (1.0 + np.einsum("ij,ij->i", design.X, design.X).max()) / 4.0
    return 1.0 / (3.0 * lip)


@numba.njit(cache=True, nogil=True)
def _saga_epoch(X, y, w, table, avg, order, step, thresh, penalize_intercept):
    n, dim = X.shape
    inv_n = 1.0 / n
    for j in order:
        a = w[0]
        for k in range(dim):
            a += X[j, k] * w[k + 1]
        if a >= 0.0:
            p = 1.0 / (1.0 + math.exp(-a))
        else:
            e = math.exp(a)
            p = e / (1.0 + e)
        g = p - y[j]
        dg = g - table[j]
        table[j] = g

        v = w[0] - step * (dg + avg[0])
        if penalize_intercept:
            v = math.copysign(max(abs(v) - thresh, 0.0), v)
        w[0] = v
        avg[0] += dg * inv_n
        for k in range(dim):
            xk = X[j, k]
            v = w[k + 1] - step * (dg * xk + avg[k + 1])
            w[k + 1] = math.copysign(max(abs(v) - thresh, 0.0), v)
            avg[k + 1] += dg * xk * inv_n


def fit_saga(design: Design, c: float, step_size=None, max_epochs=500, tol=1e-8, seed=0,
             penalize_intercept=True, w0=None) -> FitResult:
    """Minimize the objective with proximal SAGA.

    Samples are drawn uniformly with replacement; the stored-gradient table
    starts at ``w0`` (zero by default). Stops once the relative change of
    the objective between consecutive epochs falls below ``tol``.

    Raises
    ------
    SolverError
        If the objective becomes infinite or NaN.
    """
    if c < 0:
        raise ContractError("regularization constant must be non-negative")
    step = default_step_size(design) if step_size is None else float(step_size)
    if not step > 0:
        raise ContractError("step size must be positive")
    n = design.n_rows
    X, y = design.X, design.y
    w = np.zeros(design.dim + 1) if w0 is None else np.array(w0, dtype=np.float64)
    table = sigmoid(linear_predictor(w, X)) - y
    rng = np.random.default_rng(seed)
    thresh = step * c / n
    prev = _epoch_objective(w, X, y, c, penalize_intercept)
    converged = False
    epoch = 0
    while epoch < max_epochs:
        epoch += 1
        avg = np.empty(design.dim + 1)
        avg[0] = table.sum() / n
        avg[1:] = (X.T @ table) / n
        order = rng.integers(0, n, size=n)
        _saga_epoch(X, y, w, table, avg, order, step, thresh, penalize_intercept)
        cur = _epoch_objective(w, X, y, c, penalize_intercept)
        if not math.isfinite(cur):
            raise SolverError("objective diverged", epoch)
        if abs(prev - cur) <= tol * max(abs(cur), 1e-300):
            converged = True
            break
        prev = cur
    return FitResult(w, float(c), loss(w, design, c, penalize_intercept), epoch, converged, penalize_intercept)


def _soft_threshold(v, t, penalize_intercept):
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if not penalize_intercept:
        out[0] = v[0]
    return out


def fit_reference(design: Design, c: float, tol=1e-10, max_iter=100_000, penalize_intercept=True,
                  w0=None) -> FitResult:
    """Minimize the objective with accelerated proximal gradient descent.

    Uses backtracking on the step size and gradient-based momentum restarts. Stops when the norm of the gradient mapping
    ``(y - prox(y - eta * grad)) / eta`` drops below ``tol`` times
    ``max(1, |grad at 0|)``; ``epochs`` counts accepted updates.
    """
    if c < 0:
        raise ContractError("regularization constant must be non-negative")
    X, yv = design.X, design.y

    def smooth(w):
        return _nll(linear_predictor(w, X), yv)

    def objective(w):
        return c * _penalty(w, penalize_intercept) + smooth(w)

    scale = max(1.0, float(np.linalg.norm(grad_smooth(np.zeros(design.dim + 1), design))))
    x = np.zeros(design.dim + 1) if w0 is None else np.array(w0, dtype=np.float64)
    y = x.copy()
    t = 1.0
    eta = 1.0
    converged = False
    it = 0
    for it in range(max_iter):
        gy = grad_smooth(y, design)
        fy = smooth(y)
        if not math.isfinite(fy):
            raise SolverError("objective diverged", it)
        while True:
            z = _soft_threshold(y - eta * gy, eta * c, penalize_intercept)
            diff = z - y
            bound = fy + gy @ diff + (diff @ diff) / (2 * eta)
            if smooth(z) <= bound + 1e-13 * abs(fy):
                break
            eta *= 0.5
        if np.linalg.norm(diff) / eta <= tol * scale:
            if it > 0 or objective(z) < objective(x):
                x = z
            converged = True
            break
        if (y - z) @ (z - x) > 0:
            # momentum points uphill: restart
            t = 1.0
            y = z
        else:
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            y = z + ((t - 1.0) / t_next) * (z - x)
            t = t_next
        x = z
        eta *= 1.1
    fx = objective(x)
    if not math.isfinite(fx):
        raise SolverError("objective diverged", it)
    return FitResult(x, float(c), fx, it, converged, penalize_intercept)


def f1_score(predicted, actual) -> float:
    """F1 of the positive (flooded) class; 0 when precision + recall is 0."""
    predicted = np.asarray(predicted).astype(bool)
    actual = np.asarray(actual).astype(bool)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise ContractError("predictions and labels must be non-empty and of equal length")
    tp = int(np.count_nonzero(predicted & actual))
    fp = int(np.count_nonzero(predicted & ~actual))
    fn = int(np.count_nonzero(~predicted & actual))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def stratified_folds(y, folds: int, seed) -> np.ndarray:
    """Assign each row a fold id, dealing each class round-robin after a seeded shuffle."""
    if folds < 2:
        raise ContractError("need at least two folds")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    assignment = np.empty(y.size, dtype=np.int64)
    for label in (0, 1):
        idx = np.flatnonzero(y == label)
        if idx.size < folds:
            raise FoldError(f"class {label} has {idx.size} rows, fewer than {folds} folds")
        assignment[rng.permutation(idx)] = np.arange(idx.size) % folds
    return assignment


def grouped_folds(groups, y, folds: int, seed) -> np.ndarray:
    """Assign whole groups (e.g. spatial tiles) to folds.

    Groups are split by majority class and each side is dealt round-robin
    after a seeded shuffle, so every fold sees both classes whenever each
    side has at least ``folds`` groups.

    Raises
    ------
    FoldError
        If there are fewer groups than folds or a fold lacks one of the classes.
    """
    if folds < 2:
        raise ContractError("need at least two folds")
    groups = np.asarray(groups)
    y = np.asarray(y)
    uniq, inverse = np.unique(groups, return_inverse=True)
    if uniq.size < folds:
        raise FoldError(f"{uniq.size} groups cannot fill {folds} folds")
    positive = np.bincount(inverse, weights=(y == 1).astype(np.float64), minlength=uniq.size)
    size = np.bincount(inverse, minlength=uniq.size)
    majority = 2 * positive >= size
    rng = np.random.default_rng(seed)
    fold_of = np.empty(uniq.size, dtype=np.int64)
    offset = 0
    for side in (True, False):
        idx = rng.permutation(np.flatnonzero(majority == side))
        fold_of[idx] = (offset + np.arange(idx.size)) % folds
        offset += idx.size
    assignment = fold_of[inverse]
    for k in range(folds):
        labels = set(np.unique(y[assignment == k]).tolist())
        if labels != {0, 1}:
            raise FoldError(f"fold {k} does not contain both classes")
    return assignment


def default_c_grid(n_rows: int) -> list[float]:
    return [10.0 ** k * n_rows for k in range(-4, 3)]


@dataclass(frozen=True)
class CVResult:
    best_c: float
    mean_f1: dict
    n_fits: int


def cross_validate(design: Design, grid, folds=5, seed=0, penalize_intercept=True, assignment=None,
                   **fit_kwargs) -> CVResult:
    """Score every ``c`` in ``grid`` by mean validation F1 over stratified folds.

    A precomputed fold ``assignment`` (one fold id per row, e.g. from
    :func:`grouped_folds`) replaces the stratified split.

    Within a fold, fits run from the largest ``c`` down, each warm-started
    from the previous solution. The best mean F1 wins; ties go to the
    larger ``c``.
    """
    grid = sorted({float(c) for c in grid}, reverse=True)
    if not grid:
        raise ContractError("regularization grid is empty")
    if assignment is None:
        assignment = stratified_folds(design.y, folds, seed)
    else:
        assignment = np.asarray(assignment)
        if assignment.shape != (design.n_rows,) or set(np.unique(assignment).tolist()) != set(range(folds)):
            raise ContractError(f"fold assignment must give every row a fold in 0..{folds - 1}")
    scores = {c: [] for c in grid}
    n_fits = 0
    for k in range(folds):
        train = design.subset(assignment != k)
        val = design.subset(assignment == k)
        w = None
        for i, c in enumerate(grid):
            fit = fit_saga(train, c, seed=derive_seed(seed, k, i), penalize_intercept=penalize_intercept,
                           w0=w, **fit_kwargs)
            n_fits += 1
            w = fit.w
            rng = np.random.default_rng(derive_seed(seed, k, i, 1))
            pred = classify(predict_proba(fit.w, val.X), rng)
            scores[c].append(f1_score(pred, val.y))
    mean_f1 = {c: math.fsum(v) / len(v) for c, v in scores.items()}
    best = max(grid, key=lambda c: (mean_f1[c], c))
    return CVResult(best, mean_f1, n_fits)


def cross_validate_c(design: Design, grid, folds=5, seed=0, **kwargs) -> float:
    return cross_validate(design, grid, folds, seed, **kwargs).best_c


@dataclass(frozen=True, eq=False)
class Relevance:
    """Per-feature relevance aggregated over runs."""

    mean_score: np.ndarray
    runs_selected: np.ndarray
    n_runs: int

    def ranked(self, features) -> list[int]:
        features = list(features)
        return sorted(features, key=lambda j: (-self.mean_score[j], j))

    @property
    def union(self) -> list[int]:
        return self.ranked(np.flatnonzero(self.runs_selected > 0).tolist())

    @property
    def intersection(self) -> list[int]:
        return self.ranked(np.flatnonzero(self.runs_selected == self.n_runs).tolist())


def relevance_scores(fits) -> Relevance:
    """Average ``(kappa - rank) / kappa`` scores over runs.

    In each run the ``kappa`` nonzero features are ranked by decreasing
    ``|w|`` (rank 0 first, ties by feature index); unselected features
    score 0.
    """
    fits = list(fits)
    if not fits:
        raise ContractError("need at least one fit")
    dim = fits[0].dim
    total = np.zeros(dim)
    selected = np.zeros(dim, dtype=np.int64)
    for fit in fits:
        if fit.dim != dim:
            raise ContractError("fits have different dimensions")
        nz = fit.nonzero
        kappa = nz.size
        if kappa == 0:
            continue
        order = nz[np.argsort(-np.abs(fit.w[1:][nz]), kind="stable")]
        total[order] += (kappa - np.arange(kappa)) / kappa
        selected[order] += 1
    return Relevance(total / len(fits), selected, len(fits))


def write_model(fit: FitResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"c {fit.c:.9g}\n")
        fh.write(f"intercept {fit.w[0]:.9g}\n")
        for j in fit.nonzero.tolist():
            fh.write(f"{j} {fit.w[j + 1]:.9g}\n")
        fh.write(f"# dim {fit.dim}\n")


def load_model(path):
    """Read a model file; returns ``(c, w, dim)`` with ``dim`` None when unrecorded."""
    coefs, dim = {}, None
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if len(lines) < 2 or lines[0][0] != "c" or lines[1][0] != "intercept":
        raise ValueError(f"{path}: expected 'c' and 'intercept' lines")
    c, intercept = float(lines[0][1]), float(lines[1][1])
    for parts in lines[2:]:
        if parts[0] == "#":
            if parts[1:2] == ["dim"]:
                dim = int(parts[2])
            continue
        coefs[int(parts[0])] = float(parts[1])
    size = dim if dim is not None else (max(coefs) + 1 if coefs else 0)
    if coefs and max(coefs) >= size:
        raise ValueError(f"{path}: coefficient index beyond recorded dimension {size}")
    w = np.zeros(size + 1)
    w[0] = intercept
    for j, v in coefs.items():
        w[j + 1] = v
    return c, w, dim
