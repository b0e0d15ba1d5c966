"""Repeated balanced train/test protocol and its reports.

Every run draws a balanced training sample and a disjoint balanced test
sample, picks ``c`` by stratified cross-validation on the training sample,
refits there and scores the test sample by F1 of the flooded class. Runs
use independent seeds derived from the master seed, so the report does not
depend on how many threads execute them.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregate import FeatureGrid
from .errors import ContractError, RastercastError, SamplingError
from .model import (
    Design,
    FitResult,
    Relevance,
    classify,
    cross_validate,
    default_c_grid,
    f1_score,
    fit_saga,
    grouped_folds,
    predict_proba,
    relevance_scores,
)
from .raster import DRY, FLOODED, LabelGrid
from .seeding import derive_seed

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "RunResult",
    "balanced_sample",
    "f1_score",
    "run_experiment",
    "run_once",
    "write_report",
    "write_relevance",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """Protocol settings. ``cv_grid=None`` means :func:`default_c_grid` of the training size."""

    n_runs: int = 10
    train_size: int = 2000
    test_size: int = 400
    family: str = "tfidf"
    cv_folds: int = 5
    cv_grid: tuple | None = None
    seed: int = 0
    threads: int = 1
    penalize_intercept: bool = True
    holdout_block: int = 0
    holdout_gap: int = 0
    include_empty: bool = False

    def __post_init__(self):
        if self.n_runs < 1:
            raise ContractError("n_runs must be at least 1")
        for name in ("train_size", "test_size"):
            size = getattr(self, name)
            if size < 2 or size % 2:
                raise ContractError(f"{name} must be a positive even number, got {size}")
        if self.cv_folds < 2:
            raise ContractError("cv_folds must be at least 2")
        if self.threads < 1:
            raise ContractError("threads must be at least 1")
        if self.holdout_block < 0 or self.holdout_gap < 0:
            raise ContractError("holdout block size and gap must be non-negative")

    def grid(self) -> list[float]:
        return list(self.cv_grid) if self.cv_grid is not None else default_c_grid(self.train_size)


def _label_array(labels) -> np.ndarray:
    return np.asarray(labels.labels if isinstance(labels, LabelGrid) else labels).ravel()


def balanced_sample(labels, size: int, seed, eligible=None) -> np.ndarray:
    """Draw ``size/2`` flooded and ``size/2`` dry cells uniformly without replacement.

    Returns sorted flat (row-major) cell indices. Excluded cells never
    qualify; ``eligible`` optionally narrows the pool further.
    """
    if size < 2 or size % 2:
        raise ContractError(f"sample size must be a positive even number, got {size}")
    flat = _label_array(labels)
    pool = np.ones(flat.size, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool).ravel()
    rng = np.random.default_rng(seed)
    half = size // 2
    picked = []
    for cls, name in ((FLOODED, "flooded"), (DRY, "dry")):
        idx = np.flatnonzero((flat == cls) & pool)
        if idx.size < half:
            raise SamplingError(f"need {half} {name} cells but only {idx.size} are eligible")
        picked.append(rng.choice(idx, size=half, replace=False))
    return np.sort(np.concatenate(picked))


@dataclass(frozen=True, eq=False)
class RunResult:
    run: int
    f1: float
    chosen_c: float
    fit: FitResult
    train: np.ndarray
    test: np.ndarray

    @property
    def nonzero_count(self) -> int:
        return int(self.fit.nonzero.size)


def _dilate(mask: np.ndarray, gap: int) -> np.ndarray:
    """Cells within Chebyshev distance ``gap`` of a set cell."""
    out = mask.copy()
    for axis in (0, 1):
        grown = out.copy()
        n = out.shape[axis]
        for k in range(1, min(gap, n - 1) + 1):
            lo = [slice(None)] * 2
            hi = [slice(None)] * 2
            lo[axis], hi[axis] = slice(0, n - k), slice(k, n)
            grown[tuple(lo)] |= out[tuple(hi)]
            grown[tuple(hi)] |= out[tuple(lo)]
        out = grown
    return out


def _tiles(shape, block: int) -> np.ndarray:
    n_rows, n_cols = shape
    return (np.arange(n_rows)[:, None] // block) * (-(-n_cols // block)) + np.arange(n_cols)[None, :] // block


def holdout_region(y2d, eligible2d, block: int, gap: int, test_half: int, seed):
    """Pick whole ``block`` x ``block`` tiles for testing until both classes can fill ``test_half``.

    Returns ``(test_pool, train_pool)``; the training pool keeps only cells
    farther than ``gap`` cells from every test tile.
    """
    tiles = _tiles(y2d.shape, block)
    rng = np.random.default_rng(seed)
    region = np.zeros(y2d.shape, dtype=bool)
    for t in rng.permutation(int(tiles.max()) + 1).tolist():
        region |= tiles == t
        pool = region & eligible2d
        if (np.count_nonzero(pool & (y2d == FLOODED)) >= test_half
                and np.count_nonzero(pool & (y2d == DRY)) >= test_half):
            break
    return region & eligible2d, eligible2d & ~_dilate(region, gap)


def run_once(config: ExperimentConfig, y, X, eligible, run: int, shape=None) -> RunResult:
    """One protocol pass with seeds derived from ``(config.seed, run)``."""
    seed = derive_seed(config.seed, run)
    if config.holdout_block:
        if shape is None:
            raise ContractError("spatial holdout needs the grid shape")
        test_pool, train_pool = holdout_region(y.reshape(shape), eligible.reshape(shape), config.holdout_block,
                                               config.holdout_gap, config.test_size // 2, derive_seed(seed, 5))
        test = balanced_sample(y, config.test_size, derive_seed(seed, 1), test_pool)
        train = balanced_sample(y, config.train_size, derive_seed(seed, 0), train_pool)
    else:
        train = balanced_sample(y, config.train_size, derive_seed(seed, 0), eligible)
        pool = eligible.copy()
        pool[train] = False
        test = balanced_sample(y, config.test_size, derive_seed(seed, 1), pool)

    design = Design(X[train], (y[train] == FLOODED).astype(np.float64))
    assignment = None
    if config.holdout_block:
        groups = _tiles(shape, config.holdout_block).ravel()[train]
        assignment = grouped_folds(groups, design.y, config.cv_folds, derive_seed(seed, 2))
    cv = cross_validate(design, config.grid(), config.cv_folds, derive_seed(seed, 2),
                        penalize_intercept=config.penalize_intercept, assignment=assignment)
    fit = fit_saga(design, cv.best_c, seed=derive_seed(seed, 3), penalize_intercept=config.penalize_intercept)
    pred = classify(predict_proba(fit.w, X[test]), np.random.default_rng(derive_seed(seed, 4)))
    score = f1_score(pred, y[test] == FLOODED)
    return RunResult(run, score, cv.best_c, fit, train, test)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    config: ExperimentConfig
    runs: list
    f1: np.ndarray = field(init=False)
    nonzero: np.ndarray = field(init=False)
    chosen_c: np.ndarray = field(init=False)
    mean_f1: float = field(init=False)
    std_f1: float = field(init=False)
    mean_nonzero: float = field(init=False)
    median_nonzero: float = field(init=False)
    relevance: Relevance = field(init=False)

    def __post_init__(self):
        f1 = np.array([r.f1 for r in self.runs])
        nz = np.array([r.nonzero_count for r in self.runs], dtype=np.int64)
        n = f1.size
        mean = math.fsum(f1.tolist()) / n
        # sample std (n - 1); a single run has no spread to report
        std = math.sqrt(math.fsum(((f1 - mean) ** 2).tolist()) / (n - 1)) if n > 1 else 0.0
        values = {
            "f1": f1,
            "nonzero": nz,
            "chosen_c": np.array([r.chosen_c for r in self.runs]),
            "mean_f1": mean,
            "std_f1": std,
            "mean_nonzero": math.fsum(nz.tolist()) / n,
            "median_nonzero": float(np.median(nz)),
            "relevance": relevance_scores([r.fit for r in self.runs]),
        }
        for key, value in values.items():
            object.__setattr__(self, key, value)

    @property
    def fits(self) -> list:
        return [r.fit for r in self.runs]

    def summary(self) -> str:
        return f"F1 = {self.mean_f1:.4f} ± {self.std_f1:.4f}"


def _design_inputs(labels, features, eligible, include_empty=False):
    y = _label_array(labels)
    shape = np.shape(labels.labels if isinstance(labels, LabelGrid) else labels)
    if isinstance(features, FeatureGrid):
        if features.shape != tuple(shape):
            raise ContractError(f"features cover a {features.n_rows}x{features.n_cols} grid, labels do not")
        X = features.values
        # empty-mass cells carry all-zero features; sampled only on request
        mask = np.ones(y.size, dtype=bool) if include_empty else ~features.empty.ravel()
    else:
        X = np.asarray(features, dtype=np.float64)
        mask = np.ones(y.size, dtype=bool)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ContractError(f"feature matrix {X.shape} does not have one row per cell ({y.size})")
    if eligible is not None:
        mask = mask & np.asarray(eligible, dtype=bool).ravel()
    return y, np.ascontiguousarray(X, dtype=np.float64), mask, (shape if len(shape) == 2 else None)


def run_experiment(config: ExperimentConfig, labels, features, eligible=None) -> ExperimentReport:
    """Run the protocol ``config.n_runs`` times.

    ``features`` is a :class:`FeatureGrid` (empty-mass cells are ineligible
    unless ``config.include_empty``) or a matrix with one row per cell in
    row-major order.

    Raises
    ------
    RastercastError
        Sampling or solver failures, with the failing run index prepended.
    """
    y, X, mask, shape = _design_inputs(labels, features, eligible, config.include_empty)

    def one(run):
        try:
            return run_once(config, y, X, mask, run, shape)
        except RastercastError as exc:
            wrapped = type(exc)(f"run {run}: {exc}")
            wrapped.run = run
            raise wrapped from exc

    if config.threads == 1 or config.n_runs == 1:
        runs = [one(r) for r in range(config.n_runs)]
    else:
        with ThreadPoolExecutor(max_workers=min(config.threads, config.n_runs)) as pool:
            runs = list(pool.map(one, range(config.n_runs)))
    return ExperimentReport(config, runs)


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_report(report: ExperimentReport, path) -> None:
    """Per-run CSV followed by ``mean``, ``std`` and ``median`` footer rows."""
    lines = ["run,f1,nonzero_count,chosen_c"]
    for r in report.runs:
        lines.append(f"{r.run},{r.f1!r},{r.nonzero_count},{r.chosen_c!r}")
    lines.append(f"mean,{report.mean_f1!r},{report.mean_nonzero!r},")
    lines.append(f"std,{report.std_f1!r},,")
    lines.append(f"median,,{report.median_nonzero!r},")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_relevance(report: ExperimentReport, path, phrases=None) -> None:
    """Selected features ranked by mean relevance score."""
    rel = report.relevance
    lines = ["feature,phrase,mean_score,runs_selected"]
    for j in rel.union:
        phrase = phrases[j] if phrases is not None and j < len(phrases) else ""
        if any(ch in phrase for ch in ',"\n'):
            phrase = '"' + phrase.replace('"', '""') + '"'
        lines.append(f"{j},{phrase},{float(rel.mean_score[j])!r},{int(rel.runs_selected[j])}")
    _atomic_write(path, "\n".join(lines) + "\n")
