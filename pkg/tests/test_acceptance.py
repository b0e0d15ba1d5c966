"""Acceptance criteria, one test each, reported as PASS/FAIL lines with timings."""

import math
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from rastercast.aggregate import aggregate_grid, brute_force_grid, gaussian_kernel, write_features
from rastercast.cli import main
from rastercast.corpus import GeoMessage, to_geo_message
from rastercast.experiment import ExperimentConfig, run_experiment
from rastercast.model import (
    Design,
    c_max,
    default_c_grid,
    f1_score,
    fit_reference,
    fit_saga,
    grad_smooth,
    loss,
)
from rastercast.raster import DRY, EXCLUDED, FLOODED, RasterGrid, derive_labels, write_raster
from rastercast.synth import ScenarioSpec, generate
from rastercast.text import build_vocabulary, idf_value, ngrams, query_match, stem, tfidf_vector

from test_text import PORTER_PAIRS

pytestmark = pytest.mark.acceptance

# spatially blocked evaluation used for the synthetic end-to-end checks
HOLDOUT = dict(holdout_block=20, holdout_gap=5)


@contextmanager
def criterion(name, limit_s, capsys):
    """Time a criterion and print one PASS/FAIL line for it."""
    state = {"detail": ""}
    start = time.perf_counter()
    ok = False
    try:
        yield state
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        in_time = elapsed < limit_s
        verdict = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n{verdict} {name} ({elapsed:.1f} s, limit {limit_s:g} s) {state['detail']}")
    assert in_time, f"{name} took {elapsed:.1f} s, limit {limit_s} s"


_CACHE = {}


def featurized(signal_strength):
    """Scenario labels plus SMER and TFIDF feature grids for the default synthetic setup."""
    if signal_strength not in _CACHE:
        spec = ScenarioSpec(signal_strength=signal_strength)
        sc = generate(spec)
        msgs = [to_geo_message(m, spec.start_date) for m in sc.messages]
        docs = [ngrams(m.tokens, 2) for m in msgs]
        vocab = build_vocabulary(docs, 10)
        query = frozenset(sc.signal_words[:5])
        smer = aggregate_grid(sc.heights, 0, msgs, [query_match(m.tokens, query) for m in msgs])
        tfidf = aggregate_grid(sc.heights, 0, msgs, [tfidf_vector(d, vocab) for d in docs])
        _CACHE[signal_strength] = (sc, derive_labels(sc.heights), smer, tfidf)
    return _CACHE[signal_strength]


def test_gradient_oracle(capsys):
    with criterion("gradient oracle", 5, capsys) as out:
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(60):
            n, dim = int(rng.integers(2, 31)), int(rng.integers(1, 11))
            d = Design(rng.normal(size=(n, dim)), rng.integers(0, 2, n).astype(float))
            w = rng.normal(size=dim + 1)
            g = grad_smooth(w, d)
            fd = np.empty_like(g)
            for j in range(dim + 1):
                e = np.zeros(dim + 1)
                e[j] = 1e-6
                fd[j] = (loss(w + e, d, 0.0) - loss(w - e, d, 0.0)) / 2e-6
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
        out["detail"] = f"worst relative error {worst:.2e}"
        assert worst < 1e-5


def test_solver_equivalence(capsys):
    with criterion("solver equivalence", 30, capsys) as out:
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(10):
            X = rng.normal(size=(200, 10))
            beta = rng.normal(size=10) * (rng.random(10) < 0.5)
            y = (X @ beta + rng.normal(size=200) > 0).astype(float)
            d = Design(X, y)
            for c in (1e-3, 1e-1, 10.0):
                ref = fit_reference(d, c, tol=1e-10)
                saga = fit_saga(d, c, seed=int(rng.integers(1 << 31)))
                worst = max(worst, abs(saga.loss - ref.loss) / abs(ref.loss))
        out["detail"] = f"worst relative objective gap {worst:.2e}"
        assert worst < 1e-6


def test_aggregation_oracle(capsys):
    with criterion("aggregation oracle", 60, capsys) as out:
        rng = np.random.default_rng(3)
        grid = RasterGrid(np.zeros((50, 50)), -95.8, 29.5, 2e-3)
        lo_lon, lo_lat, hi_lon, hi_lat = grid.bounds
        msgs = [GeoMessage((float(rng.uniform(lo_lon, hi_lon)), float(rng.uniform(lo_lat, hi_lat))),
                           float(math.exp(rng.uniform(math.log(1e-3), math.log(5e-3)))), 0, ())
                for _ in range(1000)]
        z = rng.integers(0, 2, 1000).tolist()
        docs = [[f"w{k}" for k in rng.integers(0, 40, 5)] for _ in range(1000)]
        vocab = build_vocabulary(docs, 5)
        rhos = [tfidf_vector(doc, vocab) for doc in docs]
        fast_s = aggregate_grid(grid, 0, msgs, z, truncation_radius=8.0)
        slow_s = brute_force_grid(grid, 0, msgs, z)
        fast_t = aggregate_grid(grid, 0, msgs, rhos, truncation_radius=8.0)
        slow_t = brute_force_grid(grid, 0, msgs, rhos)
        ds = float(np.abs(fast_s.values - slow_s.values).max())
        dt = float(np.abs(fast_t.values - slow_t.values).max())
        out["detail"] = f"max |d smer| {ds:.1e}, max |d tfidf| {dt:.1e}"
        assert ds < 1e-6 and dt < 1e-6


def test_formula_spot_checks(capsys):
    with criterion("formula spot checks", 1, capsys):
        assert abs(float(idf_value(3, 1)) - 1.6931471805599454) < 1e-9
        assert abs(gaussian_kernel((0.0, 0.0), (0.0, 0.0), 1.0) - 0.3989422804014327) < 1e-9
        rng = np.random.default_rng(4)
        d = Design(rng.normal(size=(37, 3)), rng.integers(0, 2, 37).astype(float))
        assert abs(loss(np.zeros(4), d, 1.0) - 37 * math.log(2)) < 1e-12
        actual = np.array([1, 0] * 50)
        assert abs(f1_score(np.ones(100), actual) - 2 / 3) < 1e-12


def test_label_thresholds(capsys):
    with criterion("label thresholds", 1, capsys):
        heights = RasterGrid(np.array([[0.1, 0.2, 0.3, 9.9, 10.0, 999.0]]), 0.0, 0.0, 1.0)
        np.testing.assert_array_equal(derive_labels(heights).labels[0],
                                      [DRY, DRY, FLOODED, FLOODED, EXCLUDED, EXCLUDED])


def test_end_to_end_synthetic(capsys):
    with criterion("end-to-end synthetic ordering", 180, capsys) as out:
        threads = os.cpu_count() or 1
        scores = {}
        for ps in (0.6, 0.0):
            _, labels, smer, tfidf = featurized(ps)
            for name, feats in (("smer", smer), ("tfidf", tfidf)):
                cfg = ExperimentConfig(family=name, seed=1, threads=threads, **HOLDOUT)
                scores[ps, name] = run_experiment(cfg, labels, feats).mean_f1
        out["detail"] = ", ".join(f"p_s={ps} {name} F1={v:.3f}" for (ps, name), v in scores.items())
        assert scores[0.6, "tfidf"] >= 0.80
        assert scores[0.6, "tfidf"] > scores[0.6, "smer"]
        assert 0.45 <= scores[0.0, "smer"] <= 0.55
        assert 0.45 <= scores[0.0, "tfidf"] <= 0.55


def test_sparsity(capsys):
    with criterion("sparsity with appended noise", 120, capsys) as out:
        _, labels, _, tfidf = featurized(0.6)
        rng = np.random.default_rng(5)
        noise = 0.05 * rng.normal(size=(tfidf.values.shape[0], 200))
        X = np.hstack([tfidf.values, noise])
        eligible = ~tfidf.empty.ravel()
        cfg = ExperimentConfig(n_runs=1, seed=2, threads=1, **HOLDOUT)
        report = run_experiment(cfg, labels.labels, X, eligible=eligible)
        fit = report.runs[0].fit
        share = fit.nonzero.size / X.shape[1]

        train = report.runs[0].train
        y = (labels.labels.ravel()[train] == FLOODED).astype(float)
        design = Design(X[train], y)
        top = max(default_c_grid(cfg.train_size))
        zero_fit = fit_saga(design, top, seed=0)
        out["detail"] = (f"selected {fit.nonzero.size}/{X.shape[1]} ({share:.1%}) at c={report.runs[0].chosen_c:g}; "
                         f"c_max={c_max(design):.1f} <= grid max {top:g}")
        assert share < 0.5
        assert c_max(design) <= top
        assert np.all(zero_fit.w == 0.0)


def test_determinism(capsys, tmp_path):
    with criterion("determinism across threads", 600, capsys) as out:
        sc, _, _, tfidf = featurized(0.6)
        write_raster(sc.heights, tmp_path / "heights.asc")
        write_features(tfidf, tmp_path / "features.txt")
        for threads in (1, 4):
            code = main(["evaluate", "--features", str(tmp_path / "features.txt"),
                         "--grid", str(tmp_path / "heights.asc"), "--seed", "11", "--threads", str(threads),
                         "--holdout-block", "20", "--holdout-gap", "5", "--out", str(tmp_path / f"t{threads}")])
            assert code == 0
        a = (tmp_path / "t1" / "report.csv").read_bytes()
        b = (tmp_path / "t4" / "report.csv").read_bytes()
        out["detail"] = f"{len(a)} report bytes, identical={a == b}"
        assert a == b
        assert (tmp_path / "t1" / "relevance.csv").read_bytes() == (tmp_path / "t4" / "relevance.csv").read_bytes()


def test_stemmer_conformance(capsys):
    with criterion("stemmer conformance", 1, capsys) as out:
        assert [stem(w) for w in ("flood", "flooding", "flooded")] == ["flood"] * 3
        mismatches = [(w, stem(w), e) for w, e in PORTER_PAIRS if stem(w) != e]
        out["detail"] = f"{len(PORTER_PAIRS)} reference pairs, {len(mismatches)} mismatches"
        assert len(PORTER_PAIRS) >= 30 and not mismatches
