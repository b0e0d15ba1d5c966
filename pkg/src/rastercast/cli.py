"""Command-line entry point.

Subcommands write their outputs plus a ``manifest.json`` into ``--out``.
Exit status is 0 on success, 2 on usage or contract errors and 1 on
runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from datetime import date

import numpy as np

from . import __version__
from .aggregate import DEFAULT_TRUNCATION, FeatureGrid, aggregate_grid, read_features, write_features
from .corpus import BBox, filter_corpus, parse_corpus, to_geo_message
from .errors import ContractError, GenerationError, RasterFormatError, RastercastError
from .experiment import ExperimentConfig, balanced_sample, run_experiment, write_relevance, write_report
from .model import (
    Design,
    cross_validate,
    default_c_grid,
    fit_saga,
    load_model,
    predict_proba,
    write_model,
)
from .raster import FLOODED, RasterGrid, derive_labels, load_raster, write_raster
from .seeding import derive_seed
from .synth import ScenarioSpec, generate, load_spec, write_scenario
from .text import build_vocabulary, load_vocabulary, ngrams, parse_query, query_match, tfidf_vector, write_vocabulary

log = logging.getLogger("rastercast")


class UsageError(ContractError):
    """Conflicting or invalid command-line arguments."""


def _configure_logging():
    level = os.environ.get("RASTERCAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _write_manifest(out_dir, command, argv, params, seed=None):
    manifest = {
        "tool": "rastercast",
        "version": __version__,
        "subcommand": command,
        "argv": list(argv),
        "seed": seed,
        "params": params,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path + ".tmp", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(path + ".tmp", path)


def _require_file(path, flag):
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: no such file: {path}")


def _resolve_day(value: str, epoch: str) -> int:
    try:
        return int(value)
    except ValueError:
        pass
    try:
        d = date.fromisoformat(value)
    except ValueError:
        raise UsageError(f"--day must be an integer or an ISO date, got {value!r}") from None
    return (d - date.fromisoformat(epoch)).days


def _check_epoch(value: str) -> str:
    try:
        date.fromisoformat(value)
    except ValueError:
        raise UsageError(f"--epoch must be an ISO date, got {value!r}") from None
    return value


def cmd_synth(args, argv):
    spec = ScenarioSpec()
    if args.spec is not None:
        _require_file(args.spec, "--spec")
        spec = load_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    paths = write_scenario(generate(spec), args.out)
    _write_manifest(args.out, "synth", argv, {"spec": dataclasses.asdict(spec), "outputs": sorted(paths)}, spec.seed)
    return 0


def _featurize(args):
    grid = load_raster(args.grid)
    epoch = _check_epoch(args.epoch)
    day = _resolve_day(args.day, epoch)
    if day < 0:
        raise UsageError(f"day {args.day} precedes epoch {epoch}")
    raw, skipped = parse_corpus(args.corpus)
    bounds = BBox(*grid.bounds)
    msgs = filter_corpus(raw, bounds, range(0, 1 << 62), epoch, args.max_dispersion)
    geo = [to_geo_message(m, epoch) for m in msgs]
    log.info("%d messages in bounds, %d skipped as malformed", len(geo), skipped)
    truncation = None if args.truncation <= 0 else args.truncation
    if args.family == "smer":
        query = parse_query(args.query)
        if not query:
            raise UsageError(f"query {args.query!r} is empty after preprocessing")
        payload = [query_match(g.tokens, query) for g in geo]
        vocab = None
    else:
        docs = [ngrams(g.tokens, args.ngrams) for g in geo]
        vocab = build_vocabulary(docs, args.min_df)
        payload = [tfidf_vector(doc, vocab) for doc in docs]
    features = aggregate_grid(grid, day, geo, payload, truncation_radius=truncation, family=args.family)
    if vocab is not None:
        features = dataclasses.replace(features, vocab_file="vocab.tsv")
    return features, vocab, {"day": day, "epoch": epoch, "n_messages": len(geo), "skipped": skipped}


def cmd_featurize(args, argv):
    if args.family == "smer" and not args.query:
        raise UsageError("--family smer requires --query")
    if args.family == "tfidf" and args.query:
        raise UsageError("--query is only valid with --family smer")
    if args.ngrams not in (1, 2):
        raise UsageError("--ngrams must be 1 or 2")
    _require_file(args.corpus, "--corpus")
    _require_file(args.grid, "--grid")
    features, vocab, info = _featurize(args)
    os.makedirs(args.out, exist_ok=True)
    write_features(features, os.path.join(args.out, "features.txt"))
    if vocab is not None:
        write_vocabulary(vocab, os.path.join(args.out, "vocab.tsv"))
    params = {
        "family": args.family,
        "query": args.query,
        "ngrams": args.ngrams,
        "min_df": args.min_df,
        "truncation": args.truncation,
        "max_dispersion": args.max_dispersion,
        "dim": features.dim,
        "empty_cells": int(features.empty.sum()),
        **info,
    }
    _write_manifest(args.out, "featurize", argv, params)
    return 0


def _load_inputs(args):
    _require_file(args.features, "--features")
    _require_file(args.grid, "--grid")
    features = read_features(args.features)
    heights = load_raster(args.grid)
    if not features.georef_matches(heights):
        raise UsageError(
            f"features cover a {features.n_rows}x{features.n_cols} grid at "
            f"({features.origin_lon}, {features.origin_lat}) step {features.resolution}, "
            f"heights are {heights.n_rows}x{heights.n_cols} at ({heights.origin_lon}, {heights.origin_lat}) "
            f"step {heights.resolution}"
        )
    return features, derive_labels(heights)


def _phrases(features: FeatureGrid, features_path):
    if features.vocab_file is None:
        return None
    path = os.path.join(os.path.dirname(os.path.abspath(features_path)), features.vocab_file)
    if not os.path.isfile(path):
        log.warning("vocabulary %s not found; relevance table will lack phrases", path)
        return None
    return load_vocabulary(path).phrases


def cmd_train(args, argv):
    features, labels = _load_inputs(args)
    y = labels.labels.ravel()
    eligible = ~features.empty.ravel()
    seed = 0 if args.seed is None else args.seed
    rows = balanced_sample(y, args.train_size, derive_seed(seed, 0), eligible)
    design = Design(features.values[rows], (y[rows] == FLOODED).astype(np.float64))
    penalize = not args.no_penalize_intercept
    if args.c is None:
        cv = cross_validate(design, default_c_grid(design.n_rows), args.cv_folds, derive_seed(seed, 2),
                            penalize_intercept=penalize)
        c = cv.best_c
    else:
        c = args.c
    fit = fit_saga(design, c, seed=derive_seed(seed, 3), penalize_intercept=penalize)
    os.makedirs(args.out, exist_ok=True)
    write_model(fit, os.path.join(args.out, "model.txt"))
    params = {
        "seed": seed,
        "train_size": args.train_size,
        "cv_folds": args.cv_folds,
        "c": c,
        "penalize_intercept": penalize,
        "nonzero": int(fit.nonzero.size),
        "converged": fit.converged,
    }
    _write_manifest(args.out, "train", argv, params, seed)
    return 0


def cmd_evaluate(args, argv):
    if args.seed is None:
        raise UsageError("evaluate requires --seed")
    features, labels = _load_inputs(args)
    config = ExperimentConfig(
        n_runs=args.runs,
        train_size=args.train_size,
        test_size=args.test_size,
        family=features.family,
        cv_folds=args.cv_folds,
        seed=args.seed,
        threads=args.threads or (os.cpu_count() or 1),
        penalize_intercept=not args.no_penalize_intercept,
        holdout_block=args.holdout_block,
        holdout_gap=args.holdout_gap,
        include_empty=args.include_empty,
    )
    report = run_experiment(config, labels, features)
    os.makedirs(args.out, exist_ok=True)
    write_report(report, os.path.join(args.out, "report.csv"))
    write_relevance(report, os.path.join(args.out, "relevance.csv"), _phrases(features, args.features))
    params = {k: v for k, v in dataclasses.asdict(config).items() if k != "threads"}
    params["cv_grid"] = config.grid()
    params["mean_f1"] = report.mean_f1
    params["std_f1"] = report.std_f1
    _write_manifest(args.out, "evaluate", argv, params, args.seed)
    print(report.summary())
    return 0


def cmd_predict(args, argv):
    _require_file(args.model, "--model")
    _require_file(args.features, "--features")
    features = read_features(args.features)
    c, w, dim = load_model(args.model)
    n_weights = w.size - 1
    # without a recorded dimension, trailing zero weights may be omitted
    if (dim is not None and dim != features.dim) or n_weights > features.dim:
        raise UsageError(f"model has {dim if dim is not None else n_weights} dimensions, "
                         f"features have {features.dim}")
    w = np.concatenate([w, np.zeros(features.dim - n_weights)])
    proba = predict_proba(w, features.values)
    nodata = -9999.0
    values = np.where(features.empty.ravel(), nodata, proba).reshape(features.shape)
    grid = RasterGrid(values, features.origin_lon, features.origin_lat, features.resolution, nodata)
    os.makedirs(args.out, exist_ok=True)
    write_raster(grid, os.path.join(args.out, "probability.asc"))
    _write_manifest(args.out, "predict", argv, {"c": c, "dim": features.dim, "nodata": nodata})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rastercast", description="Flood probability rasters from geotagged messages.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic heights raster and corpus")
    p.add_argument("--spec", help="key = value scenario file (defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="aggregate messages onto the grid for one day")
    p.add_argument("--corpus", required=True)
    p.add_argument("--grid", required=True, help="ASCII grid fixing the georeference")
    p.add_argument("--day", required=True, help="day index from --epoch or an ISO date")
    p.add_argument("--epoch", default="1970-01-01", help="ISO date of day 0 (UTC)")
    p.add_argument("--family", choices=("smer", "tfidf"), required=True)
    p.add_argument("--query", help="comma-separated keywords (smer only)")
    p.add_argument("--ngrams", type=int, default=2)
    p.add_argument("--min-df", type=int, default=10, help="keep phrases in more than this many messages")
    p.add_argument("--truncation", type=float, default=DEFAULT_TRUNCATION,
                   help="kernel cut-off in dispersions; 0 disables truncation")
    p.add_argument("--max-dispersion", type=float, help="drop messages with a coarser geography (degrees)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    def protocol_flags(p, train_default):
        p.add_argument("--features", required=True)
        p.add_argument("--grid", required=True, help="water-height raster providing the labels")
        p.add_argument("--train-size", type=int, default=train_default)
        p.add_argument("--cv-folds", type=int, default=5)
        p.add_argument("--seed", type=int)
        p.add_argument("--no-penalize-intercept", action="store_true")
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit one model on a balanced sample")
    protocol_flags(p, 2000)
    p.add_argument("--c", type=float, help="regularization constant (cross-validated when omitted)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="repeated balanced train/test protocol")
    protocol_flags(p, 2000)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--test-size", type=int, default=400)
    p.add_argument("--threads", type=int, default=0, help="worker threads (0: all cores)")
    p.add_argument("--holdout-block", type=int, default=0,
                   help="draw test cells from whole tiles of this many cells (0: scattered cells)")
    p.add_argument("--holdout-gap", type=int, default=0,
                   help="keep training cells this many cells away from test tiles")
    p.add_argument("--include-empty", action="store_true",
                   help="sample cells without same-day messages as all-zero feature rows")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write a flood probability raster")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (ContractError, GenerationError, RasterFormatError) as exc:
        print(f"rastercast {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RastercastError, OSError, ValueError) as exc:
        print(f"rastercast {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
