"""Synthetic flood scenarios with a matching message corpus.

Heights come from multi-octave value noise, so flooded cells form
contiguous blobs. Cells are ranked by the noise value and the top share is
made flooded, which hits the requested flood fraction exactly. Messages are
scattered uniformly; a message whose location falls in a flooded cell
carries words from the signal vocabulary with probability
``signal_strength`` (one tenth of that elsewhere) and noise words otherwise.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import os
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from functools import lru_cache

import numpy as np

from .corpus import BBox, Point, RawMessage, format_record, spatial_index
from .errors import GenerationError
from .raster import FLOODED, RasterGrid, derive_labels, write_raster
from .text import preprocess, stop_words

_LOCAL = timezone(timedelta(hours=-5))


@dataclass(frozen=True)
class ScenarioSpec:
    n_rows: int = 100
    n_cols: int = 100
    origin_lon: float = -95.8
    origin_lat: float = 29.5
    resolution: float = 2e-3
    flood_fraction: float = 0.2
    permanent_fraction: float = 0.0
    blob_scale: float = 16.0
    octaves: int = 2
    n_messages: int = 5000
    signal_strength: float = 0.6
    n_signal: int = 20
    n_noise: int = 480
    tokens_min: int = 4
    tokens_max: int = 10
    signal_tokens_max: int = 3
    point_fraction: float = 0.1
    dispersion_min: float = 1.5e-3
    dispersion_max: float = 3e-3
    n_days: int = 1
    start_date: str = "2017-08-30"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.flood_fraction < 1:
            raise GenerationError("flood_fraction must lie strictly between 0 and 1")
        if not 0 <= self.permanent_fraction < 1:
            raise GenerationError("permanent_fraction must lie in [0, 1)")
        if not 0 <= self.signal_strength <= 1:
            raise GenerationError("signal_strength must lie in [0, 1]")
        if self.n_rows <= 0 or self.n_cols <= 0 or not self.resolution > 0:
            raise GenerationError("grid dimensions and resolution must be positive")
        if self.n_signal < 1 and self.signal_strength > 0:
            raise GenerationError("a positive signal strength needs signal words")
        if not 1 <= self.tokens_min <= self.tokens_max:
            raise GenerationError("need 1 <= tokens_min <= tokens_max")
        if not 0 < self.dispersion_min <= self.dispersion_max:
            raise GenerationError("need 0 < dispersion_min <= dispersion_max")
        if self.n_days < 1 or self.n_messages < 0 or self.signal_tokens_max < 1:
            raise GenerationError("n_days and signal_tokens_max must be positive")
        date.fromisoformat(self.start_date)

    def to_config(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def load_spec(path) -> ScenarioSpec:
    """Read a flat ``key = value`` file; ``#`` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(ScenarioSpec)}
    kwargs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise GenerationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise GenerationError(f"{path}:{lineno}: unknown key {key!r}")
            kind = {"int": int, "float": float, "str": str}[types[key]]
            try:
                kwargs[key] = kind(value)
            except ValueError:
                raise GenerationError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return ScenarioSpec(**kwargs)


@lru_cache(maxsize=1)
def pseudo_words() -> tuple[str, ...]:
    """Deterministic consonant-vowel words that survive preprocessing unchanged."""
    cons, vows = "bdfgklmnprtvz", "aeiou"
    stops = stop_words()
    words = []
    for c1, v1, c2, v2, c3 in itertools.product(cons, vows, cons, vows, cons):
        w = c1 + v1 + c2 + v2 + c3
        if w not in stops and preprocess(w) == [w]:
            words.append(w)
    rng = np.random.default_rng(12345)
    return tuple(words[i] for i in rng.permutation(len(words)))


def vocabularies(spec: ScenarioSpec) -> tuple[list[str], list[str]]:
    words = pseudo_words()
    if spec.n_signal + spec.n_noise > len(words):
        raise GenerationError("requested vocabulary exceeds available pseudo-words")
    return list(words[:spec.n_signal]), list(words[spec.n_signal:spec.n_signal + spec.n_noise])


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(shape, scale, octaves, rng) -> np.ndarray:
    """Sum of bilinearly interpolated random lattices with halving scale and amplitude."""
    n_rows, n_cols = shape
    out = np.zeros(shape)
    amp = 1.0
    for _ in range(octaves):
        step = max(scale, 1.0)
        lattice = rng.random((int(math.ceil(n_rows / step)) + 2, int(math.ceil(n_cols / step)) + 2))
        ry, rx = np.arange(n_rows) / step, np.arange(n_cols) / step
        iy, ix = ry.astype(int), rx.astype(int)
        ty, tx = _smoothstep(ry - iy)[:, None], _smoothstep(rx - ix)[None, :]
        a = lattice[np.ix_(iy, ix)]
        b = lattice[np.ix_(iy, ix + 1)]
        c = lattice[np.ix_(iy + 1, ix)]
        d = lattice[np.ix_(iy + 1, ix + 1)]
        out += amp * ((a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty)
        amp /= 2.0
        scale /= 2.0
    return out


def generate_heights(spec: ScenarioSpec, rng) -> RasterGrid:
    shape = (spec.n_rows, spec.n_cols)
    n_cells = spec.n_rows * spec.n_cols
    n_perm = round(spec.permanent_fraction * n_cells)
    n_flood = round(spec.flood_fraction * n_cells)
    n_dry = n_cells - n_perm - n_flood
    if n_flood < 1 or n_dry < 1:
        raise GenerationError(
            f"flood fraction {spec.flood_fraction} is infeasible on a {spec.n_rows}x{spec.n_cols} grid"
        )
    field = value_noise(shape, spec.blob_scale, spec.octaves, rng).ravel()
    order = np.argsort(-field, kind="stable")
    heights = np.empty(n_cells)
    heights[order[:n_perm]] = 999.0
    # flooded depths span (0.25, 5] m, deepest at the noise peaks
    heights[order[n_perm:n_perm + n_flood]] = 5.0 - 4.75 * np.arange(n_flood) / n_flood
    heights[order[n_perm + n_flood:]] = 0.19 * (1.0 - np.arange(n_dry) / n_dry)
    return RasterGrid(heights.reshape(shape), spec.origin_lon, spec.origin_lat, spec.resolution)


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    heights: RasterGrid
    messages: list
    signal_words: list
    noise_words: list


def generate(spec: ScenarioSpec) -> Scenario:
    """Draw heights and messages from a single seeded stream."""
    rng = np.random.default_rng(spec.seed)
    heights = generate_heights(spec, rng)
    labels = derive_labels(heights).labels
    signal, noise = vocabularies(spec)
    min_lon, min_lat, max_lon, max_lat = heights.bounds
    start = datetime.combine(date.fromisoformat(spec.start_date), datetime.min.time(), tzinfo=timezone.utc)
    log_lo, log_hi = math.log(spec.dispersion_min), math.log(spec.dispersion_max)

    messages = []
    for n in range(spec.n_messages):
        lon = float(rng.uniform(min_lon, max_lon))
        lat = float(rng.uniform(min_lat, max_lat))
        day = int(rng.integers(spec.n_days))
        ts = start + timedelta(days=day, seconds=int(rng.integers(86400)))
        if rng.random() < spec.point_fraction:
            geo = Point(lon, lat)
        else:
            d = math.exp(rng.uniform(log_lo, log_hi))
            geo = BBox(lon - d, lat - d, lon + d, lat + d)

        cell = heights.cell_of(*spatial_index(geo))
        flooded = cell is not None and labels[cell] == FLOODED
        p = spec.signal_strength if flooded else spec.signal_strength / 10.0
        length = int(rng.integers(spec.tokens_min, spec.tokens_max + 1))
        words = []
        if rng.random() < p:
            k = min(int(rng.integers(1, spec.signal_tokens_max + 1)), length)
            words += [signal[i] for i in rng.integers(len(signal), size=k)]
            length -= k
        if noise:
            words += [noise[i] for i in rng.integers(len(noise), size=length)]
        words = [words[i] for i in rng.permutation(len(words))]
        if words and rng.random() < 0.1:
            words[0] = "#" + words[0].capitalize()
        if rng.random() < 0.1:
            words.append(f"@user{int(rng.integers(10000))}")
        if rng.random() < 0.1:
            words.append(f"https://t.co/{int(rng.integers(1 << 30)):x}")
        messages.append(RawMessage(f"m{n:07d}", ts.astimezone(_LOCAL), " ".join(words), geo))
    return Scenario(spec, heights, messages, signal, noise)


def write_scenario(scenario: Scenario, out_dir) -> dict:
    """Write ``heights.asc``, ``corpus.jsonl`` and ``signal_words.txt``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "heights": os.path.join(out_dir, "heights.asc"),
        "corpus": os.path.join(out_dir, "corpus.jsonl"),
        "signal_words": os.path.join(out_dir, "signal_words.txt"),
    }
    write_raster(scenario.heights, paths["heights"])
    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        for msg in scenario.messages:
            fh.write(format_record(msg))
            fh.write("\n")
    with open(paths["signal_words"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(scenario.signal_words) + "\n")
    return paths
