"""Kernel aggregation of messages onto raster cells.

Each cell gets a kernel-weighted mean over the messages posted on the
target day: of the 0/1 query indicator (SMER) or of the per-message TFIDF
vectors. Weights come from an isotropic Gaussian in (lon, lat) degrees
whose width is the message dispersion.

Two evaluation paths exist. :func:`cell_smer` / :func:`cell_tfidf` evaluate
one cell against every message; :func:`aggregate_grid` sweeps messages over
the whole grid, optionally restricted to a disc of ``truncation_radius * d``
around each message. Both accumulate in message order with Neumaier
compensated sums and share the kernel arithmetic, so the untruncated sweep
reproduces the per-cell path bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .raster import RasterGrid, cell_center
from .text import SparseVector

DEFAULT_TRUNCATION = 8.0
KERNEL_EXPONENT = 0.5


def kernel_coefficients(d, exponent=KERNEL_EXPONENT):
    """Per-message ``(coef, two_d2)`` with ``coef = (2 pi d^2)^-exponent`` and ``two_d2 = 2 d^2``."""
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    if (d <= 0).any() or not np.isfinite(d).all():
        raise ContractError("dispersion must be positive and finite")
    coef = np.power(2.0 * np.pi * d * d, -exponent)
    return coef, 2.0 * d * d


def _weights(dx, dy, coef, two_d2):
    # single place where kernel values are formed; np.exp on arrays only
    sq = dx * dx + dy * dy
    return coef * np.exp(-sq / two_d2)


def gaussian_kernel(s, s_n, d_n, exponent=KERNEL_EXPONENT):
    """Gaussian weight of a message at ``s_n`` with dispersion ``d_n`` seen from ``s``.

    ``(2 pi d^2)^(-1/2) * exp(-|s - s_n|^2 / (2 d^2))`` with longitude and
    latitude differences treated as independent planar axes.
    """
    coef, two_d2 = kernel_coefficients(d_n, exponent)
    dx = np.atleast_1d(np.asarray(s[0], dtype=np.float64) - np.asarray(s_n[0], dtype=np.float64))
    dy = np.atleast_1d(np.asarray(s[1], dtype=np.float64) - np.asarray(s_n[1], dtype=np.float64))
    k = _weights(dx, dy, coef, two_d2)
    return float(k[0]) if k.size == 1 else k


def temporal_indicator(t, t_n) -> int:
    return 1 if t == t_n else 0


@dataclass(frozen=True, eq=False)
class CellFeatures:
    """Aggregated features of one cell on one day.

    ``empty`` is set when no same-day message carries kernel mass to the
    cell; features are then zero.
    """

    row: int | None
    col: int | None
    day: int
    mass: float
    empty: bool
    smer: float | None = None
    tfidf: SparseVector | None = None


@dataclass(frozen=True)
class _Messages:
    lon: np.ndarray
    lat: np.ndarray
    coef: np.ndarray
    two_d2: np.ndarray
    d: np.ndarray
    keep: np.ndarray


def _same_day(msgs, day, exponent):
    lon = np.array([m.s[0] for m in msgs], dtype=np.float64)
    lat = np.array([m.s[1] for m in msgs], dtype=np.float64)
    d = np.array([m.d for m in msgs], dtype=np.float64)
    keep = np.array([temporal_indicator(day, m.t) for m in msgs], dtype=bool)
    lon, lat, d = lon[keep], lat[keep], d[keep]
    if d.size:
        coef, two_d2 = kernel_coefficients(d, exponent)
    else:
        coef = two_d2 = np.zeros(0)
    return _Messages(lon, lat, coef, two_d2, d, np.flatnonzero(keep))


def _neumaier(s, c, x):
    """One compensated step on scalars; returns the new ``(s, c)``."""
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


def _neumaier_arrays(s, c, x):
    """Vectorized :func:`_neumaier`; returns the new ``(s, c)`` arrays."""
    t = s + x
    corr = np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
    return t, c + corr


def _unit(mean):
    """Scale a dense vector to unit L2 norm using a correctly rounded sum."""
    norm = math.sqrt(math.fsum(np.square(mean).tolist()))
    if norm == 0.0:
        return mean
    return mean / norm


def cell_smer(s, t, msgs, z, exponent=KERNEL_EXPONENT, row=None, col=None) -> CellFeatures:
    """Kernel-weighted share of same-day messages that match the query."""
    if len(z) != len(msgs):
        raise ContractError("need one query indicator per message")
    m = _same_day(msgs, t, exponent)
    zz = np.asarray(z, dtype=np.float64)[m.keep]
    k = _weights(s[0] - m.lon, s[1] - m.lat, m.coef, m.two_d2)
    mass, mass_c, num, num_c = 0.0, 0.0, 0.0, 0.0
    for kn, zn in zip(k.tolist(), zz.tolist()):
        mass, mass_c = _neumaier(mass, mass_c, kn)
        num, num_c = _neumaier(num, num_c, kn * zn)
    total = mass + mass_c
    if total == 0.0:
        return CellFeatures(row, col, t, 0.0, True, smer=0.0)
    return CellFeatures(row, col, t, total, False, smer=(num + num_c) / total)


def cell_tfidf(s, t, msgs, rhos: Sequence[SparseVector], exponent=KERNEL_EXPONENT, row=None, col=None) -> CellFeatures:
    """Kernel-weighted mean of same-day TFIDF vectors, renormalized to unit length."""
    if len(rhos) != len(msgs):
        raise ContractError("need one TFIDF vector per message")
    dim = rhos[0].dim if rhos else 0
    m = _same_day(msgs, t, exponent)
    k = _weights(s[0] - m.lon, s[1] - m.lat, m.coef, m.two_d2)
    acc, comp = [0.0] * dim, [0.0] * dim
    mass, mass_c = 0.0, 0.0
    for kn, n in zip(k.tolist(), m.keep.tolist()):
        mass, mass_c = _neumaier(mass, mass_c, kn)
        for j, v in rhos[n].pairs:
            acc[j], comp[j] = _neumaier(acc[j], comp[j], kn * v)
    total = mass + mass_c
    if total == 0.0:
        return CellFeatures(row, col, t, 0.0, True, tfidf=SparseVector.zeros(dim))
    mean = (np.array(acc) + np.array(comp)) / total
    return CellFeatures(row, col, t, total, False, tfidf=SparseVector.from_dense(_unit(mean)))


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """Features for every cell of a grid on one day.

    ``values`` has one row per cell in row-major order (row 0 south) and
    one column per feature dimension (a single column for SMER).
    """

    family: str
    day: int
    n_rows: int
    n_cols: int
    origin_lon: float
    origin_lat: float
    resolution: float
    mass: np.ndarray
    empty: np.ndarray
    values: np.ndarray
    vocab_file: str | None = None

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def cell(self, row, col) -> CellFeatures:
        i = row * self.n_cols + col
        mass, empty = float(self.mass[row, col]), bool(self.empty[row, col])
        if self.family == "smer":
            return CellFeatures(row, col, self.day, mass, empty, smer=float(self.values[i, 0]))
        return CellFeatures(row, col, self.day, mass, empty, tfidf=SparseVector.from_dense(self.values[i]))

    def georef_matches(self, grid) -> bool:
        return (
            (self.n_rows, self.n_cols) == tuple(grid.shape)
            and self.origin_lon == grid.origin_lon
            and self.origin_lat == grid.origin_lat
            and self.resolution == grid.resolution
        )


def _window(grid, lon, lat, reach):
    """Row/column index ranges of cells whose centers may lie within ``reach``."""
    res = grid.resolution
    c0 = max(int(math.floor((lon - reach - grid.origin_lon) / res - 0.5)), 0)
    c1 = min(int(math.ceil((lon + reach - grid.origin_lon) / res - 0.5)) + 1, grid.n_cols)
    r0 = max(int(math.floor((lat - reach - grid.origin_lat) / res - 0.5)), 0)
    r1 = min(int(math.ceil((lat + reach - grid.origin_lat) / res - 0.5)) + 1, grid.n_rows)
    return r0, r1, c0, c1


def _sweep(grid, m, truncation_radius):
    """Yield ``(n, rows, cols, weights)`` per same-day message in corpus order.

    ``weights`` is zero for cells outside the truncation disc.
    """
    lons, lats = grid.cell_lons(), grid.cell_lats()
    for n in range(m.lon.size):
        if truncation_radius is None:
            r0, r1, c0, c1 = 0, grid.n_rows, 0, grid.n_cols
        else:
            reach = truncation_radius * m.d[n]
            r0, r1, c0, c1 = _window(grid, m.lon[n], m.lat[n], reach)
            if r0 >= r1 or c0 >= c1:
                continue
        dx = lons[c0:c1][None, :] - m.lon[n]
        dy = lats[r0:r1][:, None] - m.lat[n]
        k = _weights(dx, dy, m.coef[n], m.two_d2[n])
        if truncation_radius is not None:
            inside = dx * dx + dy * dy <= reach * reach
            k = np.where(inside, k, 0.0)
        yield n, (r0, r1), (c0, c1), k


def aggregate_grid(grid: RasterGrid, day: int, msgs, payload, truncation_radius=DEFAULT_TRUNCATION,
                   exponent=KERNEL_EXPONENT, family=None) -> FeatureGrid:
    """Aggregate messages over every cell of ``grid`` for one day.

    ``payload`` holds one entry per message: 0/1 query indicators for SMER
    or :class:`SparseVector` TFIDF vectors. Messages from other days are
    ignored. ``truncation_radius=None`` evaluates every message at every
    cell.
    """
    if len(payload) != len(msgs):
        raise ContractError("need one payload entry per message")
    if family is None:
        family = "tfidf" if payload and isinstance(payload[0], SparseVector) else "smer"
    if truncation_radius is not None and not truncation_radius > 0:
        raise ContractError("truncation radius must be positive or None")
    m = _same_day(msgs, day, exponent)
    shape = grid.shape
    mass_s, mass_c = np.zeros(shape), np.zeros(shape)

    if family == "smer":
        z = np.asarray(payload, dtype=np.float64)[m.keep]
        num_s, num_c = np.zeros(shape), np.zeros(shape)
        for n, (r0, r1), (c0, c1), k in _sweep(grid, m, truncation_radius):
            win = (slice(r0, r1), slice(c0, c1))
            mass_s[win], mass_c[win] = _neumaier_arrays(mass_s[win], mass_c[win], k)
            num_s[win], num_c[win] = _neumaier_arrays(num_s[win], num_c[win], k * z[n])
        mass = mass_s + mass_c
        empty = mass == 0.0
        smer = np.zeros(shape)
        np.divide(num_s + num_c, mass, out=smer, where=~empty)
        values = smer.reshape(-1, 1)
    elif family == "tfidf":
        dim = payload[0].dim if payload else 0
        rhos = [payload[i] for i in m.keep.tolist()]
        acc = np.zeros((grid.n_cells, dim))
        comp = np.zeros((grid.n_cells, dim))
        flat = np.arange(grid.n_cells).reshape(shape)
        for n, (r0, r1), (c0, c1), k in _sweep(grid, m, truncation_radius):
            win = (slice(r0, r1), slice(c0, c1))
            mass_s[win], mass_c[win] = _neumaier_arrays(mass_s[win], mass_c[win], k)
            rho = rhos[n]
            if not rho.nnz:
                continue
            cells = flat[win].ravel()
            block = np.ix_(cells, rho.indices)
            x = k.ravel()[:, None] * rho.values[None, :]
            acc[block], comp[block] = _neumaier_arrays(acc[block], comp[block], x)
        mass = mass_s + mass_c
        empty = mass == 0.0
        values = np.zeros((grid.n_cells, dim))
        for i in np.flatnonzero(~empty.ravel()).tolist():
            values[i] = _unit((acc[i] + comp[i]) / mass.flat[i])
    else:
        raise ContractError(f"unknown feature family {family!r}")

    return FeatureGrid(family, day, grid.n_rows, grid.n_cols, grid.origin_lon, grid.origin_lat,
                       grid.resolution, mass, empty, values)


def brute_force_grid(grid, day, msgs, payload, exponent=KERNEL_EXPONENT, family=None) -> FeatureGrid:
    """Evaluate :func:`cell_smer` / :func:`cell_tfidf` independently at every cell."""
    if family is None:
        family = "tfidf" if payload and isinstance(payload[0], SparseVector) else "smer"
    dim = 1 if family == "smer" else (payload[0].dim if payload else 0)
    mass = np.zeros(grid.shape)
    values = np.zeros((grid.n_cells, dim))
    for r in range(grid.n_rows):
        for c in range(grid.n_cols):
            s = cell_center(grid, r, c)
            if family == "smer":
                f = cell_smer(s, day, msgs, payload, exponent, r, c)
                values[r * grid.n_cols + c, 0] = f.smer
            else:
                f = cell_tfidf(s, day, msgs, payload, exponent, r, c)
                values[r * grid.n_cols + c] = f.tfidf.to_dense()
            mass[r, c] = f.mass
    return FeatureGrid(family, day, grid.n_rows, grid.n_cols, grid.origin_lon, grid.origin_lat,
                       grid.resolution, mass, mass == 0.0, values)


def write_features(features: FeatureGrid, path) -> None:
    """Dump non-empty cells as text, one line per cell."""
    f = features
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# rastercast-features family={f.family} vocab={f.vocab_file or '-'} day={f.day} "
            f"nrows={f.n_rows} ncols={f.n_cols} xllcorner={f.origin_lon!r} "
            f"yllcorner={f.origin_lat!r} cellsize={f.resolution!r} dim={f.dim}\n"
        )
        for i in np.flatnonzero(~f.empty.ravel()).tolist():
            r, c = divmod(i, f.n_cols)
            head = f"{r} {c} {f.day} {float(f.mass.flat[i])!r}"
            if f.family == "smer":
                fh.write(f"{head} {float(f.values[i, 0])!r}\n")
            else:
                row = f.values[i]
                pairs = " ".join(f"{j}:{float(row[j])!r}" for j in np.flatnonzero(row).tolist())
                fh.write(f"{head} {pairs}\n" if pairs else f"{head}\n")


def read_features(path) -> FeatureGrid:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if not header or header[0] != "#" or header[1] != "rastercast-features":
            raise ValueError(f"{path}: not a feature dump")
        meta = dict(item.split("=", 1) for item in header[2:])
        n_rows, n_cols, dim = int(meta["nrows"]), int(meta["ncols"]), int(meta["dim"])
        family = meta["family"]
        mass = np.zeros((n_rows, n_cols))
        values = np.zeros((n_rows * n_cols, dim))
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            r, c, mass_value = int(parts[0]), int(parts[1]), float(parts[3])
            if not (0 <= r < n_rows and 0 <= c < n_cols):
                raise ValueError(f"{path}:{lineno}: cell ({r}, {c}) outside grid")
            mass[r, c] = mass_value
            i = r * n_cols + c
            if family == "smer":
                values[i, 0] = float(parts[4])
            else:
                for pair in parts[4:]:
                    j, v = pair.split(":")
                    values[i, int(j)] = float(v)
    vocab = meta.get("vocab", "-")
    return FeatureGrid(family, int(meta["day"]), n_rows, n_cols, float(meta["xllcorner"]),
                       float(meta["yllcorner"]), float(meta["cellsize"]), mass, mass == 0.0, values,
                       None if vocab == "-" else vocab)
