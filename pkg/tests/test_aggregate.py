import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rastercast.aggregate import (
    aggregate_grid,
    brute_force_grid,
    cell_smer,
    cell_tfidf,
    gaussian_kernel,
    read_features,
    temporal_indicator,
    write_features,
)
from rastercast.corpus import GeoMessage
from rastercast.errors import ContractError
from rastercast.raster import RasterGrid, cell_center
from rastercast.text import SparseVector


def msg(lon, lat, d=1.0, t=0):
    return GeoMessage((lon, lat), d, t, ())


def unit(dim, *idx):
    v = np.zeros(dim)
    v[list(idx)] = 1.0
    return SparseVector.from_dense(v / np.linalg.norm(v))


def random_case(rng, n_msgs=25, shape=(7, 9), res=0.01, n_days=2, dim=6):
    grid = RasterGrid(np.zeros(shape), -95.0, 29.0, res)
    lo_lon, lo_lat, hi_lon, hi_lat = grid.bounds
    msgs = [
        GeoMessage((float(rng.uniform(lo_lon - 0.02, hi_lon + 0.02)), float(rng.uniform(lo_lat - 0.02, hi_lat + 0.02))),
                   float(rng.uniform(0.005, 0.03)), int(rng.integers(n_days)), ())
        for _ in range(n_msgs)
    ]
    z = rng.integers(0, 2, n_msgs).tolist()
    rhos = []
    for _ in range(n_msgs):
        v = np.where(rng.random(dim) < 0.4, rng.random(dim), 0.0)
        n = np.linalg.norm(v)
        rhos.append(SparseVector.from_dense(v / n if n else v))
    return grid, msgs, z, rhos


def oracle(grid, day, msgs, payload, family):
    """Plain vectorized evaluation of the kernel means, no compensation."""
    keep = [m for m in msgs if m.t == day]
    idx = [i for i, m in enumerate(msgs) if m.t == day]
    cells = np.array([cell_center(grid, r, c) for r in range(grid.n_rows) for c in range(grid.n_cols)])
    s = np.array([m.s for m in keep])
    d = np.array([m.d for m in keep])
    sq = ((cells[:, None, :] - s[None, :, :]) ** 2).sum(axis=2)
    k = np.exp(-sq / (2 * d * d)) / np.sqrt(2 * np.pi * d * d)
    mass = k.sum(axis=1)
    if family == "smer":
        return mass, (k @ np.asarray(payload, float)[idx]) / mass
    rho = np.array([payload[i].to_dense() for i in idx])
    mean = (k @ rho) / mass[:, None]
    norms = np.linalg.norm(mean, axis=1, keepdims=True)
    return mass, np.divide(mean, norms, out=np.zeros_like(mean), where=norms > 0)


class TestKernel:
    def test_peak_unit_dispersion(self):
        assert gaussian_kernel((0.0, 0.0), (0.0, 0.0), 1.0) == pytest.approx(0.3989422804014327, rel=1e-15)

    def test_one_dispersion_away(self):
        val = gaussian_kernel((0.01, 0.0), (0.0, 0.0), 0.01)
        assert val == pytest.approx(24.197072451914337, rel=1e-12)
        assert val == pytest.approx(math.exp(-0.5) / (0.01 * math.sqrt(2 * math.pi)), rel=1e-14)

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(1e-3, 1))
    def test_symmetric_and_positive_near(self, x1, y1, x2, y2, d):
        a = gaussian_kernel((x1, y1), (x2, y2), d)
        assert a == gaussian_kernel((x2, y2), (x1, y1), d)
        assert 0.0 <= a <= gaussian_kernel((x1, y1), (x1, y1), d)

    def test_vectorized(self):
        k = gaussian_kernel((0.0, 0.0), (np.array([0.0, 1.0]), np.array([0.0, 0.0])), np.array([1.0, 1.0]))
        np.testing.assert_allclose(k, [0.3989422804014327, 0.3989422804014327 * math.exp(-0.5)], rtol=1e-15)

    @pytest.mark.parametrize("d", [0.0, -1.0, math.inf, math.nan])
    def test_bad_dispersion(self, d):
        with pytest.raises(ContractError):
            gaussian_kernel((0, 0), (0, 0), d)

    def test_temporal_indicator(self):
        assert temporal_indicator(3, 3) == 1
        assert temporal_indicator(3, 4) == 0


class TestCellFeatures:
    def test_smer_three_coincident(self):
        msgs = [msg(0, 0), msg(0, 0), msg(0, 0)]
        f = cell_smer((0.0, 0.0), 0, msgs, [1, 0, 1])
        assert f.smer == pytest.approx(2 / 3, rel=1e-15)
        assert f.mass == pytest.approx(3 * 0.3989422804014327, rel=1e-15)

    def test_smer_weighted_half(self):
        # two matching messages at equal distance balance one closer non-match of equal weight
        msgs = [msg(1, 0), msg(-1, 0), msg(0, 0, d=math.sqrt(1 / (2 * math.log(2))))]
        k_far = gaussian_kernel((0, 0), (1, 0), 1.0)
        d3 = msgs[2].d
        k_near = gaussian_kernel((0, 0), (0, 0), d3)
        f = cell_smer((0.0, 0.0), 0, msgs, [1, 1, 0])
        assert f.smer == pytest.approx(2 * k_far / (2 * k_far + k_near), rel=1e-14)

    def test_other_days_ignored(self):
        msgs = [msg(0, 0, t=0), msg(0, 0, t=1)]
        assert cell_smer((0.0, 0.0), 0, msgs, [1, 0]).smer == 1.0
        assert cell_smer((0.0, 0.0), 1, msgs, [1, 0]).smer == 0.0

    def test_empty_when_no_mass(self):
        f = cell_smer((0.0, 0.0), 5, [msg(0, 0, t=0)], [1])
        assert f.empty and f.mass == 0.0 and f.smer == 0.0
        g = cell_tfidf((0.0, 0.0), 0, [msg(100, 0, d=1e-3)], [unit(3, 0)])
        assert g.empty and g.tfidf.nnz == 0

    def test_tfidf_two_orthogonal(self):
        msgs = [msg(0, 0), msg(0, 0)]
        f = cell_tfidf((0.0, 0.0), 0, msgs, [unit(4, 1), unit(4, 3)])
        expected = np.zeros(4)
        expected[[1, 3]] = 1 / math.sqrt(2)
        np.testing.assert_allclose(f.tfidf.to_dense(), expected, rtol=1e-15)

    def test_tfidf_unit_norm(self, rng):
        grid, msgs, _, rhos = random_case(rng)
        f = cell_tfidf(cell_center(grid, 3, 3), 0, msgs, rhos)
        assert f.tfidf.norm() == pytest.approx(1.0, abs=1e-15)

    def test_all_match_gives_one(self, rng):
        grid, msgs, _, _ = random_case(rng)
        f = cell_smer(cell_center(grid, 2, 2), 1, msgs, [1] * len(msgs))
        assert f.smer == pytest.approx(1.0, abs=1e-15)

    def test_payload_length_checked(self):
        with pytest.raises(ContractError):
            cell_smer((0, 0), 0, [msg(0, 0)], [1, 0])


class TestAggregateGrid:
    @pytest.mark.parametrize("family", ["smer", "tfidf"])
    def test_untruncated_bit_identical_to_per_cell(self, rng, family):
        grid, msgs, z, rhos = random_case(rng)
        payload = z if family == "smer" else rhos
        sweep = aggregate_grid(grid, 1, msgs, payload, truncation_radius=None, family=family)
        brute = brute_force_grid(grid, 1, msgs, payload, family=family)
        np.testing.assert_array_equal(sweep.mass, brute.mass)
        np.testing.assert_array_equal(sweep.values, brute.values)
        np.testing.assert_array_equal(sweep.empty, brute.empty)

    @pytest.mark.parametrize("family", ["smer", "tfidf"])
    def test_matches_vectorized_oracle(self, rng, family):
        grid, msgs, z, rhos = random_case(rng)
        payload = z if family == "smer" else rhos
        f = aggregate_grid(grid, 0, msgs, payload, truncation_radius=None, family=family)
        mass, values = oracle(grid, 0, msgs, payload, family)
        np.testing.assert_allclose(f.mass.ravel(), mass, rtol=1e-12)
        np.testing.assert_allclose(f.values.reshape(len(mass), -1), values.reshape(len(mass), -1), rtol=1e-12, atol=1e-15)

    def test_message_order_irrelevant(self, rng):
        grid, msgs, z, rhos = random_case(rng)
        perm = rng.permutation(len(msgs))
        a = aggregate_grid(grid, 0, msgs, rhos)
        b = aggregate_grid(grid, 0, [msgs[i] for i in perm], [rhos[i] for i in perm])
        np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-12)
        s1 = aggregate_grid(grid, 0, msgs, z)
        s2 = aggregate_grid(grid, 0, [msgs[i] for i in perm], [z[i] for i in perm])
        np.testing.assert_allclose(s1.values, s2.values, rtol=0, atol=1e-12)

    def test_translation_invariance(self, rng):
        grid, msgs, z, _ = random_case(rng, res=0.25)
        dlon, dlat = 2.0, -1.0
        shifted_grid = RasterGrid(grid.values, grid.origin_lon + dlon, grid.origin_lat + dlat, grid.resolution)
        shifted = [GeoMessage((m.s[0] + dlon, m.s[1] + dlat), m.d * 25, m.t, m.tokens) for m in msgs]
        base = [GeoMessage(m.s, m.d * 25, m.t, m.tokens) for m in msgs]
        a = aggregate_grid(grid, 0, base, z, truncation_radius=None)
        b = aggregate_grid(shifted_grid, 0, shifted, z, truncation_radius=None)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-12)

    def test_truncation_monotone_and_convergent(self, rng):
        grid, msgs, z, _ = random_case(rng, n_msgs=60)
        full = aggregate_grid(grid, 0, msgs, z, truncation_radius=None)
        masses = [aggregate_grid(grid, 0, msgs, z, truncation_radius=r).mass for r in (1.0, 2.0, 4.0, 8.0)]
        for lo, hi in zip(masses, masses[1:]):
            assert np.all(lo <= hi * (1 + 1e-15))
        assert np.all(masses[-1] <= full.mass * (1 + 1e-15))
        # the Gaussian beyond 8 dispersions is below exp(-32) of the peak
        np.testing.assert_allclose(masses[-1], full.mass, rtol=1e-12)

    def test_all_match_gives_one(self, rng):
        grid, msgs, _, _ = random_case(rng)
        f = aggregate_grid(grid, 0, msgs, [1] * len(msgs))
        np.testing.assert_allclose(f.values[~f.empty.ravel()], 1.0, rtol=0, atol=1e-15)

    def test_empty_cells_flagged(self):
        grid = RasterGrid(np.zeros((3, 40)), 0.0, 0.0, 1.0)
        f = aggregate_grid(grid, 0, [msg(0.5, 1.5, d=0.5)], [1], truncation_radius=4.0)
        assert not f.empty[1, 0] and f.values[40, 0] == 1.0
        assert f.empty[1, 39] and f.mass[1, 39] == 0.0
        assert f.values[79, 0] == 0.0

    def test_zero_tfidf_vector_contributes_mass_only(self):
        grid = RasterGrid(np.zeros((1, 1)), 0.0, 0.0, 1.0)
        f = aggregate_grid(grid, 0, [msg(0.5, 0.5), msg(0.5, 0.5)], [unit(3, 2), SparseVector.zeros(3)],
                           truncation_radius=None)
        np.testing.assert_allclose(f.values[0], [0.0, 0.0, 1.0], rtol=1e-15)

    def test_bad_truncation(self, rng):
        grid, msgs, z, _ = random_case(rng)
        with pytest.raises(ContractError):
            aggregate_grid(grid, 0, msgs, z, truncation_radius=0.0)

    def test_unknown_family(self, rng):
        grid, msgs, z, _ = random_case(rng)
        with pytest.raises(ContractError):
            aggregate_grid(grid, 0, msgs, z, family="bm25")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_smer_bounded(self, seed):
        grid, msgs, z, _ = random_case(np.random.default_rng(seed), n_msgs=10, shape=(4, 5))
        f = aggregate_grid(grid, 0, msgs, z)
        assert np.all((f.values >= 0.0) & (f.values <= 1.0 + 1e-15))


class TestFeatureDump:
    @pytest.mark.parametrize("family", ["smer", "tfidf"])
    def test_round_trip(self, rng, tmp_path, family):
        grid, msgs, z, rhos = random_case(rng)
        f = aggregate_grid(grid, 1, msgs, z if family == "smer" else rhos, truncation_radius=2.0)
        path = tmp_path / "features.txt"
        write_features(f, path)
        back = read_features(path)
        assert back.family == family and back.day == 1 and back.shape == f.shape
        assert back.georef_matches(grid)
        np.testing.assert_array_equal(back.mass, f.mass)
        np.testing.assert_array_equal(back.values, f.values)
        np.testing.assert_array_equal(back.empty, f.empty)

    def test_empty_cells_not_written(self, tmp_path):
        grid = RasterGrid(np.zeros((2, 50)), 0.0, 0.0, 1.0)
        f = aggregate_grid(grid, 0, [msg(0.5, 0.5, d=0.5)], [1])
        path = tmp_path / "f.txt"
        write_features(f, path)
        body = path.read_text().splitlines()[1:]
        assert len(body) == int((~f.empty).sum()) < 100

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.txt"
        path.write_text("ncols 3\n")
        with pytest.raises(ValueError):
            read_features(path)
