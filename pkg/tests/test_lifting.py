import numpy as np
import pytest

from georeg import EmptyResult
from georeg.lifting import lift_xyz_to_dsm, lift_xyz_to_xyz
from georeg.matching import MatchSet
from georeg.raster import GeoTransform, Raster, Semantic


def xyz_raster(shape, value, nodata=None):
    data = np.empty((*shape, 3), dtype=np.float32)
    data[:] = value
    return Raster(data, Semantic.XYZ3, nodata_value=nodata)


def match_set(pairs):
    pairs = np.asarray(pairs, dtype=np.float64)
    n = len(pairs)
    return MatchSet(pairs[:, 0:2], pairs[:, 2:4], np.zeros(n), np.ones(n))


GEO = GeoTransform(100.0, 200.0, 0.5, -0.5)


class TestLiftToDsm:
    def test_composes_lookup_and_dsm_lift(self):
        xyz = xyz_raster((4, 4), [1.0, 2.0, 3.0])
        dsm = Raster(np.full((4, 4, 1), 10.0, dtype=np.float32), Semantic.DSM1)
        lifted = lift_xyz_to_dsm(match_set([[2.0, 2.0, 0.0, 0.0]]), xyz, dsm, GEO)
        assert len(lifted) == 1 and lifted.dropped_count == 0
        assert np.allclose(lifted.corr.source[0], [1.0, 2.0, 3.0])
        assert np.allclose(lifted.corr.target[0], [100.25, 199.75, 10.0])

    def test_dsm_nodata_drops_pair(self):
        xyz = xyz_raster((4, 4), [1.0, 2.0, 3.0])
        data = np.full((4, 4, 1), 10.0, dtype=np.float32)
        data[0, 0] = -9999.0
        dsm = Raster(data, Semantic.DSM1, nodata_value=-9999.0)
        lifted = lift_xyz_to_dsm(
            match_set([[2.0, 2.0, 0.0, 0.0], [1.0, 1.0, 3.0, 3.0]]), xyz, dsm, GEO)
        assert len(lifted) == 1
        assert lifted.dropped_count == 1
        assert np.allclose(lifted.provenance[0], [1.0, 1.0, 3.0, 3.0])

    def test_empty_matchset(self):
        xyz = xyz_raster((4, 4), [1.0, 2.0, 3.0])
        dsm = Raster(np.zeros((4, 4, 1), dtype=np.float32), Semantic.DSM1)
        with pytest.raises(EmptyResult):
            lift_xyz_to_dsm(match_set(np.empty((0, 4))), xyz, dsm, GEO)

    def test_out_of_bounds_drops_pair(self):
        xyz = xyz_raster((4, 4), [1.0, 2.0, 3.0])
        dsm = Raster(np.zeros((4, 4, 1), dtype=np.float32), Semantic.DSM1)
        lifted = lift_xyz_to_dsm(
            match_set([[0.0, 0.0, 9.0, 9.0], [1.0, 1.0, 2.0, 2.0]]), xyz, dsm, GEO)
        assert len(lifted) == 1 and lifted.dropped_count == 1


class TestLiftXyzToXyz:
    def test_constant_rasters(self):
        a = xyz_raster((3, 3), [5.0, 6.0, 7.0])
        b = xyz_raster((3, 3), [8.0, 9.0, 10.0])
        lifted = lift_xyz_to_xyz(match_set([[1.0, 1.0, 2.0, 2.0]]), a, b)
        assert np.allclose(lifted.corr.source[0], [5.0, 6.0, 7.0])
        assert np.allclose(lifted.corr.target[0], [8.0, 9.0, 10.0])

    def test_fractional_coordinates_bilinear_both_sides(self):
        ra, ca = np.mgrid[0:4, 0:4].astype(np.float32)
        a_data = np.stack([ca, ra, np.zeros_like(ra)], axis=2)
        b_data = np.stack([2.0 * ca, ra, np.ones_like(ra)], axis=2)
        a = Raster(a_data, Semantic.XYZ3)
        b = Raster(b_data, Semantic.XYZ3)
        lifted = lift_xyz_to_xyz(match_set([[1.5, 0.25, 2.75, 1.5]]), a, b)
        # x channels ramp with column, y with row; bilinear is exact on ramps.
        assert np.allclose(lifted.corr.source[0], [0.25, 1.5, 0.0], atol=1e-6)
        assert np.allclose(lifted.corr.target[0], [3.0, 2.75, 1.0], atol=1e-6)

    def test_all_nodata_target_empty(self):
        a = xyz_raster((3, 3), [5.0, 6.0, 7.0])
        b = xyz_raster((3, 3), -1.0, nodata=-1.0)
        with pytest.raises(EmptyResult):
            lift_xyz_to_xyz(match_set([[1.0, 1.0, 1.0, 1.0]]), a, b)

    def test_count_invariant(self):
        rng = np.random.default_rng(3)
        a = xyz_raster((10, 10), [1.0, 1.0, 1.0])
        b_data = rng.uniform(0, 1, (10, 10, 3)).astype(np.float32)
        b_data[rng.uniform(size=(10, 10)) < 0.3] = -1.0
        b = Raster(b_data, Semantic.XYZ3, nodata_value=-1.0)
        pairs = np.column_stack([
            rng.uniform(0, 9, 50), rng.uniform(0, 9, 50),
            rng.integers(0, 10, 50).astype(float),
            rng.integers(0, 10, 50).astype(float),
        ])
        lifted = lift_xyz_to_xyz(match_set(pairs), a, b)
        assert len(lifted) + lifted.dropped_count == 50

    def test_csv_export(self, tmp_path):
        a = xyz_raster((3, 3), [5.0, 6.0, 7.0])
        b = xyz_raster((3, 3), [8.0, 9.0, 10.0])
        lifted = lift_xyz_to_xyz(match_set([[1.0, 1.0, 2.0, 2.0]]), a, b)
        path = tmp_path / "lifted.csv"
        lifted.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "xa,ya,za,xb,yb,zb"
        assert lines[1] == "5.000000,6.000000,7.000000,8.000000,9.000000,10.000000"
