import numpy as np
import pytest

from georeg import EmptyResult
from georeg.matching import (
    FilterConfig,
    MatchSet,
    cyclic_residuals,
    filter_matches,
)

from _util import brute_force_filter, make_flow_pair, shift_flow_pair


class TestCyclicResiduals:
    def test_identity_flows_zero(self):
        fp = shift_flow_pair((8, 8), fwd_shift=0.0, bwd_shift=0.0)
        res = cyclic_residuals(fp)
        assert not res.nodata_mask().any()
        assert np.max(res.data) == 0.0

    def test_exact_inverse_shift_zero(self):
        fp = shift_flow_pair((8, 12), fwd_shift=3.0, bwd_shift=-3.0)
        res = cyclic_residuals(fp)
        interior = res.data[:, :-3, 0]
        assert np.max(np.abs(interior)) == 0.0
        # Landing beyond the last column leaves no valid trip back.
        assert res.nodata_mask()[:, -3:].all()

    def test_mismatched_inverse_gives_constant_residual(self):
        fp = shift_flow_pair((8, 12), fwd_shift=3.0, bwd_shift=-1.0)
        res = cyclic_residuals(fp)
        interior = res.data[:, :-3, 0]
        assert np.allclose(interior, 2.0)

    def test_smooth_inverse_flow_below_interp_tolerance(self):
        # Affine forward flow with its exact affine inverse: bilinear
        # sampling of an affine field is exact, so residuals are roundoff.
        h, w = 10, 10
        rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
        fwd = np.stack([0.8 * rr + 2.0, 0.9 * cc + 1.0], axis=2)
        hb, wb = 14, 14
        rb, cb = np.mgrid[0:hb, 0:wb].astype(np.float64)
        bwd = np.stack([(rb - 2.0) / 0.8, (cb - 1.0) / 0.9], axis=2)
        fp = make_flow_pair(fwd, bwd)
        res = cyclic_residuals(fp)
        valid = res.data[~res.nodata_mask()]
        assert valid.size > 0
        assert np.max(valid) < 1e-6


class TestFilterMatches:
    def test_subsamples_to_cap(self):
        fp = shift_flow_pair((100, 100), 0.0, 0.0)
        ms = filter_matches(fp, FilterConfig(max_matches=5000, seed=4))
        assert len(ms) == 5000
        # Distinct source pixels, emitted in row-major order.
        flat = ms.coords_a[:, 0] * 100 + ms.coords_a[:, 1]
        assert len(np.unique(flat)) == 5000
        assert np.all(np.diff(flat) > 0)

    def test_low_confidence_empty(self):
        fp = shift_flow_pair((10, 10), 0.0, 0.0, confidence=0.1)
        with pytest.raises(EmptyResult):
            filter_matches(fp)

    def test_threshold_boundary_inclusive(self):
        fp = shift_flow_pair((8, 12), fwd_shift=3.0, bwd_shift=-1.0)
        ms = filter_matches(fp, FilterConfig(cyclic_threshold_px=2.0))
        # Residual is exactly 2 px on every interior pixel; <= keeps them all.
        assert len(ms) == 8 * 9

    def test_output_passes_brute_force_recheck(self):
        rng = np.random.default_rng(17)
        fp = make_flow_pair(*_random_flows(rng, (14, 14), (16, 16)),
                            confidence=rng.uniform(0.0, 1.0, (14, 14)))
        cfg = FilterConfig(max_matches=10**6)
        expected = brute_force_filter(fp, cfg)
        ms = filter_matches(fp, cfg)
        got = {(int(r), int(c)) for r, c in ms.coords_a}
        assert got == expected

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(23)
        fp = make_flow_pair(*_random_flows(rng, (12, 12), (12, 12)))
        counts = []
        for thr in (0.5, 1.0, 2.0, 4.0, 8.0):
            try:
                counts.append(len(filter_matches(
                    fp, FilterConfig(cyclic_threshold_px=thr, max_matches=10**6))))
            except EmptyResult:
                counts.append(0)
        assert counts == sorted(counts)

    def test_deterministic_per_seed(self):
        fp = shift_flow_pair((60, 60), 0.0, 0.0)
        cfg = FilterConfig(max_matches=500, seed=11)
        a = filter_matches(fp, cfg)
        b = filter_matches(fp, cfg)
        assert a.coords_a.tobytes() == b.coords_a.tobytes()
        assert a.coords_b.tobytes() == b.coords_b.tobytes()
        c = filter_matches(fp, FilterConfig(max_matches=500, seed=12))
        assert a.coords_a.tobytes() != c.coords_a.tobytes()

    def test_model_confidence_on_source_image(self):
        mc = np.ones((10, 10), dtype=np.float32)
        mc[:5] = 0.0
        fp = shift_flow_pair((10, 10), 0.0, 0.0, model_confidence=mc)
        ms = filter_matches(fp, FilterConfig(max_matches=10**6))
        assert np.all(ms.coords_a[:, 0] >= 5)

    def test_model_confidence_on_target_image(self):
        # B-shaped reliability map gates at the flow landing position.
        mc = np.ones((14, 14), dtype=np.float32)
        mc[:, 7:] = 0.0
        fp = shift_flow_pair((10, 10), fwd_shift=2.0, bwd_shift=-2.0,
                             shape_b=(14, 14), model_confidence=mc)
        ms = filter_matches(fp, FilterConfig(max_matches=10**6))
        assert np.all(ms.coords_b[:, 1] < 6.5)


class TestMatchSetCsv:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(31)
        ms = MatchSet(rng.uniform(0, 9, (20, 2)), rng.uniform(0, 9, (20, 2)),
                      rng.uniform(0, 2, 20), rng.uniform(0, 1, 20))
        path = tmp_path / "matches.csv"
        ms.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "row_a,col_a,row_b,col_b,residual_px,confidence"
        back = MatchSet.from_csv(path)
        assert np.allclose(back.coords_a, ms.coords_a, atol=1e-6)
        assert np.allclose(back.coords_b, ms.coords_b, atol=1e-6)
        assert np.allclose(back.residual_px, ms.residual_px, atol=1e-6)
        assert np.allclose(back.confidence, ms.confidence, atol=1e-6)


def _random_flows(rng, shape_a, shape_b):
    """Smoothly perturbed near-identity flows (not exact inverses)."""
    ha, wa = shape_a
    hb, wb = shape_b
    rr, cc = np.mgrid[0:ha, 0:wa].astype(np.float64)
    fwd = np.stack([
        rr + 1.5 * np.sin(cc / 3.0) + rng.normal(0, 0.5, (ha, wa)),
        cc + 1.5 * np.cos(rr / 3.0) + rng.normal(0, 0.5, (ha, wa)),
    ], axis=2)
    rb, cb = np.mgrid[0:hb, 0:wb].astype(np.float64)
    bwd = np.stack([
        rb - 1.5 * np.sin(cb / 3.0) + rng.normal(0, 0.5, (hb, wb)),
        cb - 1.5 * np.cos(rb / 3.0) + rng.normal(0, 0.5, (hb, wb)),
    ], axis=2)
    return fwd, bwd
