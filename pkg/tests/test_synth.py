import numpy as np
import pytest

from georeg.matching import FilterConfig, cyclic_residuals, filter_matches
from georeg.pipeline import register_air_to_sat
from georeg.raster import read_raster, read_sidecar
from georeg.synth import (
    BoxSpec,
    NoiseSpec,
    SceneSpec,
    YawSim3Spec,
    corrupt_flows,
    generate_scene,
    random_flow_pair,
)

from _util import assert_transforms_close

BOXES = (BoxSpec(-30, -20, -10, 5, 12.0), BoxSpec(10, 10, 35, 30, 8.0))


@pytest.fixture(scope="module")
def aligned_bundle():
    return generate_scene(SceneSpec(extent_m=100.0, boxes=BOXES, seed=1))


@pytest.fixture(scope="module")
def yaw_bundle():
    return generate_scene(SceneSpec(
        extent_m=100.0, boxes=BOXES, seed=3,
        air_to_geo=YawSim3Spec(17.0, 1.0, (31.0, -12.0, 4.0))))


class TestGenerateScene:
    def test_identity_scene_registers_to_identity(self, aligned_bundle):
        b = aligned_bundle
        result = register_air_to_sat(b.air_flow, b.xyz_air, b.dsm, b.geo)
        assert np.linalg.norm(result.transform.translation) < 1e-9
        assert abs(result.transform.scale - 1.0) < 1e-9

    def test_aligned_flows_exactly_consistent(self, aligned_bundle):
        res = cyclic_residuals(aligned_bundle.air_flow)
        valid = res.data[~res.nodata_mask()]
        assert valid.size > 0
        assert float(np.max(valid)) == 0.0

    def test_yaw_flows_consistent_to_float32_floor(self, yaw_bundle):
        # Rotated flow values are irrational, so float32 storage leaves
        # residuals at the quantization floor, far inside the 2 px gate.
        res = cyclic_residuals(yaw_bundle.air_flow)
        valid = res.data[~res.nodata_mask()]
        assert float(np.max(valid)) < 1e-4

    def test_xyz_matches_analytic_heightfield_exactly(self, yaw_bundle):
        b = yaw_bundle
        res = b.spec.air_resolution
        rows, cols = np.mgrid[0:res, 0:res]
        x, y = b.nadir_grid.pixel_to_model(rows.ravel(), cols.ravel())
        expected = np.stack([x, y, b.heightfield(x, y)], axis=1) \
            .reshape(res, res, 3).astype(np.float32)
        assert np.array_equal(b.xyz_air.data, expected)

    def test_deterministic_per_seed(self):
        spec = SceneSpec(extent_m=80.0, boxes=BOXES, seed=9,
                         air_to_geo=YawSim3Spec(5.0, 1.0, (3.0, 1.0, 0.0)),
                         noise=NoiseSpec(flow_jitter_px=0.5,
                                         outlier_fraction=0.1))
        a = generate_scene(spec)
        b = generate_scene(spec)
        assert a.air_flow.forward.data.tobytes() == \
            b.air_flow.forward.data.tobytes()
        assert a.dsm.data.tobytes() == b.dsm.data.tobytes()

    def test_truth_transforms_carried(self, yaw_bundle):
        truth = YawSim3Spec(17.0, 1.0, (31.0, -12.0, 4.0)).to_transform()
        assert_transforms_close(yaw_bundle.truth_air_to_geo, truth,
                                scale_tol=1e-12, rot_deg_tol=1e-10,
                                trans_tol=1e-12)

    def test_bundle_write_roundtrips(self, tmp_path, yaw_bundle):
        out = yaw_bundle.write(tmp_path / "scene")
        dsm = read_raster(out / "dsm.grr")
        assert np.array_equal(dsm.data, yaw_bundle.dsm.data)
        geo, cov, prov = read_sidecar(out / "dsm.grr")
        assert geo == yaw_bundle.geo
        assert np.array_equal(cov.sigma, yaw_bundle.covariance.sigma)
        assert prov["generator"] == "synthetic-oracle"
        fwd = read_raster(out / "flows" / "air2sat.fwd.grr")
        assert np.array_equal(fwd.data, yaw_bundle.air_flow.forward.data)
        assert (out / "cameras_truth.json").exists()
        assert (out / "pose_specs.json").exists()

    def test_ground_bundle_write(self, tmp_path):
        bundle = generate_scene(SceneSpec(
            extent_m=100.0, air_resolution=128, boxes=BOXES,
            ground_to_air=YawSim3Spec(-10.0, 1.0, (2.0, 1.0, 0.0)),
            ground_image_count=2, ground_resolution=32, tile_size=48, seed=7))
        out = bundle.write(tmp_path / "scene")
        import json
        manifest = json.loads((out / "ground_manifest.json").read_text())
        assert len(manifest["pairs"]) == len(bundle.correct_flows)
        for pair in manifest["pairs"]:
            for key in ("fwd", "bwd", "conf_fwd", "conf_bwd"):
                assert (out / pair[key]).exists()
            assert (out / manifest["images"][pair["image"]]).exists()
            assert (out / manifest["tiles"][pair["tile"]]).exists()


class TestCorruptFlows:
    def test_noop_when_no_noise(self, aligned_bundle):
        pair, mask = corrupt_flows(aligned_bundle.air_flow, NoiseSpec(), seed=1)
        assert pair is aligned_bundle.air_flow
        assert not mask.any()

    def test_hard_mode_golden_removal_rate(self):
        # Golden fixed-seed run: 78540 corrupted pixels, 2 survive the
        # cyclic gate (99.997% removed; the criterion is >= 99%).
        spec = SceneSpec(extent_m=100.0, air_resolution=512,
                         boxes=(BOXES[0],), seed=11)
        bundle = generate_scene(spec)
        pair, corrupted = corrupt_flows(
            bundle.air_flow, NoiseSpec(outlier_fraction=0.3, hard=True),
            seed=21)
        ms = filter_matches(pair, FilterConfig(max_matches=10**9))
        kept = {(int(r), int(c)) for r, c in ms.coords_a}
        bad = {(int(r), int(c)) for r, c in np.argwhere(corrupted)}
        assert len(bad) == 78540
        assert len(kept & bad) == 2
        assert 1.0 - len(kept & bad) / len(bad) >= 0.99

    def test_easy_mode_confidence_gate_removes_all(self, aligned_bundle):
        pair, corrupted = corrupt_flows(
            aligned_bundle.air_flow,
            NoiseSpec(outlier_fraction=0.2, confidence_decay=0.1), seed=31)
        ms = filter_matches(pair, FilterConfig(max_matches=10**9))
        kept = {(int(r), int(c)) for r, c in ms.coords_a}
        bad = {(int(r), int(c)) for r, c in np.argwhere(corrupted)}
        assert not (kept & bad)

    def test_jitter_perturbs_flows(self, aligned_bundle):
        pair, _ = corrupt_flows(aligned_bundle.air_flow,
                                NoiseSpec(flow_jitter_px=1.0), seed=41)
        delta = pair.forward.data - aligned_bundle.air_flow.forward.data
        assert np.std(delta) == pytest.approx(1.0, rel=0.05)


class TestRandomFlowPair:
    def test_shapes_and_determinism(self):
        a = random_flow_pair((16, 24), (32, 40), seed=5)
        b = random_flow_pair((16, 24), (32, 40), seed=5)
        assert a.shape_a == (16, 24) and a.shape_b == (32, 40)
        assert a.forward.data.tobytes() == b.forward.data.tobytes()

    def test_rarely_survives_cyclic_gate(self):
        from georeg.errors import EmptyResult
        pair = random_flow_pair((64, 64), (64, 64), seed=9)
        try:
            ms = filter_matches(pair, FilterConfig(max_matches=10**9))
            survivors = len(ms)
        except EmptyResult:
            survivors = 0
        assert survivors < 0.02 * 64 * 64
