import numpy as np
import pytest

from georeg import EmptyResult, NoCandidates, NoConsensus
from georeg.matching import FilterConfig
from georeg.pipeline import (
    SubgraphGateConfig,
    gate_subgraph,
    register_air_to_sat,
    register_ground_to_air,
)
from georeg.synth import (
    BoxSpec,
    SceneSpec,
    YawSim3Spec,
    generate_scene,
    random_flow_pair,
)
from georeg.transforms import RansacConfig

from _util import transform_param_errors

BOXES = (BoxSpec(-30, -20, -10, 5, 12.0), BoxSpec(10, 10, 35, 30, 8.0))


def air_scene(**kwargs):
    defaults = dict(extent_m=100.0, boxes=BOXES, seed=3)
    defaults.update(kwargs)
    return generate_scene(SceneSpec(**defaults))


@pytest.fixture(scope="module")
def ground_bundle():
    return generate_scene(SceneSpec(
        extent_m=100.0,
        air_resolution=256,
        boxes=BOXES,
        ground_to_air=YawSim3Spec(yaw_deg=-23.0, scale=1.0,
                                  translation=(7.0, 3.0, -2.0)),
        ground_image_count=3,
        ground_resolution=48,
        tile_size=64,
        seed=5,
    ))


class TestRegisterAirToSat:
    def test_noiseless_recovery(self):
        bundle = air_scene(air_to_geo=YawSim3Spec(17.0, 1.0, (31.0, -12.0, 4.0)))
        result = register_air_to_sat(bundle.air_flow, bundle.xyz_air,
                                     bundle.dsm, bundle.geo)
        err = transform_param_errors(result.transform, bundle.truth_air_to_geo)
        assert err["trans_m"] < 1e-6
        assert err["rot_deg"] < 1e-6
        assert err["scale_rel"] < 1e-6
        assert result.inlier_count == result.lifted_count
        assert result.transform.source_frame == "airborne"
        assert result.transform.target_frame == "geo"

    def test_stage_attribution_on_empty_filter(self):
        # Nonzero yaw leaves float32-floor residuals (~1e-5 px), so a 1e-9
        # threshold rejects every pixel.
        bundle = air_scene(air_to_geo=YawSim3Spec(17.0, 1.0, (31.0, -12.0, 4.0)))
        with pytest.raises(EmptyResult) as excinfo:
            register_air_to_sat(bundle.air_flow, bundle.xyz_air, bundle.dsm,
                                bundle.geo,
                                filter_cfg=FilterConfig(cyclic_threshold_px=1e-9))
        assert excinfo.value.stage == "match_filter"

    def test_composition_matches_direct(self):
        # Registering A->B then B->C composes to the direct A->C transform.
        t_ab = YawSim3Spec(11.0, 1.25, (5.0, -2.0, 1.0))
        t_bc = YawSim3Spec(-29.0, 0.5, (-10.0, 4.0, 2.0))
        bundle_ab = air_scene(air_to_geo=t_ab)
        res_ab = register_air_to_sat(bundle_ab.air_flow, bundle_ab.xyz_air,
                                     bundle_ab.dsm, bundle_ab.geo)
        composed_spec = YawSim3Spec(
            t_ab.yaw_deg + t_bc.yaw_deg, t_ab.scale * t_bc.scale, (0, 0, 0))
        truth_ac = t_bc.to_transform().compose(t_ab.to_transform())
        bundle_ac = air_scene(air_to_geo=YawSim3Spec(
            composed_spec.yaw_deg, composed_spec.scale,
            tuple(truth_ac.translation)))
        res_ac = register_air_to_sat(bundle_ac.air_flow, bundle_ac.xyz_air,
                                     bundle_ac.dsm, bundle_ac.geo)
        composed = t_bc.to_transform().compose(res_ab.transform)
        err = transform_param_errors(composed, res_ac.transform)
        assert err["trans_m"] < 1e-6 and err["rot_deg"] < 1e-6


class TestRegisterGroundToAir:
    def test_single_correct_tile_consensus(self, ground_bundle):
        bundle = ground_bundle
        flows = dict(bundle.correct_flows)
        seed = 1000
        for img in sorted(bundle.ground_images):
            for tile in sorted(bundle.tiles):
                if (img, tile) not in flows:
                    t = bundle.tiles[tile]
                    flows[(img, tile)] = random_flow_pair(
                        (bundle.spec.ground_resolution,) * 2,
                        (t.height, t.width), seed)
                    seed += 1
        result = register_ground_to_air(flows, bundle.ground_images,
                                        bundle.tiles, k=5, inlier_threshold=0.5)
        err = transform_param_errors(result.transform,
                                     bundle.truth_ground_to_air)
        assert err["trans_m"] < 1e-6
        assert err["rot_deg"] < 1e-6
        winner = [c for c in result.candidates if c.selected]
        assert len(winner) == 1
        assert winner[0].inlier_count == max(c.inlier_count
                                             for c in result.candidates)

    def test_invariant_to_pair_order(self, ground_bundle):
        bundle = ground_bundle
        flows = dict(bundle.correct_flows)
        result_a = register_ground_to_air(flows, bundle.ground_images,
                                          bundle.tiles)
        reversed_flows = dict(reversed(list(flows.items())))
        result_b = register_ground_to_air(reversed_flows, bundle.ground_images,
                                          bundle.tiles)
        assert np.array_equal(result_a.transform.translation,
                              result_b.transform.translation)
        assert result_a.final_inlier_count == result_b.final_inlier_count

    def test_threaded_equals_serial(self, ground_bundle):
        bundle = ground_bundle
        flows = dict(bundle.correct_flows)
        serial = register_ground_to_air(flows, bundle.ground_images,
                                        bundle.tiles, threads=1)
        threaded = register_ground_to_air(flows, bundle.ground_images,
                                          bundle.tiles, threads=4)
        assert np.array_equal(serial.transform.translation,
                              threaded.transform.translation)
        assert np.array_equal(serial.transform.rotation,
                              threaded.transform.rotation)
        assert [c.to_dict() for c in serial.candidates] == \
            [c.to_dict() for c in threaded.candidates]

    def test_all_random_pairs_no_consensus(self, ground_bundle):
        bundle = ground_bundle
        tiles = dict(list(sorted(bundle.tiles.items()))[:6])
        flows = {}
        seed = 77
        for img in sorted(bundle.ground_images):
            for tile in tiles:
                flows[(img, tile)] = random_flow_pair(
                    (bundle.spec.ground_resolution,) * 2,
                    (tiles[tile].height, tiles[tile].width), seed)
                seed += 1
        with pytest.raises((NoConsensus, NoCandidates)):
            register_ground_to_air(
                flows, bundle.ground_images, tiles, k=5,
                inlier_threshold=1e-6,
                ransac_cfg=RansacConfig(inlier_threshold=1e-6,
                                        max_iterations=100, seed=1))

    def test_empty_pairs_no_candidates(self, ground_bundle):
        bundle = ground_bundle
        tile = sorted(bundle.tiles)[0]
        raster = bundle.tiles[tile]
        fp = random_flow_pair((8, 8), (raster.height, raster.width), seed=3)
        with pytest.raises(NoCandidates):
            register_ground_to_air(
                {("g00", tile): fp},
                {"g00": bundle.ground_images["g00"]},
                bundle.tiles,
                filter_cfg=FilterConfig(cyclic_threshold_px=1e-6))


class TestGateSubgraph:
    def test_boundary_inclusive_accept(self):
        assert gate_subgraph(9, 0.20)
        assert gate_subgraph(9, 0.20).reason is None

    def test_too_few_cameras(self):
        decision = gate_subgraph(8, 0.9)
        assert not decision
        assert "cameras" in decision.reason

    def test_low_inliers(self):
        decision = gate_subgraph(50, 0.19)
        assert not decision
        assert "inlier" in decision.reason

    def test_custom_config(self):
        cfg = SubgraphGateConfig(min_cameras=3, min_inlier_fraction=0.5)
        assert gate_subgraph(3, 0.5, cfg)
        assert not gate_subgraph(2, 0.9, cfg)
