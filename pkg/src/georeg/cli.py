"""Command-line front end: one subcommand per pipeline operation.

Every run resolves its configuration (flags win over an optional JSON
config file, which wins over built-in defaults), executes the wrapped
library operation, and writes a manifest next to the primary output
recording the command, resolved configuration, input file hashes, seed,
tool version, and wall time. Re-running a command on identical inputs
reproduces outputs bit-exactly.

Exit codes: 0 success; 1 usage errors (bad flags, missing files, malformed
JSON); 2 data errors (EmptyResult, NoConsensus, ...) with a machine-readable
``{"stage", "code", "message"}`` object on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GeoregError
from .geodesy import GeodeticPoint, geodetic_to_enu, load_truth_cameras
from .gravity import (
    GroundPointSet,
    disambiguate_up,
    load_cameras,
    ransac_plane,
    select_ground_points,
    z_up_rotation,
)
from .icp import IcpConfig, icp_refine, load_point_cloud
from .matching import FilterConfig, FlowPair, filter_matches
from .metrics import evaluate, normalize_by_standoff
from .pipeline import (
    gate_subgraph,
    register_air_to_sat,
    register_ground_to_air,
    SubgraphGateConfig,
)
from .raster import DsmCovariance, read_raster, read_sidecar
from .synth import SceneSpec, generate_scene
from .tiling import make_tile_grid, oblique_poses
from .transforms import RansacConfig, Sim3Transform

DEFAULT_SEED = 0


class _Parser(argparse.ArgumentParser):
    # Usage problems exit 1; argparse's default of 2 is reserved for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _write_manifest(out_path: Path, command: str, config: dict,
                    inputs: list, outputs: list, seed, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "tool_version": __version__,
        "wall_time_s": round(time.time() - started, 6),
    }
    _write_json(Path(str(out_path) + ".manifest.json"), manifest)


def _require_files(*paths) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(f"input file not found: {path}")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    _require_files(path)
    return json.loads(Path(path).read_text())


def _resolve(args, config: dict, name: str, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _filter_config(args, config) -> FilterConfig:
    return FilterConfig(
        cyclic_threshold_px=_resolve(args, config, "cyclic-threshold-px", 2.0),
        min_confidence=_resolve(args, config, "min-confidence", 0.2),
        min_model_confidence=_resolve(args, config, "min-model-confidence", 0.5),
        max_matches=int(_resolve(args, config, "max-matches", 5000)),
        seed=int(_resolve(args, config, "seed", DEFAULT_SEED)),
    )


def _ransac_config(args, config, default_threshold=0.5) -> RansacConfig:
    return RansacConfig(
        inlier_threshold=_resolve(args, config, "ransac-threshold",
                                  default_threshold),
        max_iterations=int(_resolve(args, config, "ransac-iterations", 2000)),
        confidence=_resolve(args, config, "ransac-confidence", 0.99),
        seed=int(_resolve(args, config, "seed", DEFAULT_SEED)),
    )


def _load_flow_pair(args) -> tuple[FlowPair, list]:
    paths = [args.flow_fwd, args.flow_bwd, args.conf_fwd, args.conf_bwd]
    model_conf = getattr(args, "model_conf", None)
    _require_files(*paths, model_conf)
    pair = FlowPair(
        read_raster(args.flow_fwd),
        read_raster(args.flow_bwd),
        read_raster(args.conf_fwd),
        read_raster(args.conf_bwd),
        model_confidence=read_raster(model_conf) if model_conf else None,
    )
    inputs = list(paths) + ([model_conf] if model_conf else [])
    return pair, inputs


def _add_flow_flags(parser, required=True):
    parser.add_argument("--flow-fwd", required=required)
    parser.add_argument("--flow-bwd", required=required)
    parser.add_argument("--conf-fwd", required=required)
    parser.add_argument("--conf-bwd", required=required)
    parser.add_argument("--model-conf")


def _add_filter_flags(parser):
    parser.add_argument("--cyclic-threshold-px", type=float)
    parser.add_argument("--min-confidence", type=float)
    parser.add_argument("--min-model-confidence", type=float)
    parser.add_argument("--max-matches", type=int)


def _add_ransac_flags(parser):
    parser.add_argument("--ransac-threshold", type=float)
    parser.add_argument("--ransac-iterations", type=int)
    parser.add_argument("--ransac-confidence", type=float)


def _add_common_flags(parser):
    parser.add_argument("--config", help="JSON config file; flags win")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)


def _cmd_filter_matches(args) -> int:
    started = time.time()
    config = _load_config_file(args.config)
    pair, inputs = _load_flow_pair(args)
    cfg = _filter_config(args, config)
    matches = filter_matches(pair, cfg)
    matches.to_csv(args.out)
    _write_manifest(Path(args.out), "filter-matches", vars(cfg), inputs,
                    [args.out], cfg.seed, started)
    print(f"kept {len(matches)} matches -> {args.out}")
    return 0


def _cmd_estimate_gravity(args) -> int:
    started = time.time()
    config = _load_config_file(args.config)
    _require_files(args.points, args.cameras)
    seed = int(_resolve(args, config, "seed", DEFAULT_SEED))

    records = json.loads(Path(args.points).read_text())
    masks = {}
    for spec in args.mask or []:
        image_id, _, path = spec.partition("=")
        _require_files(path)
        masks[image_id] = read_raster(path)
    if masks:
        points = [(np.asarray(rec["xyz"], dtype=np.float64),
                   [tuple(obs) for obs in rec.get("observations", [])])
                  for rec in records]
        ground = select_ground_points(
            points, masks,
            min_ground_fraction=_resolve(args, config, "ground-fraction", 0.5))
    else:
        ground = GroundPointSet(np.asarray(
            [rec["xyz"] for rec in records], dtype=np.float64))

    plane, inliers = ransac_plane(
        ground,
        inlier_threshold=_resolve(args, config, "plane-threshold", None),
        iterations=int(_resolve(args, config, "plane-iterations", 1000)),
        seed=seed)
    cameras = load_cameras(args.cameras)
    up = disambiguate_up(plane, cameras, seed=seed)
    transform = z_up_rotation(up)
    payload = transform.to_dict() | {
        "up_vector": up.tolist(),
        "plane_normal": plane.normal.tolist(),
        "plane_offset": plane.offset,
        "plane_inlier_count": int(inliers.sum()),
        "ground_point_count": len(ground),
    }
    _write_json(args.out, payload)
    inputs = [args.points, args.cameras] + [
        spec.partition("=")[2] for spec in args.mask or []]
    _write_manifest(Path(args.out), "estimate-gravity", {"seed": seed}, inputs,
                    [args.out], seed, started)
    print(f"up vector {np.round(up, 6).tolist()} -> {args.out}")
    return 0


def _cmd_register_air2sat(args) -> int:
    started = time.time()
    config = _load_config_file(args.config)
    pair, inputs = _load_flow_pair(args)
    _require_files(args.xyz, args.dsm)
    xyz = read_raster(args.xyz)
    dsm = read_raster(args.dsm)
    geo, _, _ = read_sidecar(args.dsm)
    if geo is None:
        raise FileNotFoundError(
            f"missing geotransform sidecar for {args.dsm} "
            f"(expected {args.dsm.removesuffix('.grr')}.meta.json)")
    filter_cfg = _filter_config(args, config)
    ransac_cfg = _ransac_config(args, config)
    result = register_air_to_sat(pair, xyz, dsm, geo,
                                 filter_cfg=filter_cfg, ransac_cfg=ransac_cfg)
    _write_json(args.out, result.to_dict())
    _write_manifest(Path(args.out), "register-air2sat",
                    {"filter": vars(filter_cfg), "ransac": vars(ransac_cfg)},
                    inputs + [args.xyz, args.dsm], [args.out],
                    filter_cfg.seed, started)
    print(f"registered with {result.inlier_count}/{result.lifted_count} "
          f"inliers -> {args.out}")
    return 0


def _cmd_register_ground2air(args) -> int:
    started = time.time()
    config = _load_config_file(args.config)
    _require_files(args.manifest)
    root = Path(args.manifest).parent
    manifest = json.loads(Path(args.manifest).read_text())

    images = {}
    for image_id, rel in manifest["images"].items():
        _require_files(root / rel)
        images[image_id] = read_raster(root / rel)
    tiles = {}
    for tile_id, rel in manifest["tiles"].items():
        _require_files(root / rel)
        tiles[tile_id] = read_raster(root / rel)
    flows = {}
    inputs = [args.manifest]
    for entry in manifest["pairs"]:
        paths = [root / entry[key] for key in ("fwd", "bwd", "conf_fwd",
                                               "conf_bwd")]
        _require_files(*paths)
        inputs.extend(paths)
        flows[(entry["image"], entry["tile"])] = FlowPair(
            read_raster(paths[0]), read_raster(paths[1]),
            read_raster(paths[2]), read_raster(paths[3]))

    filter_cfg = _filter_config(args, config)
    k = int(_resolve(args, config, "top-k", 5))
    threshold = _resolve(args, config, "inlier-threshold", 0.5)
    result = register_ground_to_air(
        flows, images, tiles, k=k, inlier_threshold=threshold,
        filter_cfg=filter_cfg,
        ransac_cfg=_ransac_config(args, config, default_threshold=threshold),
        threads=int(_resolve(args, config, "threads", os.cpu_count() or 1)))

    gate_cfg = SubgraphGateConfig(
        min_cameras=int(_resolve(args, config, "min-cameras", 9)),
        min_inlier_fraction=_resolve(args, config, "min-inlier-fraction", 0.2))
    camera_count = int(_resolve(args, config, "camera-count",
                                len(manifest["images"])))
    decision = gate_subgraph(camera_count, result.final_inlier_fraction,
                             gate_cfg)
    payload = result.to_dict() | {
        "gate": {"accepted": decision.accepted, "reason": decision.reason,
                 "camera_count": camera_count},
    }
    _write_json(args.out, payload)
    if args.candidates_out:
        _write_json(args.candidates_out,
                    {"candidates": [c.to_dict() for c in result.candidates]})
    _write_manifest(Path(args.out), "register-ground2air",
                    {"k": k, "inlier_threshold": threshold,
                     "filter": vars(filter_cfg)},
                    inputs, [args.out], filter_cfg.seed, started)
    print(f"consensus {result.final_inlier_count}/{result.pooled_count} "
          f"pooled inliers; gate={'accept' if decision else 'reject'} "
          f"-> {args.out}")
    return 0


def _cmd_icp_refine(args) -> int:
    started = time.time()
    config = _load_config_file(args.config)
    _require_files(args.source, args.target, args.init)
    source = load_point_cloud(args.source)
    target = load_point_cloud(args.target)
    init = Sim3Transform.from_dict(json.loads(Path(args.init).read_text()))
    cfg = IcpConfig(
        max_iterations=int(_resolve(args, config, "max-iterations", 50)),
        correspondence_radius=_resolve(args, config, "radius", None),
        tukey_k=_resolve(args, config, "tukey-k", None),
        estimate_scale=bool(_resolve(args, config, "estimate-scale", False)),
    )
    result = icp_refine(source, target, init, cfg)
    payload = result.transform.to_dict() | {
        "converged": result.converged,
        "iterations": result.iterations,
        "trace": [vars(t) for t in result.trace],
    }
    _write_json(args.out, payload)
    _write_manifest(Path(args.out), "icp-refine",
                    {"max_iterations": cfg.max_iterations,
                     "estimate_scale": cfg.estimate_scale},
                    [args.source, args.target, args.init], [args.out],
                    None, started)
    print(f"icp {'converged' if result.converged else 'stopped'} after "
          f"{result.iterations} iterations -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    started = time.time()
    config = _load_config_file(args.config)
    _require_files(args.est, args.truth, args.cov)
    truth_cams, anchor = load_truth_cameras(args.truth)
    if args.anchor:
        lat, lon, alt = (float(v) for v in args.anchor.split(","))
        anchor = GeodeticPoint(lat, lon, alt)
    if anchor is None:
        raise FileNotFoundError(
            "no geodetic anchor: pass --anchor lat,lon,alt or embed one in "
            "the truth file")
    est_records = json.loads(Path(args.est).read_text())
    estimated, truth = [], []
    for record in est_records:
        camera_id = record["id"]
        if camera_id not in truth_cams:
            raise GeoregError(f"camera {camera_id} missing from truth file",
                              stage="evaluate")
        estimated.append(record["position_m"])
        truth.append(geodetic_to_enu(truth_cams[camera_id], anchor))
    cov = DsmCovariance.from_dict(json.loads(Path(args.cov).read_text()))
    report = evaluate(np.asarray(estimated), np.asarray(truth), cov,
                      inlier_fraction=_resolve(args, config,
                                               "inlier-fraction", None))
    payload = report.to_dict()
    standoff = _resolve(args, config, "standoff-m", None)
    if standoff is not None:
        payload["error_per_standoff_meter"] = normalize_by_standoff(
            report, standoff)
    _write_json(args.out, payload)
    _write_manifest(Path(args.out), "evaluate", {},
                    [args.est, args.truth, args.cov], [args.out], None, started)
    print(f"MAE {report.mean_absolute_error_m:.3f} m over "
          f"{report.camera_count} cameras -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    started = time.time()
    _require_files(args.spec)
    spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    bundle = generate_scene(spec)
    out = bundle.write(args.out)
    _write_manifest(out / "scene", "synth", spec.to_dict(), [args.spec],
                    [str(out)], spec.seed, started)
    print(f"scene written to {out}")
    return 0


def _cmd_tile_plan(args) -> int:
    started = time.time()
    config = _load_config_file(args.config)
    render_ids = args.render_id or [""]
    grids = [make_tile_grid(args.height, args.width,
                            int(_resolve(args, config, "tile-size", 300)),
                            _resolve(args, config, "overlap", 0.25),
                            render_id=rid)
             for rid in render_ids]
    payload = {
        "grids": [g.to_dict() for g in grids],
        "total_tiles": sum(len(g) for g in grids),
    }
    _write_json(args.out, payload)
    _write_manifest(Path(args.out), "tile-plan", {}, [], [args.out],
                    None, started)
    print(f"{payload['total_tiles']} tiles -> {args.out}")
    return 0


def _cmd_oblique_poses(args) -> int:
    started = time.time()
    center = [float(v) for v in args.center.split(",")]
    views = oblique_poses(center, args.radius,
                          azimuth_step_deg=args.azimuth_step,
                          depression_deg=args.depression,
                          resolution_px=args.resolution,
                          include_nadir=not args.no_nadir)
    views.save_spec(args.out)
    _write_manifest(Path(args.out), "oblique-poses",
                    {"radius": args.radius, "depression": args.depression},
                    [], [args.out], None, started)
    print(f"{len(views.poses)} poses -> {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="georeg",
                     description="metadata-free georegistration pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter-matches", parents=[], help="cyclic-consistency filter")
    _add_flow_flags(p)
    _add_filter_flags(p)
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter_matches)

    p = sub.add_parser("estimate-gravity", help="up vector from ground points")
    p.add_argument("--points", required=True,
                   help="JSON [{xyz, observations: [[image, row, col], ...]}]")
    p.add_argument("--cameras", required=True)
    p.add_argument("--mask", action="append", metavar="IMAGE=PATH")
    p.add_argument("--ground-fraction", type=float)
    p.add_argument("--plane-threshold", type=float)
    p.add_argument("--plane-iterations", type=int)
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_estimate_gravity)

    p = sub.add_parser("register-air2sat", help="airborne model to satellite DSM")
    _add_flow_flags(p)
    p.add_argument("--xyz", required=True)
    p.add_argument("--dsm", required=True)
    _add_filter_flags(p)
    _add_ransac_flags(p)
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_register_air2sat)

    p = sub.add_parser("register-ground2air",
                       help="ground model to airborne model via tiles")
    p.add_argument("--manifest", required=True)
    p.add_argument("--top-k", type=int)
    p.add_argument("--inlier-threshold", type=float)
    p.add_argument("--camera-count", type=int)
    p.add_argument("--min-cameras", type=int)
    p.add_argument("--min-inlier-fraction", type=float)
    _add_filter_flags(p)
    _add_ransac_flags(p)
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--candidates-out")
    p.set_defaults(func=_cmd_register_ground2air)

    p = sub.add_parser("icp-refine", help="robust ICP refinement")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--tukey-k", type=float)
    p.add_argument("--estimate-scale", action="store_const", const=True)
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_icp_refine)

    p = sub.add_parser("evaluate", help="camera geopositioning error report")
    p.add_argument("--est", required=True,
                   help="JSON [{id, position_m: [x, y, z]}] in the local frame")
    p.add_argument("--truth", required=True)
    p.add_argument("--cov", required=True)
    p.add_argument("--anchor", help="lat,lon,alt overriding the truth file")
    p.add_argument("--standoff-m", type=float)
    p.add_argument("--inlier-fraction", type=float)
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic oracle scene")
    p.add_argument("--spec", required=True)
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("tile-plan", help="overlapping tile grid layout")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--tile-size", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--render-id", action="append")
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tile_plan)

    p = sub.add_parser("oblique-poses", help="oblique render pose ring")
    p.add_argument("--center", required=True, metavar="X,Y,Z")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--azimuth-step", type=float, default=45.0)
    p.add_argument("--depression", type=float, default=45.0)
    p.add_argument("--resolution", type=int, default=2048)
    p.add_argument("--no-nadir", action="store_true")
    _add_common_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_oblique_poses)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GeoregError as err:
        sys.stderr.write(json.dumps(err.to_dict()) + "\n")
        return 2
    except (OSError, json.JSONDecodeError, ValueError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
