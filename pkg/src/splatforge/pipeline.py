"""The nine-stage batch pipeline and its per-stage file contracts.

Each stage function reads only files, writes only files, and emits a
StageLedger recording content hashes of everything it touched — so running
stages one at a time through the CLI reproduces run_all byte for byte, and
verify_run can audit a finished directory with no pipeline state.

Stage order: keyframes -> cubemap -> ingest_sfm -> match -> odometry ->
colorize -> prism -> align -> export. Gates: an odometry fitness break
stops the run (partial artifacts kept); an alignment gate failure is
per-capacity and downgrades that capacity's asset to LiDAR-only.
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass

import numpy as np
from PIL import Image

from splatforge.config import PipelineConfig
from splatforge.erp import FACE_ORDER, project_erp_to_cubemap
from splatforge.errors import (
    AlignmentGateFailed,
    InsufficientPoints,
    InvalidInput,
    MissingInput,
    OdometryBreak,
    ParseError,
)
from splatforge.features import select_keyframes
from splatforge.geometry import PointCloud, RigidTransform
from splatforge.gsexport import (
    PROVENANCE_LIDAR,
    build_asset,
    export_asset,
    fuse,
    write_asset_manifest,
)
from splatforge.ledger import (
    StageLedger,
    canonical_json,
    hash_file,
    load_ledger,
    write_ledger,
    write_manifest,
)
from splatforge.lidar import (
    TimedScan,
    colorize,
    load_calibration,
    match_timestamps,
    odometry_chain,
)
from splatforge.ply import read_ply, write_ply
from splatforge.prism import sweep
from splatforge.registration import (
    AlignParams,
    GlobalRegParams,
    IcpParams,
    align_sfm_to_lidar,
    umeyama_similarity,
)
from splatforge.sfm import parse_sparse_model, reuse_metrics, sfm_to_pointcloud

STAGE_ORDER = (
    "keyframes", "cubemap", "ingest_sfm", "match", "odometry",
    "colorize", "prism", "align", "export",
)

# The keyframes stage ledger claims keyframes.csv, so the decision table
# gets its own name.
KEYFRAMES_TABLE = "keyframes_selected.csv"


# ---------------------------------------------------------------------------
# Small file helpers
# ---------------------------------------------------------------------------

def _rel(path: str, run_dir: str) -> str:
    return os.path.relpath(path, run_dir).replace(os.sep, "/")


def _read_timestamp_table(path: str):
    """Rows of index,timestamp,filename as (int, float, str)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for no, row in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.append(
                    (int(row["index"]), float(row["timestamp"]), row["filename"])
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad timestamp row: {exc}", path, no) from None
    if not rows:
        raise ParseError("no data rows", path)
    return rows


def _load_rgb(path: str) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr


def _write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue().encode("utf-8"))


def _read_keyframe_table(path: str):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "frame_index": int(row["frame_index"]),
                    "timestamp": float(row["timestamp"]),
                    "filename": row["filename"],
                    "selected": row["selected"] == "true",
                    "overlap_score": float(row["overlap_score"]),
                    "inlier_count": int(row["inlier_count"]),
                }
            )
    if not rows:
        raise ParseError("no data rows", path)
    return rows


def _read_match_table(path: str):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "frame_index": int(row["frame_index"]),
                    "scan_index": int(row["scan_index"]),
                    "dt": float(row["dt"]),
                    "is_keyframe": row["is_keyframe"] == "true",
                }
            )
    return rows


def _read_trajectory(path: str):
    import json

    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    poses = []
    for entry in data["poses"]:
        m = np.asarray(entry["matrix"], dtype=np.float64)
        poses.append(RigidTransform.from_matrix(m))
    stamps = [float(e["timestamp"]) for e in data["poses"]]
    return poses, stamps


def _face_image_name(frame_index: int, face: str) -> str:
    return f"{frame_index:04d}_{face}.png"


def _icp_params(cfg: PipelineConfig) -> IcpParams:
    return IcpParams(
        max_corr_dist=cfg.icp_max_corr_dist(),
        max_iterations=cfg.icp.max_iterations,
        rel_fitness_eps=cfg.icp.rel_fitness_eps,
        rel_rmse_eps=cfg.icp.rel_rmse_eps,
        weight_scheme=cfg.icp.weight_scheme,
    )


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_keyframes(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Overlap-gated keyframe selection over the ERP stream."""
    t0 = time.time()
    erp_dir = os.path.join(data_root, cfg.paths.erp_dir)
    table_path = os.path.join(erp_dir, "timestamps.csv")
    table = _read_timestamp_table(table_path)

    input_hashes = {_rel(table_path, run_dir): hash_file(table_path)}
    grays = []
    for _, _, filename in table:
        path = os.path.join(erp_dir, filename)
        input_hashes[_rel(path, run_dir)] = hash_file(path)
        grays.append(_load_rgb(path).mean(axis=2))

    decisions = select_keyframes(
        grays,
        threshold=cfg.keyframe_threshold,
        seed=cfg.seed,
        max_features=cfg.features.max_features,
        fast_threshold=cfg.features.fast_threshold,
        iterations=cfg.features.ransac_iterations,
        inlier_px=cfg.features.inlier_px,
        ratio=cfg.features.match_ratio,
    )

    out_path = os.path.join(run_dir, KEYFRAMES_TABLE)
    _write_csv(
        out_path,
        ("frame_index", "timestamp", "filename", "selected",
         "overlap_score", "inlier_count"),
        [
            (d.frame_index, repr(table[i][1]), table[i][2],
             "true" if d.selected else "false", repr(d.overlap_score),
             d.inlier_count)
            for i, d in enumerate(decisions)
        ],
    )

    total = len(decisions)
    kept = sum(1 for d in decisions if d.selected)
    kf_ratio, _ = reuse_metrics(total, kept, registered_images=0)
    ledger = StageLedger(
        stage="keyframes",
        seed=cfg.seed,
        input_counts={"total_frames": total},
        output_counts={"keyframe_count": kept, "total_frames": total},
        params={
            "threshold": cfg.keyframe_threshold,
            "max_features": cfg.features.max_features,
            "fast_threshold": cfg.features.fast_threshold,
            "ransac_iterations": cfg.features.ransac_iterations,
            "inlier_px": cfg.features.inlier_px,
            "match_ratio": cfg.features.match_ratio,
            "config_hash": cfg.config_hash(),
        },
        metrics={
            "total_frames": total,
            "keyframe_count": kept,
            "kf_reuse_ratio": kf_ratio,
        },
        input_hashes=input_hashes,
        output_hashes={KEYFRAMES_TABLE: hash_file(out_path)},
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


def stage_cubemap(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Project each keyframe panorama onto six cube faces."""
    t0 = time.time()
    erp_dir = os.path.join(data_root, cfg.paths.erp_dir)
    table_path = os.path.join(run_dir, KEYFRAMES_TABLE)
    rows = _read_keyframe_table(table_path)
    selected = [r for r in rows if r["selected"]]

    face_dir = os.path.join(run_dir, "cubemap")
    os.makedirs(face_dir, exist_ok=True)
    input_hashes = {KEYFRAMES_TABLE: hash_file(table_path)}
    output_hashes = {}
    for row in selected:
        src = os.path.join(erp_dir, row["filename"])
        input_hashes[_rel(src, run_dir)] = hash_file(src)
        cubemap = project_erp_to_cubemap(_load_rgb(src), cfg.face_size)
        for face in FACE_ORDER:
            name = _face_image_name(row["frame_index"], face)
            path = os.path.join(face_dir, name)
            Image.fromarray(cubemap.faces[face]).save(path)
            output_hashes[f"cubemap/{name}"] = hash_file(path)

    ledger = StageLedger(
        stage="cubemap",
        seed=cfg.seed,
        input_counts={"keyframe_count": len(selected)},
        output_counts={"face_count": len(output_hashes)},
        params={"face_size": cfg.face_size, "config_hash": cfg.config_hash()},
        metrics={"faces_written": len(output_hashes)},
        input_hashes=input_hashes,
        output_hashes=output_hashes,
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


def stage_ingest_sfm(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Parse the external sparse reconstruction into a filtered cloud."""
    t0 = time.time()
    sfm_dir = os.path.join(data_root, cfg.paths.sfm_dir)
    table_path = os.path.join(run_dir, KEYFRAMES_TABLE)
    rows = _read_keyframe_table(table_path)
    total_frames = len(rows)
    keyframe_count = sum(1 for r in rows if r["selected"])

    input_hashes = {KEYFRAMES_TABLE: hash_file(table_path)}
    for name in ("cameras.txt", "images.txt", "points3D.txt"):
        path = os.path.join(sfm_dir, name)
        input_hashes[_rel(path, run_dir)] = hash_file(path)

    model = parse_sparse_model(sfm_dir)
    cloud = sfm_to_pointcloud(model, min_track=cfg.min_track)
    out_path = os.path.join(run_dir, "sfm_points.ply")
    write_ply(cloud, out_path)

    kf_ratio, rec_ratio = reuse_metrics(
        total_frames, keyframe_count, len(model.images)
    )
    ledger = StageLedger(
        stage="ingest_sfm",
        seed=cfg.seed,
        input_counts={
            "keyframe_count": keyframe_count,
            "model_points": int(model.point_ids.size),
        },
        output_counts={"sfm_cloud_points": len(cloud)},
        params={"min_track": cfg.min_track, "config_hash": cfg.config_hash()},
        metrics={
            "registered_images": len(model.images),
            "sfm_reconstruction_ratio": rec_ratio,
            "sfm_cloud_points": len(cloud),
            "kf_reuse_ratio": kf_ratio,
        },
        input_hashes=input_hashes,
        output_hashes={"sfm_points.ply": hash_file(out_path)},
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


def stage_match(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Pair camera frames with LiDAR sweeps by timestamp."""
    t0 = time.time()
    erp_path = os.path.join(data_root, cfg.paths.erp_dir, "timestamps.csv")
    lidar_path = os.path.join(data_root, cfg.paths.lidar_dir, "timestamps.csv")
    kf_path = os.path.join(run_dir, KEYFRAMES_TABLE)
    frames = _read_timestamp_table(erp_path)
    scans = _read_timestamp_table(lidar_path)
    kf_rows = _read_keyframe_table(kf_path)
    keyframe_set = {r["frame_index"] for r in kf_rows if r["selected"]}

    matches = match_timestamps(
        [t for _, t, _ in frames], [t for _, t, _ in scans],
        cfg.temporal_tolerance_s,
    )
    out_path = os.path.join(run_dir, "matches.csv")
    _write_csv(
        out_path,
        ("frame_index", "scan_index", "dt", "is_keyframe"),
        [
            (m.frame_index, m.scan_index, repr(m.dt),
             "true" if m.frame_index in keyframe_set else "false")
            for m in matches
        ],
    )

    matched_kf = sum(1 for m in matches if m.frame_index in keyframe_set)
    ledger = StageLedger(
        stage="match",
        seed=cfg.seed,
        input_counts={
            "total_frames": len(frames),
            "scan_count": len(scans),
            "keyframe_count": len(keyframe_set),
        },
        output_counts={"matched_keyframes": matched_kf},
        params={
            "temporal_tolerance_s": cfg.temporal_tolerance_s,
            "config_hash": cfg.config_hash(),
        },
        metrics={
            "matched_pairs": len(matches),
            "matched_keyframes": matched_kf,
            "unmatched_frames": len(frames) - len(matches),
        },
        input_hashes={
            _rel(erp_path, run_dir): hash_file(erp_path),
            _rel(lidar_path, run_dir): hash_file(lidar_path),
            KEYFRAMES_TABLE: hash_file(kf_path),
        },
        output_hashes={"matches.csv": hash_file(out_path)},
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


def _write_trajectory(path: str, poses, stamps) -> None:
    payload = {
        "frame": "sensor frame of scan 0",
        "poses": [
            {
                "scan_index": i,
                "timestamp": float(stamps[i]),
                "matrix": poses[i].matrix().tolist(),
            }
            for i in range(len(poses))
        ],
    }
    with open(path, "wb") as fh:
        fh.write(canonical_json(payload))


def stage_odometry(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Incremental scan registration into a deduplicated map.

    On an OdometryBreak the partial trajectory, partial map, and a ledger
    recording the gate trip are still written, then the break propagates so
    the caller can stop the run.
    """
    t0 = time.time()
    lidar_dir = os.path.join(data_root, cfg.paths.lidar_dir)
    table_path = os.path.join(lidar_dir, "timestamps.csv")
    table = _read_timestamp_table(table_path)

    input_hashes = {_rel(table_path, run_dir): hash_file(table_path)}
    scans = []
    for _, ts, filename in table:
        path = os.path.join(lidar_dir, filename)
        input_hashes[_rel(path, run_dir)] = hash_file(path)
        scans.append(TimedScan(ts, read_ply(path)))

    params = {
        "max_corr_dist": cfg.icp_max_corr_dist(),
        "max_iterations": cfg.icp.max_iterations,
        "weight_scheme": cfg.icp.weight_scheme,
        "fitness_floor": cfg.odometry_fitness_floor,
        "map_voxel": cfg.map_voxel,
        "config_hash": cfg.config_hash(),
    }
    traj_path = os.path.join(run_dir, "trajectory.json")
    map_path = os.path.join(run_dir, "map.ply")

    def _emit(poses, map_cloud, raw_points, pair_stats, gate_metrics):
        _write_trajectory(traj_path, poses, [s.timestamp for s in scans])
        write_ply(map_cloud, map_path)
        fits = [f for f, _, _ in pair_stats]
        metrics = {
            "map_points_raw": raw_points,
            "map_points": len(map_cloud),
            "pairs_registered": len(pair_stats),
            "mean_pair_fitness": float(np.mean(fits)) if fits else 1.0,
            "min_pair_fitness": float(np.min(fits)) if fits else 1.0,
        }
        metrics.update(gate_metrics)
        ledger = StageLedger(
            stage="odometry",
            seed=cfg.seed,
            input_counts={"scan_count": len(scans)},
            output_counts={"map_points": len(map_cloud)},
            params=params,
            metrics=metrics,
            input_hashes=input_hashes,
            output_hashes={
                "trajectory.json": hash_file(traj_path),
                "map.ply": hash_file(map_path),
            },
        )
        write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
        return ledger

    try:
        result = odometry_chain(
            scans,
            _icp_params(cfg),
            fitness_floor=cfg.odometry_fitness_floor,
            map_voxel=cfg.map_voxel,
        )
    except OdometryBreak as exc:
        # Points before the break still form a usable partial map.
        raw = int(sum(len(s.cloud) for s in scans[: exc.index]))
        _emit(
            exc.trajectory,
            exc.map_cloud,
            raw,
            exc.pair_stats,
            {"gate_tripped": True, "break_index": exc.index,
             "break_fitness": float(exc.fitness)},
        )
        raise
    ledger = _emit(
        result.trajectory,
        result.map_cloud,
        result.raw_points,
        result.pair_stats,
        {"gate_tripped": False},
    )
    return ledger


def stage_colorize(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Color map points from keyframe cube faces with z-buffer occlusion."""
    t0 = time.time()
    map_path = os.path.join(run_dir, "map.ply")
    traj_path = os.path.join(run_dir, "trajectory.json")
    match_path = os.path.join(run_dir, "matches.csv")
    calib_path = os.path.join(data_root, cfg.paths.calibration)

    input_hashes = {
        "map.ply": hash_file(map_path),
        "trajectory.json": hash_file(traj_path),
        "matches.csv": hash_file(match_path),
        _rel(calib_path, run_dir): hash_file(calib_path),
    }
    map_cloud = read_ply(map_path)
    poses, _ = _read_trajectory(traj_path)
    matches = _read_match_table(match_path)
    calib = load_calibration(calib_path)

    sensor_poses = []
    face_sets = []
    skipped = 0
    for m in matches:
        if not m["is_keyframe"]:
            continue
        if m["scan_index"] >= len(poses):
            skipped += 1  # scan beyond an odometry break
            continue
        faces = {}
        for face in FACE_ORDER:
            name = _face_image_name(m["frame_index"], face)
            path = os.path.join(run_dir, "cubemap", name)
            input_hashes[f"cubemap/{name}"] = hash_file(path)
            faces[face] = _load_rgb(path)
        sensor_poses.append(poses[m["scan_index"]])
        face_sets.append(faces)
    if not face_sets:
        raise MissingInput("no keyframe with a matched scan inside the trajectory")

    colored_cloud, _, stats = colorize(
        map_cloud, sensor_poses, calib, face_sets,
        zbuffer_cell=4, depth_tolerance=0.1,
    )
    out_path = os.path.join(run_dir, "map_colorized.ply")
    write_ply(colored_cloud, out_path)

    ledger = StageLedger(
        stage="colorize",
        seed=cfg.seed,
        input_counts={"map_points": len(map_cloud), "views": len(face_sets)},
        output_counts={"colored_points": len(colored_cloud)},
        params={
            "zbuffer_cell": 4,
            "depth_tolerance": 0.1,
            "config_hash": cfg.config_hash(),
        },
        metrics={
            "colored_points": stats["colored_points"],
            "colorized_fraction": stats["colorized_fraction"],
            "views_used": stats["views"],
            "keyframes_skipped": skipped,
        },
        input_hashes=input_hashes,
        output_hashes={"map_colorized.ply": hash_file(out_path)},
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


def stage_prism(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Per-color-bin capped downsampling at every configured capacity."""
    t0 = time.time()
    in_path = os.path.join(run_dir, "map_colorized.ply")
    odo_ledger_path = os.path.join(run_dir, "odometry.json")
    input_hashes = {
        "map_colorized.ply": hash_file(in_path),
        "odometry.json": hash_file(odo_ledger_path),
    }
    cloud = read_ply(in_path)
    raw_points = int(load_ledger(odo_ledger_path).metrics["map_points_raw"])

    results = sweep(
        cloud, cfg.prism.k_values,
        bins_per_channel=cfg.prism.bins_per_channel, seed=cfg.seed,
    )

    output_hashes = {}
    output_counts = {}
    metrics = {"input_points": len(cloud), "map_points_raw": raw_points}
    report_rows = []
    for k, sub, report in results:
        name = f"prism_k{k}.ply"
        write_ply(sub, os.path.join(run_dir, name))
        output_hashes[name] = hash_file(os.path.join(run_dir, name))
        output_counts[f"prism_points_k{k}"] = len(sub)
        vs_raw = 1.0 - len(sub) / raw_points
        metrics[f"output_points_k{k}"] = report.output_points
        metrics[f"reduction_vs_input_k{k}"] = report.reduction_ratio
        metrics[f"reduction_vs_raw_k{k}"] = vs_raw
        report_rows.append(
            (k, report.input_points, report.output_points,
             report.occupied_bins, repr(report.reduction_ratio), repr(vs_raw))
        )
    metrics["occupied_bins"] = results[0][2].occupied_bins if results else 0

    report_path = os.path.join(run_dir, "prism_report.csv")
    _write_csv(
        report_path,
        ("k", "input_points", "output_points", "occupied_bins",
         "reduction_vs_input", "reduction_vs_raw"),
        report_rows,
    )
    output_hashes["prism_report.csv"] = hash_file(report_path)

    ledger = StageLedger(
        stage="prism",
        seed=cfg.seed,
        input_counts={"colored_points": len(cloud)},
        output_counts=output_counts,
        params={
            "bins_per_channel": cfg.prism.bins_per_channel,
            "k_values": ",".join(str(k) for k in cfg.prism.k_values),
            "config_hash": cfg.config_hash(),
        },
        metrics=metrics,
        input_hashes=input_hashes,
        output_hashes=output_hashes,
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


def trajectory_similarity(data_root: str, run_dir: str, cfg: PipelineConfig):
    """Similarity init from trajectory metadata instead of global search.

    Matches sparse-model camera centers (one rig center per frame) with the
    odometry rig centers of the temporally matched scans and solves the
    similarity in closed form. Requires at least three registered frames
    with matched scans.
    """
    model = parse_sparse_model(os.path.join(data_root, cfg.paths.sfm_dir))
    poses, _ = _read_trajectory(os.path.join(run_dir, "trajectory.json"))
    matches = _read_match_table(os.path.join(run_dir, "matches.csv"))
    calib = load_calibration(os.path.join(data_root, cfg.paths.calibration))
    frame_to_scan = {m["frame_index"]: m["scan_index"] for m in matches}

    centers: dict[int, list] = {}
    for image in model.images.values():
        prefix = image.name.split("_", 1)[0]
        try:
            frame = int(prefix)
        except ValueError:
            continue
        rot = image.rotation()
        centers.setdefault(frame, []).append(-rot.T @ image.tvec)

    model_centers = []
    map_centers = []
    cam_to_lidar = calib.lidar_to_camera.inverse()
    for frame, cs in sorted(centers.items()):
        scan = frame_to_scan.get(frame)
        if scan is None or scan >= len(poses):
            continue
        model_centers.append(np.mean(cs, axis=0))
        map_centers.append(poses[scan].compose(cam_to_lidar).translation)
    if len(model_centers) < 3:
        raise InsufficientPoints(
            f"trajectory init needs >= 3 matched frames, got {len(model_centers)}"
        )
    return umeyama_similarity(np.asarray(model_centers), np.asarray(map_centers))


def stage_align(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Scale + register the SfM cloud onto each downsampled map variant.

    A per-capacity gate failure is recorded (aligned_k{k} = false) and that
    capacity proceeds LiDAR-only downstream; the stage itself succeeds.
    """
    t0 = time.time()
    sfm_path = os.path.join(run_dir, "sfm_points.ply")
    input_hashes = {"sfm_points.ply": hash_file(sfm_path)}
    input_counts = {}
    sfm_cloud = read_ply(sfm_path)

    init = None
    scale_override = cfg.registration.scale
    if cfg.registration.init_from_trajectory:
        est_scale, init = trajectory_similarity(data_root, run_dir, cfg)
        if scale_override is None:
            scale_override = est_scale

    output_hashes = {}
    output_counts = {}
    metrics = {}
    gate_trips = 0
    for k in cfg.prism.k_values:
        target_name = f"prism_k{k}.ply"
        target_path = os.path.join(run_dir, target_name)
        input_hashes[target_name] = hash_file(target_path)
        target = read_ply(target_path)
        input_counts[f"prism_points_k{k}"] = len(target)

        params = AlignParams(
            icp=_icp_params(cfg),
            global_reg=GlobalRegParams(
                max_corr_dist=cfg.global_max_corr_dist(),
                iterations=cfg.global_reg.iterations,
                edge_similarity=cfg.global_reg.edge_similarity,
                seed=cfg.seed,
            ),
            scale=scale_override,
            init=init,
            fitness_gate=cfg.registration.alignment_fitness_gate,
            normal_knn=cfg.registration.normal_knn,
            fpfh_radius=cfg.registration.fpfh_radius,
            seed=cfg.seed,
        )
        aligned = True
        try:
            outcome = align_sfm_to_lidar(sfm_cloud, target, params)
        except AlignmentGateFailed as exc:
            outcome = exc.outcome
            aligned = False
            gate_trips += 1

        record = {
            "k": k,
            "aligned": aligned,
            "scale": outcome.scale,
            "transform": outcome.transform.matrix().tolist(),
            "global_fitness": (
                None if outcome.global_reg is None else outcome.global_reg.fitness
            ),
            "global_inlier_rmse": (
                None if outcome.global_reg is None else outcome.global_reg.inlier_rmse
            ),
            "icp_fitness": outcome.icp.fitness,
            "inlier_rmse": outcome.icp.inlier_rmse,
            "iterations": outcome.icp.iterations,
            "correspondences": outcome.icp.correspondences,
            "converged": outcome.icp.converged,
            "fpfh_radius": outcome.fpfh_radius,
            "max_corr_dist": cfg.icp_max_corr_dist(),
            "fitness_gate": cfg.registration.alignment_fitness_gate,
            "init_from_trajectory": cfg.registration.init_from_trajectory,
            "seed": cfg.seed,
        }
        rec_name = f"alignment_k{k}.json"
        with open(os.path.join(run_dir, rec_name), "wb") as fh:
            fh.write(canonical_json(record))
        output_hashes[rec_name] = hash_file(os.path.join(run_dir, rec_name))

        if aligned:
            ply_name = f"sfm_aligned_k{k}.ply"
            write_ply(outcome.aligned, os.path.join(run_dir, ply_name))
            output_hashes[ply_name] = hash_file(os.path.join(run_dir, ply_name))
            output_counts[f"aligned_points_k{k}"] = len(outcome.aligned)
        else:
            output_counts[f"aligned_points_k{k}"] = 0

        metrics[f"global_fitness_k{k}"] = record["global_fitness"]
        metrics[f"icp_fitness_k{k}"] = record["icp_fitness"]
        metrics[f"inlier_rmse_k{k}"] = record["inlier_rmse"]
        metrics[f"scale_k{k}"] = record["scale"]
        metrics[f"aligned_k{k}"] = aligned
    metrics["gate_trips"] = gate_trips

    ledger = StageLedger(
        stage="align",
        seed=cfg.seed,
        input_counts=input_counts,
        output_counts=output_counts,
        params={
            "fitness_gate": cfg.registration.alignment_fitness_gate,
            "max_corr_dist": cfg.icp_max_corr_dist(),
            "global_max_corr_dist": cfg.global_max_corr_dist(),
            "normal_knn": cfg.registration.normal_knn,
            "init_from_trajectory": cfg.registration.init_from_trajectory,
            "config_hash": cfg.config_hash(),
        },
        metrics=metrics,
        input_hashes=input_hashes,
        output_hashes=output_hashes,
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


def stage_export(data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    """Fuse per capacity and emit the splat-initialization assets."""
    import json

    t0 = time.time()
    input_hashes = {}
    output_hashes = {}
    output_counts = {}
    metrics = {}
    dedup = cfg.effective_dedup_radius()

    for k in cfg.prism.k_values:
        rec_name = f"alignment_k{k}.json"
        rec_path = os.path.join(run_dir, rec_name)
        input_hashes[rec_name] = hash_file(rec_path)
        with open(rec_path, "r", encoding="utf-8") as fh:
            record = json.load(fh)
        lidar_name = f"prism_k{k}.ply"
        lidar_path = os.path.join(run_dir, lidar_name)
        input_hashes[lidar_name] = hash_file(lidar_path)
        lidar_cloud = read_ply(lidar_path)

        if record["aligned"]:
            sfm_name = f"sfm_aligned_k{k}.ply"
            sfm_path = os.path.join(run_dir, sfm_name)
            input_hashes[sfm_name] = hash_file(sfm_path)
            sfm_cloud = read_ply(sfm_path)
            fused, provenance = fuse(sfm_cloud, lidar_cloud, dedup)
        else:
            fused = lidar_cloud
            provenance = np.full(len(lidar_cloud), PROVENANCE_LIDAR, dtype="<U5")

        asset = build_asset(fused, provenance, opacity=cfg.opacity)
        asset_name = f"init_asset_k{k}.ply"
        manifest_name = f"asset_manifest_k{k}.json"
        export_asset(asset, os.path.join(run_dir, asset_name))
        write_asset_manifest(
            asset, os.path.join(run_dir, manifest_name),
            extra={"k": k, "lidar_only": not record["aligned"]},
        )
        output_hashes[asset_name] = hash_file(os.path.join(run_dir, asset_name))
        output_hashes[manifest_name] = hash_file(
            os.path.join(run_dir, manifest_name)
        )
        output_counts[f"asset_points_k{k}"] = len(asset)
        sfm_count = int((asset.provenance != PROVENANCE_LIDAR).sum())
        metrics[f"asset_points_k{k}"] = len(asset)
        metrics[f"asset_sfm_points_k{k}"] = sfm_count
        metrics[f"asset_lidar_points_k{k}"] = len(asset) - sfm_count
        metrics[f"lidar_only_k{k}"] = not record["aligned"]

    ledger = StageLedger(
        stage="export",
        seed=cfg.seed,
        input_counts={},
        output_counts=output_counts,
        params={
            "dedup_radius": dedup,
            "opacity": cfg.opacity,
            "config_hash": cfg.config_hash(),
        },
        metrics=metrics,
        input_hashes=input_hashes,
        output_hashes=output_hashes,
    )
    write_ledger(ledger, run_dir, started_at=t0, duration_s=time.time() - t0)
    return ledger


_STAGE_FUNCS = {
    "keyframes": stage_keyframes,
    "cubemap": stage_cubemap,
    "ingest_sfm": stage_ingest_sfm,
    "match": stage_match,
    "odometry": stage_odometry,
    "colorize": stage_colorize,
    "prism": stage_prism,
    "align": stage_align,
    "export": stage_export,
}


def run_stage(name: str, data_root: str, run_dir: str, cfg: PipelineConfig) -> StageLedger:
    if name not in _STAGE_FUNCS:
        raise InvalidInput(f"unknown stage {name!r}; expected one of {STAGE_ORDER}")
    os.makedirs(run_dir, exist_ok=True)
    return _STAGE_FUNCS[name](data_root, run_dir, cfg)


@dataclass(frozen=True)
class RunOutcome:
    manifest_path: str
    stages: list  # StageLedger per completed stage
    gates: list  # gate-trip records (dicts)
    stopped_at: str | None  # stage name when the run stopped early

    @property
    def ok(self) -> bool:
        return self.stopped_at is None and not self.gates


def run_all(cfg: PipelineConfig, data_root: str, run_dir: str) -> RunOutcome:
    """Execute every stage in order, collecting ledgers and gate trips.

    An odometry break stops the run after writing partial artifacts and the
    manifest; alignment gate failures continue (the affected capacities fall
    back to LiDAR-only assets) and are reported in the manifest gate list.
    """
    os.makedirs(run_dir, exist_ok=True)
    ledgers = []
    gates = []
    stopped_at = None
    for name in STAGE_ORDER:
        try:
            ledger = _STAGE_FUNCS[name](data_root, run_dir, cfg)
        except OdometryBreak as exc:
            ledgers.append(load_ledger(os.path.join(run_dir, "odometry.json")))
            gates.append(
                {
                    "stage": "odometry",
                    "scan_index": exc.index,
                    "fitness": float(exc.fitness),
                    "floor": cfg.odometry_fitness_floor,
                }
            )
            stopped_at = name
            break
        ledgers.append(ledger)
        if name == "align":
            for k in cfg.prism.k_values:
                if not ledger.metrics[f"aligned_k{k}"]:
                    gates.append(
                        {
                            "stage": "align",
                            "k": k,
                            "fitness": ledger.metrics[f"icp_fitness_k{k}"],
                            "gate": cfg.registration.alignment_fitness_gate,
                        }
                    )
    manifest_path = write_manifest(
        run_dir, cfg.to_dict(), cfg.seed, ledgers, gates=gates
    )
    return RunOutcome(
        manifest_path=manifest_path,
        stages=ledgers,
        gates=gates,
        stopped_at=stopped_at,
    )
