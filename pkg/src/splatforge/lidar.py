"""LiDAR aggregation: temporal matching, scan odometry, map colorization.

Scans are matched to RGB frames greedily by nearest timestamp within a
tolerance. Matched scans are chained with pairwise weighted ICP into a
common map frame (first scan), deduplicated on a voxel grid, and colorized
by projecting map points into keyframe cubemap faces with an occlusion
z-buffer.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from splatforge.errors import (
    EmptyInput,
    InvalidInput,
    MissingInput,
    OdometryBreak,
    UnsortedTimestamps,
)
from splatforge.geometry import (
    PointCloud,
    RigidTransform,
    apply_transform,
    merge_clouds,
    voxel_dedup,
)
from splatforge.registration import IcpParams, icp_refine
from splatforge.sfm import CameraIntrinsics
from splatforge.erp import FACE_ORDER, bilinear_sample, face_rotation


@dataclass(frozen=True)
class TimedScan:
    timestamp: float
    cloud: PointCloud


@dataclass(frozen=True)
class TemporalMatch:
    frame_index: int
    scan_index: int
    dt: float  # scan_time - frame_time


def _check_sorted(ts: np.ndarray, label: str) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 1:
        raise InvalidInput(f"{label} timestamps must be 1-D")
    if ts.size and not np.all(np.diff(ts) > 0):
        raise UnsortedTimestamps(f"{label} timestamps must be strictly increasing")
    return ts


def match_timestamps(frame_ts, scan_ts, tolerance: float) -> list[TemporalMatch]:
    """Greedy nearest-timestamp pairing of frames to scans.

    Frames are processed in order; each takes the unused scan closest in
    time within `tolerance` (ties: earlier scan). Frames with no available
    scan in range are dropped, and each scan pairs at most once.
    """
    if not (tolerance >= 0 and np.isfinite(tolerance)):
        raise InvalidInput(f"tolerance must be finite and >= 0, got {tolerance}")
    frames = _check_sorted(frame_ts, "frame")
    scans = _check_sorted(scan_ts, "scan")
    used = np.zeros(scans.size, dtype=bool)
    matches: list[TemporalMatch] = []
    for fi, t in enumerate(frames):
        lo = int(np.searchsorted(scans, t - tolerance, side="left"))
        hi = int(np.searchsorted(scans, t + tolerance, side="right"))
        best = -1
        best_dt = np.inf
        for si in range(lo, hi):
            if used[si]:
                continue
            dt = abs(scans[si] - t)
            if dt < best_dt:  # strict: earlier index wins exact ties
                best, best_dt = si, dt
        if best >= 0:
            used[best] = True
            matches.append(TemporalMatch(fi, best, float(scans[best] - t)))
    return matches


@dataclass(frozen=True)
class OdometryResult:
    trajectory: list  # RigidTransform per scan, scan frame -> map frame
    map_cloud: PointCloud
    raw_points: int  # aggregate size before voxel dedup
    pair_stats: list  # (fitness, inlier_rmse, iterations) per consecutive pair


def odometry_chain(
    scans: list[TimedScan],
    icp_params: IcpParams,
    fitness_floor: float = 0.3,
    map_voxel: float = 0.05,
) -> OdometryResult:
    """Chain scans with pairwise ICP and aggregate a deduplicated map.

    Scan i is registered to scan i-1 coarse-to-fine: a pass at 4x the
    correspondence distance absorbs the initial offset, then the configured
    distance refines. Each pair starts from the previous pair's relative
    transform (constant-velocity assumption). A pair whose refined fitness
    drops below `fitness_floor` raises OdometryBreak carrying all partial
    results. The map keeps the first point per `map_voxel` cell in
    aggregation order.
    """
    if not scans:
        raise EmptyInput("no scans to chain")
    _check_sorted([s.timestamp for s in scans], "scan")
    coarse_params = replace(icp_params, max_corr_dist=4.0 * icp_params.max_corr_dist)
    trajectory = [RigidTransform.identity()]
    pair_stats: list[tuple[float, float, int]] = []
    clouds = [scans[0].cloud]
    relative: RigidTransform | None = None
    for i in range(1, len(scans)):
        coarse = icp_refine(
            scans[i].cloud, scans[i - 1].cloud, relative, coarse_params
        )
        result = icp_refine(
            scans[i].cloud, scans[i - 1].cloud, coarse.transform, icp_params
        )
        pair_stats.append((result.fitness, result.inlier_rmse, result.iterations))
        if result.fitness < fitness_floor:
            partial = merge_clouds(clouds)
            raw = len(partial)
            raise OdometryBreak(
                i,
                result.fitness,
                trajectory,
                voxel_dedup(partial, map_voxel),
                pair_stats,
            )
        relative = result.transform
        pose = trajectory[i - 1].compose(result.transform)
        trajectory.append(pose)
        clouds.append(apply_transform(scans[i].cloud, pose))
    merged = merge_clouds(clouds)
    return OdometryResult(
        trajectory=trajectory,
        map_cloud=voxel_dedup(merged, map_voxel),
        raw_points=len(merged),
        pair_stats=pair_stats,
    )


# ---------------------------------------------------------------------------
# Colorization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    """LiDAR-to-camera-rig extrinsics plus per-face pinhole intrinsics."""

    lidar_to_camera: RigidTransform
    faces: dict  # face name -> CameraIntrinsics

    def __post_init__(self):
        if set(self.faces) != set(FACE_ORDER):
            raise InvalidInput(
                f"calibration needs intrinsics for faces {FACE_ORDER}"
            )


def load_calibration(path: str) -> Calibration:
    if not os.path.isfile(path):
        raise MissingInput(f"no such calibration file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        matrix = np.asarray(raw["lidar_to_camera"], dtype=np.float64)
        faces = {}
        for name, params in raw["faces"].items():
            faces[name] = CameraIntrinsics(
                camera_id=0,
                model="PINHOLE",
                width=int(params["width"]),
                height=int(params["height"]),
                fx=float(params["fx"]),
                fy=float(params["fy"]),
                cx=float(params["cx"]),
                cy=float(params["cy"]),
            )
    except KeyError as exc:
        raise InvalidInput(f"calibration missing key {exc}") from None
    return Calibration(RigidTransform.from_matrix(matrix), faces)


def save_calibration(calib: Calibration, path: str) -> None:
    data = {
        "lidar_to_camera": calib.lidar_to_camera.matrix().tolist(),
        "faces": {
            name: {
                "width": cam.width, "height": cam.height,
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            }
            for name, cam in calib.faces.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)


def face_zbuffer(
    u: np.ndarray, v: np.ndarray, z: np.ndarray,
    width: int, height: int, cell: int,
):
    """Minimum-depth grid at `cell`-pixel granularity; (buffer, cell index)."""
    ncols = (width + cell - 1) // cell
    nrows = (height + cell - 1) // cell
    ci = (v.astype(np.int64) // cell) * ncols + (u.astype(np.int64) // cell)
    buf = np.full(nrows * ncols, np.inf)
    np.minimum.at(buf, ci, z)
    return buf, ci


def colorize(
    map_cloud: PointCloud,
    sensor_poses: list,
    calib: Calibration,
    face_images: list,
    zbuffer_cell: int = 4,
    depth_tolerance: float = 0.1,
):
    """Color map points from keyframe cubemap faces with occlusion tests.

    sensor_poses are LiDAR-sensor-to-map transforms, one per keyframe;
    face_images is the matching list of dicts face name -> (H, W, 3) uint8.
    A point takes the bilinear color of the accepting view in which it is
    nearest to the camera; a view accepts a point only when its depth is
    within `depth_tolerance` of that view's z-buffer (min depth per
    `zbuffer_cell` pixel block).

    Returns (colored cloud subset, colored mask over the input, stats dict).
    """
    if len(sensor_poses) != len(face_images):
        raise InvalidInput("one face-image set per sensor pose required")
    if not face_images:
        raise MissingInput("no keyframe face images to colorize from")
    if len(map_cloud) == 0:
        raise EmptyInput("empty map cloud")
    if zbuffer_cell < 1:
        raise InvalidInput("zbuffer_cell must be >= 1")

    n = len(map_cloud)
    best_depth = np.full(n, np.inf)
    colors = np.zeros((n, 3))
    face_rots = {name: face_rotation(name) for name in FACE_ORDER}

    for pose, faces in zip(sensor_poses, face_images):
        world_to_rig = calib.lidar_to_camera.compose(pose.inverse())
        x_rig = world_to_rig.apply(map_cloud.positions)
        for name in FACE_ORDER:
            img = faces[name]
            cam = calib.faces[name]
            x_f = x_rig @ face_rots[name].T
            z = x_f[:, 2]
            front = z > 1e-9
            u = np.where(front, cam.fx * x_f[:, 0] / np.where(front, z, 1.0) + cam.cx, -1.0)
            v = np.where(front, cam.fy * x_f[:, 1] / np.where(front, z, 1.0) + cam.cy, -1.0)
            visible = (
                front
                & (u >= 0.0) & (u <= cam.width - 1.0)
                & (v >= 0.0) & (v <= cam.height - 1.0)
            )
            if not np.any(visible):
                continue
            uu, vv, zz = u[visible], v[visible], z[visible]
            buf, ci = face_zbuffer(uu, vv, zz, cam.width, cam.height, zbuffer_cell)
            accept = zz <= buf[ci] + depth_tolerance
            better = np.zeros(n, dtype=bool)
            vis_idx = np.nonzero(visible)[0][accept]
            better[vis_idx] = zz[accept] < best_depth[vis_idx]
            if not np.any(better):
                continue
            sel = better[visible] & accept
            sampled = bilinear_sample(img, uu[sel], vv[sel]) / 255.0
            colors[better] = sampled
            best_depth[better] = zz[sel]

    colored = np.isfinite(best_depth)
    stats = {
        "total_points": int(n),
        "colored_points": int(colored.sum()),
        "colorized_fraction": float(colored.sum() / n),
        "views": int(len(sensor_poses)),
    }
    out = PointCloud(
        map_cloud.positions[colored],
        np.clip(colors[colored], 0.0, 1.0),
        None if map_cloud.normals is None else map_cloud.normals[colored],
    )
    return out, colored, stats
