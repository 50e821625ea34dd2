"""Synthetic capture harness: a box world rendered to panoramas and scans.

Builds a deterministic scene (axis-aligned colored boxes over a hashed-color
tile floor), walks a camera along a yawing orbit, and emits everything the
pipeline ingests: ERP panoramas, timestamped LiDAR scans, a calibration
file, and a fabricated sparse reconstruction expressed in a scale-ambiguous
similarity frame. Ground truth (poses and the similarity) is written
alongside for oracles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from splatforge.erp import erp_pixel_to_ray, face_rotation, FACE_ORDER
from splatforge.errors import InvalidInput
from splatforge.geometry import PointCloud, RigidTransform, rotmat_to_quat
from splatforge.lidar import Calibration, save_calibration
from splatforge.ply import write_ply
from splatforge.sfm import CameraIntrinsics, PosedImage, SparseModel, write_sparse_model

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _hash2(a: np.ndarray, b: np.ndarray, salt: int) -> np.ndarray:
    """SplitMix-style hash of integer grid coordinates to uint64."""
    x = (a.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)) & _MASK
    x ^= (b.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
    x ^= np.uint64(salt & 0xFFFFFFFFFFFFFFFF)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0x94D049BB133111EB) & _MASK
    x ^= x >> np.uint64(27)
    return x


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple
    color: tuple  # base RGB in [0, 1]


@dataclass(frozen=True)
class SceneSpec:
    boxes: tuple
    ground_extent: float = 12.0
    ground_cell: float = 0.8
    sky_color: tuple = (0.55, 0.75, 0.95)
    erp_width: int = 512
    erp_height: int = 256
    n_frames: int = 24
    frame_dt: float = 0.4
    scan_offset: float = 0.013
    scan_rate: int = 1  # LiDAR sweeps per camera-frame interval
    path_radius: float = 1.35
    path_height: float = 1.4
    yaw_step_deg: float = 22.0
    orbit_frames: int = 24  # frames per full orbit; fixes per-frame motion
    lidar_rings: int = 48
    lidar_azimuths: int = 1800
    lidar_vfov_deg: float = 70.0
    lidar_max_range: float = 25.0
    lidar_noise: float = 0.004
    seed: int = 7

    def __post_init__(self):
        if self.erp_width != 2 * self.erp_height:
            raise InvalidInput("ERP must be 2:1")
        if self.n_frames < 1:
            raise InvalidInput("need at least one frame")


# Per-axis shading so the six faces of a box are distinguishable.
_FACE_SHADE = {(0, 1): 1.0, (0, -1): 0.72, (1, 1): 1.12, (1, -1): 0.5,
               (2, 1): 0.88, (2, -1): 0.62}


def default_scene(seed: int = 7, **overrides) -> SceneSpec:
    """A fixed room: furniture-like boxes inside four walls.

    The walls matter for scan registration — without vertical structure a
    spinning LiDAR sees only the ground plane, whose ring pattern is
    rotationally self-similar, and incremental ICP cannot observe yaw.
    """
    boxes = (
        Box((3.2, 0.75, 0.4), (1.5, 1.5, 1.5), (0.85, 0.2, 0.15)),
        Box((-2.8, 0.5, 2.2), (1.0, 1.0, 1.6), (0.2, 0.55, 0.85)),
        Box((0.5, 0.4, -3.4), (2.2, 0.8, 1.2), (0.25, 0.8, 0.3)),
        Box((-3.0, 1.1, -2.0), (1.2, 2.2, 1.0), (0.9, 0.75, 0.2)),
        Box((1.8, 0.3, 3.6), (0.9, 0.6, 0.9), (0.7, 0.3, 0.75)),
        Box((4.5, 0.45, -2.6), (1.1, 0.9, 1.4), (0.3, 0.7, 0.7)),
        Box((-0.8, 0.25, 1.1), (0.5, 0.5, 0.5), (0.95, 0.55, 0.1)),
        Box((-4.6, 0.6, -0.2), (0.8, 1.2, 2.0), (0.55, 0.35, 0.2)),
        # Walls: thin slabs closing the room at |x| = 6.1, |z| = 6.1.
        Box((6.2, 1.5, 0.0), (0.2, 3.0, 12.6), (0.75, 0.7, 0.6)),
        Box((-6.2, 1.5, 0.0), (0.2, 3.0, 12.6), (0.6, 0.7, 0.75)),
        Box((0.0, 1.5, 6.2), (12.6, 3.0, 0.2), (0.7, 0.62, 0.55)),
        Box((0.0, 1.5, -6.2), (12.6, 3.0, 0.2), (0.62, 0.72, 0.62)),
    )
    # Clutter: plain walls and floor are translationally self-similar, so
    # nearest-neighbor ICP cannot observe motion parallel to them; scatter
    # small boxes on the floor and along the walls to break the symmetry.
    rng = np.random.default_rng(seed ^ 0xC1)
    clutter = []
    for _ in range(26):
        size = rng.uniform(0.25, 0.8, 3)
        pos = rng.uniform(-5.6, 5.6, 3)
        pos[1] = size[1] / 2.0
        if np.linalg.norm(pos[[0, 2]]) < 2.3:  # keep the camera path clear
            pos[[0, 2]] *= 2.3 / np.linalg.norm(pos[[0, 2]])
        clutter.append(Box(tuple(pos), tuple(size), tuple(rng.uniform(0.15, 0.95, 3))))
    for _ in range(14):
        size = rng.uniform(0.3, 0.9, 3)
        wall = rng.integers(0, 4)
        along = rng.uniform(-5.4, 5.4)
        height = rng.uniform(0.6, 2.4)
        if wall == 0:
            pos = (6.0 - size[0] / 2.0, height, along)
        elif wall == 1:
            pos = (-6.0 + size[0] / 2.0, height, along)
        elif wall == 2:
            pos = (along, height, 6.0 - size[2] / 2.0)
        else:
            pos = (along, height, -6.0 + size[2] / 2.0)
        clutter.append(Box(pos, tuple(size), tuple(rng.uniform(0.15, 0.95, 3))))
    return SceneSpec(boxes=boxes + tuple(clutter), ground_extent=6.3, seed=seed,
                     **overrides)


def ray_cast(origins: np.ndarray, dirs: np.ndarray, spec: SceneSpec):
    """Closest-hit ray cast against the scene.

    Returns (t, colors, hit): ray parameters (inf on miss), surface colors
    (sky color on miss), and the hit mask. Ground tiles take a hashed color
    per cell so the floor is textured but fully deterministic.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    n = d.shape[0]
    if o.ndim == 1:
        o = np.broadcast_to(o, d.shape)
    best_t = np.full(n, np.inf)
    colors = np.tile(np.asarray(spec.sky_color), (n, 1))

    eps = 1e-9
    for box in spec.boxes:
        lo = np.asarray(box.center) - np.asarray(box.size) / 2.0
        hi = np.asarray(box.center) + np.asarray(box.size) / 2.0
        safe_d = np.where(np.abs(d) > 1e-12, d, 1e-12)
        t1 = (lo - o) / safe_d
        t2 = (hi - o) / safe_d
        t_near_ax = np.minimum(t1, t2)
        t_far_ax = np.maximum(t1, t2)
        t_near = t_near_ax.max(axis=1)
        t_far = t_far_ax.min(axis=1)
        hit = (t_near <= t_far) & (t_near > eps) & (t_near < best_t)
        if not np.any(hit):
            continue
        axis = t_near_ax[hit].argmax(axis=1)
        sign = np.where(np.take_along_axis(d[hit], axis[:, None], 1)[:, 0] > 0, -1, 1)
        shade = np.array([
            _FACE_SHADE[(int(a), int(s))] for a, s in zip(axis, sign)
        ])
        colors[hit] = np.clip(np.asarray(box.color) * shade[:, None], 0.0, 1.0)
        best_t[hit] = t_near[hit]

    # Ground plane y = 0 with hashed tile colors.
    dy = d[:, 1]
    t_g = np.where(np.abs(dy) > 1e-12, -o[:, 1] / np.where(np.abs(dy) > 1e-12, dy, 1.0), np.inf)
    gx = o[:, 0] + t_g * d[:, 0]
    gz = o[:, 2] + t_g * d[:, 2]
    ground_hit = (
        (t_g > eps) & (t_g < best_t)
        & (np.abs(gx) <= spec.ground_extent) & (np.abs(gz) <= spec.ground_extent)
    )
    if np.any(ground_hit):
        cx = np.floor(gx[ground_hit] / spec.ground_cell).astype(np.int64)
        cz = np.floor(gz[ground_hit] / spec.ground_cell).astype(np.int64)
        h = _hash2(cx, cz, spec.seed)
        tile = np.stack(
            [
                0.25 + 0.6 * ((h >> np.uint64(16 * i)) & np.uint64(0xFFFF)).astype(np.float64) / 65535.0
                for i in range(3)
            ],
            axis=1,
        )
        colors[ground_hit] = tile
        best_t[ground_hit] = t_g[ground_hit]

    return best_t, colors, np.isfinite(best_t)


def pose_at(spec: SceneSpec, s: float) -> RigidTransform:
    """Camera-to-world pose at fractional frame coordinate s."""
    ang = 2.0 * np.pi * s / max(spec.orbit_frames, 1)
    pos = np.array(
        [
            spec.path_radius * np.sin(ang),
            spec.path_height,
            spec.path_radius * np.cos(ang) * 0.6,
        ]
    )
    yaw = np.deg2rad(spec.yaw_step_deg) * s
    cy, sy = np.cos(yaw), np.sin(yaw)
    rot = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    return RigidTransform(rot, pos)


def camera_trajectory(spec: SceneSpec):
    """(timestamps, camera-to-world poses) along the yawing orbit."""
    stamps = np.arange(spec.n_frames) * spec.frame_dt
    return stamps, [pose_at(spec, i) for i in range(spec.n_frames)]


def scan_trajectory(spec: SceneSpec):
    """(timestamps, camera-to-world poses) at the LiDAR sweep rate.

    Sweeps subdivide each frame interval `scan_rate` times so consecutive
    scans overlap enough for incremental registration; sweep i*scan_rate is
    `scan_offset` seconds after camera frame i.
    """
    n = (spec.n_frames - 1) * spec.scan_rate + 1
    s = np.arange(n) / spec.scan_rate
    stamps = s * spec.frame_dt + spec.scan_offset
    return stamps, [pose_at(spec, si) for si in s]


def default_calibration(face_size: int) -> Calibration:
    """Rig calibration: slightly rotated/offset LiDAR, 90-degree pinhole faces.

    Face intrinsics follow the pixel-center convention of the ERP/cubemap
    code: fx = fy = S/2 and the principal point at (S-1)/2.
    """
    ang = np.deg2rad(2.0)
    rot = np.array(
        [[np.cos(ang), 0.0, np.sin(ang)], [0.0, 1.0, 0.0], [-np.sin(ang), 0.0, np.cos(ang)]]
    )
    lidar_to_camera = RigidTransform(rot, np.array([0.05, -0.08, 0.02]))
    cam = {
        name: CameraIntrinsics(
            camera_id=0, model="PINHOLE", width=face_size, height=face_size,
            fx=face_size / 2.0, fy=face_size / 2.0,
            cx=(face_size - 1) / 2.0, cy=(face_size - 1) / 2.0,
        )
        for name in FACE_ORDER
    }
    return Calibration(lidar_to_camera, cam)


def render_erp(pose: RigidTransform, spec: SceneSpec) -> np.ndarray:
    """Ray-cast panorama from a camera pose, (H, W, 3) uint8."""
    w, h = spec.erp_width, spec.erp_height
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    rays = erp_pixel_to_ray(uu.ravel(), vv.ravel(), w, h)
    world_rays = rays @ pose.rotation.T
    _, colors, _ = ray_cast(pose.translation, world_rays, spec)
    return np.rint(colors * 255.0).clip(0, 255).astype(np.uint8).reshape(h, w, 3)


def simulate_lidar(pose: RigidTransform, spec: SceneSpec, rng: np.random.Generator) -> PointCloud:
    """One spherical scan in the sensor frame with Gaussian range noise.

    The azimuth grid gets a random phase offset per sweep, like the
    revolution-to-revolution timing jitter of a spinning sensor.  Without it
    every scan samples the same sensor-frame ray grid, nearest-neighbour
    correspondences lock ray index to ray index, and scan-to-scan ICP is
    biased toward the identity (it recovers a fraction of the true motion no
    matter how many iterations it runs).
    """
    vfov = np.deg2rad(spec.lidar_vfov_deg)
    elev = np.linspace(-vfov / 2.0, vfov / 2.0, spec.lidar_rings)
    azim = np.linspace(-np.pi, np.pi, spec.lidar_azimuths, endpoint=False)
    azim = azim + rng.uniform(0.0, 2.0 * np.pi / spec.lidar_azimuths)
    ee, aa = np.meshgrid(elev, azim, indexing="ij")
    ce = np.cos(ee.ravel())
    dirs = np.stack(
        [ce * np.sin(aa.ravel()), np.sin(ee.ravel()), ce * np.cos(aa.ravel())], axis=1
    )
    world_dirs = dirs @ pose.rotation.T
    t, _, hit = ray_cast(pose.translation, world_dirs, spec)
    t = t + rng.normal(0.0, spec.lidar_noise, size=t.shape)
    keep = hit & (t > 0.05) & (t <= spec.lidar_max_range)
    return PointCloud(dirs[keep] * t[keep][:, None])


def sample_surface_points(spec: SceneSpec, n: int, seed: int = 0):
    """Deterministic point samples on scene surfaces with their colors."""
    rng = np.random.default_rng(seed)
    pts = []
    cols = []
    per_box = max(8, int(n * 0.7) // max(len(spec.boxes), 1))
    for box in spec.boxes:
        c = np.asarray(box.center)
        s = np.asarray(box.size) / 2.0
        for axis in range(3):
            for sign in (1, -1):
                m = max(2, per_box // 6)
                face_pts = rng.uniform(-1.0, 1.0, size=(m, 3))
                face_pts[:, axis] = sign
                p = c + face_pts * s
                shade = _FACE_SHADE[(axis, sign)]
                pts.append(p)
                cols.append(np.tile(np.clip(np.asarray(box.color) * shade, 0, 1), (m, 1)))
    n_ground = max(8, n - sum(len(p) for p in pts))
    gx = rng.uniform(-spec.ground_extent * 0.5, spec.ground_extent * 0.5, n_ground)
    gz = rng.uniform(-spec.ground_extent * 0.5, spec.ground_extent * 0.5, n_ground)
    cx = np.floor(gx / spec.ground_cell).astype(np.int64)
    cz = np.floor(gz / spec.ground_cell).astype(np.int64)
    h = _hash2(cx, cz, spec.seed)
    tile = np.stack(
        [
            0.25 + 0.6 * ((h >> np.uint64(16 * i)) & np.uint64(0xFFFF)).astype(np.float64) / 65535.0
            for i in range(3)
        ],
        axis=1,
    )
    pts.append(np.stack([gx, np.zeros(n_ground), gz], axis=1))
    cols.append(tile)
    return np.concatenate(pts), np.clip(np.concatenate(cols), 0.0, 1.0)


def _visible(point: np.ndarray, cam_center: np.ndarray, spec: SceneSpec) -> bool:
    to_p = point - cam_center
    dist = np.linalg.norm(to_p)
    if dist < 1e-6:
        return False
    t, _, _ = ray_cast(cam_center[None, :], (to_p / dist)[None, :], spec)
    return bool(t[0] >= dist - 1e-3)


@dataclass(frozen=True)
class GroundTruth:
    timestamps: np.ndarray
    camera_poses: list
    scan_timestamps: np.ndarray
    lidar_poses: list
    similarity_scale: float
    similarity: np.ndarray  # 4x4 applied to world coords to get sfm coords


def make_similarity(seed: int = 7):
    """Fixed scale-ambiguous frame for the fabricated reconstruction."""
    rng = np.random.default_rng(seed ^ 0x5A5A)
    scale = float(rng.uniform(0.35, 0.55))
    ang = float(rng.uniform(0.2, 1.2))
    cy, sy = np.cos(ang), np.sin(ang)
    rot = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    t = rng.uniform(-1.0, 1.0, 3)
    sim = np.eye(4)
    sim[:3, :3] = scale * rot
    sim[:3, 3] = t
    return scale, rot, t, sim


def fabricate_sparse_model(
    spec: SceneSpec,
    keyframe_indices,
    keyframe_poses,
    face_size: int,
    min_points_per_image: int = 8,
) -> SparseModel:
    """A plausible sparse reconstruction of the scene in a similarity frame.

    Each keyframe contributes up to six face images; a face registers only
    when enough surface samples are visible in it, which leaves the
    per-face registration ratio realistically below 1. Points carry track
    lengths equal to the number of registering faces observing them.
    """
    scale, rot_g, t_g, _ = make_similarity(spec.seed)
    world_pts, world_cols = sample_surface_points(spec, 600, seed=spec.seed ^ 0x11)
    intr = CameraIntrinsics(
        camera_id=1, model="PINHOLE", width=face_size, height=face_size,
        fx=face_size / 2.0, fy=face_size / 2.0,
        cx=(face_size - 1) / 2.0, cy=(face_size - 1) / 2.0,
    )
    face_rots = {name: face_rotation(name) for name in FACE_ORDER}

    track = np.zeros(world_pts.shape[0], dtype=np.int64)
    images = {}
    image_id = 0
    for frame, pose in zip(keyframe_indices, keyframe_poses):
        world_to_rig = pose.inverse()
        for name in FACE_ORDER:
            r_wc = face_rots[name] @ world_to_rig.rotation
            t_wc = face_rots[name] @ world_to_rig.translation
            x_cam = world_pts @ r_wc.T + t_wc
            z = x_cam[:, 2]
            front = z > 0.1
            u = intr.fx * x_cam[:, 0] / np.where(front, z, 1.0) + intr.cx
            v = intr.fy * x_cam[:, 1] / np.where(front, z, 1.0) + intr.cy
            margin = 1.0
            in_view = (
                front
                & (u >= margin) & (u <= face_size - 1 - margin)
                & (v >= margin) & (v <= face_size - 1 - margin)
            )
            vis_idx = [
                i for i in np.flatnonzero(in_view)
                if _visible(world_pts[i], pose.translation, spec)
            ]
            if len(vis_idx) < min_points_per_image:
                continue
            track[vis_idx] += 1
            image_id += 1
            # Pose re-expressed in the similarity frame (pixels unchanged).
            r_m = r_wc @ rot_g.T
            t_m = scale * t_wc - r_m @ t_g
            images[image_id] = PosedImage(
                image_id=image_id,
                camera_id=1,
                name=f"{frame:04d}_{name}.png",
                qvec=rotmat_to_quat(r_m),
                tvec=t_m,
                num_observations=len(vis_idx),
            )

    keep = track >= 2
    pts_model = world_pts[keep] @ (scale * rot_g).T + t_g
    ids = np.arange(1, int(keep.sum()) + 1, dtype=np.int64)
    err_rng = np.random.default_rng(spec.seed ^ 0x22)
    return SparseModel(
        cameras={1: intr},
        images=images,
        point_ids=ids,
        point_xyz=pts_model,
        point_rgb=np.rint(world_cols[keep] * 255.0) / 255.0,
        point_error=np.round(err_rng.uniform(0.2, 1.2, ids.size), 4),
        point_track_len=track[keep],
    )


def gen_synthetic(spec: SceneSpec, out_dir: str, face_size: int = 64) -> GroundTruth:
    """Write a full synthetic dataset; returns the ground truth."""
    os.makedirs(out_dir, exist_ok=True)
    erp_dir = os.path.join(out_dir, "erp")
    lidar_dir = os.path.join(out_dir, "lidar")
    sfm_dir = os.path.join(out_dir, "sfm")
    os.makedirs(erp_dir, exist_ok=True)
    os.makedirs(lidar_dir, exist_ok=True)

    stamps, cam_poses = camera_trajectory(spec)
    calib = default_calibration(face_size)
    save_calibration(calib, os.path.join(out_dir, "calibration.json"))

    with open(os.path.join(erp_dir, "timestamps.csv"), "w", encoding="utf-8") as fh:
        fh.write("index,timestamp,filename\n")
        for i, ts in enumerate(stamps):
            name = f"frame_{i:04d}.png"
            Image.fromarray(render_erp(cam_poses[i], spec)).save(
                os.path.join(erp_dir, name)
            )
            fh.write(f"{i},{float(ts)!r},{name}\n")

    rng = np.random.default_rng(spec.seed ^ 0x33)
    scan_stamps, scan_cam_poses = scan_trajectory(spec)
    lidar_poses = [p.compose(calib.lidar_to_camera) for p in scan_cam_poses]
    with open(os.path.join(lidar_dir, "timestamps.csv"), "w", encoding="utf-8") as fh:
        fh.write("index,timestamp,filename\n")
        for i, ts in enumerate(scan_stamps):
            name = f"scan_{i:04d}.ply"
            scan = simulate_lidar(lidar_poses[i], spec, rng)
            write_ply(scan, os.path.join(lidar_dir, name))
            fh.write(f"{i},{float(ts)!r},{name}\n")

    # Fabricated reconstruction from every 2nd frame as a stand-in keyframe
    # set; the pipeline's own keyframe stage will pick its own frames, the
    # registered-image counts just need to be plausible.
    kf_idx = list(range(0, spec.n_frames, 2))
    model = fabricate_sparse_model(
        spec, kf_idx, [cam_poses[i] for i in kf_idx], face_size
    )
    write_sparse_model(model, sfm_dir)

    scale, _, _, sim = make_similarity(spec.seed)
    gt = GroundTruth(
        timestamps=stamps,
        camera_poses=cam_poses,
        scan_timestamps=scan_stamps,
        lidar_poses=lidar_poses,
        similarity_scale=scale,
        similarity=sim,
    )
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "timestamps": stamps.tolist(),
                "camera_poses": [p.matrix().tolist() for p in cam_poses],
                "scan_timestamps": scan_stamps.tolist(),
                "lidar_poses": [p.matrix().tolist() for p in lidar_poses],
                "similarity_scale": scale,
                "similarity": sim.tolist(),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return gt
