"""3DGS initialization: fuse sources, derive per-splat attributes, export PLY.

Every point becomes an isotropic Gaussian: log-scale from the mean distance
to its 3 nearest distinct neighbors, SH DC coefficients from RGB, constant
initial opacity (stored as a logit), identity rotation quaternion. The
binary PLY layout matches the common 3DGS training input: 17 float32
properties per vertex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from splatforge.errors import (
    EmptyInput,
    InsufficientPoints,
    InvalidColor,
    InvalidInput,
    MissingColors,
    ParseError,
)
from splatforge.geometry import PointCloud, SpatialIndex

SH_C0 = 0.28209479177387814
DEFAULT_OPACITY = 0.1
PROVENANCE_SFM = "sfm"
PROVENANCE_LIDAR = "lidar"

ASSET_PROPERTIES = (
    "x", "y", "z", "nx", "ny", "nz",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


@dataclass(frozen=True)
class InitAsset:
    """Per-splat initialization arrays, all length N."""

    means: np.ndarray  # (N, 3) float
    sh_dc: np.ndarray  # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) scalar-first quaternions
    provenance: np.ndarray  # (N,) unicode, "sfm" or "lidar"

    def __post_init__(self):
        n = self.means.shape[0]
        shapes = {
            "means": (self.means, (n, 3)),
            "sh_dc": (self.sh_dc, (n, 3)),
            "opacity_logit": (self.opacity_logit, (n,)),
            "log_scales": (self.log_scales, (n, 3)),
            "rotations": (self.rotations, (n, 4)),
            "provenance": (self.provenance, (n,)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise InvalidInput(f"{name} must have shape {want}, got {arr.shape}")

    def __len__(self) -> int:
        return self.means.shape[0]


def rgb_to_sh_dc(colors: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] to zeroth-order SH coefficients: (c - 0.5) / Y00."""
    c = np.asarray(colors, dtype=np.float64)
    if not np.isfinite(c).all() or c.min(initial=0.0) < 0.0 or c.max(initial=0.0) > 1.0:
        raise InvalidColor("colors must lie in [0, 1]")
    return (c - 0.5) / SH_C0


def sh_dc_to_rgb(sh: np.ndarray) -> np.ndarray:
    return np.asarray(sh, dtype=np.float64) * SH_C0 + 0.5


def init_scales(cloud: PointCloud) -> np.ndarray:
    """Isotropic log-scales from local density.

    Per point: log of the mean distance to its 3 nearest neighbors with
    distinct indices (coincident positions count as neighbors at distance
    zero, floored at 1e-7 before the log).
    """
    n = len(cloud)
    if n < 4:
        raise InsufficientPoints(f"need at least 4 points for 3-NN scales, got {n}")
    index = SpatialIndex(cloud)
    idx, dist = index.query_knn(cloud.positions, 4)
    rows = np.arange(n)
    # The query point is its own nearest neighbor unless pushed out of the
    # top 4 by coincident points with lower indices; drop one slot either way.
    self_col = idx == rows[:, None]
    has_self = self_col.any(axis=1)
    first_self = np.where(has_self, self_col.argmax(axis=1), 3)
    keep = np.ones((n, 4), dtype=bool)
    keep[rows, first_self] = False
    neighbor_dist = dist[keep].reshape(n, 3)
    mean_d = np.maximum(neighbor_dist.mean(axis=1), 1e-7)
    return np.repeat(np.log(mean_d)[:, None], 3, axis=1)


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def fuse(
    sfm_cloud: PointCloud,
    lidar_cloud: PointCloud,
    dedup_radius: float,
):
    """Union of aligned SfM and LiDAR points with proximity dedup.

    LiDAR points are authoritative; an SfM point is dropped when any LiDAR
    point lies within `dedup_radius`. Returns (cloud, provenance array)
    with LiDAR points first (input order), surviving SfM points after.
    """
    if not (dedup_radius >= 0 and np.isfinite(dedup_radius)):
        raise InvalidInput(f"dedup_radius must be >= 0, got {dedup_radius}")
    if sfm_cloud.colors is None or lidar_cloud.colors is None:
        raise MissingColors("fuse needs colored clouds")
    if len(lidar_cloud) == 0 and len(sfm_cloud) == 0:
        raise EmptyInput("nothing to fuse")
    if len(lidar_cloud) == 0:
        return sfm_cloud, np.full(len(sfm_cloud), PROVENANCE_SFM, dtype="<U5")
    if len(sfm_cloud) == 0:
        return lidar_cloud, np.full(len(lidar_cloud), PROVENANCE_LIDAR, dtype="<U5")
    index = SpatialIndex(lidar_cloud)
    _, nn = index.nearest(sfm_cloud.positions)
    keep_sfm = nn > dedup_radius
    kept = sfm_cloud.select(np.flatnonzero(keep_sfm))
    positions = np.concatenate([lidar_cloud.positions, kept.positions])
    colors = np.concatenate([lidar_cloud.colors, kept.colors])
    provenance = np.concatenate(
        [
            np.full(len(lidar_cloud), PROVENANCE_LIDAR, dtype="<U5"),
            np.full(len(kept), PROVENANCE_SFM, dtype="<U5"),
        ]
    )
    return PointCloud(positions, colors), provenance


def build_asset(
    cloud: PointCloud,
    provenance: np.ndarray,
    opacity: float = DEFAULT_OPACITY,
) -> InitAsset:
    """Full per-splat attribute set for a fused, colored cloud."""
    if cloud.colors is None:
        raise MissingColors("asset construction needs colors")
    if not 0.0 < opacity < 1.0:
        raise InvalidInput(f"opacity must be in (0, 1), got {opacity}")
    n = len(cloud)
    provenance = np.asarray(provenance)
    if provenance.shape != (n,):
        raise InvalidInput(f"provenance must have shape ({n},)")
    bad = set(np.unique(provenance)) - {PROVENANCE_SFM, PROVENANCE_LIDAR}
    if bad:
        raise InvalidInput(f"unknown provenance tags {sorted(bad)}")
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return InitAsset(
        means=cloud.positions.copy(),
        sh_dc=rgb_to_sh_dc(cloud.colors),
        opacity_logit=np.full(n, _logit(opacity)),
        log_scales=init_scales(cloud),
        rotations=rotations,
        provenance=provenance.astype("<U5"),
    )


def export_asset(asset: InitAsset, path: str) -> None:
    """Write the 17-property float32 binary PLY plus normals placeholder."""
    n = len(asset)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in ASSET_PROPERTIES]
    header.append("end_header")
    rec = np.zeros(n, dtype=[(p, "<f4") for p in ASSET_PROPERTIES])
    for i, axis in enumerate(("x", "y", "z")):
        rec[axis] = asset.means[:, i]
    for i in range(3):
        rec[f"f_dc_{i}"] = asset.sh_dc[:, i]
    rec["opacity"] = asset.opacity_logit
    for i in range(3):
        rec[f"scale_{i}"] = asset.log_scales[:, i]
    for i in range(4):
        rec[f"rot_{i}"] = asset.rotations[:, i]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_asset(path: str) -> InitAsset:
    """Read back an exported asset (provenance is not stored in the PLY;
    points come back tagged "lidar")."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ParseError("not a PLY file", path, 1)
        if fh.readline().strip() != b"format binary_little_endian 1.0":
            raise ParseError("asset must be binary little-endian", path, 2)
        props = []
        count = None
        line_no = 2
        while True:
            line = fh.readline().decode("ascii").strip()
            line_no += 1
            if line == "end_header":
                break
            if line.startswith("element vertex"):
                count = int(line.split()[2])
            elif line.startswith("property float"):
                props.append(line.split()[2])
            elif line.startswith("comment") or line.startswith("element"):
                continue
            else:
                raise ParseError(f"unexpected header line {line!r}", path, line_no)
        if count is None or tuple(props) != ASSET_PROPERTIES:
            raise ParseError("not a splat-init asset layout", path, line_no)
        expected = count * 4 * len(ASSET_PROPERTIES)
        payload = fh.read(expected)
        if len(payload) != expected:
            raise ParseError("vertex data truncated", path)
        rec = np.frombuffer(payload, dtype=[(p, "<f4") for p in ASSET_PROPERTIES])
    means = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    sh = np.stack([rec[f"f_dc_{i}"] for i in range(3)], axis=1).astype(np.float64)
    scales = np.stack([rec[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64)
    rots = np.stack([rec[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
    return InitAsset(
        means=means,
        sh_dc=sh,
        opacity_logit=rec["opacity"].astype(np.float64),
        log_scales=scales,
        rotations=rots,
        provenance=np.full(count, PROVENANCE_LIDAR, dtype="<U5"),
    )


def write_asset_manifest(asset: InitAsset, path: str, extra: dict | None = None) -> None:
    """Sidecar JSON with per-provenance counts and attribute stats."""
    n = len(asset)
    sfm = int((asset.provenance == PROVENANCE_SFM).sum())
    data = {
        "total": n,
        "sfm_points": sfm,
        "lidar_points": n - sfm,
        "opacity_logit": float(asset.opacity_logit[0]) if n else None,
        "log_scale_mean": float(asset.log_scales.mean()) if n else None,
        "properties": list(ASSET_PROPERTIES),
    }
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
