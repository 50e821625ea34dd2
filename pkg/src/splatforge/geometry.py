"""Core geometric types: point clouds, rigid transforms, spatial queries.

Conventions used across the package:

* positions are float64 arrays of shape (N, 3), y up;
* colors are float64 RGB in [0, 1], quantized to 8 bits only at file I/O;
* rotations are 3x3 orthonormal matrices with det +1 (checked on
  construction to 1e-9);
* quaternions are scalar-first (w, x, y, z) unit vectors.

Arrays held by PointCloud and RigidTransform are frozen (non-writeable) so
instances can be shared safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from splatforge._kernels import KernelIndex
from splatforge.errors import (
    EmptyInput,
    InvalidColor,
    InvalidInput,
    InvalidTransform,
)

_ORTHO_TOL = 1e-9


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform: x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = _frozen(self.rotation)
        tr = _frozen(self.translation)
        if rot.shape != (3, 3) or tr.shape != (3,):
            raise InvalidTransform(
                f"expected (3,3) rotation and (3,) translation, "
                f"got {rot.shape} and {tr.shape}"
            )
        if not (np.isfinite(rot).all() and np.isfinite(tr).all()):
            raise InvalidTransform("transform contains non-finite values")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        det = np.linalg.det(rot)
        if err > _ORTHO_TOL or abs(det - 1.0) > _ORTHO_TOL:
            raise InvalidTransform(
                f"rotation not orthonormal with det +1 "
                f"(orthogonality error {err:.2e}, det {det:.12f})"
            )
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidTransform(f"expected (4,4) matrix, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise InvalidTransform("last matrix row must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self o other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T


@dataclass(frozen=True)
class PointCloud:
    """Ordered point set with optional per-point colors and normals."""

    positions: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        pos = _frozen(self.positions)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidInput(f"positions must be (N, 3), got {pos.shape}")
        if not np.isfinite(pos).all():
            raise InvalidInput("positions contain non-finite values")
        object.__setattr__(self, "positions", pos)
        n = pos.shape[0]
        if self.colors is not None:
            col = _frozen(self.colors)
            if col.shape != (n, 3):
                raise InvalidInput(f"colors must be ({n}, 3), got {col.shape}")
            if not np.isfinite(col).all() or col.min(initial=0.0) < 0.0 or col.max(initial=0.0) > 1.0:
                raise InvalidColor("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", col)
        if self.normals is not None:
            nrm = _frozen(self.normals)
            if nrm.shape != (n, 3):
                raise InvalidInput(f"normals must be ({n}, 3), got {nrm.shape}")
            lens = np.linalg.norm(nrm, axis=1)
            if not np.isfinite(lens).all() or np.abs(lens - 1.0).max(initial=0.0) > 1e-6:
                raise InvalidInput("normals must be unit length (tol 1e-6)")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def select(self, indices) -> "PointCloud":
        """Subset preserving field presence and relative order of `indices`."""
        return PointCloud(
            self.positions[indices],
            None if self.colors is None else self.colors[indices],
            None if self.normals is None else self.normals[indices],
        )

    def with_colors(self, colors: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions, colors, self.normals)

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions, self.colors, normals)


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Transform positions (and rotate normals); colors and order unchanged."""
    return PointCloud(
        transform.apply(cloud.positions),
        cloud.colors,
        None if cloud.normals is None else transform.rotate(cloud.normals),
    )


def merge_clouds(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds in order. Colors/normals kept only if all have them."""
    if not clouds:
        raise EmptyInput("no clouds to merge")
    pos = np.concatenate([c.positions for c in clouds])
    colors = None
    if all(c.colors is not None for c in clouds):
        colors = np.concatenate([c.colors for c in clouds])
    normals = None
    if all(c.normals is not None for c in clouds):
        normals = np.concatenate([c.normals for c in clouds])
    return PointCloud(pos, colors, normals)


def voxel_dedup(cloud: PointCloud, voxel: float) -> PointCloud:
    """Keep the first point (in cloud order) of every occupied voxel."""
    if voxel <= 0 or not np.isfinite(voxel):
        raise InvalidInput(f"voxel size must be positive, got {voxel}")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    view = keys.view([("x", np.int64), ("y", np.int64), ("z", np.int64)]).ravel()
    _, first = np.unique(view, return_index=True)
    return cloud.select(np.sort(first))


class SpatialIndex:
    """Deterministic nearest-neighbor index over a cloud's positions.

    Ties are broken by point index, so queries have exactly one valid
    answer for any input, and both kernel backends return it.
    """

    def __init__(self, cloud_or_points, backend: str | None = None):
        pts = (
            cloud_or_points.positions
            if isinstance(cloud_or_points, PointCloud)
            else np.asarray(cloud_or_points, dtype=np.float64)
        )
        self._index = KernelIndex(pts, backend=backend)

    def __len__(self) -> int:
        return len(self._index)

    @property
    def backend(self) -> str:
        return self._index.backend

    def query_knn(self, queries: np.ndarray, k: int):
        """(indices, distances) of the k nearest points per query row."""
        return self._index.knn(queries, k)

    def query_radius(self, queries: np.ndarray, radius: float):
        """(indptr, indices, distances) of all points within `radius`."""
        return self._index.radius(queries, radius)

    def nearest(self, queries: np.ndarray):
        """Single nearest neighbor per query: (indices (M,), distances (M,))."""
        idx, dist = self._index.knn(np.atleast_2d(queries), 1)
        return idx[:, 0], dist[:, 0]


def build_index(cloud: PointCloud, backend: str | None = None) -> SpatialIndex:
    return SpatialIndex(cloud, backend=backend)


# ---------------------------------------------------------------------------
# Quaternions (scalar-first, unit)
# ---------------------------------------------------------------------------

def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise InvalidInput(f"quaternion must be (4,), got {q.shape}")
    n = np.linalg.norm(q)
    if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
        raise InvalidInput(f"quaternion must be unit length, |q| = {n}")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0.

    Eigenvalue method: the quaternion is the dominant eigenvector of a
    symmetric 4x4 built from the matrix entries, which is stable for all
    rotation angles. eigh reads the lower triangle, so the upper zeros
    are never touched.
    """
    rxx, rxy, rxz, ryx, ryy, ryz, rzx, rzy, rzz = np.asarray(
        rot, dtype=np.float64
    ).flat
    k = (
        np.array(
            [
                [rxx - ryy - rzz, 0, 0, 0],
                [ryx + rxy, ryy - rxx - rzz, 0, 0],
                [rzx + rxz, rzy + ryz, rzz - rxx - ryy, 0],
                [rzy - ryz, rxz - rzx, ryx - rxy, rxx + ryy + rzz],
            ]
        )
        / 3.0
    )
    vals, vecs = np.linalg.eigh(k)
    q = vecs[[3, 0, 1, 2], np.argmax(vals)]
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)
