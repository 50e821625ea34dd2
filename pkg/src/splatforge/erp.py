"""Equirectangular (ERP) panoramas and cubemap faces.

An ERP image is an (H, W, 3) uint8 array with W = 2H. Pixel centers sit at
half-integer offsets: pixel (u, v) looks along

    theta = (u + 0.5) / W * 2*pi - pi        (yaw, 0 at +z, increasing to +x)
    phi   = pi/2 - (v + 0.5) / H * pi        (pitch, +pi/2 at top)
    d     = (cos(phi) sin(theta), sin(phi), cos(phi) cos(theta))

so the image center looks down +z and the frame is y-up, right-handed.

Cubemap faces are square pinhole views of 90 degrees. The face bases below
are fixed; rays on the boundary between two faces resolve to the first
matching face in FACE_ORDER.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatforge.errors import InvalidInput

FACE_ORDER = ("front", "right", "up", "back", "left", "down")

# face -> (forward, right, up) in world axes; right = forward x up so that
# the world-to-face-camera map [right, -up, forward] is a proper rotation
# (representable as a quaternion in sparse-model image records).
_FACE_BASES = {
    "front": (np.array([0.0, 0.0, 1.0]), np.array([-1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    "right": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])),
    "up": (np.array([0.0, 1.0, 0.0]), np.array([-1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0])),
    "back": (np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    "left": (np.array([-1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0]), np.array([0.0, 1.0, 0.0])),
    "down": (np.array([0.0, -1.0, 0.0]), np.array([-1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
}


def face_basis(face: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(forward, right, up) unit vectors of a cubemap face."""
    try:
        return _FACE_BASES[face]
    except KeyError:
        raise InvalidInput(f"unknown face {face!r}") from None


def face_rotation(face: str) -> np.ndarray:
    """World-to-face-camera rotation (camera: x right, y down, z forward)."""
    fwd, right, up = face_basis(face)
    return np.stack([right, -up, fwd])


def validate_erp(pixels: np.ndarray) -> np.ndarray:
    img = np.asarray(pixels)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise InvalidInput(f"ERP image must be (H, W, 3) uint8, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    if h == 0 or w != 2 * h:
        raise InvalidInput(f"ERP aspect must be 2:1 with H > 0, got {w}x{h}")
    return img


@dataclass(frozen=True)
class CubemapSet:
    """Six square uint8 face images keyed by FACE_ORDER names."""

    faces: dict

    def __post_init__(self):
        if set(self.faces) != set(FACE_ORDER):
            raise InvalidInput(f"need exactly faces {FACE_ORDER}, got {sorted(self.faces)}")
        sizes = set()
        for name, img in self.faces.items():
            img = np.asarray(img)
            if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
                raise InvalidInput(f"face {name!r} must be (S, S, 3) uint8")
            if img.shape[0] != img.shape[1]:
                raise InvalidInput(f"face {name!r} must be square, got {img.shape[:2]}")
            sizes.add(img.shape[0])
        if len(sizes) != 1 or 0 in sizes:
            raise InvalidInput(f"faces must share one positive size, got {sizes}")

    @property
    def face_size(self) -> int:
        return next(iter(self.faces.values())).shape[0]


def erp_pixel_to_ray(u, v, width: int, height: int) -> np.ndarray:
    """Unit view ray(s) through ERP pixel center(s) (u, v).

    u and v may be scalars or arrays (continuous values allowed); returns
    (..., 3) unit vectors.
    """
    if width != 2 * height or height <= 0:
        raise InvalidInput(f"ERP must be 2:1, got {width}x{height}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta = (u + 0.5) / width * (2.0 * np.pi) - np.pi
    phi = np.pi / 2.0 - (v + 0.5) / height * np.pi
    cp = np.cos(phi)
    return np.stack([cp * np.sin(theta), np.sin(phi), cp * np.cos(theta)], axis=-1)


def ray_to_erp_pixel(dirs: np.ndarray, width: int, height: int) -> np.ndarray:
    """Continuous ERP pixel coords (..., 2) of unit ray(s); inverse of above."""
    d = np.asarray(dirs, dtype=np.float64)
    theta = np.arctan2(d[..., 0], d[..., 2])
    phi = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    u = (theta + np.pi) / (2.0 * np.pi) * width - 0.5
    v = (np.pi / 2.0 - phi) / np.pi * height - 0.5
    return np.stack([u, v], axis=-1)


def ray_to_face(direction: np.ndarray):
    """Cubemap face and normalized in-face uv in [0, 1] hit by a ray.

    Boundary rays (two or three axis components tied in magnitude) resolve
    to the first matching face in FACE_ORDER.
    """
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,) or not np.isfinite(d).all() or np.all(d == 0):
        raise InvalidInput("direction must be a finite nonzero 3-vector")
    face_idx, uv = rays_to_faces(d[None, :])
    return FACE_ORDER[face_idx[0]], (float(uv[0, 0]), float(uv[0, 1]))


def rays_to_faces(dirs: np.ndarray):
    """Vectorized ray_to_face: (face index into FACE_ORDER (N,), uv (N, 2))."""
    d = np.asarray(dirs, dtype=np.float64)
    fwd_dots = np.stack([d @ _FACE_BASES[f][0] for f in FACE_ORDER])
    face_idx = np.argmax(fwd_dots, axis=0)  # first max wins the tie
    uv = np.empty((d.shape[0], 2))
    for i, name in enumerate(FACE_ORDER):
        sel = face_idx == i
        if not np.any(sel):
            continue
        fwd, right, up = _FACE_BASES[name]
        depth = d[sel] @ fwd
        a = (d[sel] @ right) / depth
        b = (d[sel] @ up) / depth
        uv[sel, 0] = (a + 1.0) / 2.0
        uv[sel, 1] = (1.0 - b) / 2.0
    return face_idx, uv


def face_pixel_rays(face: str, face_size: int) -> np.ndarray:
    """Unit rays through all pixel centers of a face: (S, S, 3)."""
    if face_size <= 0:
        raise InvalidInput(f"face size must be positive, got {face_size}")
    fwd, right, up = face_basis(face)
    t = (np.arange(face_size) + 0.5) / face_size * 2.0 - 1.0
    a = t[None, :, None]  # columns: left -> right
    b = -t[:, None, None]  # rows: top -> bottom, +up at top
    d = fwd + a * right + b * up
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray,
                    wrap_x: bool = False) -> np.ndarray:
    """Bilinear sample at continuous pixel coords; returns float64 values.

    x wraps around the image width when wrap_x is set (ERP longitude);
    otherwise both axes clamp at the border.
    """
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    if wrap_x:
        xa, xb = x0 % w, (x0 + 1) % w
    else:
        xa, xb = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    ya, yb = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    v = img.astype(np.float64) if img.dtype != np.float64 else img
    top = v[ya, xa] * (1.0 - fx) + v[ya, xb] * fx
    bot = v[yb, xa] * (1.0 - fx) + v[yb, xb] * fx
    return top * (1.0 - fy) + bot * fy


def project_erp_to_cubemap(erp: np.ndarray, face_size: int) -> CubemapSet:
    """Resample an ERP panorama into six cubemap faces.

    Each face pixel's center ray is mapped to continuous ERP coordinates
    and bilinearly sampled with horizontal wrap.
    """
    img = validate_erp(erp)
    h, w = img.shape[:2]
    faces = {}
    for name in FACE_ORDER:
        rays = face_pixel_rays(name, face_size).reshape(-1, 3)
        uv = ray_to_erp_pixel(rays, w, h)
        vals = bilinear_sample(img, uv[:, 0], uv[:, 1], wrap_x=True)
        faces[name] = (
            np.rint(vals).clip(0, 255).astype(np.uint8).reshape(face_size, face_size, 3)
        )
    return CubemapSet(faces)


def project_cubemap_to_erp(cubemap: CubemapSet, width: int, height: int) -> np.ndarray:
    """Resample six faces back into an ERP panorama (no cross-face blending)."""
    if width != 2 * height or height <= 0:
        raise InvalidInput(f"ERP must be 2:1, got {width}x{height}")
    size = cubemap.face_size
    uu, vv = np.meshgrid(np.arange(width), np.arange(height))
    rays = erp_pixel_to_ray(uu.ravel(), vv.ravel(), width, height)
    face_idx, uv = rays_to_faces(rays)
    out = np.empty((height * width, 3))
    for i, name in enumerate(FACE_ORDER):
        sel = face_idx == i
        if not np.any(sel):
            continue
        x = uv[sel, 0] * size - 0.5
        y = uv[sel, 1] * size - 0.5
        out[sel] = bilinear_sample(cubemap.faces[name], x, y)
    return np.rint(out).clip(0, 255).astype(np.uint8).reshape(height, width, 3)
