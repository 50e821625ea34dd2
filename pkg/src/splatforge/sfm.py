"""Sparse reconstruction bridge: text model parsing, projection, reuse metrics.

Reads the three-file text layout (cameras.txt, images.txt, points3D.txt).
Camera poses are world-to-camera: x_cam = R(q) @ x_world + t with q
scalar-first. Only PINHOLE and SIMPLE_PINHOLE camera models are accepted.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from splatforge.errors import (
    InvalidInput,
    MissingInput,
    ParseError,
    UndefinedRatio,
    UnsupportedCameraModel,
)
from splatforge.geometry import PointCloud, quat_to_rotmat

SUPPORTED_MODELS = ("PINHOLE", "SIMPLE_PINHOLE")


@dataclass(frozen=True)
class CameraIntrinsics:
    camera_id: int
    model: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.model not in SUPPORTED_MODELS:
            raise UnsupportedCameraModel(f"camera model {self.model!r}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInput(f"camera size must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidInput(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class PosedImage:
    image_id: int
    camera_id: int
    name: str
    qvec: np.ndarray  # (4,) scalar-first unit quaternion, world-to-camera
    tvec: np.ndarray  # (3,)
    num_observations: int

    def __post_init__(self):
        q = np.asarray(self.qvec, dtype=np.float64)
        t = np.asarray(self.tvec, dtype=np.float64)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise InvalidInput(f"qvec must be a unit 4-vector, got {q}")
        if t.shape != (3,):
            raise InvalidInput(f"tvec must be (3,), got {t.shape}")
        object.__setattr__(self, "qvec", q)
        object.__setattr__(self, "tvec", t)

    def rotation(self) -> np.ndarray:
        return quat_to_rotmat(self.qvec)


@dataclass(frozen=True)
class SparseModel:
    cameras: dict  # camera_id -> CameraIntrinsics
    images: dict  # image_id -> PosedImage
    point_ids: np.ndarray  # (P,) int64
    point_xyz: np.ndarray  # (P, 3) float64
    point_rgb: np.ndarray  # (P, 3) float64 in [0, 1]
    point_error: np.ndarray  # (P,) float64
    point_track_len: np.ndarray  # (P,) int64


def _data_lines(path: str):
    """Yield (line_number, stripped_text) skipping comments and blanks."""
    with open(path, "r", encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            yield no, text


def _image_record_lines(path: str):
    """Yield (line_number, text) for images.txt, keeping blank observation lines.

    images.txt alternates pose lines with observation lines; an image with no
    observations still owns one (possibly empty) observations line, so blanks
    must survive here, unlike in the other two files.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text.startswith("#"):
                continue
            yield no, text


def parse_sparse_model(model_dir: str) -> SparseModel:
    """Parse cameras.txt / images.txt / points3D.txt from a directory."""
    paths = {name: os.path.join(model_dir, name + ".txt")
             for name in ("cameras", "images", "points3D")}
    for name, path in paths.items():
        if not os.path.isfile(path):
            raise MissingInput(f"sparse model is missing {name}.txt in {model_dir}")

    cameras: dict[int, CameraIntrinsics] = {}
    for no, text in _data_lines(paths["cameras"]):
        tok = text.split()
        if len(tok) < 5:
            raise ParseError("camera line has too few fields", paths["cameras"], no)
        try:
            cam_id = int(tok[0])
            model = tok[1]
            width, height = int(tok[2]), int(tok[3])
            params = [float(x) for x in tok[4:]]
        except ValueError as exc:
            raise ParseError(f"bad camera field: {exc}", paths["cameras"], no) from None
        if model == "PINHOLE":
            if len(params) != 4:
                raise ParseError("PINHOLE needs 4 params (fx fy cx cy)", paths["cameras"], no)
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise ParseError("SIMPLE_PINHOLE needs 3 params (f cx cy)", paths["cameras"], no)
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise UnsupportedCameraModel(
                f"camera model {model!r}", paths["cameras"], no
            )
        if cam_id in cameras:
            raise ParseError(f"duplicate camera_id {cam_id}", paths["cameras"], no)
        try:
            cameras[cam_id] = CameraIntrinsics(cam_id, model, width, height, fx, fy, cx, cy)
        except InvalidInput as exc:
            raise ParseError(str(exc), paths["cameras"], no) from None

    images: dict[int, PosedImage] = {}
    pending = None  # (line_no, tokens) of an image line awaiting observations
    for no, text in _image_record_lines(paths["images"]):
        if pending is None:
            if not text:
                continue
            pending = (no, text.split())
            continue
        img_no, tok = pending
        pending = None
        if len(tok) != 10:
            raise ParseError(
                f"image line needs 10 fields, got {len(tok)}", paths["images"], img_no
            )
        try:
            image_id = int(tok[0])
            qvec = np.array([float(x) for x in tok[1:5]])
            tvec = np.array([float(x) for x in tok[5:8]])
            camera_id = int(tok[8])
            name = tok[9]
        except ValueError as exc:
            raise ParseError(f"bad image field: {exc}", paths["images"], img_no) from None
        obs_tok = text.split()
        if len(obs_tok) % 3 != 0:
            raise ParseError(
                "observations line length must be a multiple of 3", paths["images"], no
            )
        if camera_id not in cameras:
            raise MissingInput(
                f"{paths['images']}: image {image_id} references missing camera_id {camera_id}"
            )
        if image_id in images:
            raise ParseError(f"duplicate image_id {image_id}", paths["images"], img_no)
        try:
            images[image_id] = PosedImage(
                image_id, camera_id, name, qvec, tvec, len(obs_tok) // 3
            )
        except InvalidInput as exc:
            raise ParseError(str(exc), paths["images"], img_no) from None
    if pending is not None:
        raise ParseError(
            "image line without observations line", paths["images"], pending[0]
        )

    ids, xyz, rgb, err, track = [], [], [], [], []
    for no, text in _data_lines(paths["points3D"]):
        tok = text.split()
        if len(tok) < 8:
            raise ParseError("point line has too few fields", paths["points3D"], no)
        rest = tok[8:]
        if len(rest) % 2 != 0:
            raise ParseError(
                "track must be (image_id, point2d_idx) pairs", paths["points3D"], no
            )
        try:
            ids.append(int(tok[0]))
            xyz.append([float(x) for x in tok[1:4]])
            rgb.append([int(x) for x in tok[4:7]])
            err.append(float(tok[7]))
        except ValueError as exc:
            raise ParseError(f"bad point field: {exc}", paths["points3D"], no) from None
        track.append(len(rest) // 2)

    point_rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
    if point_rgb.size and (point_rgb.min() < 0 or point_rgb.max() > 255):
        raise ParseError("point colors must be 0..255", paths["points3D"])
    return SparseModel(
        cameras=cameras,
        images=images,
        point_ids=np.asarray(ids, dtype=np.int64),
        point_xyz=np.asarray(xyz, dtype=np.float64).reshape(-1, 3),
        point_rgb=point_rgb / 255.0,
        point_error=np.asarray(err, dtype=np.float64),
        point_track_len=np.asarray(track, dtype=np.int64),
    )


def write_sparse_model(model: SparseModel, model_dir: str) -> None:
    """Write the three text files; inverse of parse_sparse_model."""
    os.makedirs(model_dir, exist_ok=True)
    with open(os.path.join(model_dir, "cameras.txt"), "w", encoding="utf-8") as fh:
        fh.write("# camera_id model width height params\n")
        for cam_id in sorted(model.cameras):
            c = model.cameras[cam_id]
            if c.model == "SIMPLE_PINHOLE":
                params = f"{c.fx!r} {c.cx!r} {c.cy!r}"
            else:
                params = f"{c.fx!r} {c.fy!r} {c.cx!r} {c.cy!r}"
            fh.write(f"{c.camera_id} {c.model} {c.width} {c.height} {params}\n")
    with open(os.path.join(model_dir, "images.txt"), "w", encoding="utf-8") as fh:
        fh.write("# image_id qw qx qy qz tx ty tz camera_id name\n")
        for image_id in sorted(model.images):
            im = model.images[image_id]
            q = " ".join(repr(float(x)) for x in im.qvec)
            t = " ".join(repr(float(x)) for x in im.tvec)
            fh.write(f"{im.image_id} {q} {t} {im.camera_id} {im.name}\n")
            # Observation coordinates are not retained; emit placeholder pairs
            # so the record keeps its observation count.
            obs = " ".join("0.0 0.0 -1" for _ in range(im.num_observations))
            fh.write(obs + "\n")
    with open(os.path.join(model_dir, "points3D.txt"), "w", encoding="utf-8") as fh:
        fh.write("# point_id x y z r g b error track...\n")
        order = np.argsort(model.point_ids, kind="stable")
        for i in order:
            xyz = " ".join(repr(float(x)) for x in model.point_xyz[i])
            rgb = " ".join(str(int(round(x * 255.0))) for x in model.point_rgb[i])
            track = " ".join("1 0" for _ in range(model.point_track_len[i]))
            fh.write(
                f"{model.point_ids[i]} {xyz} {rgb} "
                f"{float(model.point_error[i])!r} {track}\n"
            )


def project_point(
    point: np.ndarray,
    camera: CameraIntrinsics,
    image: PosedImage,
    z_min: float = 1e-9,
):
    """Pixel (u, v) of a world point, or None when it lies at/behind the camera.

    Pinhole model: u = fx * x/z + cx, v = fy * y/z + cy in camera coords.
    """
    x_cam = image.rotation() @ np.asarray(point, dtype=np.float64) + image.tvec
    if x_cam[2] <= z_min:
        return None
    u = camera.fx * x_cam[0] / x_cam[2] + camera.cx
    v = camera.fy * x_cam[1] / x_cam[2] + camera.cy
    return float(u), float(v)


def sfm_to_pointcloud(model: SparseModel, min_track: int = 3) -> PointCloud:
    """Colored cloud of model points with track length >= min_track.

    Output order is ascending point id, so it is independent of file order.
    """
    if min_track < 0:
        raise InvalidInput(f"min_track must be >= 0, got {min_track}")
    keep = model.point_track_len >= min_track
    order = np.argsort(model.point_ids[keep], kind="stable")
    return PointCloud(model.point_xyz[keep][order], model.point_rgb[keep][order])


def reuse_metrics(
    total_frames: int,
    keyframes: int,
    registered_images: int,
    faces_per_keyframe: int = 6,
):
    """(keyframe_ratio, reconstruction_ratio) of the reuse pipeline.

    keyframe_ratio = keyframes / total_frames; reconstruction_ratio =
    registered_images / (keyframes * faces_per_keyframe).
    """
    if total_frames < 0 or keyframes < 0 or registered_images < 0:
        raise InvalidInput("counts must be non-negative")
    if keyframes > total_frames:
        raise InvalidInput(
            f"keyframes ({keyframes}) cannot exceed total frames ({total_frames})"
        )
    if total_frames == 0 or keyframes * faces_per_keyframe == 0:
        raise UndefinedRatio("reuse metrics need nonzero frame and keyframe counts")
    kf_ratio = keyframes / total_frames
    rec_ratio = registered_images / (keyframes * faces_per_keyframe)
    if registered_images > keyframes * faces_per_keyframe:
        raise InvalidInput(
            "registered images exceed keyframes x faces_per_keyframe"
        )
    return kf_ratio, rec_ratio
