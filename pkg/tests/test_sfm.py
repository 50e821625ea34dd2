import numpy as np
import numpy.testing as npt
import pytest

from splatforge.errors import (
    InvalidInput,
    MissingInput,
    ParseError,
    UndefinedRatio,
    UnsupportedCameraModel,
)
from splatforge.sfm import (
    CameraIntrinsics,
    PosedImage,
    SparseModel,
    parse_sparse_model,
    project_point,
    reuse_metrics,
    sfm_to_pointcloud,
    write_sparse_model,
)

CAMERA_LINE = "1 PINHOLE 640 480 500.0 480.0 320.0 240.0\n"
IMAGE_LINES = "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 img0.png\n2.0 3.0 -1\n"
POINT_LINE = "7 0.0 0.0 1.0 255 0 0 0.5 1 0\n"


def _write_model_dir(tmp_path, cameras=CAMERA_LINE, images=IMAGE_LINES,
                     points=POINT_LINE):
    d = tmp_path / "model"
    d.mkdir(exist_ok=True)
    (d / "cameras.txt").write_text(cameras)
    (d / "images.txt").write_text(images)
    (d / "points3D.txt").write_text(points)
    return str(d)


def _sample_model() -> SparseModel:
    cams = {
        1: CameraIntrinsics(1, "PINHOLE", 640, 480, 500.0, 480.0, 320.0, 240.0),
        2: CameraIntrinsics(2, "SIMPLE_PINHOLE", 320, 240, 300.0, 300.0, 160.0, 120.0),
    }
    s = np.sqrt(0.5)
    images = {
        1: PosedImage(1, 1, "a.png", [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 5.0], 3),
        4: PosedImage(4, 2, "b.png", [s, 0.0, s, 0.0], [0.1, -0.2, 0.3], 0),
    }
    return SparseModel(
        cameras=cams,
        images=images,
        point_ids=np.array([5, 2, 9], dtype=np.int64),
        point_xyz=np.array([[0.0, 0.0, 1.0], [1.5, -2.0, 3.25], [-0.5, 0.5, 2.0]]),
        point_rgb=np.array([[10, 20, 30], [0, 255, 128], [1, 2, 3]]) / 255.0,
        point_error=np.array([0.5, 1.25, 0.0]),
        point_track_len=np.array([3, 1, 7], dtype=np.int64),
    )


def test_write_parse_roundtrip(tmp_path):
    model = _sample_model()
    write_sparse_model(model, str(tmp_path))
    back = parse_sparse_model(str(tmp_path))

    assert back.cameras == model.cameras
    assert set(back.images) == {1, 4}
    for image_id, orig in model.images.items():
        got = back.images[image_id]
        assert (got.camera_id, got.name) == (orig.camera_id, orig.name)
        npt.assert_array_equal(got.qvec, orig.qvec)
        npt.assert_array_equal(got.tvec, orig.tvec)
        assert got.num_observations == orig.num_observations

    # points come back sorted by id
    order = np.argsort(model.point_ids)
    npt.assert_array_equal(back.point_ids, model.point_ids[order])
    npt.assert_array_equal(back.point_xyz, model.point_xyz[order])
    npt.assert_array_equal(back.point_rgb, model.point_rgb[order])
    npt.assert_array_equal(back.point_error, model.point_error[order])
    npt.assert_array_equal(back.point_track_len, model.point_track_len[order])


def test_parse_minimal_dir(tmp_path):
    model = parse_sparse_model(_write_model_dir(tmp_path))
    assert model.cameras[1].model == "PINHOLE"
    assert model.images[1].num_observations == 1
    assert model.point_track_len[0] == 1


def test_image_with_empty_observation_line(tmp_path):
    images = "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 img0.png\n\n"
    model = parse_sparse_model(_write_model_dir(tmp_path, images=images))
    assert model.images[1].num_observations == 0


def test_missing_file_reported(tmp_path):
    d = tmp_path / "model"
    d.mkdir()
    (d / "cameras.txt").write_text(CAMERA_LINE)
    (d / "images.txt").write_text(IMAGE_LINES)
    with pytest.raises(MissingInput, match="points3D"):
        parse_sparse_model(str(d))


@pytest.mark.parametrize(
    "field,value,exc",
    [
        ("cameras", "1 PINHOLE 640 480 500.0\n", ParseError),
        ("cameras", "1 RADIAL 640 480 500.0 320.0 240.0 0.1\n", UnsupportedCameraModel),
        ("cameras", "x PINHOLE 640 480 500.0 480.0 320.0 240.0\n", ParseError),
        ("cameras", CAMERA_LINE + CAMERA_LINE, ParseError),
        ("images", "1 2.0 0.0 0.0 0.0 0.0 0.0 0.0 1 a.png\n\n", ParseError),
        ("images", "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 9 a.png\n\n", MissingInput),
        ("images", "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 a.png\n1.0 2.0\n", ParseError),
        ("images", "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 a.png\n", ParseError),
        ("points", "7 0.0 0.0 1.0 400 0 0 0.5\n", ParseError),
        ("points", "7 0.0 0.0 1.0 255 0 0 0.5 1\n", ParseError),
        ("points", "7 0.0 z 1.0 255 0 0 0.5\n", ParseError),
    ],
)
def test_malformed_inputs_rejected(tmp_path, field, value, exc):
    kwargs = {field: value}
    with pytest.raises(exc):
        parse_sparse_model(_write_model_dir(tmp_path, **kwargs))


def test_intrinsics_validation():
    with pytest.raises(UnsupportedCameraModel):
        CameraIntrinsics(1, "OPENCV", 640, 480, 500.0, 500.0, 320.0, 240.0)
    with pytest.raises(InvalidInput):
        CameraIntrinsics(1, "PINHOLE", 640, 480, -1.0, 500.0, 320.0, 240.0)
    with pytest.raises(InvalidInput):
        CameraIntrinsics(1, "PINHOLE", 640, 480, 500.0, 500.0, 700.0, 240.0)
    with pytest.raises(InvalidInput):
        CameraIntrinsics(1, "PINHOLE", 0, 480, 500.0, 500.0, 320.0, 240.0)


def test_posed_image_validation():
    with pytest.raises(InvalidInput):
        PosedImage(1, 1, "x.png", [2.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0)
    with pytest.raises(InvalidInput):
        PosedImage(1, 1, "x.png", [1.0, 0.0, 0.0, 0.0], [0.0, 0.0], 0)


def test_project_point_pinhole_arithmetic():
    cam = CameraIntrinsics(1, "PINHOLE", 640, 480, 500.0, 480.0, 320.0, 240.0)
    identity = PosedImage(1, 1, "a.png", [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0)
    uv = project_point(np.array([0.5, -0.25, 2.0]), cam, identity)
    assert uv == (500.0 * 0.25 + 320.0, 480.0 * -0.125 + 240.0)


def test_project_point_applies_pose():
    cam = CameraIntrinsics(1, "PINHOLE", 640, 480, 500.0, 480.0, 320.0, 240.0)
    shifted = PosedImage(1, 1, "a.png", [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 5.0], 0)
    # world point on the optical axis lands on the principal point
    assert project_point(np.array([0.0, 0.0, 1.0]), cam, shifted) == (320.0, 240.0)


def test_project_point_behind_camera_is_none():
    cam = CameraIntrinsics(1, "PINHOLE", 640, 480, 500.0, 480.0, 320.0, 240.0)
    identity = PosedImage(1, 1, "a.png", [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0)
    assert project_point(np.array([0.0, 0.0, -1.0]), cam, identity) is None
    assert project_point(np.array([0.0, 0.0, 0.0]), cam, identity) is None


def test_sfm_to_pointcloud_filters_and_orders():
    model = _sample_model()
    cloud = sfm_to_pointcloud(model, min_track=3)
    # ids 5 (track 3) and 9 (track 7) survive, ascending id order
    npt.assert_array_equal(cloud.positions,
                           [[0.0, 0.0, 1.0], [-0.5, 0.5, 2.0]])
    npt.assert_allclose(cloud.colors, np.array([[10, 20, 30], [1, 2, 3]]) / 255.0)

    everything = sfm_to_pointcloud(model, min_track=0)
    npt.assert_array_equal(everything.positions,
                           model.point_xyz[np.argsort(model.point_ids)])
    with pytest.raises(InvalidInput):
        sfm_to_pointcloud(model, min_track=-1)


def test_reuse_metrics_arithmetic():
    kf_ratio, rec_ratio = reuse_metrics(10, 4, 12)
    assert kf_ratio == pytest.approx(0.4)
    assert rec_ratio == pytest.approx(12 / 24)
    kf_ratio, rec_ratio = reuse_metrics(10, 5, 5, faces_per_keyframe=1)
    assert (kf_ratio, rec_ratio) == (0.5, 1.0)


def test_reuse_metrics_validation():
    with pytest.raises(InvalidInput):
        reuse_metrics(10, 11, 5)
    with pytest.raises(InvalidInput):
        reuse_metrics(-1, 0, 0)
    with pytest.raises(UndefinedRatio):
        reuse_metrics(0, 0, 0)
    with pytest.raises(UndefinedRatio):
        reuse_metrics(10, 0, 0)
    with pytest.raises(InvalidInput):
        reuse_metrics(10, 2, 13)
