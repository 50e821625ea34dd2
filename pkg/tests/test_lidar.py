import numpy as np
import numpy.testing as npt
import pytest

from splatforge.erp import FACE_ORDER
from splatforge.errors import (
    EmptyInput,
    InvalidInput,
    MissingInput,
    OdometryBreak,
    UnsortedTimestamps,
)
from splatforge.geometry import PointCloud, RigidTransform
from splatforge.lidar import (
    Calibration,
    TemporalMatch,
    TimedScan,
    colorize,
    load_calibration,
    match_timestamps,
    odometry_chain,
    save_calibration,
)
from splatforge.registration import IcpParams
from splatforge.sfm import CameraIntrinsics

# ---------------------------------------------------------------------------
# temporal matching
# ---------------------------------------------------------------------------


def test_nearest_within_tolerance():
    matches = match_timestamps([0.0, 1.0, 2.0], [0.04, 1.06, 1.94], 0.1)
    assert matches == [
        TemporalMatch(0, 0, pytest.approx(0.04)),
        TemporalMatch(1, 1, pytest.approx(0.06)),
        TemporalMatch(2, 2, pytest.approx(-0.06)),
    ]


def test_tie_takes_earlier_scan():
    matches = match_timestamps([1.0], [0.9, 1.1], 0.2)
    assert matches == [TemporalMatch(0, 0, pytest.approx(-0.1))]


def test_frames_without_scan_are_dropped():
    matches = match_timestamps([0.0, 5.0], [0.01], 0.1)
    assert [m.frame_index for m in matches] == [0]


def test_each_scan_pairs_at_most_once():
    matches = match_timestamps([0.0, 0.05], [0.02], 0.1)
    assert matches == [TemporalMatch(0, 0, pytest.approx(0.02))]


def test_used_scan_forces_next_best():
    matches = match_timestamps([0.0, 0.1], [0.08, 0.5], 0.5)
    assert [(m.frame_index, m.scan_index) for m in matches] == [(0, 0), (1, 1)]


def test_empty_inputs_match_nothing():
    assert match_timestamps([], [1.0], 0.1) == []
    assert match_timestamps([1.0], [], 0.1) == []


def test_timestamp_validation():
    with pytest.raises(UnsortedTimestamps):
        match_timestamps([1.0, 0.0], [0.0], 0.1)
    with pytest.raises(UnsortedTimestamps):
        match_timestamps([0.0], [1.0, 1.0], 0.1)
    with pytest.raises(InvalidInput):
        match_timestamps([0.0], [0.0], -0.1)
    with pytest.raises(InvalidInput):
        match_timestamps([0.0], [0.0], np.inf)


# ---------------------------------------------------------------------------
# odometry
# ---------------------------------------------------------------------------


def _corner_cloud(n: int = 16, extent: float = 1.0) -> PointCloud:
    """Three mutually perpendicular planes meeting at the origin."""
    t = np.linspace(0.05, extent, n)
    g1, g2 = np.meshgrid(t, t)
    a, b = g1.ravel(), g2.ravel()
    zeros = np.zeros_like(a)
    pts = np.concatenate([
        np.stack([a, b, zeros], axis=1),
        np.stack([a, zeros, b], axis=1),
        np.stack([zeros, a, b], axis=1),
    ])
    return PointCloud(pts)


def _small_motion() -> RigidTransform:
    ang = np.deg2rad(1.5)
    rot = np.array([
        [np.cos(ang), -np.sin(ang), 0.0],
        [np.sin(ang), np.cos(ang), 0.0],
        [0.0, 0.0, 1.0],
    ])
    return RigidTransform(rot, np.array([0.02, -0.01, 0.015]))


ICP = IcpParams(max_corr_dist=0.12)


def test_static_scans_yield_identity_trajectory():
    cloud = _corner_cloud()
    scans = [TimedScan(float(i), cloud) for i in range(3)]
    result = odometry_chain(scans, ICP)
    for pose in result.trajectory:
        npt.assert_allclose(pose.rotation, np.eye(3), atol=1e-6)
        npt.assert_allclose(pose.translation, 0.0, atol=1e-6)
    assert result.raw_points == 3 * len(cloud)
    assert all(fitness == pytest.approx(1.0) for fitness, _, _ in result.pair_stats)


def test_chained_motion_is_recovered():
    base = _corner_cloud()
    step = _small_motion()
    poses = [RigidTransform.identity(), step, step.compose(step)]
    scans = [
        TimedScan(float(i), PointCloud(pose.inverse().apply(base.positions)))
        for i, pose in enumerate(poses)
    ]
    result = odometry_chain(scans, ICP)
    for got, want in zip(result.trajectory, poses):
        npt.assert_allclose(got.rotation, want.rotation, atol=1e-6)
        npt.assert_allclose(got.translation, want.translation, atol=1e-6)


def test_map_cloud_is_deduplicated():
    cloud = _corner_cloud()
    scans = [TimedScan(float(i), cloud) for i in range(2)]
    result = odometry_chain(scans, ICP, map_voxel=0.01)
    # identical overlapping scans collapse to one copy
    assert len(result.map_cloud) <= len(cloud)
    assert result.raw_points == 2 * len(cloud)


def test_fitness_floor_breaks_with_partial_results():
    near = _corner_cloud()
    far = PointCloud(near.positions + 50.0)
    scans = [TimedScan(0.0, near), TimedScan(1.0, far)]
    with pytest.raises(OdometryBreak) as excinfo:
        odometry_chain(scans, IcpParams(max_corr_dist=200.0), fitness_floor=1.01)
    err = excinfo.value
    assert err.index == 1
    assert err.fitness < 1.01
    assert len(err.trajectory) == 1
    assert len(err.map_cloud) > 0
    assert len(err.pair_stats) == 1


def test_odometry_validation():
    with pytest.raises(EmptyInput):
        odometry_chain([], ICP)
    cloud = _corner_cloud(8)
    with pytest.raises(UnsortedTimestamps):
        odometry_chain([TimedScan(1.0, cloud), TimedScan(0.5, cloud)], ICP)


# ---------------------------------------------------------------------------
# calibration + colorization
# ---------------------------------------------------------------------------

PALETTE = {
    "front": (255, 0, 0),
    "right": (0, 255, 0),
    "up": (0, 0, 255),
    "back": (255, 255, 0),
    "left": (255, 0, 255),
    "down": (0, 255, 255),
}


def _calibration(size: int = 64) -> Calibration:
    half = size / 2.0 - 0.5
    cam = CameraIntrinsics(0, "PINHOLE", size, size, half, half, half, half)
    return Calibration(RigidTransform.identity(),
                       {name: cam for name in FACE_ORDER})


def _palette_faces(size: int = 64, scale: float = 1.0) -> dict:
    return {
        name: np.clip(np.full((size, size, 3), color, dtype=np.float64) * scale,
                      0, 255).astype(np.uint8)
        for name, color in PALETTE.items()
    }


def test_calibration_requires_all_faces():
    cam = CameraIntrinsics(0, "PINHOLE", 64, 64, 31.5, 31.5, 31.5, 31.5)
    with pytest.raises(InvalidInput):
        Calibration(RigidTransform.identity(),
                    {name: cam for name in FACE_ORDER[:-1]})


def test_calibration_roundtrip(tmp_path):
    calib = _calibration()
    path = str(tmp_path / "calibration.json")
    save_calibration(calib, path)
    back = load_calibration(path)
    npt.assert_allclose(back.lidar_to_camera.matrix(),
                        calib.lidar_to_camera.matrix(), atol=1e-15)
    assert back.faces.keys() == calib.faces.keys()
    for name in FACE_ORDER:
        got, want = back.faces[name], calib.faces[name]
        assert (got.width, got.height, got.fx, got.fy, got.cx, got.cy) == (
            want.width, want.height, want.fx, want.fy, want.cx, want.cy)


def test_calibration_load_errors(tmp_path):
    with pytest.raises(MissingInput):
        load_calibration(str(tmp_path / "nope.json"))
    bad = tmp_path / "bad.json"
    bad.write_text('{"faces": {}}')
    with pytest.raises(InvalidInput):
        load_calibration(str(bad))


def test_points_take_colors_from_their_faces():
    positions = np.array([
        [0.0, 0.0, 2.0],   # front
        [2.0, 0.0, 0.0],   # right
        [0.0, 2.0, 0.0],   # up
        [0.0, 0.0, -2.0],  # back
        [-2.0, 0.0, 0.0],  # left
        [0.0, -2.0, 0.0],  # down
    ])
    cloud = PointCloud(positions)
    out, mask, stats = colorize(
        cloud, [RigidTransform.identity()], _calibration(), [_palette_faces()]
    )
    assert mask.all()
    assert stats["colorized_fraction"] == 1.0
    assert stats["total_points"] == 6 and stats["views"] == 1
    expected = np.array([PALETTE[name] for name in FACE_ORDER]) / 255.0
    npt.assert_allclose(out.colors, expected, atol=1e-12)
    npt.assert_array_equal(out.positions, positions)


def test_occluded_point_stays_uncolored():
    cloud = PointCloud(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 3.0]]))
    out, mask, stats = colorize(
        cloud, [RigidTransform.identity()], _calibration(), [_palette_faces()],
        depth_tolerance=0.1,
    )
    npt.assert_array_equal(mask, [True, False])
    assert stats["colored_points"] == 1
    npt.assert_array_equal(out.positions, [[0.0, 0.0, 1.0]])
    npt.assert_allclose(out.colors, [[1.0, 0.0, 0.0]], atol=1e-12)


def test_nearest_view_wins():
    cloud = PointCloud(np.array([[0.0, 0.0, 2.0]]))
    poses = [
        RigidTransform.identity(),
        RigidTransform(np.eye(3), np.array([0.0, 0.0, 1.0])),  # closer sensor
    ]
    views = [_palette_faces(), _palette_faces(scale=0.5)]
    out, mask, _ = colorize(cloud, poses, _calibration(), views)
    assert mask.all()
    expected = views[1]["front"][0, 0].astype(np.float64) / 255.0
    assert expected[0] < 1.0  # distinguishable from the farther view's red
    npt.assert_allclose(out.colors, [expected], atol=1e-12)


def test_colorize_validation():
    cloud = PointCloud(np.array([[0.0, 0.0, 2.0]]))
    calib = _calibration()
    with pytest.raises(InvalidInput):
        colorize(cloud, [RigidTransform.identity()], calib, [])
    with pytest.raises(MissingInput):
        colorize(cloud, [], calib, [])
    with pytest.raises(EmptyInput):
        colorize(PointCloud(np.empty((0, 3))), [RigidTransform.identity()],
                 calib, [_palette_faces()])
    with pytest.raises(InvalidInput):
        colorize(cloud, [RigidTransform.identity()], calib, [_palette_faces()],
                 zbuffer_cell=0)
