import json

import numpy as np
import numpy.testing as npt
import pytest

from splatforge.errors import (
    EmptyInput,
    InsufficientPoints,
    InvalidColor,
    InvalidInput,
    MissingColors,
    ParseError,
)
from splatforge.geometry import PointCloud
from splatforge.gsexport import (
    ASSET_PROPERTIES,
    DEFAULT_OPACITY,
    SH_C0,
    build_asset,
    export_asset,
    fuse,
    init_scales,
    read_asset,
    rgb_to_sh_dc,
    sh_dc_to_rgb,
    write_asset_manifest,
)


def _colored_cloud(n: int = 50, seed: int = 0) -> PointCloud:
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(size=(n, 3)), rng.random((n, 3)))


# ---------------------------------------------------------------------------
# SH DC conversion
# ---------------------------------------------------------------------------


def test_sh_dc_anchor_values():
    npt.assert_allclose(rgb_to_sh_dc(np.array([0.5, 0.5, 0.5])), 0.0)
    npt.assert_allclose(rgb_to_sh_dc(np.array([1.0, 1.0, 1.0])), 0.5 / SH_C0)
    npt.assert_allclose(rgb_to_sh_dc(np.array([0.0, 0.0, 0.0])), -0.5 / SH_C0)


def test_sh_dc_roundtrip_is_tight():
    rng = np.random.default_rng(1)
    rgb = rng.random((200, 3))
    back = sh_dc_to_rgb(rgb_to_sh_dc(rgb))
    assert np.abs(back - rgb).max() < 1e-12


def test_sh_dc_rejects_out_of_range_colors():
    with pytest.raises(InvalidColor):
        rgb_to_sh_dc(np.array([1.2, 0.0, 0.0]))
    with pytest.raises(InvalidColor):
        rgb_to_sh_dc(np.array([-0.1, 0.0, 0.0]))
    with pytest.raises(InvalidColor):
        rgb_to_sh_dc(np.array([np.nan, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# scales
# ---------------------------------------------------------------------------


def test_init_scales_match_brute_force():
    cloud = _colored_cloud(120, seed=2)
    scales = init_scales(cloud)
    diff = cloud.positions[:, None, :] - cloud.positions[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(d, np.inf)
    mean3 = np.sort(d, axis=1)[:, :3].mean(axis=1)
    expected = np.log(np.maximum(mean3, 1e-7))
    npt.assert_allclose(scales, np.repeat(expected[:, None], 3, axis=1),
                        atol=1e-12)


def test_init_scales_floor_coincident_points():
    pts = np.zeros((5, 3))
    pts[4] = [1.0, 0.0, 0.0]
    scales = init_scales(PointCloud(pts))
    # the four stacked points see three zero-distance neighbors
    npt.assert_allclose(scales[:4], np.log(1e-7), atol=1e-12)
    assert scales.shape == (5, 3)


def test_init_scales_need_four_points():
    with pytest.raises(InsufficientPoints):
        init_scales(PointCloud(np.zeros((3, 3))))


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------


def test_fuse_drops_sfm_points_near_lidar():
    lidar = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                       np.zeros((2, 3)))
    sfm = PointCloud(
        np.array([[0.05, 0.0, 0.0], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]]),
        np.ones((3, 3)),
    )
    fused, provenance = fuse(sfm, lidar, dedup_radius=0.1)
    # first sfm point sits within the radius of a lidar point and is dropped
    npt.assert_array_equal(
        fused.positions,
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]],
    )
    assert provenance.tolist() == ["lidar", "lidar", "sfm", "sfm"]
    npt.assert_array_equal(fused.colors[:2], 0.0)
    npt.assert_array_equal(fused.colors[2:], 1.0)


def test_fuse_zero_radius_drops_exact_duplicates_only():
    lidar = _colored_cloud(20, seed=3)
    sfm = PointCloud(np.vstack([lidar.positions[:5], lidar.positions[:5] + 0.5]),
                     np.full((10, 3), 0.5))
    fused, provenance = fuse(sfm, lidar, dedup_radius=0.0)
    assert (provenance == "sfm").sum() == 5
    assert len(fused) == 25


def test_fuse_empty_sides():
    cloud = _colored_cloud(10)
    out, prov = fuse(PointCloud(np.empty((0, 3)), np.empty((0, 3))), cloud, 0.1)
    assert out is cloud and (prov == "lidar").all()
    out, prov = fuse(cloud, PointCloud(np.empty((0, 3)), np.empty((0, 3))), 0.1)
    assert out is cloud and (prov == "sfm").all()
    with pytest.raises(EmptyInput):
        fuse(PointCloud(np.empty((0, 3)), np.empty((0, 3))),
             PointCloud(np.empty((0, 3)), np.empty((0, 3))), 0.1)


def test_fuse_validation():
    cloud = _colored_cloud(10)
    bare = PointCloud(cloud.positions)
    with pytest.raises(MissingColors):
        fuse(bare, cloud, 0.1)
    with pytest.raises(InvalidInput):
        fuse(cloud, cloud, -1.0)


# ---------------------------------------------------------------------------
# asset build + I/O
# ---------------------------------------------------------------------------


def test_build_asset_attributes():
    cloud = _colored_cloud(30, seed=4)
    provenance = np.array(["sfm"] * 10 + ["lidar"] * 20)
    asset = build_asset(cloud, provenance)
    assert len(asset) == 30
    npt.assert_array_equal(asset.means, cloud.positions)
    npt.assert_allclose(asset.sh_dc, (cloud.colors - 0.5) / SH_C0)
    expected_logit = np.log(DEFAULT_OPACITY / (1 - DEFAULT_OPACITY))
    npt.assert_allclose(asset.opacity_logit, expected_logit)
    npt.assert_array_equal(asset.rotations[:, 0], 1.0)
    npt.assert_array_equal(asset.rotations[:, 1:], 0.0)
    npt.assert_allclose(asset.log_scales, init_scales(cloud))
    assert asset.provenance.tolist() == provenance.tolist()


def test_build_asset_validation():
    cloud = _colored_cloud(10)
    prov = np.full(10, "lidar")
    with pytest.raises(MissingColors):
        build_asset(PointCloud(cloud.positions), prov)
    with pytest.raises(InvalidInput):
        build_asset(cloud, prov, opacity=1.0)
    with pytest.raises(InvalidInput):
        build_asset(cloud, np.full(9, "lidar"))
    with pytest.raises(InvalidInput):
        build_asset(cloud, np.full(10, "other"))
    with pytest.raises(InsufficientPoints):
        build_asset(_colored_cloud(3), np.full(3, "lidar"))


def test_export_read_roundtrip(tmp_path):
    cloud = _colored_cloud(40, seed=5)
    asset = build_asset(cloud, np.full(40, "lidar"))
    path = str(tmp_path / "asset.ply")
    export_asset(asset, path)
    back = read_asset(path)
    assert len(back) == 40
    # float32 storage bounds the round-trip error
    npt.assert_allclose(back.means, asset.means, atol=1e-6)
    npt.assert_allclose(back.sh_dc, asset.sh_dc, atol=1e-6)
    npt.assert_allclose(back.opacity_logit, asset.opacity_logit, atol=1e-6)
    npt.assert_allclose(back.log_scales, asset.log_scales, atol=1e-6)
    npt.assert_array_equal(back.rotations, asset.rotations)
    assert (back.provenance == "lidar").all()


def test_export_is_byte_deterministic(tmp_path):
    cloud = _colored_cloud(25, seed=6)
    asset = build_asset(cloud, np.full(25, "sfm"))
    p1, p2 = str(tmp_path / "a.ply"), str(tmp_path / "b.ply")
    export_asset(asset, p1)
    export_asset(asset, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_exported_header_lists_all_properties(tmp_path):
    asset = build_asset(_colored_cloud(5, seed=7), np.full(5, "lidar"))
    path = str(tmp_path / "asset.ply")
    export_asset(asset, path)
    header = open(path, "rb").read().split(b"end_header")[0].decode()
    for prop in ASSET_PROPERTIES:
        assert f"property float {prop}\n" in header


def test_read_asset_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"not a ply at all")
    with pytest.raises(ParseError):
        read_asset(str(bad))

    wrong_layout = tmp_path / "wrong.ply"
    wrong_layout.write_bytes(
        b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        b"property float x\nend_header\n" + b"\x00" * 4
    )
    with pytest.raises(ParseError):
        read_asset(str(wrong_layout))


def test_read_asset_detects_truncation(tmp_path):
    asset = build_asset(_colored_cloud(10, seed=8), np.full(10, "lidar"))
    path = tmp_path / "asset.ply"
    export_asset(asset, str(path))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ParseError):
        read_asset(str(path))


def test_asset_manifest_content(tmp_path):
    cloud = _colored_cloud(12, seed=9)
    asset = build_asset(cloud, np.array(["sfm"] * 5 + ["lidar"] * 7))
    path = tmp_path / "manifest.json"
    write_asset_manifest(asset, str(path), extra={"k": 5})
    data = json.loads(path.read_text())
    assert data["total"] == 12
    assert data["sfm_points"] == 5
    assert data["lidar_points"] == 7
    assert data["k"] == 5
    assert data["properties"] == list(ASSET_PROPERTIES)
    assert data["opacity_logit"] == pytest.approx(np.log(1 / 9))
