import numpy as np
import numpy.testing as npt
import pytest

from splatforge.errors import EmptyInput, InvalidColor, InvalidInput, MissingColors
from splatforge.geometry import PointCloud
from splatforge.prism import (
    PrismConfig,
    color_bin,
    prism_downsample,
    sweep,
)


def _random_cloud(n: int = 2000, palette: int = 40, seed: int = 0) -> PointCloud:
    rng = np.random.default_rng(seed)
    colors = rng.random((palette, 3))[rng.integers(0, palette, n)]
    return PointCloud(rng.normal(size=(n, 3)), colors)


def test_color_bin_examples():
    assert color_bin(np.array([0.0, 0.0, 0.0]), 8) == 0
    assert color_bin(np.array([1.0, 1.0, 1.0]), 8) == 511
    assert color_bin(np.array([0.5, 0.0, 1.0]), 2) == 5


def test_color_bin_channel_weights():
    b = 8
    # one step in red moves the flat index by b^2, green by b, blue by 1
    base = color_bin(np.array([0.0, 0.0, 0.0]), b)
    assert color_bin(np.array([1 / b, 0.0, 0.0]), b) == base + b * b
    assert color_bin(np.array([0.0, 1 / b, 0.0]), b) == base + b
    assert color_bin(np.array([0.0, 0.0, 1 / b]), b) == base + 1


def test_color_bin_full_intensity_clamps_to_last_bin():
    assert color_bin(np.array([[1.0, 0.0, 0.0]]), 4)[0] == 3 * 16


def test_color_bin_vector_scalar_agreement():
    rng = np.random.default_rng(1)
    colors = rng.random((50, 3))
    flat = color_bin(colors, 5)
    for row, want in zip(colors, flat):
        assert color_bin(row, 5) == want


def test_color_bin_validation():
    with pytest.raises(InvalidColor):
        color_bin(np.array([1.1, 0.0, 0.0]))
    with pytest.raises(InvalidColor):
        color_bin(np.array([-0.1, 0.0, 0.0]))
    with pytest.raises(InvalidColor):
        color_bin(np.array([np.nan, 0.0, 0.0]))
    with pytest.raises(InvalidColor):
        color_bin(np.array([0.0, 0.0]))
    with pytest.raises(InvalidInput):
        color_bin(np.array([0.0, 0.0, 0.0]), 0)


def test_capacity_caps_every_bin():
    cloud = _random_cloud()
    cfg = PrismConfig(capacity=3, bins_per_channel=4)
    out, report = prism_downsample(cloud, cfg)
    bins = color_bin(out.colors, 4)
    _, counts = np.unique(bins, return_counts=True)
    assert counts.max() <= 3
    assert report.output_points == len(out)
    assert report.reduction_ratio == pytest.approx(1 - len(out) / len(cloud))


def test_output_preserves_input_order():
    cloud = _random_cloud(500)
    out, _ = prism_downsample(cloud, PrismConfig(capacity=2, bins_per_channel=4))
    # survivors appear in their original relative order: positions are a
    # subsequence of the input
    pos = {tuple(p): i for i, p in enumerate(cloud.positions)}
    indices = [pos[tuple(p)] for p in out.positions]
    assert indices == sorted(indices)
    npt.assert_array_equal(cloud.colors[indices], out.colors)


def test_generous_capacity_is_identity():
    cloud = _random_cloud(300)
    out, report = prism_downsample(cloud, PrismConfig(capacity=10**6))
    npt.assert_array_equal(out.positions, cloud.positions)
    assert report.reduction_ratio == 0.0


def test_downsample_is_deterministic():
    cloud = _random_cloud()
    cfg = PrismConfig(capacity=5, bins_per_channel=8, seed=123)
    a, _ = prism_downsample(cloud, cfg)
    b, _ = prism_downsample(cloud, cfg)
    npt.assert_array_equal(a.positions, b.positions)


def test_seed_changes_survivor_choice_not_count():
    cloud = _random_cloud(4000, palette=10)
    out0, rep0 = prism_downsample(cloud, PrismConfig(capacity=5, seed=0))
    out1, rep1 = prism_downsample(cloud, PrismConfig(capacity=5, seed=1))
    # same per-bin counts, hence same total
    assert rep0.output_points == rep1.output_points
    assert not np.array_equal(out0.positions, out1.positions)


def test_report_histogram_counts_inputs():
    cloud = _random_cloud(1000, palette=7)
    out, report = prism_downsample(cloud, PrismConfig(capacity=4, bins_per_channel=4))
    bins = color_bin(cloud.colors, 4)
    uniq, counts = np.unique(bins, return_counts=True)
    assert report.histogram == {int(b): int(c) for b, c in zip(uniq, counts)}
    assert report.occupied_bins == uniq.size
    assert report.input_points == 1000
    # capacity law: output = sum over bins of min(count, k)
    assert report.output_points == int(np.minimum(counts, 4).sum())


def test_sweep_matches_individual_runs_and_nests():
    cloud = _random_cloud(3000, palette=12, seed=5)
    results = sweep(cloud, [1, 4, 16], bins_per_channel=8, seed=9)
    previous = None
    for k, out, report in results:
        single_out, single_rep = prism_downsample(
            cloud, PrismConfig(capacity=k, bins_per_channel=8, seed=9)
        )
        npt.assert_array_equal(out.positions, single_out.positions)
        assert report == single_rep
        survivors = {tuple(p) for p in out.positions}
        if previous is not None:
            assert previous <= survivors
        previous = survivors


def test_prism_validation():
    cloud = _random_cloud(10)
    with pytest.raises(InvalidInput):
        PrismConfig(capacity=0)
    with pytest.raises(InvalidInput):
        PrismConfig(capacity=1, bins_per_channel=0)
    with pytest.raises(MissingColors):
        prism_downsample(PointCloud(cloud.positions), PrismConfig(capacity=1))
    with pytest.raises(EmptyInput):
        prism_downsample(PointCloud(np.empty((0, 3)), np.empty((0, 3))),
                         PrismConfig(capacity=1))
    with pytest.raises(InvalidInput):
        sweep(cloud, [])
    with pytest.raises(InvalidInput):
        sweep(cloud, [1, 0])
    with pytest.raises(MissingColors):
        sweep(PointCloud(cloud.positions), [1])
