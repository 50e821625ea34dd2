"""PRISM: color-stratified point downsampling with per-bin capacity.

Points are bucketed into a B^3 RGB histogram (B bins per channel); each
occupied bin keeps at most k points. Which points survive is decided by a
seeded counter-hash rank per point, so the result is order-stable,
reproducible, and nested: the survivors at capacity k are a subset of the
survivors at any larger capacity for the same seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from splatforge.errors import EmptyInput, InvalidColor, InvalidInput, MissingColors
from splatforge.geometry import PointCloud

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer: bijective uint64 scramble."""
    x = (x + _GOLDEN) & _MASK
    x ^= x >> np.uint64(30)
    x = (x * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
    x ^= x >> np.uint64(27)
    x = (x * np.uint64(0x94D049BB133111EB)) & _MASK
    x ^= x >> np.uint64(31)
    return x


@dataclass(frozen=True)
class PrismConfig:
    capacity: int
    bins_per_channel: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidInput(f"capacity must be >= 1, got {self.capacity}")
        if self.bins_per_channel < 1:
            raise InvalidInput(
                f"bins_per_channel must be >= 1, got {self.bins_per_channel}"
            )


@dataclass(frozen=True)
class PrismReport:
    input_points: int
    output_points: int
    reduction_ratio: float  # 1 - output/input
    occupied_bins: int
    capacity: int
    bins_per_channel: int
    seed: int
    histogram: dict  # flat bin index -> input count (occupied bins only)


def color_bin(colors: np.ndarray, bins_per_channel: int = 8) -> np.ndarray:
    """Flat RGB histogram bin per color row.

    Each channel maps by floor(c * B), with c = 1.0 clamped into the last
    bin; the flat index is br*B^2 + bg*B + bb.
    """
    b = bins_per_channel
    if b < 1:
        raise InvalidInput(f"bins_per_channel must be >= 1, got {b}")
    c = np.asarray(colors, dtype=np.float64)
    squeeze = c.ndim == 1
    c = np.atleast_2d(c)
    if c.shape[-1] != 3:
        raise InvalidColor(f"colors must have 3 channels, got shape {c.shape}")
    if not np.isfinite(c).all() or c.min() < 0.0 or c.max() > 1.0:
        raise InvalidColor("colors must lie in [0, 1]")
    q = np.minimum((c * b).astype(np.int64), b - 1)
    flat = q[:, 0] * b * b + q[:, 1] * b + q[:, 2]
    return flat[0] if squeeze else flat


def _ranks(bins: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic per-point rank within its bin: hash(seed, bin, index)."""
    idx = np.arange(bins.shape[0], dtype=np.uint64)
    bin_stream = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ (bins.astype(np.uint64) * _GOLDEN & _MASK))
    return _mix64(bin_stream ^ idx)


def prism_downsample(cloud: PointCloud, config: PrismConfig):
    """Cap every occupied color bin at `config.capacity` points.

    Returns (downsampled cloud, PrismReport). Points keep their input
    relative order; which ones survive depends only on (seed, bin, index).
    """
    if cloud.colors is None:
        raise MissingColors("PRISM needs a colored cloud")
    if len(cloud) == 0:
        raise EmptyInput("PRISM input cloud is empty")
    bins = color_bin(cloud.colors, config.bins_per_channel)
    keep = _select(bins, _ranks(bins, config.seed), config.capacity)
    out = cloud.select(keep)
    uniq, counts = np.unique(bins, return_counts=True)
    report = PrismReport(
        input_points=len(cloud),
        output_points=len(out),
        reduction_ratio=1.0 - len(out) / len(cloud),
        occupied_bins=int(uniq.size),
        capacity=config.capacity,
        bins_per_channel=config.bins_per_channel,
        seed=config.seed,
        histogram={int(b): int(c) for b, c in zip(uniq, counts)},
    )
    return out, report


def _select(bins: np.ndarray, ranks: np.ndarray, capacity: int) -> np.ndarray:
    """Indices surviving the per-bin cap, ascending (original order)."""
    n = bins.shape[0]
    order = np.lexsort((np.arange(n), ranks, bins))
    sorted_bins = bins[order]
    # Position of each point within its bin after rank ordering.
    boundaries = np.flatnonzero(np.diff(sorted_bins)) + 1
    starts = np.concatenate([[0], boundaries])
    within = np.arange(n) - np.repeat(starts, np.diff(np.concatenate([starts, [n]])))
    return np.sort(order[within < capacity])


def sweep(cloud: PointCloud, capacities, bins_per_channel: int = 8, seed: int = 0):
    """PRISM at several capacities, reusing one binning/ranking pass.

    Returns a list of (capacity, cloud, report) in the given order. For a
    fixed seed the survivor sets are nested across capacities.
    """
    caps = [int(k) for k in capacities]
    if not caps:
        raise InvalidInput("no capacities given")
    if any(k < 1 for k in caps):
        raise InvalidInput(f"capacities must be >= 1, got {caps}")
    if cloud.colors is None:
        raise MissingColors("PRISM needs a colored cloud")
    if len(cloud) == 0:
        raise EmptyInput("PRISM input cloud is empty")
    bins = color_bin(cloud.colors, bins_per_channel)
    ranks = _ranks(bins, seed)
    uniq, counts = np.unique(bins, return_counts=True)
    histogram = {int(b): int(c) for b, c in zip(uniq, counts)}
    results = []
    for k in caps:
        keep = _select(bins, ranks, k)
        out = cloud.select(keep)
        results.append(
            (
                k,
                out,
                PrismReport(
                    input_points=len(cloud),
                    output_points=len(out),
                    reduction_ratio=1.0 - len(out) / len(cloud),
                    occupied_bins=int(uniq.size),
                    capacity=k,
                    bins_per_channel=bins_per_channel,
                    seed=seed,
                    histogram=histogram,
                ),
            )
        )
    return results
