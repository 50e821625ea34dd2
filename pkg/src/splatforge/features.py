"""Corner features, binary descriptors, and overlap-driven keyframe selection.

detect_features runs a FAST-9 corner test (segment of 9 contiguous circle
pixels brighter/darker than center by a threshold) with 3x3 non-maximum
suppression, ranks survivors by corner response, and describes each with a
256-bit intensity-comparison descriptor sampled from a fixed seeded offset
pattern. Everything is deterministic: ties in response break on (y, x) and
the descriptor pattern is a module constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from splatforge.errors import ImageTooSmall, InvalidInput

MIN_IMAGE_SIDE = 32
_PATCH = 15  # descriptor sampling reach
_BORDER = _PATCH + 3

# 16-pixel Bresenham circle of radius 3, clockwise from 12 o'clock; (dy, dx)
_CIRCLE = np.array(
    [
        (-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
        (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1),
    ],
    dtype=np.int64,
)

# Fixed 256-pair descriptor pattern, gaussian offsets clipped to the patch.
_pat_rng = np.random.default_rng(0xB51EF)
_PAIRS = np.clip(
    np.rint(_pat_rng.normal(0.0, 6.5, size=(256, 4))), -_PATCH, _PATCH
).astype(np.int64)
del _pat_rng

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(1).astype(np.uint8)


@dataclass(frozen=True)
class FeatureSet:
    """Detected keypoints (x, y) with packed 256-bit descriptors."""

    keypoints: np.ndarray  # (N, 2) float64
    descriptors: np.ndarray  # (N, 32) uint8

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        de = np.asarray(self.descriptors, dtype=np.uint8)
        if kp.ndim != 2 or kp.shape[1] != 2:
            raise InvalidInput(f"keypoints must be (N, 2), got {kp.shape}")
        if de.shape != (kp.shape[0], 32):
            raise InvalidInput(
                f"descriptors must be ({kp.shape[0]}, 32), got {de.shape}"
            )
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "descriptors", de)

    def __len__(self) -> int:
        return self.keypoints.shape[0]


def _to_gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 3:
        img = img @ np.array([0.299, 0.587, 0.114])
    elif img.ndim != 2:
        raise InvalidInput(f"image must be HxW or HxWx3, got shape {img.shape}")
    return img.astype(np.float64)


def detect_features(
    image: np.ndarray, max_features: int = 1000, threshold: float = 20.0
) -> FeatureSet:
    """Detect up to max_features corners and describe them.

    Corners come out sorted by decreasing response (ties by y then x), and
    keypoints lie at least _BORDER pixels from every edge.
    """
    gray = _to_gray(image)
    h, w = gray.shape
    if min(h, w) < MIN_IMAGE_SIDE:
        raise ImageTooSmall(f"image {w}x{h} below minimum side {MIN_IMAGE_SIDE}")
    if max_features < 1:
        raise InvalidInput(f"max_features must be >= 1, got {max_features}")

    smooth = ndimage.uniform_filter(gray, size=3, mode="nearest")

    # Cheap cross pre-test: any 9-contiguous arc of the 16-circle contains
    # at least 2 of the 4 compass pixels, so those must be on one side.
    c = smooth[_BORDER:-_BORDER, _BORDER:-_BORDER]
    compass = [smooth[_BORDER + dy : h - _BORDER + dy, _BORDER + dx : w - _BORDER + dx]
               for dy, dx in ((-3, 0), (0, 3), (3, 0), (0, -3))]
    brighter = sum((p > c + threshold).astype(np.uint8) for p in compass)
    darker = sum((p < c - threshold).astype(np.uint8) for p in compass)
    cand_y, cand_x = np.nonzero((brighter >= 2) | (darker >= 2))
    if cand_y.size == 0:
        return FeatureSet(np.empty((0, 2)), np.empty((0, 32), dtype=np.uint8))
    cand_y = cand_y + _BORDER
    cand_x = cand_x + _BORDER

    circle = np.stack(
        [smooth[cand_y + dy, cand_x + dx] for dy, dx in _CIRCLE]
    )  # (16, C)
    center = smooth[cand_y, cand_x]
    diff = circle - center
    bright = diff > threshold
    dark = diff < -threshold

    # Contiguous arcs of length 9 over the wrapped circle; response is the
    # best arc's summed contrast beyond the threshold.
    response = np.zeros(cand_y.size)
    passed = np.zeros(cand_y.size, dtype=bool)
    bright2 = np.concatenate([bright, bright[:8]])
    dark2 = np.concatenate([dark, dark[:8]])
    excess_b = np.concatenate([diff - threshold, (diff - threshold)[:8]])
    excess_d = np.concatenate([-diff - threshold, (-diff - threshold)[:8]])
    for s in range(16):
        arc_b = bright2[s : s + 9].all(axis=0)
        arc_d = dark2[s : s + 9].all(axis=0)
        score_b = np.where(arc_b, excess_b[s : s + 9].sum(axis=0), 0.0)
        score_d = np.where(arc_d, excess_d[s : s + 9].sum(axis=0), 0.0)
        response = np.maximum(response, np.maximum(score_b, score_d))
        passed |= arc_b | arc_d

    cand_y, cand_x, response = cand_y[passed], cand_x[passed], response[passed]
    if cand_y.size == 0:
        return FeatureSet(np.empty((0, 2)), np.empty((0, 32), dtype=np.uint8))

    score_img = np.zeros((h, w))
    score_img[cand_y, cand_x] = response
    local_max = ndimage.maximum_filter(score_img, size=3, mode="constant")
    keep = score_img[cand_y, cand_x] >= local_max[cand_y, cand_x]
    cand_y, cand_x, response = cand_y[keep], cand_x[keep], response[keep]

    order = np.lexsort((cand_x, cand_y, -response))[:max_features]
    ys, xs = cand_y[order], cand_x[order]

    # Descriptor bits compare pairs of smoothed intensities around the corner.
    patch_smooth = ndimage.uniform_filter(gray, size=5, mode="nearest")
    p1 = patch_smooth[ys[:, None] + _PAIRS[None, :, 0], xs[:, None] + _PAIRS[None, :, 1]]
    p2 = patch_smooth[ys[:, None] + _PAIRS[None, :, 2], xs[:, None] + _PAIRS[None, :, 3]]
    bits = (p1 < p2).astype(np.uint8)
    descriptors = np.packbits(bits, axis=1)

    keypoints = np.stack([xs, ys], axis=1).astype(np.float64)
    return FeatureSet(keypoints, descriptors)


def hamming_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(Na, Nb) Hamming distance matrix between packed descriptor rows."""
    xored = a[:, None, :] ^ b[None, :, :]
    return _POPCOUNT[xored].sum(axis=2, dtype=np.int32)


def match_descriptors(a: FeatureSet, b: FeatureSet, ratio: float = 0.8):
    """Mutual nearest matches passing Lowe's ratio test.

    Returns (idx_a, idx_b) int64 arrays, sorted by idx_a.
    """
    if len(a) == 0 or len(b) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    d = hamming_distances(a.descriptors, b.descriptors)
    best_ab = np.argmin(d, axis=1)
    best_ba = np.argmin(d, axis=0)
    ia = np.arange(len(a))
    mutual = best_ba[best_ab] == ia
    if d.shape[1] >= 2:
        two = np.partition(d, 1, axis=1)[:, :2]
        ratio_ok = two[:, 0] < ratio * two[:, 1]
    else:
        ratio_ok = np.ones(len(a), dtype=bool)
    keep = mutual & ratio_ok
    return ia[keep].astype(np.int64), best_ab[keep].astype(np.int64)


def _normalize_points(pts: np.ndarray):
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    spread = np.linalg.norm(pts - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / spread if spread > 1e-12 else 1.0
    t = np.array(
        [[scale, 0.0, -scale * centroid[0]],
         [0.0, scale, -scale * centroid[1]],
         [0.0, 0.0, 1.0]]
    )
    return (pts - centroid) * scale, t


def _dlt_homographies(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Batched 4-point DLT: src/dst are (B, 4, 2); returns (B, 3, 3)."""
    b = src.shape[0]
    rows = np.zeros((b, 8, 9))
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    rows[:, 0::2, 0] = -x
    rows[:, 0::2, 1] = -y
    rows[:, 0::2, 2] = -1.0
    rows[:, 0::2, 6] = u * x
    rows[:, 0::2, 7] = u * y
    rows[:, 0::2, 8] = u
    rows[:, 1::2, 3] = -x
    rows[:, 1::2, 4] = -y
    rows[:, 1::2, 5] = -1.0
    rows[:, 1::2, 6] = v * x
    rows[:, 1::2, 7] = v * y
    rows[:, 1::2, 8] = v
    _, _, vh = np.linalg.svd(rows)
    return vh[:, -1, :].reshape(b, 3, 3)


def estimate_homography_overlap(
    a: FeatureSet,
    b: FeatureSet,
    seed: int = 0,
    iterations: int = 2000,
    inlier_px: float = 3.0,
    ratio: float = 0.8,
):
    """RANSAC a homography between two feature sets and score their overlap.

    Returns (overlap_score, inlier_count): the inlier count of the best
    4-point DLT hypothesis divided by min(len(a), len(b)). Scores 0.0 when
    fewer than 4 matches survive or no valid hypothesis appears.
    """
    if min(len(a), len(b)) == 0:
        return 0.0, 0
    ia, ib = match_descriptors(a, b, ratio=ratio)
    m = ia.size
    if m < 4:
        return 0.0, 0
    pa = a.keypoints[ia]
    pb = b.keypoints[ib]
    na, ta = _normalize_points(pa)
    nb, tb = _normalize_points(pb)

    rng = np.random.default_rng(seed)
    samples = rng.random((iterations, m)).argsort(axis=1)[:, :4]
    src = na[samples]
    dst = nb[samples]

    # Degenerate sample: any three of the four points collinear in either image.
    def collinear_any(p):
        flags = np.zeros(p.shape[0], dtype=bool)
        for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            e1 = p[:, tri[1]] - p[:, tri[0]]
            e2 = p[:, tri[2]] - p[:, tri[0]]
            area = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
            flags |= area < 1e-9
        return flags

    bad = collinear_any(src) | collinear_any(dst)
    hs = _dlt_homographies(src, dst)

    pa_h = np.concatenate([na, np.ones((m, 1))], axis=1)
    proj = hs @ pa_h.T  # (B, 3, M)
    wcoord = proj[:, 2, :]
    safe_w = np.where(np.abs(wcoord) > 1e-12, wcoord, np.nan)
    px = proj[:, 0, :] / safe_w
    py = proj[:, 1, :] / safe_w
    err2 = (px - nb[:, 0]) ** 2 + (py - nb[:, 1]) ** 2

    # Inlier threshold is in pixels; normalized coordinates rescale it.
    scale_b = tb[0, 0]
    thr2 = (inlier_px * scale_b) ** 2
    inliers = np.nan_to_num(err2, nan=np.inf) <= thr2
    counts = inliers.sum(axis=1)
    counts[bad] = 0
    best = int(np.argmax(counts))
    best_count = int(counts[best])
    if best_count < 4:
        return 0.0, 0
    score = best_count / min(len(a), len(b))
    return float(min(score, 1.0)), best_count


@dataclass(frozen=True)
class KeyframeDecision:
    frame_index: int
    selected: bool
    overlap_score: float
    inlier_count: int


def select_keyframes(
    frames,
    threshold: float = 0.35,
    seed: int = 0,
    max_features: int = 1000,
    fast_threshold: float = 20.0,
    iterations: int = 2000,
    inlier_px: float = 3.0,
    ratio: float = 0.8,
) -> list[KeyframeDecision]:
    """Greedy overlap-gated keyframe selection over a frame sequence.

    The first frame is always selected. Each later frame is compared with
    the most recent keyframe; it becomes a keyframe exactly when the
    homography overlap score drops below `threshold`.
    """
    if not 0.0 < threshold <= 1.0:
        raise InvalidInput(f"threshold must be in (0, 1], got {threshold}")
    decisions: list[KeyframeDecision] = []
    last_features: FeatureSet | None = None
    for i, frame in enumerate(frames):
        feats = detect_features(frame, max_features=max_features, threshold=fast_threshold)
        if i == 0:
            decisions.append(KeyframeDecision(0, True, 0.0, 0))
            last_features = feats
            continue
        score, inliers = estimate_homography_overlap(
            last_features, feats, seed=seed, iterations=iterations,
            inlier_px=inlier_px, ratio=ratio,
        )
        selected = score < threshold
        decisions.append(KeyframeDecision(i, selected, score, inliers))
        if selected:
            last_features = feats
    if not decisions:
        raise InvalidInput("frame sequence is empty")
    return decisions
