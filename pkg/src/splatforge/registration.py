"""Point-cloud registration: normals, FPFH descriptors, RANSAC + weighted ICP.

The refinement stage minimizes the weighted point-to-point objective

    E(R, t) = sum_j w_j * || R p_j + t - q_j ||^2

over correspondences within a maximum distance c, with Tukey biweights
w = (1 - (r/c)^2)^2 recomputed each iteration. Each solve is the closed-form
weighted Kabsch step, which cannot increase E for fixed correspondences and
weights; that invariant is asserted on every iteration and the per-iteration
objective values are kept in the result for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from splatforge.errors import (
    AlignmentGateFailed,
    EmptyInput,
    IcpObjectiveError,
    InsufficientPoints,
    InvalidInput,
    MissingNormals,
    NoCorrespondences,
    RegistrationFailed,
)
from splatforge.geometry import (
    PointCloud,
    RigidTransform,
    SpatialIndex,
    apply_transform,
)

FPFH_BINS = 11
FPFH_DIM = 3 * FPFH_BINS


# ---------------------------------------------------------------------------
# Normal estimation
# ---------------------------------------------------------------------------

def estimate_normals(cloud: PointCloud, knn: int = 30, viewpoint=None):
    """Per-point normals from PCA over k nearest neighbors.

    Returns (cloud with unit normals, degenerate mask). A neighborhood is
    degenerate when its covariance has no unique smallest direction
    (collinear or coincident neighbors); such points get normal +y.

    Orientation: normals point away from the cloud centroid, or toward
    `viewpoint` when given. Sign ties fall back to making the largest
    component positive.
    """
    n = len(cloud)
    if n <= knn:
        raise InsufficientPoints(f"need more than knn={knn} points, got {n}")
    index = SpatialIndex(cloud)
    idx, _ = index.query_knn(cloud.positions, knn)
    neigh = cloud.positions[idx]  # (N, k, 3)
    mean = neigh.mean(axis=1, keepdims=True)
    centered = neigh - mean
    cov = np.einsum("nki,nkj->nij", centered, centered) / knn
    vals, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = vecs[:, :, 0]
    degenerate = vals[:, 1] <= np.maximum(vals[:, 2] * 1e-9, 1e-30)
    normals[degenerate] = [0.0, 1.0, 0.0]

    ref = (
        np.asarray(viewpoint, dtype=np.float64) - cloud.positions
        if viewpoint is not None
        else cloud.positions - cloud.positions.mean(axis=0)
    )
    dots = np.einsum("ni,ni->n", normals, ref)
    flip = dots < 0
    normals[flip] = -normals[flip]
    # Ambiguous orientation (normal orthogonal to the reference direction):
    # canonicalize on the largest-magnitude component.
    amb = np.abs(dots) <= 1e-12 * np.linalg.norm(ref, axis=1)
    if np.any(amb):
        lead = np.take_along_axis(
            normals[amb], np.abs(normals[amb]).argmax(axis=1)[:, None], axis=1
        )[:, 0]
        normals[amb] *= np.where(lead < 0, -1.0, 1.0)[:, None]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals), degenerate


# ---------------------------------------------------------------------------
# FPFH
# ---------------------------------------------------------------------------

def _pair_angles(p_i, n_i, p_j, n_j):
    """Darboux-frame angle features (alpha, phi, theta) for point pairs.

    The pair is normalized so the source point is the one whose normal makes
    the smaller angle with the connecting line (ties keep i as source),
    making the features symmetric in (i, j). Pairs whose frame is degenerate
    (coincident points or normal parallel to the line) return valid=False.
    """
    d = p_j - p_i
    dist = np.linalg.norm(d, axis=1)
    valid = dist > 1e-12
    dhat = np.where(valid[:, None], d / np.where(valid, dist, 1.0)[:, None], 0.0)
    a1 = np.einsum("ni,ni->n", n_i, dhat)
    a2 = np.einsum("ni,ni->n", n_j, dhat)
    swap = np.abs(a1) < np.abs(a2)
    u = np.where(swap[:, None], n_j, n_i)
    n_t = np.where(swap[:, None], n_i, n_j)
    ds = np.where(swap[:, None], -dhat, dhat)
    phi = np.where(swap, -a2, a1)

    v = np.cross(ds, u)
    vn = np.linalg.norm(v, axis=1)
    valid &= vn > 1e-12
    v = v / np.where(valid, vn, 1.0)[:, None]
    w = np.cross(u, v)
    alpha = np.einsum("ni,ni->n", v, n_t)
    theta = np.arctan2(np.einsum("ni,ni->n", w, n_t), np.einsum("ni,ni->n", u, n_t))
    return alpha, phi, theta, dist, valid


def _angle_bins(alpha, phi, theta) -> np.ndarray:
    """Joint (alpha, phi, theta) values to flat 33-d histogram column index."""
    ba = np.clip(((alpha + 1.0) / 2.0 * FPFH_BINS).astype(np.int64), 0, FPFH_BINS - 1)
    bp = np.clip(((phi + 1.0) / 2.0 * FPFH_BINS).astype(np.int64), 0, FPFH_BINS - 1)
    bt = np.clip(
        ((theta + np.pi) / (2.0 * np.pi) * FPFH_BINS).astype(np.int64),
        0,
        FPFH_BINS - 1,
    )
    return ba, bp + FPFH_BINS, bt + 2 * FPFH_BINS


def compute_fpfh(cloud: PointCloud, radius: float):
    """33-dimensional FPFH descriptors over a radius neighborhood.

    Returns (descriptors (N, 33) float64, isolated mask). Each descriptor
    is three 11-bin histograms (alpha, phi, theta); occupied blocks are
    normalized to sum 100. Points with no neighbors within `radius` get a
    zero descriptor and are flagged isolated.
    """
    if cloud.normals is None:
        raise MissingNormals("FPFH needs normals; run estimate_normals first")
    if not (radius > 0 and np.isfinite(radius)):
        raise InvalidInput(f"radius must be positive, got {radius}")
    n = len(cloud)
    index = SpatialIndex(cloud)
    indptr, nbr_idx, nbr_dist = index.query_radius(cloud.positions, radius)
    counts = np.diff(indptr)
    qid = np.repeat(np.arange(n, dtype=np.int64), counts)
    not_self = nbr_idx != qid
    src = qid[not_self]
    dst = nbr_idx[not_self]
    dist = nbr_dist[not_self]
    n_neighbors = np.bincount(src, minlength=n)
    isolated = n_neighbors == 0

    # Features are symmetric after source-swap, so compute each unordered
    # pair once and credit both endpoints' SPFH histograms.
    once = src < dst
    pi, pj = src[once], dst[once]
    alpha, phi, theta, pdist, valid = _pair_angles(
        cloud.positions[pi], cloud.normals[pi],
        cloud.positions[pj], cloud.normals[pj],
    )
    pi, pj = pi[valid], pj[valid]
    ba, bp, bt = _angle_bins(alpha[valid], phi[valid], theta[valid])

    spfh = np.zeros((n, FPFH_DIM))
    for owner in (pi, pj):
        for bins in (ba, bp, bt):
            np.add.at(spfh, (owner, bins), 1.0)

    # Weighted neighbor pooling: F_i = S_i + mean_j (1/d_ij) S_j.
    inv_d = 1.0 / np.maximum(dist, 1e-12)
    weights = sparse.csr_matrix((inv_d, (src, dst)), shape=(n, n))
    pooled = weights @ spfh
    denom = np.maximum(n_neighbors, 1)[:, None]
    fpfh = spfh + pooled / denom

    # Normalize each 11-bin block of occupied rows to sum 100.
    for b in range(3):
        block = fpfh[:, b * FPFH_BINS : (b + 1) * FPFH_BINS]
        sums = block.sum(axis=1, keepdims=True)
        np.divide(block, sums / 100.0, out=block, where=sums > 0)
    fpfh[isolated] = 0.0
    return fpfh, isolated


# ---------------------------------------------------------------------------
# Weighted Kabsch
# ---------------------------------------------------------------------------

def weighted_kabsch(src: np.ndarray, dst: np.ndarray, weights: np.ndarray) -> RigidTransform:
    """Closed-form weighted rigid alignment src -> dst (SVD, det +1 fix)."""
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise InvalidInput("weights must have positive sum")
    wn = (w / total)[:, None]
    mu_s = (wn * src).sum(axis=0)
    mu_d = (wn * dst).sum(axis=0)
    h = (src - mu_s).T @ (wn * (dst - mu_d))
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, mu_d - rot @ mu_s)


def _batched_kabsch(src: np.ndarray, dst: np.ndarray):
    """Unweighted Kabsch over batches: (B, m, 3) x2 -> (B, 3, 3), (B, 3)."""
    mu_s = src.mean(axis=1, keepdims=True)
    mu_d = dst.mean(axis=1, keepdims=True)
    h = np.einsum("bmi,bmj->bij", src - mu_s, dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    det = np.linalg.det(np.einsum("bij,bkj->bik", vt.transpose(0, 2, 1), u))
    fix = np.ones((src.shape[0], 3))
    fix[:, 2] = np.sign(det)
    rot = np.einsum("bji,bj,bkj->bik", vt, fix, u)
    t = mu_d[:, 0, :] - np.einsum("bij,bj->bi", rot, mu_s[:, 0, :])
    return rot, t


# ---------------------------------------------------------------------------
# ICP refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IcpParams:
    max_corr_dist: float
    max_iterations: int = 50
    rel_fitness_eps: float = 1e-6
    rel_rmse_eps: float = 1e-6
    weight_scheme: str = "tukey"  # or "uniform"

    def __post_init__(self):
        if not (self.max_corr_dist > 0 and np.isfinite(self.max_corr_dist)):
            raise InvalidInput(f"max_corr_dist must be positive, got {self.max_corr_dist}")
        if self.max_iterations < 1:
            raise InvalidInput("max_iterations must be >= 1")
        if self.weight_scheme not in ("tukey", "uniform"):
            raise InvalidInput(f"unknown weight scheme {self.weight_scheme!r}")


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    fitness: float
    inlier_rmse: float
    iterations: int
    correspondences: int
    converged: bool = False
    objective_history: tuple = ()


def _tukey_weights(residuals: np.ndarray, c: float) -> np.ndarray:
    r = np.minimum(residuals / c, 1.0)
    return (1.0 - r * r) ** 2


def icp_refine(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform | None = None,
    params: IcpParams | None = None,
) -> RegistrationResult:
    """Weighted point-to-point ICP from an initial transform.

    Correspondences are nearest target neighbors within max_corr_dist;
    weights follow the configured scheme with the Tukey cutoff at
    max_corr_dist. Iteration stops at max_iterations or when both fitness
    and inlier RMSE change by less than the relative epsilons.

    Raises NoCorrespondences when the initial transform yields no pairs in
    range, and IcpObjectiveError if a solve step ever increases the fixed-
    correspondence objective (which the closed-form step should preclude).
    """
    if params is None:
        raise InvalidInput("params is required")
    if len(source) == 0 or len(target) == 0:
        raise EmptyInput("ICP needs non-empty source and target")
    transform = init if init is not None else RigidTransform.identity()
    index = SpatialIndex(target)
    c = params.max_corr_dist

    fitness = 0.0
    rmse = 0.0
    history: list[float] = []
    n_corr = 0
    converged = False
    iterations = 0
    stepped = False  # transform changed since (fitness, rmse) were computed
    for it in range(params.max_iterations):
        moved = transform.apply(source.positions)
        nn_idx, nn_dist = index.nearest(moved)
        in_range = nn_dist <= c
        n_corr = int(np.count_nonzero(in_range))
        if n_corr == 0:
            if it == 0:
                raise NoCorrespondences(
                    f"no pairs within max_corr_dist={c} at the initial transform"
                )
            break
        new_fitness = n_corr / len(source)
        new_rmse = float(np.sqrt(np.mean(nn_dist[in_range] ** 2)))
        small = (
            abs(new_fitness - fitness) <= params.rel_fitness_eps * max(new_fitness, 1e-12)
            and abs(new_rmse - rmse) <= params.rel_rmse_eps * max(new_rmse, 1e-12)
        )
        fitness, rmse = new_fitness, new_rmse
        stepped = False
        if rmse == 0.0 or (it > 0 and small):
            # Zero residual: the solve step is the identity, so stop here.
            converged = True
            break

        src_pts = source.positions[in_range]
        dst_pts = target.positions[nn_idx[in_range]]
        res = nn_dist[in_range]
        if params.weight_scheme == "tukey":
            w = _tukey_weights(res, c)
        else:
            w = np.ones_like(res)
        if w.sum() <= 0:
            break

        def objective(tf: RigidTransform) -> float:
            diff = tf.apply(src_pts) - dst_pts
            return float((w * np.einsum("ni,ni->n", diff, diff)).sum())

        obj_before = objective(transform)
        step = weighted_kabsch(src_pts, dst_pts, w)
        obj_after = objective(step)
        if obj_after > obj_before * (1.0 + 1e-9) + 1e-12:
            raise IcpObjectiveError(
                f"objective rose {obj_before:.6e} -> {obj_after:.6e} at iteration {it}"
            )
        history.append(obj_after)
        transform = step
        stepped = True
        iterations = it + 1

    if stepped:
        # Loop exhausted right after a solve; refresh metrics for the final
        # transform so the report matches what we return.
        _, nn_dist = index.nearest(transform.apply(source.positions))
        in_range = nn_dist <= c
        n_corr = int(np.count_nonzero(in_range))
        fitness = n_corr / len(source)
        rmse = float(np.sqrt(np.mean(nn_dist[in_range] ** 2))) if n_corr else 0.0

    return RegistrationResult(
        transform=transform,
        fitness=fitness,
        inlier_rmse=rmse,
        iterations=iterations,
        correspondences=n_corr,
        converged=converged,
        objective_history=tuple(history),
    )


def evaluate_registration(
    source: PointCloud,
    target: PointCloud,
    transform: RigidTransform,
    max_corr_dist: float,
):
    """(fitness, inlier_rmse, n_inliers) of a fixed transform."""
    index = SpatialIndex(target)
    _, nn_dist = index.nearest(transform.apply(source.positions))
    in_range = nn_dist <= max_corr_dist
    n = int(np.count_nonzero(in_range))
    fitness = n / len(source)
    rmse = float(np.sqrt(np.mean(nn_dist[in_range] ** 2))) if n else 0.0
    return fitness, rmse, n


# ---------------------------------------------------------------------------
# Global registration (FPFH correspondences + RANSAC)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalRegParams:
    max_corr_dist: float
    iterations: int = 4000
    edge_similarity: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (self.max_corr_dist > 0 and np.isfinite(self.max_corr_dist)):
            raise InvalidInput("max_corr_dist must be positive")
        if self.iterations < 1:
            raise InvalidInput("iterations must be >= 1")
        if not 0 < self.edge_similarity <= 1:
            raise InvalidInput("edge_similarity must be in (0, 1]")


def _descriptor_matches(src_fpfh: np.ndarray, dst_fpfh: np.ndarray) -> np.ndarray:
    """Nearest dst descriptor per src row (L2), as an (N, 2) index pair array."""
    from scipy.spatial import cKDTree

    tree = cKDTree(dst_fpfh)
    _, nearest = tree.query(src_fpfh, k=1)
    return np.stack([np.arange(src_fpfh.shape[0], dtype=np.int64),
                     nearest.astype(np.int64)], axis=1)


def global_register(
    source: PointCloud,
    target: PointCloud,
    source_fpfh: np.ndarray,
    target_fpfh: np.ndarray,
    params: GlobalRegParams,
) -> RegistrationResult:
    """RANSAC rigid alignment from FPFH correspondences.

    Three-point samples from the descriptor match pool are screened by
    edge-length similarity (each triangle side within the configured ratio
    of its counterpart) and by post-transform sample distance, scored by
    correspondence inliers, and the winner (ties: lowest hypothesis index)
    is re-evaluated on the full clouds.
    """
    if len(source) < 3 or len(target) < 3:
        raise InsufficientPoints("global registration needs >= 3 points per cloud")
    if source_fpfh.shape != (len(source), FPFH_DIM):
        raise InvalidInput(f"source fpfh must be ({len(source)}, {FPFH_DIM})")
    if target_fpfh.shape != (len(target), FPFH_DIM):
        raise InvalidInput(f"target fpfh must be ({len(target)}, {FPFH_DIM})")

    corr = _descriptor_matches(source_fpfh, target_fpfh)
    m = corr.shape[0]
    src_all = source.positions[corr[:, 0]]
    dst_all = target.positions[corr[:, 1]]

    rng = np.random.default_rng(params.seed)
    samples = rng.random((params.iterations, m)).argsort(axis=1)[:, :3]
    s3 = src_all[samples]  # (B, 3, 3)
    d3 = dst_all[samples]

    def edges(p):
        return np.stack(
            [
                np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
            ],
            axis=1,
        )

    es, ed = edges(s3), edges(d3)
    ratio = params.edge_similarity
    ok = (es > 1e-12).all(axis=1) & (ed > 1e-12).all(axis=1)
    ok &= (ed >= ratio * es).all(axis=1) & (es >= ratio * ed).all(axis=1)

    rot, t = _batched_kabsch(s3, d3)
    # Distance check: the three defining pairs must land within range.
    moved3 = np.einsum("bij,bmj->bmi", rot, s3) + t[:, None, :]
    ok &= (np.linalg.norm(moved3 - d3, axis=2) <= params.max_corr_dist).all(axis=1)

    counts = np.zeros(params.iterations, dtype=np.int64)
    valid_rows = np.nonzero(ok)[0]
    chunk = max(1, int(2e7) // max(m, 1))
    for s in range(0, valid_rows.size, chunk):
        rows = valid_rows[s : s + chunk]
        moved = np.einsum("bij,mj->bmi", rot[rows], src_all) + t[rows][:, None, :]
        dist = np.linalg.norm(moved - dst_all, axis=2)
        counts[rows] = (dist <= params.max_corr_dist).sum(axis=1)

    best = int(np.argmax(counts))
    if counts[best] < 3:
        raise RegistrationFailed(
            "no hypothesis explained 3 or more correspondences",
            diagnostics={
                "pool_size": int(m),
                "valid_hypotheses": int(ok.sum()),
                "best_inliers": int(counts[best]),
            },
        )
    transform = RigidTransform(rot[best], t[best])
    fitness, rmse, n_inl = evaluate_registration(
        source, target, transform, params.max_corr_dist
    )
    return RegistrationResult(
        transform=transform,
        fitness=fitness,
        inlier_rmse=rmse,
        iterations=params.iterations,
        correspondences=int(counts[best]),
    )


# ---------------------------------------------------------------------------
# SfM-to-LiDAR alignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignParams:
    icp: IcpParams
    global_reg: GlobalRegParams
    scale: float | None = None
    init: RigidTransform | None = None
    fitness_gate: float = 0.5
    normal_knn: int = 30
    fpfh_radius: float | None = None  # None: 5x mean nearest-neighbor spacing
    seed: int = 0


@dataclass(frozen=True)
class AlignmentOutcome:
    transform: RigidTransform  # applies to the scaled SfM cloud
    scale: float
    icp: RegistrationResult
    global_reg: RegistrationResult | None
    aligned: PointCloud
    fpfh_radius: float


def estimate_scale(source: PointCloud, target: PointCloud) -> float:
    """Robust scale ratio from median-absolute spread of radial distances."""

    def spread(pts: np.ndarray) -> float:
        center = np.median(pts, axis=0)
        r = np.linalg.norm(pts - center, axis=1)
        med = np.median(r)
        mad = np.median(np.abs(r - med))
        if mad > 1e-12:
            return float(mad)
        return float(med) if med > 1e-12 else 1.0

    if len(source) == 0 or len(target) == 0:
        raise EmptyInput("scale estimation needs non-empty clouds")
    return spread(target.positions) / spread(source.positions)


def mean_nn_spacing(cloud: PointCloud) -> float:
    """Mean distance to the nearest distinct-index neighbor."""
    if len(cloud) < 2:
        raise InsufficientPoints("need at least 2 points")
    index = SpatialIndex(cloud)
    _, dist = index.query_knn(cloud.positions, 2)
    return float(dist[:, 1].mean())


def umeyama_similarity(src: np.ndarray, dst: np.ndarray):
    """Least-squares similarity (s, R, t) with dst ~ s R src + t.

    Umeyama's closed form; handles rank-deficient (e.g. coplanar)
    configurations with the determinant sign correction.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InvalidInput("umeyama needs matching (N, 3) arrays")
    if src.shape[0] < 3:
        raise InsufficientPoints("umeyama needs at least 3 correspondences")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = (xs ** 2).sum() / src.shape[0]
    if var_s < 1e-18:
        raise InsufficientPoints("source correspondences are coincident")
    cov = xd.T @ xs / src.shape[0]
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_s)
    if not (scale > 0 and np.isfinite(scale)):
        raise InvalidInput(f"degenerate similarity scale {scale}")
    t = mu_d - scale * rot @ mu_s
    return scale, RigidTransform(rot, t)


def align_sfm_to_lidar(
    sfm_cloud: PointCloud,
    lidar_cloud: PointCloud,
    params: AlignParams,
) -> AlignmentOutcome:
    """Scale, coarsely register, and ICP-refine an SfM cloud onto LiDAR.

    The SfM cloud is first brought to metric scale (estimated robustly
    unless given), then globally registered via FPFH + RANSAC (skipped when
    an initial transform is supplied), then refined with weighted ICP.
    Raises AlignmentGateFailed when the refined fitness falls below the
    gate; the exception carries the full outcome for diagnostics.
    """
    if len(sfm_cloud) == 0 or len(lidar_cloud) == 0:
        raise EmptyInput("alignment needs non-empty clouds")
    scale = params.scale if params.scale is not None else estimate_scale(sfm_cloud, lidar_cloud)
    if not (scale > 0 and np.isfinite(scale)):
        raise InvalidInput(f"scale must be positive and finite, got {scale}")
    scaled = PointCloud(sfm_cloud.positions * scale, sfm_cloud.colors, sfm_cloud.normals)

    global_result = None
    if params.init is not None:
        init = params.init
        fpfh_radius = 0.0
    else:
        fpfh_radius = params.fpfh_radius
        if fpfh_radius is None:
            fpfh_radius = 5.0 * mean_nn_spacing(lidar_cloud)
        src_n, _ = estimate_normals(scaled, knn=min(params.normal_knn, len(scaled) - 1))
        dst_n, _ = estimate_normals(lidar_cloud, knn=min(params.normal_knn, len(lidar_cloud) - 1))
        src_fpfh, _ = compute_fpfh(src_n, fpfh_radius)
        dst_fpfh, _ = compute_fpfh(dst_n, fpfh_radius)
        global_result = global_register(
            scaled, lidar_cloud, src_fpfh, dst_fpfh,
            replace(params.global_reg, seed=params.seed),
        )
        init = global_result.transform

    icp_result = icp_refine(scaled, lidar_cloud, init, params.icp)
    outcome = AlignmentOutcome(
        transform=icp_result.transform,
        scale=float(scale),
        icp=icp_result,
        global_reg=global_result,
        aligned=apply_transform(scaled, icp_result.transform),
        fpfh_radius=float(fpfh_radius),
    )
    if icp_result.fitness < params.fitness_gate:
        raise AlignmentGateFailed(icp_result.fitness, params.fitness_gate, outcome)
    return outcome
