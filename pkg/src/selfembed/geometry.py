"""Point-set primitives: unit-sphere normalization, farthest point sampling,
exact k-nearest-neighbour search and patch split/merge for large inputs.

Point clouds are plain ``(N, 3)`` float arrays. All distances are Euclidean
and every selection breaks ties toward the lowest index so results do not
depend on platform or accelerator.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._accel import njit, use_numba


class InvalidInputError(ValueError):
    """Raised for malformed point data (non-finite values, empty clouds)."""


def as_cloud(points, name="cloud"):
    """Validate ``points`` and return it as a 2-D float array with 3 columns."""
    arr = np.asarray(points)
    if arr.dtype.kind not in "fiu":
        raise InvalidInputError(f"{name}: expected numeric coordinates")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name}: expected shape (N, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise InvalidInputError(f"{name}: empty point cloud")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: non-finite coordinates")
    return arr


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps source coordinates to the unit sphere: ``(x - center) / scale``."""

    center: np.ndarray
    scale: float = 1.0

    def apply(self, points):
        return (np.asarray(points) - self.center) / self.scale

    def invert(self, points):
        return np.asarray(points) * self.scale + self.center


def normalize_unit_sphere(cloud):
    """Center ``cloud`` at its centroid and scale so the farthest point has norm 1.

    A cloud whose points all coincide keeps ``scale = 1``.
    """
    pts = as_cloud(cloud)
    if np.all(pts == pts[0]):
        # the mean of identical values can be off by an ulp; use the point itself
        center = pts[0].astype(np.float64)
    else:
        center = pts.mean(axis=0)
    centered = pts - center
    radius = float(np.sqrt((centered ** 2).sum(axis=1)).max())
    scale = radius if radius > 0.0 else 1.0
    transform = NormalizationTransform(center=center, scale=scale)
    return centered / scale, transform


# ---------------------------------------------------------------------------
# farthest point sampling

@njit
def _fps_kernel(points, n, start_index):
    N = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    mind = np.full(N, np.inf)
    cur = start_index
    for s in range(n):
        out[s] = cur
        px = points[cur, 0]
        py = points[cur, 1]
        pz = points[cur, 2]
        best = -1.0
        best_i = 0
        for i in range(N):
            dx = points[i, 0] - px
            dy = points[i, 1] - py
            dz = points[i, 2] - pz
            d = dx * dx
            d += dy * dy
            d += dz * dz
            if d < mind[i]:
                mind[i] = d
            if mind[i] > best:
                best = mind[i]
                best_i = i
        cur = best_i
    return out


def _fps_numpy(points, n, start_index):
    out = np.empty(n, dtype=np.int64)
    mind = np.full(points.shape[0], np.inf)
    cur = start_index
    for s in range(n):
        out[s] = cur
        diff = points - points[cur]
        d = diff[:, 0] * diff[:, 0]
        d += diff[:, 1] * diff[:, 1]
        d += diff[:, 2] * diff[:, 2]
        np.minimum(mind, d, out=mind)
        cur = int(np.argmax(mind))
    return out


def farthest_point_sample(cloud, n, start_index=0):
    """Greedy farthest point sampling; returns ``n`` distinct indices into ``cloud``.

    The first index is ``start_index``. Each following index maximizes the
    squared distance to the closest already-selected point, lowest index first
    on ties. Selected points have distance 0 so they are never re-picked while
    unselected points remain.
    """
    pts = np.ascontiguousarray(as_cloud(cloud), dtype=np.float64)
    N = pts.shape[0]
    if not 1 <= n <= N:
        raise ValueError(f"farthest_point_sample: need 1 <= n <= {N}, got n={n}")
    if not 0 <= start_index < N:
        raise ValueError(f"farthest_point_sample: start_index {start_index} out of range")
    if use_numba():
        return _fps_kernel(pts, int(n), int(start_index))
    return _fps_numpy(pts, int(n), int(start_index))


# ---------------------------------------------------------------------------
# k nearest neighbours

@njit
def _knn_kernel(queries, reference, K):
    M = queries.shape[0]
    N = reference.shape[0]
    idx = np.empty((M, K), dtype=np.int64)
    dist = np.empty((M, K), dtype=np.float64)
    for q in range(M):
        qx = queries[q, 0]
        qy = queries[q, 1]
        qz = queries[q, 2]
        filled = 0
        for i in range(N):
            dx = reference[i, 0] - qx
            dy = reference[i, 1] - qy
            dz = reference[i, 2] - qz
            d = dx * dx
            d += dy * dy
            d += dz * dz
            if filled == K and d >= dist[q, K - 1]:
                continue
            # insertion after every entry with distance <= d keeps ties in index order
            pos = filled if filled < K else K - 1
            while pos > 0 and dist[q, pos - 1] > d:
                if pos < K:
                    dist[q, pos] = dist[q, pos - 1]
                    idx[q, pos] = idx[q, pos - 1]
                pos -= 1
            dist[q, pos] = d
            idx[q, pos] = i
            if filled < K:
                filled += 1
    return idx, dist


def _pairwise_sqdist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    d = diff[..., 0] * diff[..., 0]
    d += diff[..., 1] * diff[..., 1]
    d += diff[..., 2] * diff[..., 2]
    return d


def _knn_numpy(queries, reference, K, chunk=256):
    M = queries.shape[0]
    idx = np.empty((M, K), dtype=np.int64)
    dist = np.empty((M, K), dtype=np.float64)
    for s in range(0, M, chunk):
        d = _pairwise_sqdist(queries[s:s + chunk], reference)
        order = np.argsort(d, axis=1, kind="stable")[:, :K]
        idx[s:s + chunk] = order
        dist[s:s + chunk] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def knn(queries, reference, K, return_sqdist=False):
    """Exact K nearest neighbours of every query point in ``reference``.

    Rows are sorted by ascending distance with the lowest reference index
    first among equal distances. Returns a ``(M, K)`` int64 index array, and
    the matching squared distances when ``return_sqdist`` is set.
    """
    q = np.ascontiguousarray(as_cloud(queries, "queries"), dtype=np.float64)
    r = np.ascontiguousarray(as_cloud(reference, "reference"), dtype=np.float64)
    if not 1 <= K <= r.shape[0]:
        raise ValueError(f"knn: need 1 <= K <= {r.shape[0]}, got K={K}")
    if use_numba():
        idx, dist = _knn_kernel(q, r, int(K))
    else:
        idx, dist = _knn_numpy(q, r, int(K))
    if return_sqdist:
        return idx, dist
    return idx


def nearest_neighbor(queries, reference):
    """Index of and squared distance to the closest reference point per query."""
    idx, dist = knn(queries, reference, 1, return_sqdist=True)
    return idx[:, 0], dist[:, 0]


@njit
def _topk_rows_kernel(d, K):
    M, N = d.shape
    idx = np.empty((M, K), dtype=np.int64)
    best = np.empty(K, dtype=d.dtype)
    for q in range(M):
        filled = 0
        for i in range(N):
            v = d[q, i]
            if filled == K and v >= best[K - 1]:
                continue
            pos = filled if filled < K else K - 1
            while pos > 0 and best[pos - 1] > v:
                if pos < K:
                    best[pos] = best[pos - 1]
                    idx[q, pos] = idx[q, pos - 1]
                pos -= 1
            best[pos] = v
            idx[q, pos] = i
            if filled < K:
                filled += 1
    return idx


def topk_smallest(d, K):
    """Column indices of the ``K`` smallest entries of each row of ``d``,
    ascending, lowest column first on ties."""
    d = np.ascontiguousarray(d)
    if use_numba():
        return _topk_rows_kernel(d, int(K))
    return np.argsort(d, axis=1, kind="stable")[:, :K]


def feature_knn(features, K):
    """K nearest neighbours of each row of ``features`` among all rows
    (itself included) under squared Euclidean distance in feature space."""
    f = np.asarray(features, dtype=np.float64)
    if not 1 <= K <= f.shape[0]:
        raise ValueError(f"feature_knn: need 1 <= K <= {f.shape[0]}, got K={K}")
    sq = (f * f).sum(axis=1)
    d = sq[:, None] - 2.0 * (f @ f.T) + sq[None, :]
    # the Gram form is not exactly zero on the diagonal
    np.fill_diagonal(d, -np.inf)
    return topk_smallest(d, K)


# ---------------------------------------------------------------------------
# patches

@dataclass
class PatchLayout:
    """Everything needed to map per-patch outputs back to the source frame."""

    seed_indices: np.ndarray
    patch_member_indices: list
    transforms: list = field(default_factory=list)
    patch_size: int = 0


def split_patches(cloud, patch_size, overlap_factor=2.0, start_index=0):
    """Cut ``cloud`` into normalized KNN patches around FPS seeds.

    ``ceil(overlap_factor * N / patch_size)`` seeds are drawn first. If some
    points are still not covered, extra seeds are taken greedily from the
    uncovered points (farthest from the current seeds first) until every
    source index belongs to a patch.
    """
    pts = as_cloud(cloud)
    N = pts.shape[0]
    if not 1 <= patch_size <= N:
        raise ValueError(f"split_patches: patch_size {patch_size} must be in [1, {N}]")
    n_seeds = max(1, math.ceil(overlap_factor * N / patch_size))
    n_seeds = min(n_seeds, N)
    seeds = list(farthest_point_sample(pts, n_seeds, start_index))
    members = list(knn(pts[seeds], pts, patch_size))
    covered = np.zeros(N, dtype=bool)
    for m in members:
        covered[m] = True
    while not covered.all():
        _, d = nearest_neighbor(pts, pts[seeds])
        d = np.where(covered, -1.0, d)
        s = int(np.argmax(d))
        seeds.append(s)
        m = knn(pts[s:s + 1], pts, patch_size)[0]
        members.append(m)
        covered[m] = True
    patches, transforms = [], []
    for m in members:
        p, t = normalize_unit_sphere(pts[m])
        patches.append(p)
        transforms.append(t)
    layout = PatchLayout(np.asarray(seeds, dtype=np.int64), members, transforms, patch_size)
    return patches, layout


def merge_patches(patches, layout, dedup_radius=1e-6):
    """De-normalize each patch, concatenate, and collapse near-duplicates.

    Points closer than ``dedup_radius`` (transitively) are replaced by their
    centroid, placed at the position of the cluster's first member.
    """
    if len(patches) != len(layout.transforms):
        raise ValueError(
            f"merge_patches: got {len(patches)} patches for a layout of {len(layout.transforms)}"
        )
    merged = np.concatenate(
        [t.invert(as_cloud(p, "patch")) for p, t in zip(patches, layout.transforms)]
    )
    return dedup_points(merged, dedup_radius)


def dedup_points(points, radius):
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    pts = np.asarray(points, dtype=np.float64)
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return pts
    n = pts.shape[0]
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    counts = np.bincount(inverse)
    sums = np.zeros((len(first), 3))
    np.add.at(sums, inverse, pts)
    centroids = sums / counts[:, None]
    return centroids[np.argsort(first, kind="stable")]
