"""Global and local diversity primitives.

Global diversity comes from k-means++ clustering of the pool's knowledge
features (one selection per cluster happens in the strategy layer).
Local diversity is the mean Euclidean distance from a candidate to its
nearest labeled samples, answered by an exact k-d tree.

Both are implemented here rather than delegated: selection must be
bit-reproducible for a fixed seed and break every distance tie by the
lower row index, guarantees that off-the-shelf implementations do not
make. Arithmetic accumulates in float64 regardless of input dtype.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DegeneratePoolError, ValidationError
from .validation import as_matrix, as_vector

__all__ = [
    "Clustering",
    "kmeans_pp",
    "KMeansPP",
    "KDTreeIndex",
    "build_neighbor_index",
    "local_diversity",
]

DEFAULT_KMEANS_TOL = 1e-4
DEFAULT_KMEANS_MAX_ITERS = 100
DEFAULT_LEAF_SIZE = 32


# ---------------------------------------------------------------------------
# pairwise distances (broadcast-based: deterministic, BLAS-free)
# ---------------------------------------------------------------------------

def _sq_dists(x: np.ndarray, centers: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Squared Euclidean distances, shape (len(x), len(centers))."""
    out = np.empty((x.shape[0], centers.shape[0]), dtype=np.float64)
    for start in range(0, x.shape[0], chunk):
        stop = min(start + chunk, x.shape[0])
        diff = x[start:stop, None, :] - centers[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


# ---------------------------------------------------------------------------
# k-means++ with Lloyd refinement
# ---------------------------------------------------------------------------

@dataclass
class Clustering:
    """Result of one clustering run.

    ``inertia_history`` records the objective after every assignment
    pass; it is non-increasing.
    """

    assignments: np.ndarray   # (n,) int64 in [0, k)
    centroids: np.ndarray     # (k, d) float64
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: uniform first pick, then squared-distance weighting."""
    n = x.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    best = _sq_dists(x, x[chosen[0]][None, :])[:, 0]
    for i in range(1, k):
        total = best.sum()
        if total <= 0.0:
            raise DegeneratePoolError(
                f"kmeans_pp: fewer than {k} distinct points in the pool"
            )
        chosen[i] = rng.choice(n, p=best / total)
        best = np.minimum(best, _sq_dists(x, x[chosen[i]][None, :])[:, 0])
    return x[chosen].copy()


def _repair_empty(
    x: np.ndarray, labels: np.ndarray, centroids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Give each empty cluster the point currently farthest from its centroid.

    Only points from clusters with at least two members are eligible, so
    a repair never empties another cluster. The moved point becomes the
    empty cluster's centroid, which cannot increase the objective.
    """
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return labels, centroids
    labels = labels.copy()
    centroids = centroids.copy()
    d2 = np.einsum("ij,ij->i", x - centroids[labels], x - centroids[labels])
    for empty in empties:
        eligible = counts[labels] >= 2
        scores = np.where(eligible, d2, -np.inf)
        order = np.lexsort((np.arange(x.shape[0]), -scores))
        pick = int(order[0])
        counts[labels[pick]] -= 1
        labels[pick] = empty
        counts[empty] = 1
        centroids[empty] = x[pick]
        d2[pick] = 0.0
    return labels, centroids


def kmeans_pp(
    features: np.ndarray,
    k: int,
    seed: int,
    *,
    tol: float = DEFAULT_KMEANS_TOL,
    max_iters: int = DEFAULT_KMEANS_MAX_ITERS,
) -> Clustering:
    """Cluster ``features`` into ``k`` groups, deterministically for a seed.

    Seeding picks the first centroid uniformly and each subsequent one
    with probability proportional to the squared distance from the
    nearest centroid chosen so far. Lloyd iterations run until the
    largest centroid movement drops below ``tol`` (absolute, feature
    units) or ``max_iters`` passes. Empty clusters are repaired, so every
    cluster index is assigned at least one point.
    """
    x = as_matrix(features, "features")
    n = x.shape[0]
    if k < 1:
        raise ValidationError(f"k: must be >= 1, got {k}")
    if n < k:
        raise DegeneratePoolError(f"kmeans_pp: {n} points cannot form {k} clusters")
    if np.unique(x, axis=0).shape[0] < k:
        raise DegeneratePoolError(f"kmeans_pp: fewer than {k} distinct points in the pool")

    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(x, k, rng)
    history: list[float] = []
    n_iter = 0
    for _ in range(max_iters):
        labels = np.argmin(_sq_dists(x, centroids), axis=1)
        labels, centroids = _repair_empty(x, labels, centroids)
        diff = x - centroids[labels]
        history.append(float(np.einsum("ij,ij->i", diff, diff).sum()))
        new_centroids = np.stack([x[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        n_iter += 1
        if shift < tol:
            break
    # Final assignment so labels and inertia match the returned centroids.
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    labels, centroids = _repair_empty(x, labels, centroids)
    diff = x - centroids[labels]
    inertia = float(np.einsum("ij,ij->i", diff, diff).sum())
    history.append(inertia)
    return Clustering(
        assignments=labels.astype(np.int64),
        centroids=centroids,
        inertia=inertia,
        n_iter=n_iter,
        inertia_history=history,
    )


class KMeansPP(BaseEstimator):
    """Estimator facade over :func:`kmeans_pp`."""

    def __init__(
        self,
        n_clusters: int = 8,
        seed: int = 0,
        tol: float = DEFAULT_KMEANS_TOL,
        max_iter: int = DEFAULT_KMEANS_MAX_ITERS,
    ):
        self.n_clusters = n_clusters
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        result = kmeans_pp(
            X, self.n_clusters, self.seed, tol=self.tol, max_iters=self.max_iter
        )
        self.cluster_centers_ = result.centroids
        self.labels_ = result.assignments
        self.inertia_ = result.inertia
        self.n_iter_ = result.n_iter
        return self

    def predict(self, X):
        if not hasattr(self, "cluster_centers_"):
            raise ValidationError("KMeansPP: call fit before predict")
        return np.argmin(_sq_dists(as_matrix(X, "X"), self.cluster_centers_), axis=1)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


# ---------------------------------------------------------------------------
# exact k-nearest neighbors via a k-d tree
# ---------------------------------------------------------------------------

class _Leaf:
    __slots__ = ("indices",)

    def __init__(self, indices: np.ndarray):
        self.indices = indices


class _Split:
    __slots__ = ("axis", "value", "left", "right")

    def __init__(self, axis: int, value: float, left, right):
        self.axis = axis
        self.value = value
        self.left = left
        self.right = right


class KDTreeIndex(BaseEstimator):
    """Exact k-nearest-neighbor index under Euclidean distance.

    Query results are identical to a brute-force scan, including the tie
    rule: equal distances resolve to the lower row index. Callers that
    need ties broken by sample id should therefore supply rows in
    ascending-id order.
    """

    def __init__(self, leaf_size: int = DEFAULT_LEAF_SIZE):
        self.leaf_size = leaf_size

    def fit(self, X):
        x = as_matrix(X, "features")
        if x.shape[0] < 1:
            raise ValidationError("features: need at least one point to index")
        self.points_ = x
        self.n_points_ = x.shape[0]
        self._root = self._build(np.arange(x.shape[0], dtype=np.int64))
        return self

    def _build(self, indices: np.ndarray):
        if indices.size <= self.leaf_size:
            return _Leaf(indices)
        pts = self.points_[indices]
        spread = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0.0:
            return _Leaf(indices)  # all points identical along every axis
        order = indices[np.lexsort((indices, pts[:, axis]))]
        mid = order.size // 2
        value = float(self.points_[order[mid], axis])
        return _Split(axis, value, self._build(order[:mid]), self._build(order[mid:]))

    def kneighbors(self, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and row indices of the ``min(k, n)`` nearest points.

        Results are sorted by (distance, index) ascending.
        """
        if not hasattr(self, "_root"):
            raise ValidationError("KDTreeIndex: call fit before querying")
        if k < 1:
            raise ValidationError(f"k: must be >= 1, got {k}")
        q = as_vector(query, "query")
        if q.shape[0] != self.points_.shape[1]:
            raise ValidationError(
                f"query: dimension {q.shape[0]}, index holds {self.points_.shape[1]}"
            )
        k = min(k, self.n_points_)
        # Max-heap on (distance^2, index): the root is the current worst
        # keeper, so a candidate wins if its (d2, idx) is lexicographically
        # smaller.
        heap: list[tuple[float, int]] = []

        def push(d2: float, idx: int) -> None:
            if len(heap) < k:
                heapq.heappush(heap, (-d2, -idx))
            else:
                worst_d2, worst_idx = -heap[0][0], -heap[0][1]
                if (d2, idx) < (worst_d2, worst_idx):
                    heapq.heapreplace(heap, (-d2, -idx))

        def visit(node) -> None:
            if isinstance(node, _Leaf):
                diff = self.points_[node.indices] - q
                d2s = np.einsum("ij,ij->i", diff, diff)
                for d2, idx in zip(d2s, node.indices):
                    push(float(d2), int(idx))
                return
            delta = q[node.axis] - node.value
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            visit(near)
            # The far side may still hold an exact tie, so prune only on a
            # strictly larger plane distance.
            if len(heap) < k or delta * delta <= -heap[0][0]:
                visit(far)

        visit(self._root)
        pairs = sorted((-nd2, -nidx) for nd2, nidx in heap)
        d2s = np.array([p[0] for p in pairs], dtype=np.float64)
        idxs = np.array([p[1] for p in pairs], dtype=np.int64)
        return np.sqrt(d2s), idxs


def build_neighbor_index(labeled_features: np.ndarray) -> KDTreeIndex:
    """Index the labeled set's features for exact KNN queries."""
    return KDTreeIndex().fit(labeled_features)


def local_diversity(index: KDTreeIndex, feature: np.ndarray, k_prime: int) -> float:
    """Mean Euclidean distance to the ``min(k_prime, n)`` nearest labeled points."""
    if k_prime < 1:
        raise ValidationError(f"k_prime: must be >= 1, got {k_prime}")
    dists, _ = index.kneighbors(feature, k_prime)
    return float(dists.mean())
