"""Spherical k-means over unit vectors.

Lloyd iterations with cosine assignment (argmax c.n, equivalent to the
Euclidean argmin on the sphere); centroids are renormalized to unit length
after every update.  Assignments are detached values: no gradients flow
through the clustering itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainError


@dataclass
class ClusterSet:
    k: int
    centroids: np.ndarray  # (k, 3), unit rows
    labels: np.ndarray  # (n,) cluster index per input point
    points: np.ndarray  # (n, 3) the clustered unit vectors
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sizes = np.bincount(self.labels, minlength=self.k)

    def assignments(self):
        """Member index lists, one per cluster."""
        return [np.flatnonzero(self.labels == i) for i in range(self.k)]

    def members(self, i):
        return self.points[self.labels == i]


def centroid_of(normals):
    """Normalized mean of a non-empty set of unit vectors.

    Returns None when the mean is (near-)zero, e.g. for an
    antipodally balanced cluster.
    """
    normals = np.asarray(normals, dtype=np.float64)
    if normals.size == 0:
        raise DomainError("centroid of an empty cluster")
    m = normals.mean(axis=0)
    n = np.linalg.norm(m)
    if n < 1e-9:
        return None
    return m / n


def _objective(points, centroids, labels):
    return float(np.sum(1.0 - np.einsum("ij,ij->i", points, centroids[labels])))


def _init_plusplus(points, k, rng):
    """k-means++ style seeding on cosine distance."""
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d = 1.0 - points @ points[chosen[0]]
    for i in range(1, k):
        w = np.maximum(d, 0.0) ** 2
        total = w.sum()
        if total <= 0.0:
            probs = np.full(n, 1.0 / n)
        else:
            probs = w / total
        chosen[i] = rng.choice(n, p=probs)
        d = np.minimum(d, 1.0 - points @ points[chosen[i]])
    return points[chosen].copy()


def kmeans_spherical(normals, k, max_iters=50, seed=0, callback=None):
    """Cluster unit vectors into k clusters.

    seed may be an int or a numpy Generator.  callback, when given, is
    invoked after every iteration with (iteration, centroids, labels,
    objective).  Stops early once assignments are unchanged.
    """
    points = np.asarray(normals, dtype=np.float64)
    n = points.shape[0]
    if not (1 <= k <= n):
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    centroids = _init_plusplus(points, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for it in range(max_iters):
        # assignment; argmax breaks ties toward the lowest cluster index
        new_labels = np.argmax(points @ centroids.T, axis=1)

        # repair empty clusters with the worst-fitting point
        counts = np.bincount(new_labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            fits = np.einsum("ij,ij->i", points, centroids[new_labels])
            fits[counts[new_labels] <= 1] = np.inf  # keep singletons intact
            worst = int(np.argmin(fits))
            counts[new_labels[worst]] -= 1
            new_labels[worst] = empty
            counts[empty] = 1

        converged = np.array_equal(new_labels, labels)
        labels = new_labels
        for i in range(k):
            c = points[labels == i].mean(axis=0)
            norm = np.linalg.norm(c)
            if norm >= 1e-9:
                centroids[i] = c / norm
            # else: balanced antipodal cluster, keep the previous centroid
        if callback is not None:
            callback(it, centroids.copy(), labels.copy(), _objective(points, centroids, labels))
        if converged:
            break
    return ClusterSet(k=k, centroids=centroids, labels=labels, points=points)
