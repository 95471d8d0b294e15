"""Manhattan-frame recovery from clustered surface normals.

Pipeline: spherical k-means -> pick the largest cluster plus the most
orthogonal pair of further centroids -> fold antipodal / nearby clusters
into the selected three -> snap centroids to canonical axes and project
the stacked matrix to the nearest rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterSet, kmeans_spherical
from .geometry import DomainError


@dataclass
class OrthogonalTriplet:
    """Three roughly orthogonal clusters of normals with unit centroids.

    members[i] holds the (possibly sign-flipped) normal vectors, while
    indices[i] / signs[i] track where each member came from in the input
    normal set so callers can propagate gradients.
    """

    members: tuple
    centroids: np.ndarray  # (3, 3)
    indices: tuple
    signs: tuple

    def sizes(self):
        return tuple(len(m) for m in self.members)


def select_orthogonal_triplet(clusters: ClusterSet) -> OrthogonalTriplet:
    """Largest-cluster centroid plus the pair minimizing the summed
    absolute pairwise dots |c_s.n1| + |n1.c_t| + |c_s.c_t|."""
    nonempty = np.flatnonzero(clusters.sizes > 0)
    if nonempty.size < 3:
        raise DomainError("need at least 3 non-empty clusters")
    first = nonempty[np.argmax(clusters.sizes[nonempty])]
    n1 = clusters.centroids[first]

    rest = [int(i) for i in nonempty if i != first]
    best = None
    best_pair = None
    for a in range(len(rest)):
        for b in range(a + 1, len(rest)):
            cs, ct = clusters.centroids[rest[a]], clusters.centroids[rest[b]]
            cost = abs(cs @ n1) + abs(n1 @ ct) + abs(cs @ ct)
            if best is None or cost < best:
                best = cost
                best_pair = (rest[a], rest[b])
    picked = (int(first), best_pair[0], best_pair[1])

    members, indices, signs = [], [], []
    for i in picked:
        idx = np.flatnonzero(clusters.labels == i)
        members.append(clusters.points[idx].copy())
        indices.append(idx)
        signs.append(np.ones(len(idx)))
    return OrthogonalTriplet(
        members=tuple(members),
        centroids=clusters.centroids[list(picked)].copy(),
        indices=tuple(indices),
        signs=tuple(signs),
    )


def merge_with_opposites(clusters: ClusterSet, triplet: OrthogonalTriplet, t: float) -> OrthogonalTriplet:
    """Fold unselected clusters into the triplet when their centroid is
    within the acceptance cone |n_i . c_j| > 1 - t of a selected centroid;
    members of antipodal clusters (negative dot) are negated.  Each cluster
    merges into at most its best-matching selected cluster; the three
    centroids are recomputed afterwards."""
    if not (0.0 <= t < 1.0):
        raise DomainError("threshold t must be in [0, 1)")
    selected = set()
    for idx in triplet.indices:
        if idx.size:
            selected.update(np.unique(clusters.labels[idx]).tolist())

    members = [list(m) for m in triplet.members]
    indices = [list(i) for i in triplet.indices]
    signs = [list(s) for s in triplet.signs]
    for j in range(clusters.k):
        if j in selected or clusters.sizes[j] == 0:
            continue
        dots = triplet.centroids @ clusters.centroids[j]
        i = int(np.argmax(np.abs(dots)))
        if abs(dots[i]) > 1.0 - t:
            sign = 1.0 if dots[i] > 0 else -1.0
            idx = np.flatnonzero(clusters.labels == j)
            members[i].extend(sign * clusters.points[idx])
            indices[i].extend(idx)
            signs[i].extend([sign] * len(idx))

    out_members, out_indices, out_signs, centroids = [], [], [], []
    for i in range(3):
        m = np.asarray(members[i])
        out_members.append(m)
        out_indices.append(np.asarray(indices[i], dtype=np.int64))
        out_signs.append(np.asarray(signs[i]))
        c = m.mean(axis=0)
        norm = np.linalg.norm(c)
        centroids.append(c / norm if norm >= 1e-9 else triplet.centroids[i])
    return OrthogonalTriplet(
        members=tuple(out_members),
        centroids=np.asarray(centroids),
        indices=tuple(out_indices),
        signs=tuple(out_signs),
    )


def recover_rotation(triplet: OrthogonalTriplet) -> np.ndarray:
    """World-to-frame rotation whose rows are the centroids snapped to
    their closest canonical axes (largest cluster assigned first), then
    projected to the nearest rotation matrix."""
    c = triplet.centroids
    for i in range(3):
        for j in range(i + 1, 3):
            if abs(c[i] @ c[j]) >= 0.9:
                raise DomainError("centroids are too far from orthogonal")

    rows = np.zeros((3, 3))
    remaining = [0, 1, 2]
    for i in range(3):
        axis = remaining[int(np.argmax(np.abs(c[i][remaining])))]
        remaining.remove(axis)
        rows[axis] = c[i] if c[i][axis] >= 0 else -c[i]

    u, _, vt = np.linalg.svd(rows)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def find_manhattan_frame(normals, k, t, seed=0, max_iters=200):
    """Cluster -> select -> merge -> rotation.  Returns (triplet, R)."""
    normals = np.asarray(normals, dtype=np.float64)
    if normals.shape[0] < k or k < 3:
        raise DomainError("need at least k >= 3 normals")
    clusters = kmeans_spherical(normals, k, max_iters=max_iters, seed=seed)
    triplet = select_orthogonal_triplet(clusters)
    merged = merge_with_opposites(clusters, triplet, t)
    return merged, recover_rotation(merged)
