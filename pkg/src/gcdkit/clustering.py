"""k-means over embedding vectors and cluster-count estimation.

Deterministic for a fixed seed: k-means++ seeding from a seeded generator,
Lloyd iterations to an assignment fixed point (or tol / max_iter), several
restarts keeping the lowest-inertia solution. Empty clusters are reseeded
at the point farthest from its assigned center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Clustering:
    centers: np.ndarray          # (k, D)
    assignment: np.ndarray       # (n,) cluster id of each point
    inertia: float               # sum of squared distances to assigned centers
    n_iter: int
    inertia_trace: list[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (points * points).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * points @ centers.T
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = _sq_dists(points, centers[:1]).ravel()
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            # all remaining mass already at a chosen center
            idx = rng.integers(n)
        centers[c] = points[idx]
        np.minimum(d2, _sq_dists(points, centers[c : c + 1]).ravel(), out=d2)
    return centers


def _repair_empty(points, centers, assignment, d2_assigned, empty_ids):
    """Move each empty center onto the point farthest from its own center."""
    d = d2_assigned.copy()
    for cid in sorted(empty_ids):
        far = int(np.argmax(d))
        centers[cid] = points[far]
        assignment[far] = cid
        d[far] = 0.0
    return centers, assignment


def _lloyd(points, centers, max_iter, tol):
    n, _ = points.shape
    k = centers.shape[0]
    assignment = None
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(points, centers)
        new_assign = np.argmin(d2, axis=1)
        d2_assigned = d2[np.arange(n), new_assign]
        trace.append(float(d2_assigned.sum()))
        if assignment is not None and np.array_equal(new_assign, assignment):
            break
        assignment = new_assign
        new_centers = np.zeros_like(centers)
        counts = np.bincount(assignment, minlength=k)
        np.add.at(new_centers, assignment, points)
        nonempty = counts > 0
        new_centers[nonempty] /= counts[nonempty, None]
        if not np.all(nonempty):
            new_centers, assignment = _repair_empty(
                points, new_centers, assignment, d2_assigned, np.flatnonzero(~nonempty)
            )
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break
    # sync: final assignment against final centers
    d2 = _sq_dists(points, centers)
    assignment = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), assignment].sum())
    if not trace or inertia < trace[-1]:
        trace.append(inertia)
    return centers, assignment, inertia, n_iter, trace


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    n_restarts: int = 5,
) -> Clustering:
    """Cluster `points` into k groups, deterministic for fixed inputs and seed.

    Ties in the nearest-center assignment break toward the lowest cluster id.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be an (n, D) array")
    if not np.all(np.isfinite(points)):
        raise ValueError("points contain non-finite values")
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")

    streams = np.random.SeedSequence(seed).spawn(n_restarts)
    best = None
    for restart, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        centers0 = _plusplus_init(points, k, rng)
        centers, assignment, inertia, n_iter, trace = _lloyd(points, centers0, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = Clustering(
                centers=centers,
                assignment=assignment,
                inertia=inertia,
                n_iter=n_iter,
                inertia_trace=trace,
            )
    return best


def estimate_k(
    points: np.ndarray,
    k_max: int,
    drop_ratio: float = 0.5,
    seed: int = 0,
    **kmeans_kwargs,
) -> int:
    """Estimate a category count by over-clustering and dropping small clusters.

    Runs kmeans with k_max clusters and counts the clusters whose size is at
    least drop_ratio * (n / k_max). This is a heuristic: on equal-size,
    well-separated groups the surplus centers split groups evenly and every
    shard passes the threshold, so the estimate saturates at k_max; it is
    informative when surplus centers capture small stray regions instead.
    """
    if not 0.0 < drop_ratio < 1.0:
        raise ValueError("drop_ratio must be in (0, 1)")
    cl = kmeans(points, k_max, seed=seed, **kmeans_kwargs)
    threshold = drop_ratio * (points.shape[0] / k_max)
    return int((cl.sizes() >= threshold).sum())
