"""K-means over relative keypoint positions, and soft model weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import align_pose
from .skeleton import SkeletonTree, message_schedule


@dataclass
class ClusterModel:
    centroids: np.ndarray
    tau: float
    # mean squared distance to the assigned centroid after each Lloyd step
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def assign(self, features):
        return _sq_distances(np.atleast_2d(features), self.centroids).argmin(axis=1)


def pose_feature(pose, tree: SkeletonTree, scale=1.0):
    """Child-minus-parent offsets over the upward sends, flattened and divided by ``scale``."""
    pose = np.asarray(pose, dtype=np.float64)
    ups = message_schedule(tree)[: tree.num_nodes - 1]
    diffs = np.array([pose[child] - pose[parent] for child, parent in ups])
    return diffs.reshape(-1) / scale


def canonical_feature(pose, tree, scale=1.0):
    """Feature of a pose after rotating it upright."""
    upright, _ = align_pose(pose)
    return pose_feature(upright, tree, scale)


def _sq_distances(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)


def _farthest_point_seeds(x, n_clusters, rng):
    first = int(rng.integers(len(x)))
    chosen = [first]
    nearest = ((x - x[first]) ** 2).sum(axis=1)
    while len(chosen) < n_clusters:
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans_fit(features, n_clusters, seed=0, max_iters=100, tau=None) -> ClusterModel:
    """Lloyd's algorithm from farthest-point seeds.

    ``tau`` defaults to the mean squared nearest-centroid distance of the
    training features (1.0 when that is zero).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2D array")
    if len(np.unique(x, axis=0)) < n_clusters:
        raise ValueError(f"need at least {n_clusters} distinct features")
    rng = np.random.default_rng(seed)
    centroids = _farthest_point_seeds(x, n_clusters, rng)
    labels = None
    history = []
    for _ in range(max_iters):
        d2 = _sq_distances(x, centroids)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), new_labels].mean()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for l in range(n_clusters):
            members = x[labels == l]
            if len(members):
                centroids[l] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                worst = int(np.argmax(_sq_distances(x, centroids).min(axis=1)))
                centroids[l] = x[worst]
    d2 = _sq_distances(x, centroids)
    spread = float(d2.min(axis=1).mean())
    if tau is None:
        tau = spread if spread > 0 else 1.0
    return ClusterModel(centroids, float(tau), history)


def soft_assign(model: ClusterModel, feature, tau=None):
    """Mixture weights ``softmax(-d^2 / tau)`` over centroid distances."""
    tau = model.tau if tau is None else tau
    if not tau > 0:
        raise ValueError("temperature must be positive")
    d2 = _sq_distances(np.atleast_2d(np.asarray(feature, dtype=np.float64)), model.centroids)[0]
    z = -(d2 - d2.min()) / tau
    w = np.exp(z)
    return w / w.sum()


def purity(labels, truth):
    """Fraction of points whose cluster's majority label matches their own."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    hits = 0
    for l in np.unique(labels):
        _, counts = np.unique(truth[labels == l], return_counts=True)
        hits += counts.max()
    return hits / len(labels)
