"""Pairwise displacement kernels for a pool of tree-structured models.

A pool stores one ``(2r+1, 2r+1)`` kernel per directed edge and per model in a
single array of shape ``(L, E, 2r+1, 2r+1)``. Directed edges follow the
message schedule, so ``kernels[l, e]`` is the kernel used by send ``e``.
Entry ``[r + dm, r + dn]`` scores the sender sitting ``(dm, dn)`` cells
(rows, cols) away from the receiver.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import EPS_FLOOR
from .skeleton import SkeletonTree, message_schedule


@dataclass
class ModelPool:
    kernels: np.ndarray
    edges: tuple[tuple[int, int], ...]
    radius: int
    tied: bool = False

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.edges = tuple((int(a), int(b)) for a, b in self.edges)
        k = 2 * self.radius + 1
        if self.kernels.ndim != 4 or self.kernels.shape[1:] != (len(self.edges), k, k):
            raise ValueError(
                f"kernel array {self.kernels.shape} does not match "
                f"{len(self.edges)} edges of radius {self.radius}")
        if self.kernels.shape[0] < 1:
            raise ValueError("pool needs at least one model")
        if not np.all(np.isfinite(self.kernels)):
            raise ValueError("kernels must be finite")

    @property
    def n_models(self) -> int:
        return self.kernels.shape[0]

    @property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    def model(self, l: int) -> np.ndarray:
        """Kernels of one graphical model, shape (E, 2r+1, 2r+1)."""
        return self.kernels[l]

    def copy(self) -> "ModelPool":
        return ModelPool(self.kernels.copy(), self.edges, self.radius, self.tied)

    def project(self, floor: float = EPS_FLOOR) -> None:
        """Clamp kernels to ``floor`` in place, re-tying directions when needed."""
        np.maximum(self.kernels, floor, out=self.kernels)
        if self.tied:
            tie_kernels(self)

    def reverse_pairs(self) -> list[tuple[int, int]]:
        idx = self.edge_index
        return [(e, idx[(j, i)]) for e, (i, j) in enumerate(self.edges) if e < idx[(j, i)]]


def tie_kernels(pool: ModelPool) -> None:
    """Force ``K_ji(d) = K_ij(-d)`` by averaging the two directions."""
    for a, b in pool.reverse_pairs():
        avg = 0.5 * (pool.kernels[:, a] + pool.kernels[:, b, ::-1, ::-1])
        pool.kernels[:, a] = avg
        pool.kernels[:, b] = avg[:, ::-1, ::-1]


def init_uniform_pool(tree: SkeletonTree, n_models: int, radius: int, tied: bool = False) -> ModelPool:
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if n_models < 1:
        raise ValueError("need at least one model")
    edges = message_schedule(tree)
    k = 2 * radius + 1
    kernels = np.full((n_models, len(edges), k, k), 1.0 / k**2)
    return ModelPool(kernels, edges, radius, tied)


def displacement_histogram(displacements, radius, smoothing=1.0, floor=EPS_FLOOR):
    """Smoothed, floored, normalized histogram of ``(x, y)`` displacements."""
    k = 2 * radius + 1
    hist = np.zeros((k, k))
    d = np.rint(np.asarray(displacements, dtype=np.float64).reshape(-1, 2)).astype(np.int64)
    dn, dm = d[:, 0], d[:, 1]
    keep = (np.abs(dm) <= radius) & (np.abs(dn) <= radius)
    np.add.at(hist, (dm[keep] + radius, dn[keep] + radius), 1.0)
    if smoothing > 0:
        hist = gaussian_filter(hist, smoothing, mode="constant", truncate=4.0)
    if hist.sum() <= 0:
        hist = np.ones((k, k))
    hist = np.maximum(hist / hist.sum(), floor)
    return hist / hist.sum()


def init_empirical_pool(tree, poses, cluster_ids, n_models, radius, smoothing=1.0,
                        floor=EPS_FLOOR, tied=False) -> ModelPool:
    """Kernels from displacement statistics of clustered canonical poses.

    ``poses`` is (N, K, 2) in grid units of the rotated frame. A cluster with no
    poses keeps the uniform kernel.
    """
    poses = np.asarray(poses, dtype=np.float64)
    cluster_ids = np.asarray(cluster_ids, dtype=np.int64)
    if len(poses) != len(cluster_ids):
        raise ValueError("one cluster id per pose required")
    if len(cluster_ids) and (cluster_ids.min() < 0 or cluster_ids.max() >= n_models):
        raise ValueError(f"cluster ids must lie in [0, {n_models})")
    pool = init_uniform_pool(tree, n_models, radius, tied)
    for l in range(n_models):
        members = poses[cluster_ids == l]
        if len(members) == 0:
            warnings.warn(f"cluster {l} is empty; keeping uniform kernels", stacklevel=2)
            continue
        for e, (i, j) in enumerate(pool.edges):
            pool.kernels[l, e] = displacement_histogram(members[:, i] - members[:, j], radius,
                                                        smoothing, floor)
    return pool


def validate_weights(w, n_models=None, atol=1e-9):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or len(w) == 0:
        raise ValueError("mixture weights must be a non-empty vector")
    if n_models is not None and len(w) != n_models:
        raise ValueError(f"{len(w)} weights for a pool of {n_models} models")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("mixture weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"mixture weights sum to {w.sum()!r}, not 1")
    return w


def uniform_weights(n_models):
    if n_models < 1:
        raise ValueError("need at least one model")
    return np.full(n_models, 1.0 / n_models)


def one_hot_weights(n_models, index):
    if not 0 <= index < n_models:
        raise IndexError(f"model index {index} outside [0, {n_models})")
    w = np.zeros(n_models)
    w[index] = 1.0
    return w
