"""2D scalar fields over a cell grid.

Grids are plain float arrays whose last two axes are (row, col). Continuous
points are ``(x, y) = (col, row)`` with ``y`` growing downwards.
"""
from __future__ import annotations

import numpy as np

EPS_FLOOR = 1e-8
DEFAULT_GRID = (46, 46)
DEFAULT_SIGMA = 1.0


class DegenerateDistributionError(ValueError):
    pass


def normalize(g):
    """Scale a grid so its entries sum to one."""
    g = np.asarray(g, dtype=np.float64)
    total = g.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegenerateDistributionError(f"cannot normalize a grid with total mass {total!r}")
    return g / total


def normalize_maps(stack):
    """Normalize every trailing (H, W) layer of ``stack`` independently."""
    stack = np.asarray(stack, dtype=np.float64)
    totals = stack.sum(axis=(-2, -1), keepdims=True)
    if np.any(~np.isfinite(totals)) or np.any(totals <= 0):
        raise DegenerateDistributionError("at least one layer has non-positive mass")
    return stack / totals


def render_gaussian(height, width, center, sigma=DEFAULT_SIGMA, normalized=False):
    """Gaussian bump at ``center = (x, y)``; the center may lie off-grid."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    cx, cy = float(center[0]), float(center[1])
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    g = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma**2))
    return normalize(g) if normalized else g


def render_gaussians(shape, centers, sigma=DEFAULT_SIGMA, normalized=True):
    """One Gaussian layer per row of ``centers``; returns (K, H, W)."""
    height, width = shape
    centers = np.asarray(centers, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)[None, :, None]
    cols = np.arange(width, dtype=np.float64)[None, None, :]
    g = np.exp(-((rows - centers[:, 1, None, None]) ** 2 + (cols - centers[:, 0, None, None]) ** 2)
               / (2.0 * sigma**2))
    return normalize_maps(g) if normalized else g


def argmax_location(g):
    """(row, col) of the largest entry; ties go to the first in row-major order."""
    g = np.asarray(g)
    if g.size == 0:
        raise ValueError("empty grid")
    m, n = np.unravel_index(int(np.argmax(g)), g.shape)
    return int(m), int(n)


def argmax_points(stack):
    """Per-layer argmax of a (..., H, W) stack as continuous ``(x, y)`` points."""
    stack = np.asarray(stack)
    h, w = stack.shape[-2:]
    flat = stack.reshape(*stack.shape[:-2], h * w).argmax(axis=-1)
    rows, cols = np.divmod(flat, w)
    return np.stack([cols, rows], axis=-1).astype(np.float64)


def weighted_sum(grids, weights):
    grids = [np.asarray(g, dtype=np.float64) for g in grids]
    weights = list(weights)
    if len(grids) != len(weights):
        raise ValueError(f"{len(grids)} grids but {len(weights)} weights")
    if not grids:
        raise ValueError("nothing to sum")
    shape = grids[0].shape
    for g in grids[1:]:
        if g.shape != shape:
            raise ValueError(f"dimension mismatch: {g.shape} vs {shape}")
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    out = np.zeros(shape)
    for g, w in zip(grids, weights):
        out += w * g
    return out


def floor_maps(stack, eps=EPS_FLOOR):
    return np.maximum(np.asarray(stack, dtype=np.float64), eps)


def distances(a, b):
    """Euclidean distance between matching rows of two point arrays."""
    return np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), axis=-1)
