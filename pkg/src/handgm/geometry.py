"""Rotation canonicalization of poses and confidence maps.

Angles are in degrees. A positive angle turns a point counterclockwise as seen
on screen (image y grows downwards), so rotating a pose by its canonical angle
points the wrist -> middle-finger-base vector straight up.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import spline_filter1d

from .skeleton import REFERENCE_KEYPOINT, WRIST

# quintic splines keep a rotation round trip of a sigma = 1 Gaussian within 2e-2
SPLINE_ORDER = 5
SPLINE_PAD = 8


class UndefinedDirectionError(ValueError):
    pass


def wrap_angle(deg):
    """Map an angle into (-180, 180]."""
    return -((-float(deg) + 180.0) % 360.0 - 180.0) + 0.0


def rotation_matrix(alpha):
    a = math.radians(alpha)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, s], [-s, c]])


def canonical_angle(pose):
    pose = np.asarray(pose, dtype=np.float64)
    v = pose[REFERENCE_KEYPOINT] - pose[WRIST]
    if not np.any(v):
        raise UndefinedDirectionError("wrist and reference keypoint coincide")
    return wrap_angle(math.degrees(math.atan2(v[0], -v[1])))


def rotate_points(points, alpha, center=(0.0, 0.0)):
    points = np.asarray(points, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if alpha == 0:
        return points.copy()
    return (points - center) @ rotation_matrix(alpha).T + center


def align_pose(pose):
    """Rotate a pose about its centroid so the hand points up."""
    pose = np.asarray(pose, dtype=np.float64)
    alpha = canonical_angle(pose)
    return rotate_points(pose, alpha, pose.mean(axis=0)), alpha


def grid_center(shape):
    h, w = shape
    return np.array([(w - 1) / 2.0, (h - 1) / 2.0])


def bspline(t, order=SPLINE_ORDER):
    """Centered cardinal B-spline of the given order."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    for k in range(order + 2):
        out += (-1) ** k * math.comb(order + 1, k) * np.maximum(t + (order + 1) / 2.0 - k, 0.0) ** order
    return out / math.factorial(order)


def _mirror(i, n):
    """Reflect indices about the end samples of a length-``n`` axis."""
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


@lru_cache(maxsize=32)
def _prefilter(n, order=SPLINE_ORDER, pad=SPLINE_PAD):
    """(n + 2 pad, n) map from samples to spline coefficients of the zero-padded axis."""
    full = spline_filter1d(np.eye(n + 2 * pad), order=order, axis=0, mode="mirror")
    return full[:, pad:pad + n]


class GridRotation:
    """Linear operator rotating (H, W) grids about the grid center.

    The grid is embedded in a zero border of ``pad`` cells, interpolated with
    a B-spline of the given order (mirror boundary at the outer edge of the
    border) and resampled at the rotated cell centers. Output cells whose
    source falls outside the padded domain are zero. The operator factors as
    ``S (Py kron Px)`` with a sparse sampling matrix ``S``, so its adjoint is
    exact and cheap.
    """

    def __init__(self, shape, alpha, order=SPLINE_ORDER, pad=SPLINE_PAD):
        h, w = (int(v) for v in shape)
        self.shape = (h, w)
        self.alpha = float(alpha)
        self.py = _prefilter(h, order, pad)
        self.px = _prefilter(w, order, pad)
        hp, wp = h + 2 * pad, w + 2 * pad
        n = h * w
        ys, xs = np.divmod(np.arange(n), w)
        c = grid_center((h, w))
        q = np.stack([xs, ys], axis=1).astype(np.float64)
        # output q reads the input at R(-alpha)(q - c) + c
        src = (q - c) @ rotation_matrix(-self.alpha).T + c + pad
        inside = (src[:, 0] >= 0) & (src[:, 0] <= wp - 1) & (src[:, 1] >= 0) & (src[:, 1] <= hp - 1)
        half = (order + 1) // 2
        base = np.floor(src).astype(np.int64) if order % 2 else np.rint(src).astype(np.int64)
        offsets = np.arange(-half + (order % 2), half + 1) if order % 2 else np.arange(-half, half + 1)
        rows, cols, vals = [], [], []
        rid = np.arange(n)[inside]
        for dy in offsets:
            yy = base[inside, 1] + dy
            wy = bspline(src[inside, 1] - yy, order)
            for dx in offsets:
                xx = base[inside, 0] + dx
                wgt = wy * bspline(src[inside, 0] - xx, order)
                ok = wgt != 0
                rows.append(rid[ok])
                cols.append(_mirror(yy[ok], hp) * wp + _mirror(xx[ok], wp))
                vals.append(wgt[ok])
        m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, hp * wp))
        m.sum_duplicates()
        self.sampler = m
        self.padded_shape = (hp, wp)

    def __call__(self, g):
        g = np.asarray(g, dtype=np.float64)
        lead = g.shape[:-2]
        coef = np.einsum("ai,...ij,bj->...ab", self.py, g, self.px, optimize=True)
        flat = coef.reshape(-1, self.sampler.shape[1])
        return np.ascontiguousarray((self.sampler @ flat.T).T).reshape(lead + self.shape)

    def adjoint(self, g):
        g = np.asarray(g, dtype=np.float64)
        lead = g.shape[:-2]
        back = (self.sampler.T @ g.reshape(-1, self.sampler.shape[0]).T).T
        back = back.reshape(lead + self.padded_shape)
        return np.einsum("ai,...ab,bj->...ij", self.py, back, self.px, optimize=True)

    def matrix(self):
        """Dense (H*W, H*W) matrix; meant for tests on small grids."""
        n = self.shape[0] * self.shape[1]
        return self(np.eye(n).reshape((n,) + self.shape)).reshape(n, n).T


@lru_cache(maxsize=256)
def _rotation(h, w, alpha):
    return GridRotation((h, w), alpha)


def rotation_operator(shape, alpha):
    """Cached ``GridRotation`` for a grid shape and angle."""
    return _rotation(int(shape[0]), int(shape[1]), float(alpha))


def rotate_grid(g, alpha):
    """Rotate the trailing (H, W) axes of ``g`` by ``alpha`` about the grid center."""
    g = np.asarray(g, dtype=np.float64)
    if alpha == 0:
        return g.copy()
    return rotation_operator(g.shape[-2:], alpha)(g)


def pixel_to_grid(points, box, shape):
    """Map pixel coordinates into continuous grid coordinates of a square box.

    ``box`` is ``(cx, cy, side)``; cell centers sit at integer grid coordinates.
    """
    cx, cy, side = box
    h, w = shape
    points = np.asarray(points, dtype=np.float64)
    scale = np.array([w / side, h / side])
    origin = np.array([cx - side / 2.0, cy - side / 2.0])
    return (points - origin) * scale - 0.5


def grid_to_pixel(points, box, shape):
    cx, cy, side = box
    h, w = shape
    points = np.asarray(points, dtype=np.float64)
    scale = np.array([side / w, side / h])
    origin = np.array([cx - side / 2.0, cy - side / 2.0])
    return (points + 0.5) * scale + origin
