"""Procedural hand poses, corrupted unary heatmaps and angle providers.

Poses come from a few canonical finger configurations drawn in an upright
hand frame, perturbed, rotated and placed in a pixel image. Unary maps are
Gaussian bumps at the true joints that are then corrupted in two ways the tree
model can undo: a joint's evidence is replaced by noise with a spurious peak,
or a stronger decoy peak appears on the mirrored finger.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import canonical_angle, grid_to_pixel, pixel_to_grid, rotate_points, wrap_angle
from .grid import argmax_points, normalize_maps, render_gaussians
from .skeleton import NUM_FINGERS, NUM_KEYPOINTS, finger_of

BOX_SCALE = 2.2

# upright hand frame: wrist at the origin, fingers towards -y, hand length ~1
_FINGER_BASES = np.array([[-0.24, -0.14], [-0.15, -0.46], [0.0, -0.50], [0.13, -0.46], [0.24, -0.40]])
_FINGER_HEADINGS = np.array([-48.0, -10.0, 0.0, 10.0, 22.0])
_BONES = np.array([[0.20, 0.15, 0.12], [0.24, 0.14, 0.10], [0.27, 0.16, 0.11],
                   [0.25, 0.15, 0.10], [0.19, 0.12, 0.09]])

# per-finger curl in [0, 1] (thumb first) and an optional thumb heading override
PROTOTYPES = {
    "open": ((0.0, 0.0, 0.0, 0.0, 0.0), None),
    "fist": ((0.7, 1.0, 1.0, 1.0, 1.0), -20.0),
    "point": ((0.7, 0.0, 1.0, 1.0, 1.0), -20.0),
    "victory": ((0.7, 0.0, 0.0, 1.0, 1.0), -20.0),
    "pinch": ((0.3, 0.55, 0.0, 0.0, 0.0), -5.0),
}
PROTOTYPE_NAMES = tuple(PROTOTYPES)
_MAX_FLEX = np.radians([75.0, 85.0, 80.0])


def prototype_pose(name):
    """Canonical (21, 2) pose of a named finger configuration."""
    curls, thumb_heading = PROTOTYPES[name]
    pose = np.zeros((NUM_KEYPOINTS, 2))
    for f in range(NUM_FINGERS):
        heading = _FINGER_HEADINGS[f]
        if f == 0 and thumb_heading is not None:
            heading = thumb_heading
        axis = np.array([np.sin(np.radians(heading)), -np.cos(np.radians(heading))])
        # a curled finger folds in the plane through its axis; seen from the front
        # each bone projects onto the axis with length * cos(accumulated flexion)
        pos = _FINGER_BASES[f].copy()
        pose[4 * f + 1] = pos
        flex = 0.0
        for b in range(3):
            flex += curls[f] * _MAX_FLEX[b]
            pos = pos + _BONES[f, b] * np.cos(flex) * axis
            pose[4 * f + 2 + b] = pos
    return pose


def mirror_keypoint(k):
    """Same joint on the mirrored finger (thumb<->pinky, index<->ring, middle->index)."""
    f = finger_of(k)
    if f is None:
        return None
    mirrored = {0: 4, 1: 3, 2: 1, 3: 1, 4: 0}[f]
    return 4 * mirrored + (k - 1) % 4 + 1


@dataclass
class SynthConfig:
    n_samples: int = 100
    n_prototypes: int = 4
    grid: tuple = (32, 32)
    sigma_pose: float = 0.4
    rotation_range: float = 180.0
    p_drop: float = 0.3
    p_distract: float = 0.3
    sigma_jit: float = 0.5
    sigma_g: float = 1.0
    image_size: float = 368.0
    hand_scale: tuple = (90.0, 130.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_drop", "p_distract"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.sigma_g > 0:
            raise ValueError("sigma_g must be positive")
        if self.sigma_pose < 0 or self.sigma_jit < 0:
            raise ValueError("noise levels must be non-negative")
        if not 1 <= self.n_prototypes <= len(PROTOTYPES):
            raise ValueError(f"n_prototypes must lie in [1, {len(PROTOTYPES)}]")
        self.grid = tuple(int(v) for v in self.grid)
        self.hand_scale = tuple(float(v) for v in self.hand_scale)


@dataclass
class Sample:
    sample_id: str
    pose: np.ndarray          # (21, 2) pixels, original frame
    box: tuple                # (cx, cy, side) pixels
    unaries: np.ndarray       # (21, H, W) float32, original frame
    prototype_id: int = -1
    cluster_id: int | None = None

    @property
    def grid_shape(self):
        return self.unaries.shape[-2:]

    def grid_pose(self):
        return pixel_to_grid(self.pose, self.box, self.grid_shape)


def hand_box(pose, scale=BOX_SCALE):
    pose = np.asarray(pose, dtype=np.float64)
    lo, hi = pose.min(axis=0), pose.max(axis=0)
    center = (lo + hi) / 2.0
    return float(center[0]), float(center[1]), float(scale * max(hi - lo))


def _sample_pose(cfg, proto, rng):
    base = prototype_pose(PROTOTYPE_NAMES[proto])
    scale = rng.uniform(*cfg.hand_scale)
    # noise is specified in grid cells; one cell spans side / W pixels
    extent = float(max(base.max(axis=0) - base.min(axis=0))) * scale
    cell = BOX_SCALE * extent / cfg.grid[1]
    pose = base * scale + rng.normal(0.0, cfg.sigma_pose * cell, size=base.shape)
    beta = rng.uniform(-cfg.rotation_range, cfg.rotation_range)
    pose = rotate_points(pose, beta)
    margin = cfg.image_size * 0.3
    offset = rng.uniform(margin, cfg.image_size - margin, size=2)
    return pose - pose.mean(axis=0) + offset


def _corrupt(cfg, clean_centers, rng):
    shape = cfg.grid
    h, w = shape
    centers = clean_centers + rng.normal(0.0, cfg.sigma_jit, size=clean_centers.shape) \
        if cfg.sigma_jit > 0 else clean_centers.copy()
    maps = render_gaussians(shape, centers, cfg.sigma_g)
    for k in range(NUM_KEYPOINTS):
        if rng.random() < cfg.p_drop:
            noise = rng.uniform(0.0, 1.0, size=shape)
            spot = rng.uniform([0, 0], [w - 1, h - 1])
            peak = render_gaussians(shape, spot[None], cfg.sigma_g)[0]
            maps[k] = 0.5 * noise / noise.sum() + 0.5 * peak
            continue
        mirror = mirror_keypoint(k)
        if mirror is not None and rng.random() < cfg.p_distract:
            strength = rng.uniform(1.1, 1.6)
            decoy = render_gaussians(shape, centers[mirror][None], cfg.sigma_g)[0]
            maps[k] = maps[k] + strength * decoy
    return normalize_maps(maps)


def generate_sample(cfg: SynthConfig, index: int, rng) -> Sample:
    proto = int(rng.integers(cfg.n_prototypes))
    pose = _sample_pose(cfg, proto, rng)
    box = hand_box(pose)
    centers = pixel_to_grid(pose, box, cfg.grid)
    unaries = _corrupt(cfg, centers, rng).astype(np.float32)
    return Sample(f"s{cfg.seed}_{index:06d}", pose, box, unaries, proto)


def generate_dataset(cfg: SynthConfig) -> list[Sample]:
    """Samples with independent per-index random streams derived from ``cfg.seed``."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_samples)
    return [generate_sample(cfg, i, np.random.default_rng(s)) for i, s in enumerate(seeds)]


def oracle_angle(sample, sigma=0.0, rng=None):
    """Canonical angle of the annotated pose, optionally with Gaussian noise."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    angle = canonical_angle(sample.pose)
    if sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        angle += rng.normal(0.0, sigma)
    return wrap_angle(angle)


class NoisyAngleProvider:
    """Imperfect stand-in for a learned angle regressor."""

    def __init__(self, sigma=0.0, seed=0):
        self.sigma = sigma
        self.rng = np.random.default_rng(seed)

    def __call__(self, sample):
        return oracle_angle(sample, self.sigma, self.rng)


def unary_argmax_pose(sample):
    """Pixel pose decoded from the raw unary maps (the no-graphical-model baseline)."""
    return grid_to_pixel(argmax_points(sample.unaries), sample.box, sample.grid_shape)

