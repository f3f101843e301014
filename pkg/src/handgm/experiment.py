"""End-to-end pipeline pieces shared by the CLI and the ablation study."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterModel, kmeans_fit, pose_feature, purity, soft_assign
from .geometry import grid_center, grid_to_pixel, rotate_grid, rotate_points
from .grid import EPS_FLOOR, argmax_points, normalize_maps
from .inference import _prepare_unaries, run_two_pass
from .learning import TrainConfig, train_gm
from .metrics import PckConfig, PckReport, pck
from .pool import ModelPool, init_empirical_pool, uniform_weights
from .skeleton import SkeletonTree, build_default_hand_tree
from .synth import SynthConfig, generate_dataset, oracle_angle, unary_argmax_pose

log = logging.getLogger(__name__)


def canonical_grid_pose(grid_pose, angle, shape):
    """Grid-unit pose rotated by ``angle`` about the grid center."""
    return rotate_points(grid_pose, angle, grid_center(shape))


def feature_of(grid_pose, angle, shape, tree):
    """Clustering feature of a grid pose, canonicalized with a given angle.

    Offsets are divided by the grid width, i.e. by the box side in grid units.
    """
    return pose_feature(canonical_grid_pose(grid_pose, angle, shape), tree, scale=float(shape[1]))


def fit_clusters(samples, n_clusters, tree, angle_fn=oracle_angle, seed=0, max_iters=100) -> ClusterModel:
    feats = np.stack([feature_of(s.grid_pose(), angle_fn(s), s.grid_shape, tree) for s in samples])
    return kmeans_fit(feats, n_clusters, seed=seed, max_iters=max_iters)


def empirical_pool(samples, clusters: ClusterModel | None, tree, radius, angle_fn=oracle_angle,
                   smoothing=1.0, floor=EPS_FLOOR) -> ModelPool:
    """Kernels from hard cluster labels; ``clusters=None`` gives a single model."""
    poses, labels = [], []
    for s in samples:
        angle = angle_fn(s)
        gp = s.grid_pose()
        poses.append(canonical_grid_pose(gp, angle, s.grid_shape))
        labels.append(0 if clusters is None else int(clusters.assign(feature_of(gp, angle, s.grid_shape, tree))[0]))
    n_models = 1 if clusters is None else clusters.n_clusters
    return init_empirical_pool(tree, np.stack(poses), labels, n_models, radius, smoothing, floor)


class WeightSource:
    """Mixture weights for a sample.

    ``truth`` uses the annotated pose, ``unary`` the pose decoded from the raw
    unary maps; both are canonicalized with the sample's angle before the
    soft assignment. Without a cluster model the weights are uniform.
    """

    def __init__(self, clusters: ClusterModel | None, tree, n_models, mode="unary", angle_fn=oracle_angle):
        if mode not in ("truth", "unary"):
            raise ValueError(f"unknown weight mode {mode!r}")
        if clusters is not None and clusters.n_clusters != n_models:
            raise ValueError(f"cluster model has {clusters.n_clusters} clusters but the pool has {n_models} models")
        self.clusters = clusters
        self.tree = tree
        self.n_models = n_models
        self.mode = mode
        self.angle_fn = angle_fn

    def __call__(self, sample):
        if self.clusters is None:
            return uniform_weights(self.n_models)
        if self.mode == "truth":
            gp = sample.grid_pose()
        else:
            gp = argmax_points(sample.unaries)
        return soft_assign(self.clusters, feature_of(gp, self.angle_fn(sample), sample.grid_shape, self.tree))


def predict_batch(pool: ModelPool, tree, unaries, angles, weights, floor=EPS_FLOOR, method="auto"):
    """Batched counterpart of ``inference.predict``; returns maps and grid points."""
    phi = np.stack([_prepare_unaries(rotate_grid(normalize_maps(u), a), floor)
                    for u, a in zip(unaries, angles)])
    marg = run_two_pass(pool.kernels, phi, tree, pool.edges, method=method).marginals
    mixed = np.einsum("bl,blkhw->bkhw", np.asarray(weights, dtype=np.float64), marg)
    maps = normalize_maps(np.stack([rotate_grid(m, -a) for m, a in zip(mixed, angles)]))
    return maps, argmax_points(maps)


def predict_samples(pool, tree, samples, angle_fn, weight_fn, batch_size=32, floor=EPS_FLOOR):
    """Pixel-space predicted poses for every sample."""
    out = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        unaries = np.stack([np.asarray(s.unaries, dtype=np.float64) for s in batch])
        _, pts = predict_batch(pool, tree, unaries, [angle_fn(s) for s in batch],
                               np.stack([weight_fn(s) for s in batch]), floor)
        out.extend(grid_to_pixel(p, s.box, s.grid_shape) for p, s in zip(pts, batch))
    return out


def score(predictions, samples, cfg: PckConfig | None = None) -> PckReport:
    return pck(predictions, [s.pose for s in samples], [s.box for s in samples], cfg or PckConfig())


@dataclass
class AblationConfig:
    n_train: int = 2000
    n_test: int = 500
    n_prototypes: int = 4
    grid: tuple = (32, 32)
    p_drop: float = 0.3
    p_distract: float = 0.3
    n_models: int = 4
    radius: int = 12
    epochs: int = 1
    lr: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    train_weights: str = "truth"
    test_weights: str = "unary"
    synth: dict = field(default_factory=dict)


@dataclass
class AblationResult:
    reports: dict
    purity: float
    histories: dict
    seconds: float

    def mpck(self, name):
        return self.reports[name].mpck


def run_ablation(cfg: AblationConfig, tree: SkeletonTree | None = None) -> AblationResult:
    """Unary baseline vs single unrotated model vs rotated mixture on synthetic data."""
    t0 = time.perf_counter()
    tree = tree or build_default_hand_tree()
    common = dict(n_prototypes=cfg.n_prototypes, grid=cfg.grid, p_drop=cfg.p_drop,
                  p_distract=cfg.p_distract, **cfg.synth)
    train = generate_dataset(SynthConfig(n_samples=cfg.n_train, seed=cfg.seed, **common))
    test = generate_dataset(SynthConfig(n_samples=cfg.n_test, seed=cfg.seed + 1, **common))
    tcfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    no_rotation = lambda s: 0.0  # noqa: E731
    reports, histories = {}, {}

    reports["unary"] = score([unary_argmax_pose(s) for s in test], test)

    single = empirical_pool(train, None, tree, cfg.radius, angle_fn=no_rotation)
    flat = WeightSource(None, tree, 1)
    single, histories["single"] = train_gm(single, train, tree, no_rotation, flat, tcfg)
    reports["single"] = score(predict_samples(single, tree, test, no_rotation, flat), test)

    clusters = fit_clusters(train, cfg.n_models, tree, seed=cfg.seed)
    labels = [int(clusters.assign(feature_of(s.grid_pose(), oracle_angle(s), s.grid_shape, tree))[0])
              for s in train]
    mix = empirical_pool(train, clusters, tree, cfg.radius)
    mix, histories["mixture"] = train_gm(mix, train, tree, oracle_angle,
                                         WeightSource(clusters, tree, cfg.n_models, cfg.train_weights), tcfg)
    reports["mixture"] = score(predict_samples(mix, tree, test, oracle_angle,
                                               WeightSource(clusters, tree, cfg.n_models, cfg.test_weights)),
                               test)
    return AblationResult(reports, purity(labels, [s.prototype_id for s in train]), histories,
                          time.perf_counter() - t0)
