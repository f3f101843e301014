"""Training the pool's kernels on the heatmap loss.

The loss compares the mixture's confidence maps, rotated back into the
original frame and renormalized, with normalized Gaussian targets. Gradients
are propagated by hand through every stage of the pipeline.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import pixel_to_grid, rotate_grid, rotation_operator
from .grid import DEFAULT_SIGMA, EPS_FLOOR, normalize_maps, render_gaussians
from .inference import _prepare_unaries, backprop_two_pass, run_two_pass
from .io import atomic_write
from .pool import ModelPool

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    floor: float = EPS_FLOOR
    target_sigma: float = DEFAULT_SIGMA
    method: str = "auto"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class GmLossReport:
    loss: float
    per_keypoint: np.ndarray


def gm_loss(predicted, targets) -> GmLossReport:
    """Sum over keypoints of the squared Frobenius distance between maps."""
    predicted = np.asarray(predicted, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predicted.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {targets.shape}")
    per = ((predicted - targets) ** 2).sum(axis=(-2, -1))
    return GmLossReport(float(per.sum()), per)


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, param, grad):
        """Update ``param`` in place."""
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _rotate_back_adjoint(g, angle):
    """Adjoint of ``rotate_grid(., -angle)`` on a (K, H, W) stack."""
    if angle == 0:
        return g
    return rotation_operator(g.shape[-2:], -angle).adjoint(g)


def pipeline_loss_and_grad(kernels, unaries, angles, weights, targets, tree, schedule=None,
                           floor=EPS_FLOOR, method="auto", need_grad=True):
    """Per-sample losses and the kernel gradient of their sum.

    Shapes: kernels (L, E, k, k); unaries and targets (B, K, H, W) in the
    original frame; angles (B,); weights (B, L). Weights and angles are held
    constant.
    """
    unaries = np.asarray(unaries, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    angles = [float(a) for a in angles]
    phi = np.stack([_prepare_unaries(rotate_grid(normalize_maps(u), a), floor)
                    for u, a in zip(unaries, angles)])
    run = run_two_pass(kernels, phi, tree, schedule, method=method)
    mixed = np.einsum("bl,blkhw->bkhw", weights, run.marginals)
    back = np.stack([rotate_grid(p, -a) for p, a in zip(mixed, angles)])
    totals = back.sum(axis=(-2, -1), keepdims=True)
    pred = back / totals
    resid = pred - targets
    losses = (resid**2).sum(axis=(1, 2, 3))
    if not need_grad:
        return losses, None, pred
    g_pred = 2.0 * resid
    g_back = (g_pred - np.sum(g_pred * pred, axis=(-2, -1), keepdims=True)) / totals
    g_mixed = np.stack([_rotate_back_adjoint(g, a) for g, a in zip(g_back, angles)])
    g_marg = weights[:, :, None, None, None] * g_mixed[:, None]
    return losses, backprop_two_pass(run, g_marg), pred


def gm_grad(pool: ModelPool, weights, unaries, angle, targets, tree, floor=EPS_FLOOR, method="auto"):
    """Exact gradient of ``gm_loss`` for one sample; same shape as ``pool.kernels``."""
    _, grad, _ = pipeline_loss_and_grad(pool.kernels, np.asarray(unaries)[None], [angle],
                                        np.asarray(weights)[None], np.asarray(targets)[None],
                                        tree, pool.edges, floor, method)
    if pool.tied:
        grad = _tie_gradient(pool, grad)
    return grad


def _tie_gradient(pool, grad):
    grad = grad.copy()
    for a, b in pool.reverse_pairs():
        total = grad[:, a] + grad[:, b, ::-1, ::-1]
        grad[:, a] = total
        grad[:, b] = total[:, ::-1, ::-1]
    return grad


def sample_targets(sample, shape, sigma=DEFAULT_SIGMA):
    """Normalized Gaussian maps at the ground-truth grid positions."""
    return render_gaussians(shape, pixel_to_grid(sample.pose, sample.box, shape), sigma)


def train_gm(pool: ModelPool, dataset, tree, angle_provider, weight_provider,
             config: TrainConfig | None = None, unary_provider=None):
    """Mini-batch Adam on the mean heatmap loss.

    ``angle_provider(sample)`` returns degrees, ``weight_provider(sample)`` a
    mixture weight vector and ``unary_provider(sample)`` the (K, H, W) unary
    maps (defaults to ``sample.unaries``). Returns a new pool and the mean loss
    of each epoch, measured while training.
    """
    config = config or TrainConfig()
    if not dataset:
        raise ValueError("empty training set")
    unary_provider = unary_provider or (lambda s: s.unaries)
    pool = pool.copy()
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            unaries = np.stack([np.asarray(unary_provider(s), dtype=np.float64) for s in batch])
            bad = np.flatnonzero(~np.isfinite(unaries).all(axis=(1, 2, 3)))
            if len(bad):
                sid = getattr(batch[bad[0]], "sample_id", order[start + bad[0]])
                raise FloatingPointError(f"non-finite unary maps for sample {sid!r} in epoch {epoch}")
            shape = unaries.shape[-2:]
            targets = np.stack([sample_targets(s, shape, config.target_sigma) for s in batch])
            angles = [angle_provider(s) for s in batch]
            weights = np.stack([weight_provider(s) for s in batch])
            losses, grad, _ = pipeline_loss_and_grad(pool.kernels, unaries, angles, weights, targets,
                                                     tree, pool.edges, config.floor, config.method)
            bad = np.flatnonzero(~np.isfinite(losses))
            if len(bad):
                sid = getattr(batch[bad[0]], "sample_id", order[start + bad[0]])
                raise FloatingPointError(f"non-finite loss for sample {sid!r} in epoch {epoch}")
            grad /= len(batch)
            if pool.tied:
                grad = _tie_gradient(pool, grad)
            if config.lr > 0:
                opt.step(pool.kernels, grad)
                pool.project(config.floor)
            total += float(losses.sum())
        history.append(total / len(dataset))
        log.info("epoch %d mean loss %.6f", epoch, history[-1])
    return pool, history


def write_loss_history(path, history):
    with atomic_write(path, "w") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(float(loss))])
