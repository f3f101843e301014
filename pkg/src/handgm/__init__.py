"""Rotation-invariant mixture of tree-structured graphical models for hand keypoints."""
from .inference import brute_force_marginals, mixture_marginals, predict, send_message, two_pass_marginals
from .pool import ModelPool, init_empirical_pool, init_uniform_pool
from .skeleton import SkeletonTree, build_default_hand_tree, message_schedule

__version__ = "0.1.0"

__all__ = [
    "ModelPool", "SkeletonTree", "brute_force_marginals", "build_default_hand_tree", "init_empirical_pool",
    "init_uniform_pool", "message_schedule", "mixture_marginals", "predict", "send_message", "two_pass_marginals",
]
