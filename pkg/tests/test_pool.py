import warnings

import numpy as np
import pytest

from handgm.pool import (ModelPool, displacement_histogram, init_empirical_pool, init_uniform_pool, one_hot_weights,
                         tie_kernels, uniform_weights, validate_weights)
from handgm.skeleton import SkeletonTree


class TestUniformPool:
    def test_hand_tree_radius_one(self, hand_tree):
        pool = init_uniform_pool(hand_tree, 1, 1)
        assert pool.kernels.shape == (1, 40, 3, 3)
        np.testing.assert_allclose(pool.kernels, 1 / 9)

    def test_kernel_sums(self, hand_tree):
        pool = init_uniform_pool(hand_tree, 3, 4)
        np.testing.assert_allclose(pool.kernels.sum(axis=(-2, -1)), 1.0)

    @pytest.mark.parametrize("n_models, radius", [(0, 2), (2, 0)])
    def test_rejects(self, hand_tree, n_models, radius):
        with pytest.raises(ValueError):
            init_uniform_pool(hand_tree, n_models, radius)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ModelPool(np.ones((1, 2, 3, 3)), ((0, 1),), 1)


class TestEmpiricalPool:
    def test_degenerate_displacement(self):
        tree = SkeletonTree(2, ((0, 1),))
        # keypoint 1 always sits 3 cells below keypoint 0
        poses = np.zeros((20, 2, 2))
        poses[:, 1] = [5.0, 4.0]
        poses[:, 0] = [5.0, 7.0]
        pool = init_empirical_pool(tree, poses, np.zeros(20, int), 1, radius=5)
        e = pool.edge_index[(0, 1)]
        k = pool.kernels[0, e]
        assert np.unravel_index(k.argmax(), k.shape) == (5 + 3, 5)
        back = pool.kernels[0, pool.edge_index[(1, 0)]]
        assert np.unravel_index(back.argmax(), back.shape) == (5 - 3, 5)

    def test_two_equal_modes(self):
        h = displacement_histogram([(-2, 0), (2, 0)], radius=4, smoothing=1.0)
        assert h[4, 2] == pytest.approx(h[4, 6], rel=1e-12)
        assert h[4, 2] > h[4, 4]

    def test_mode_of_gaussian_sample(self, rng):
        mean = np.array([1.7, -2.2])
        d = rng.normal(mean, 1.0, size=(100, 2))
        h = displacement_histogram(d, radius=6, smoothing=1.0)
        m, n = np.unravel_index(h.argmax(), h.shape)
        assert abs((n - 6) - mean[0]) <= 1 and abs((m - 6) - mean[1]) <= 1

    def test_floor_and_normalization(self):
        h = displacement_histogram([(0, 0)], radius=3, smoothing=0.0, floor=1e-6)
        assert h.min() >= 1e-6 * 0.99 and h.sum() == pytest.approx(1.0)

    def test_empty_cluster_warns(self, hand_tree, rng):
        poses = rng.normal(size=(5, 21, 2))
        with pytest.warns(UserWarning, match="cluster 1 is empty"):
            pool = init_empirical_pool(hand_tree, poses, np.zeros(5, int), 2, radius=2)
        np.testing.assert_allclose(pool.kernels[1], 1 / 25)

    def test_bad_cluster_id(self, hand_tree):
        with pytest.raises(ValueError):
            init_empirical_pool(hand_tree, np.zeros((1, 21, 2)), [3], 2, radius=2)


class TestTying:
    def test_tie_mirrors_directions(self, hand_tree, rng):
        pool = init_uniform_pool(hand_tree, 2, 2, tied=True)
        pool.kernels[:] = rng.random(pool.kernels.shape)
        tie_kernels(pool)
        for a, b in pool.reverse_pairs():
            np.testing.assert_array_equal(pool.kernels[:, a], pool.kernels[:, b, ::-1, ::-1])

    def test_project_keeps_floor(self, hand_tree):
        pool = init_uniform_pool(hand_tree, 1, 1)
        pool.kernels[0, 0, 0, 0] = -3.0
        pool.project(1e-8)
        assert pool.kernels.min() >= 1e-8


class TestWeights:
    def test_uniform(self):
        np.testing.assert_array_equal(uniform_weights(4), [0.25] * 4)

    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot_weights(3, 1), [0, 1, 0])
        with pytest.raises(IndexError):
            one_hot_weights(3, 3)

    def test_valid(self):
        validate_weights(uniform_weights(5), 5)
        validate_weights(one_hot_weights(5, 2), 5)

    @pytest.mark.parametrize("w", [[0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0], []])
    def test_invalid(self, w):
        with pytest.raises(ValueError):
            validate_weights(w)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            validate_weights([1.0], 2)


def test_copy_is_independent(hand_tree):
    pool = init_uniform_pool(hand_tree, 1, 1)
    other = pool.copy()
    other.kernels[:] = 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert pool.kernels[0, 0, 0, 0] == pytest.approx(1 / 9)
