import numpy as np
import pytest

from conftest import finite_difference, gradient_instance, relative_error
from handgm.learning import Adam, TrainConfig, gm_grad, gm_loss, pipeline_loss_and_grad, train_gm, write_loss_history
from handgm.pool import init_uniform_pool, uniform_weights
from handgm.synth import SynthConfig, generate_dataset


class TestLoss:
    def test_zero(self, rng):
        p = rng.random((2, 3, 3))
        assert gm_loss(p, p).loss == 0.0

    def test_disjoint_one_hot(self):
        a = np.zeros((1, 2, 2))
        b = np.zeros((1, 2, 2))
        a[0, 0, 0] = b[0, 1, 1] = 1.0
        np.testing.assert_array_equal(gm_loss(a, b).per_keypoint, [2.0])

    def test_uniform_vs_one_hot(self):
        t = np.zeros((1, 2, 2))
        t[0, 0, 0] = 1.0
        assert gm_loss(np.full((1, 2, 2), 0.25), t).loss == pytest.approx(0.75, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gm_loss(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


class TestGradient:
    @pytest.mark.parametrize("angle", [0.0, 23.0])
    @pytest.mark.parametrize("method", ["direct", "fft"])
    def test_matches_finite_differences(self, rng, angle, method):
        inst = gradient_instance(rng, n_nodes=3, shape=(4, 4), radius=1, n_models=2, angle=angle)
        analytic = gm_grad(*inst, method=method)
        numeric = finite_difference(*inst, method=method)
        assert relative_error(analytic, numeric) <= 1e-6

    def test_scale_invariance(self, rng):
        pool, w, u, a, t, tree = gradient_instance(rng, n_nodes=2, n_models=1)
        g = gm_grad(pool, w, u, a, t, tree)
        # loss is invariant to rescaling one kernel, so the gradient is orthogonal to it
        for e in range(pool.kernels.shape[1]):
            assert abs(np.sum(g[0, e] * pool.kernels[0, e])) <= 1e-9

    def test_zero_at_exact_fit(self, rng):
        pool, w, u, a, _, tree = gradient_instance(rng, n_nodes=3, n_models=2, angle=-40.0)
        _, _, pred = pipeline_loss_and_grad(pool.kernels, u[None], [a], w[None], np.zeros((1,) + u.shape), tree,
                                            pool.edges, need_grad=False)
        g = gm_grad(pool, w, u, a, pred[0], tree)
        assert np.linalg.norm(g) <= 1e-9

    def test_tied_gradient_is_mirrored(self, rng):
        pool, w, u, a, t, tree = gradient_instance(rng, n_nodes=3)
        pool.tied = True
        pool.project()
        g = gm_grad(pool, w, u, a, t, tree)
        for i, j in pool.reverse_pairs():
            np.testing.assert_allclose(g[:, i], g[:, j, ::-1, ::-1], atol=1e-15)


class TestAdam:
    def test_first_step_size(self):
        p = np.array([1.0, -2.0])
        Adam(lr=0.1).step(p, np.array([3.0, -0.5]))
        np.testing.assert_allclose(p, [0.9, -1.9], atol=1e-8)

    def test_minimizes_quadratic(self):
        p = np.array([5.0])
        opt = Adam(lr=0.1)
        for _ in range(500):
            opt.step(p, 2 * p)
        assert abs(p[0]) < 1e-2


@pytest.fixture
def tiny_set():
    return generate_dataset(SynthConfig(n_samples=6, grid=(8, 8), seed=2))


def _flat(n):
    return lambda s: uniform_weights(n)


class TestTrain:
    def test_zero_learning_rate_keeps_pool(self, hand_tree, tiny_set):
        pool = init_uniform_pool(hand_tree, 2, 2)
        pool.kernels[:] = np.random.default_rng(0).uniform(1e-9, 1, pool.kernels.shape)
        out, history = train_gm(pool, tiny_set, hand_tree, lambda s: 0.0, _flat(2),
                                TrainConfig(lr=0.0, epochs=2, batch_size=4))
        np.testing.assert_array_equal(out.kernels, pool.kernels)
        assert len(history) == 2 and history[0] == history[1]

    def test_projection_floor(self, hand_tree, tiny_set):
        cfg = TrainConfig(lr=0.05, epochs=3, batch_size=2, floor=1e-6)
        out, _ = train_gm(init_uniform_pool(hand_tree, 1, 2), tiny_set, hand_tree, lambda s: 0.0, _flat(1), cfg)
        assert out.kernels.min() >= 1e-6

    def test_loss_decreases(self, hand_tree, tiny_set):
        cfg = TrainConfig(lr=1e-3, epochs=15, batch_size=6)
        _, history = train_gm(init_uniform_pool(hand_tree, 1, 2), tiny_set[:1], hand_tree, lambda s: 0.0,
                              _flat(1), cfg)
        assert history[-1] < 0.7 * history[0]

    def test_deterministic(self, hand_tree, tiny_set):
        cfg = TrainConfig(lr=1e-3, epochs=2, batch_size=4, seed=11)
        runs = [train_gm(init_uniform_pool(hand_tree, 1, 2), tiny_set, hand_tree, lambda s: 15.0, _flat(1), cfg)
                for _ in range(2)]
        assert runs[0][1] == runs[1][1]
        np.testing.assert_array_equal(runs[0][0].kernels, runs[1][0].kernels)

    def test_non_finite_names_sample(self, hand_tree, tiny_set):
        bad = tiny_set[3]
        unary = lambda s: np.full(s.unaries.shape, np.nan) if s is bad else s.unaries  # noqa: E731
        with pytest.raises(FloatingPointError, match=bad.sample_id):
            train_gm(init_uniform_pool(hand_tree, 1, 1), tiny_set, hand_tree, lambda s: 0.0, _flat(1),
                     TrainConfig(lr=1e-3), unary_provider=unary)

    def test_empty_dataset(self, hand_tree):
        with pytest.raises(ValueError):
            train_gm(init_uniform_pool(hand_tree, 1, 1), [], hand_tree, lambda s: 0.0, _flat(1))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


def test_loss_history_csv(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_history(path, [0.5, 0.25])
    assert path.read_text().splitlines() == ["epoch,mean_loss", "0,0.5", "1,0.25"]
