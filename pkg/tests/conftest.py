import numpy as np
import pytest

from handgm.skeleton import SkeletonTree, build_default_hand_tree


@pytest.fixture
def hand_tree():
    return build_default_hand_tree()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tree(rng, n):
    """Random labelled tree on ``n`` nodes: each node attaches to an earlier one."""
    edges = [(int(rng.integers(i)), i) for i in range(1, n)]
    return SkeletonTree(n, tuple(edges))


def chain(n):
    return SkeletonTree(n, tuple((i, i + 1) for i in range(n - 1)))


def gradient_instance(rng, n_nodes=2, shape=(3, 3), radius=1, n_models=1, angle=0.0):
    """Random tiny training instance: pool, weights, unaries, angle, targets, tree."""
    from handgm.grid import render_gaussians
    from handgm.pool import ModelPool
    from handgm.skeleton import message_schedule

    tree = random_tree(rng, n_nodes)
    k = 2 * radius + 1
    edges = message_schedule(tree)
    pool = ModelPool(rng.uniform(0.1, 1.0, (n_models, len(edges), k, k)), edges, radius)
    weights = rng.dirichlet(np.ones(n_models))
    unaries = rng.random((n_nodes,) + shape) + 0.05
    centers = rng.uniform(0, min(shape) - 1, size=(n_nodes, 2))
    targets = render_gaussians(shape, centers, 1.0)
    return pool, weights, unaries, angle, targets, tree


def finite_difference(pool, weights, unaries, angle, targets, tree, step=1e-4, method="direct"):
    """Central differences of the heatmap loss with respect to every kernel entry."""
    from handgm.learning import pipeline_loss_and_grad

    def loss(kernels):
        losses, _, _ = pipeline_loss_and_grad(kernels, unaries[None], [angle], np.asarray(weights)[None],
                                              targets[None], tree, pool.edges, method=method, need_grad=False)
        return losses[0]

    base = pool.kernels.copy()
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += step
        minus[idx] -= step
        grad[idx] = (loss(plus) - loss(minus)) / (2 * step)
    return grad


def relative_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
