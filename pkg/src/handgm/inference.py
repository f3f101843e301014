"""Sum-product inference on tree-structured keypoint models.

Messages are 2D correlations of a sender's belief product with the directed
displacement kernel of the edge. Two passes over the tree give exact
marginals; a brute-force enumerator is provided as an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import SpectralKernels, _use_fft, convolve_same, correlate_same, kernel_gradient
from .geometry import rotate_grid
from .grid import EPS_FLOOR, argmax_points, floor_maps, normalize_maps
from .pool import ModelPool, validate_weights
from .skeleton import SkeletonTree, message_schedule

BRUTE_FORCE_LIMIT = 10**7


class StateSpaceTooLarge(ValueError):
    pass


def send_message(unary, incoming, kernel, normalize=True, method="auto"):
    """Message from one keypoint to a neighbour.

    ``incoming`` holds the messages the sender received from its other
    neighbours. The result is normalized to sum to one unless ``normalize``
    is false.
    """
    h = np.asarray(unary, dtype=np.float64)
    for m in incoming:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != h.shape:
            raise ValueError(f"message shape {m.shape} does not match unary {h.shape}")
        h = h * m
    if not np.any(h > 0):
        raise ValueError("sender belief is identically zero")
    out = correlate_same(h, kernel, method)
    return out / out.sum() if normalize else out


def _prepare_unaries(unaries, floor=EPS_FLOOR):
    """Normalize each layer and floor it; an empty layer becomes uniform."""
    u = np.maximum(np.asarray(unaries, dtype=np.float64), 0.0)
    empty = u.sum(axis=(-2, -1)) <= 0
    if np.any(empty):
        u = u.copy()
        u[empty] = 1.0
    return floor_maps(normalize_maps(u), floor)


def _check_kernels(kernels, schedule):
    if kernels.shape[-3] != len(schedule):
        raise ValueError(f"{kernels.shape[-3]} kernels for {len(schedule)} directed edges")


@dataclass
class _Pass:
    """Intermediate values of one batched two-pass run, kept for backprop."""

    tree: SkeletonTree
    schedule: tuple
    kernels: np.ndarray      # (L, E, k, k)
    unaries: np.ndarray      # (B, K, H, W)
    messages: list           # E arrays (B, L, H, W)
    beliefs_in: list         # E arrays (B, L, H, W): sender products, or their spectra
    totals: list             # E arrays (B, L, 1, 1), or None when unnormalized
    marg_totals: np.ndarray  # (B, L, K, 1, 1)
    marginals: np.ndarray    # (B, L, K, H, W)
    method: str
    spectral: SpectralKernels | None = None


def _product(unary, messages, skip=()):
    out = unary
    for e in messages:
        if e not in skip:
            out = out * messages[e]
    return out


def run_two_pass(kernels, unaries, tree, schedule=None, normalize_messages=True, method="auto") -> _Pass:
    """Batched two-pass BP.

    ``kernels`` is (L, E, k, k), ``unaries`` (B, K, H, W) strictly positive.
    Returns per-model marginals of shape (B, L, K, H, W) inside a ``_Pass``.
    """
    schedule = message_schedule(tree) if schedule is None else tuple(schedule)
    kernels = np.asarray(kernels, dtype=np.float64)
    unaries = np.asarray(unaries, dtype=np.float64)
    _check_kernels(kernels, schedule)
    if unaries.shape[1] != tree.num_nodes:
        raise ValueError(f"{unaries.shape[1]} unary layers for a {tree.num_nodes}-node tree")
    index = {e: n for n, e in enumerate(schedule)}
    phi = unaries[:, None]  # (B, 1, K, H, W)
    messages = [None] * len(schedule)
    beliefs_in = [None] * len(schedule)
    totals = [None] * len(schedule)
    spectral = SpectralKernels(kernels, unaries.shape[-2:]) if _use_fft(kernels, method) else None
    lead = (unaries.shape[0], kernels.shape[0])
    for e, (i, j) in enumerate(schedule):
        h = phi[:, :, i]
        for k in tree.neighbors(i):
            if k != j:
                h = h * messages[index[(k, i)]]
        h = np.broadcast_to(h, lead + h.shape[-2:])
        if spectral is not None:
            hf = spectral.transform(h)
            u = spectral.correlate(hf, (None, slice(None), e))
            beliefs_in[e] = hf
        else:
            u = correlate_same(h, kernels[None, :, e], "direct")
            beliefs_in[e] = h
        if normalize_messages:
            z = u.sum(axis=(-2, -1), keepdims=True)
            u = u / z
            totals[e] = z
        messages[e] = u
    beliefs = []
    for i in range(tree.num_nodes):
        b = phi[:, :, i]
        for k in tree.neighbors(i):
            b = b * messages[index[(k, i)]]
        beliefs.append(np.broadcast_to(b, messages[0].shape if messages else
                                       (unaries.shape[0], kernels.shape[0]) + unaries.shape[-2:]))
    beliefs = np.stack(beliefs, axis=2)
    marg_totals = beliefs.sum(axis=(-2, -1), keepdims=True)
    return _Pass(tree, schedule, kernels, unaries, messages, beliefs_in, totals, marg_totals,
                 beliefs / marg_totals, method, spectral)


def backprop_two_pass(run: _Pass, grad_marginals) -> np.ndarray:
    """Gradient of a scalar with respect to the kernels, given d/d(marginals).

    ``grad_marginals`` has the marginals' shape (B, L, K, H, W); the result has
    the kernels' shape (L, E, k, k) and is summed over the batch.
    """
    tree, schedule = run.tree, run.schedule
    index = {e: n for n, e in enumerate(schedule)}
    r = run.kernels.shape[-1] // 2
    phi = run.unaries[:, None]
    msgs = run.messages
    g_msgs = [np.zeros(m.shape) for m in msgs]
    p = run.marginals
    gp = np.asarray(grad_marginals, dtype=np.float64)
    # through p = b / sum(b)
    gb = (gp - np.sum(gp * p, axis=(-2, -1), keepdims=True)) / run.marg_totals
    for i in range(tree.num_nodes):
        incoming = {index[(k, i)]: msgs[index[(k, i)]] for k in tree.neighbors(i)}
        for e in incoming:
            g_msgs[e] += gb[:, :, i] * _product(phi[:, :, i], incoming, skip=(e,))
    g_kernels = np.zeros_like(run.kernels)
    for e in range(len(schedule) - 1, -1, -1):
        i, j = schedule[e]
        gm = g_msgs[e]
        if run.totals[e] is not None:
            gu = (gm - np.sum(gm * msgs[e], axis=(-2, -1), keepdims=True)) / run.totals[e]
        else:
            gu = gm
        incoming = {index[(k, i)]: msgs[index[(k, i)]] for k in tree.neighbors(i) if k != j}
        spectral = run.spectral
        if spectral is not None:
            gf = spectral.transform(gu)
            g_kernels[:, e] += spectral.kernel_gradient(run.beliefs_in[e], gf).sum(axis=0)
            if not incoming:
                continue
            gh = spectral.adjoint(gf, (None, slice(None), e))
        else:
            g_kernels[:, e] += kernel_gradient(run.beliefs_in[e], gu, r, "direct").sum(axis=0)
            if not incoming:
                continue
            gh = convolve_same(gu, run.kernels[None, :, e], "direct")
        for e2 in incoming:
            g_msgs[e2] += gh * _product(phi[:, :, i], incoming, skip=(e2,))
    return g_kernels


def two_pass_marginals(model, unaries, tree, schedule=None, floor=EPS_FLOOR, method="auto"):
    """Exact marginals of one graphical model; returns (K, H, W).

    ``model`` holds one kernel per directed edge in schedule order, shape
    (E, k, k). Unaries are normalized per layer and floored at ``floor``.
    """
    phi = _prepare_unaries(unaries, floor)
    run = run_two_pass(np.asarray(model)[None], phi[None], tree, schedule, method=method)
    return run.marginals[0, 0]


def iterative_marginals(model, unaries, tree, n_iters, schedule=None, floor=EPS_FLOOR, method="auto"):
    """Flooding-schedule sum-product with a fixed iteration count.

    Every directed message is refreshed from the previous iteration's messages.
    On a tree the result is exact once ``n_iters`` reaches the tree diameter.
    """
    schedule = message_schedule(tree) if schedule is None else tuple(schedule)
    model = np.asarray(model, dtype=np.float64)
    _check_kernels(model, schedule)
    phi = _prepare_unaries(unaries, floor)
    index = {e: n for n, e in enumerate(schedule)}
    shape = phi.shape[-2:]
    msgs = [np.full(shape, 1.0 / (shape[0] * shape[1])) for _ in schedule]
    for _ in range(n_iters):
        fresh = []
        for e, (i, j) in enumerate(schedule):
            incoming = [msgs[index[(k, i)]] for k in tree.neighbors(i) if k != j]
            fresh.append(send_message(phi[i], incoming, model[e], method=method))
        msgs = fresh
    out = np.empty_like(phi)
    for i in range(tree.num_nodes):
        b = phi[i].copy()
        for k in tree.neighbors(i):
            b *= msgs[index[(k, i)]]
        out[i] = b / b.sum()
    return out


def _pair_table(kernel, shape):
    """Dense psi[x_sender, x_receiver] over flattened cells of a grid."""
    h, w = shape
    r = kernel.shape[-1] // 2
    ys, xs = np.divmod(np.arange(h * w), w)
    dm = ys[:, None] - ys[None, :]
    dn = xs[:, None] - xs[None, :]
    inside = (np.abs(dm) <= r) & (np.abs(dn) <= r)
    table = np.zeros((h * w, h * w))
    table[inside] = kernel[(dm + r)[inside], (dn + r)[inside]]
    return table


def brute_force_marginals(model, unaries, tree, schedule=None, floor=EPS_FLOOR):
    """Marginals by summing the unnormalized joint over every configuration.

    Directed kernels need not be mirror images of each other; for the marginal
    of keypoint ``t`` each tree edge uses the kernel of the direction pointing
    towards ``t``, which is exactly what sum-product computes. With tied
    kernels all targets share one joint distribution.
    """
    schedule = message_schedule(tree) if schedule is None else tuple(schedule)
    model = np.asarray(model, dtype=np.float64)
    _check_kernels(model, schedule)
    phi = _prepare_unaries(unaries, floor)
    n_nodes = tree.num_nodes
    shape = phi.shape[-2:]
    n_cells = shape[0] * shape[1]
    if n_cells**n_nodes > BRUTE_FORCE_LIMIT:
        raise StateSpaceTooLarge(f"{n_cells}^{n_nodes} configurations exceed {BRUTE_FORCE_LIMIT}")
    index = {e: n for n, e in enumerate(schedule)}
    flat_phi = phi.reshape(n_nodes, n_cells)

    def axis_view(arr, axes):
        order = np.argsort(axes)
        arr = np.transpose(arr, order)
        shape = [1] * n_nodes
        for ax, size in zip(np.asarray(axes)[order], arr.shape):
            shape[ax] = size
        return arr.reshape(shape)

    out = np.empty((n_nodes, n_cells))
    for t in range(n_nodes):
        joint = np.ones((n_cells,) * n_nodes)
        for v in range(n_nodes):
            joint = joint * axis_view(flat_phi[v], (v,))
        for a, b in tree.edges:
            if tree.path_length(b, t) > tree.path_length(a, t):
                a, b = b, a
            # a sends towards t: psi[x_a, x_b] from the (a -> b) kernel
            joint = joint * axis_view(_pair_table(model[index[(a, b)]], shape), (a, b))
        marg = joint.sum(axis=tuple(v for v in range(n_nodes) if v != t))
        out[t] = marg / marg.sum()
    return out.reshape(phi.shape)


def pool_marginals(pool: ModelPool, unaries, tree, floor=EPS_FLOOR, method="auto"):
    """Per-model marginals for a batch: (B, K, H, W) -> (B, L, K, H, W)."""
    if tuple(pool.edges) != message_schedule(tree):
        raise ValueError("pool edges do not follow the tree's message schedule")
    phi = _prepare_unaries(unaries, floor)
    return run_two_pass(pool.kernels, phi, tree, pool.edges, method=method).marginals


def mixture_marginals(pool: ModelPool, weights, unaries, tree, floor=EPS_FLOOR, method="auto"):
    """Weighted sum of per-model marginals for one image; returns (K, H, W)."""
    w = validate_weights(weights, pool.n_models)
    per_model = pool_marginals(pool, np.asarray(unaries)[None], tree, floor, method)[0]
    return np.tensordot(w, per_model, axes=1)


def predict(unaries, angle, pool, weights, tree, floor=EPS_FLOOR, method="auto"):
    """Rotate, infer with the mixture, rotate back and decode.

    ``unaries`` live in the original frame. Returns the renormalized
    original-frame confidence maps (K, H, W) and the decoded ``(x, y)`` grid
    positions (K, 2).
    """
    rotated = rotate_grid(normalize_maps(unaries), angle)
    maps = mixture_marginals(pool, weights, rotated, tree, floor, method)
    maps = normalize_maps(rotate_grid(maps, -angle))
    return maps, argmax_points(maps)
