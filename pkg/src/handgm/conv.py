"""Zero-padded 2D correlation with its two adjoints.

All functions act on the trailing two axes and broadcast over leading ones.
``correlate_same(h, k)[q] = sum_d k[r + d] * h[q + d]`` for ``|d| <= r``, with
``h`` taken as zero outside the grid.
"""
from __future__ import annotations

import numpy as np
from scipy import fft as sp_fft
from scipy.signal import fftconvolve

AXES = (-2, -1)
# kernels at least this many entries go through FFTs under method="auto"
FFT_MIN_TAPS = 49


def _radius(kernel):
    kh, kw = kernel.shape[-2:]
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd side, got {kernel.shape[-2:]}")
    return kh // 2


def _use_fft(kernel, method):
    if method == "auto":
        return kernel.shape[-1] * kernel.shape[-2] >= FFT_MIN_TAPS
    if method not in ("fft", "direct"):
        raise ValueError(f"unknown method {method!r}")
    return method == "fft"


def _span(d, n):
    """Destination range [lo, hi) for which ``q + d`` stays inside ``[0, n)``."""
    return max(0, -d), min(n, n - d)


def _broadcast_lead(a, b):
    """Broadcast the leading axes of two stacks; fftconvolve only keeps in1's shape."""
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    return np.broadcast_to(a, lead + a.shape[-2:]), np.broadcast_to(b, lead + b.shape[-2:])


def _lead_shape(a, b):
    return np.broadcast_shapes(a.shape[:-2], b.shape[:-2])


def correlate_same(h, kernel, method="auto"):
    h = np.asarray(h, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    r = _radius(kernel)
    if _use_fft(kernel, method):
        return fftconvolve(*_broadcast_lead(h, kernel[..., ::-1, ::-1]), mode="same", axes=AXES)
    H, W = h.shape[-2:]
    out = np.zeros(_lead_shape(h, kernel) + (H, W))
    for dm in range(-r, r + 1):
        m0, m1 = _span(dm, H)
        if m0 >= m1:
            continue
        for dn in range(-r, r + 1):
            n0, n1 = _span(dn, W)
            if n0 >= n1:
                continue
            out[..., m0:m1, n0:n1] += (kernel[..., r + dm, r + dn, None, None]
                                       * h[..., m0 + dm:m1 + dm, n0 + dn:n1 + dn])
    return out


def convolve_same(g, kernel, method="auto"):
    """Adjoint of ``correlate_same`` in its grid argument."""
    g = np.asarray(g, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    r = _radius(kernel)
    if _use_fft(kernel, method):
        return fftconvolve(*_broadcast_lead(g, kernel), mode="same", axes=AXES)
    H, W = g.shape[-2:]
    out = np.zeros(_lead_shape(g, kernel) + (H, W))
    for dm in range(-r, r + 1):
        m0, m1 = _span(dm, H)
        if m0 >= m1:
            continue
        for dn in range(-r, r + 1):
            n0, n1 = _span(dn, W)
            if n0 >= n1:
                continue
            out[..., m0 + dm:m1 + dm, n0 + dn:n1 + dn] += (kernel[..., r + dm, r + dn, None, None]
                                                           * g[..., m0:m1, n0:n1])
    return out


def kernel_gradient(h, g, radius, method="auto"):
    """Adjoint of ``correlate_same`` in its kernel argument.

    Returns ``out[r + d] = sum_q g[q] * h[q + d]`` with the same leading shape
    as the broadcast of ``h`` and ``g``.
    """
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    r = int(radius)
    k = 2 * r + 1
    H, W = h.shape[-2:]
    if method == "fft" or (method == "auto" and k * k >= FFT_MIN_TAPS):
        pad = [(0, 0)] * (h.ndim - 2) + [(r, r), (r, r)]
        return fftconvolve(*_broadcast_lead(np.pad(h, pad), g[..., ::-1, ::-1]), mode="valid", axes=AXES)
    if method not in ("auto", "direct"):
        raise ValueError(f"unknown method {method!r}")
    out = np.zeros(_lead_shape(h, g) + (k, k))
    for dm in range(-r, r + 1):
        m0, m1 = _span(dm, H)
        if m0 >= m1:
            continue
        for dn in range(-r, r + 1):
            n0, n1 = _span(dn, W)
            if n0 >= n1:
                continue
            out[..., r + dm, r + dn] = np.sum(g[..., m0:m1, n0:n1]
                                              * h[..., m0 + dm:m1 + dm, n0 + dn:n1 + dn], axis=AXES)
    return out


class SpectralKernels:
    """Kernels pre-transformed for repeated correlations on one grid size.

    Uses a common FFT size of ``(H + 2r, W + 2r)``, for which circular
    correlation equals the zero-padded one and the kernel gradient can be
    read off a circular cross-correlation without wrap-around.
    """

    def __init__(self, kernels, shape):
        kernels = np.asarray(kernels, dtype=np.float64)
        self.radius = r = _radius(kernels)
        self.shape = (int(shape[0]), int(shape[1]))
        self.size = (self.shape[0] + 2 * r, self.shape[1] + 2 * r)
        padded = np.zeros(kernels.shape[:-2] + self.size)
        padded[..., : 2 * r + 1, : 2 * r + 1] = kernels[..., ::-1, ::-1]
        # entry for displacement d lands at index (-d) mod size
        padded = np.roll(padded, (-r, -r), axis=AXES)
        self.spectra = sp_fft.rfft2(padded, axes=AXES)
        self._taps = np.arange(-r, r + 1)

    def transform(self, x):
        return sp_fft.rfft2(x, s=self.size, axes=AXES)

    def correlate(self, xf, index=...):
        """``correlate_same`` given the spectrum of the grid."""
        h, w = self.shape
        return sp_fft.irfft2(xf * self.spectra[index], s=self.size, axes=AXES)[..., :h, :w]

    def adjoint(self, gf, index=...):
        """``convolve_same`` given the spectrum of the incoming gradient."""
        h, w = self.shape
        return sp_fft.irfft2(gf * np.conj(self.spectra[index]), s=self.size, axes=AXES)[..., :h, :w]

    def kernel_gradient(self, xf, gf):
        """``kernel_gradient`` from the spectra of the grid and of the gradient."""
        c = sp_fft.irfft2(np.conj(gf) * xf, s=self.size, axes=AXES)
        rows = self._taps % self.size[0]
        cols = self._taps % self.size[1]
        return c[..., rows[:, None], cols[None, :]]
