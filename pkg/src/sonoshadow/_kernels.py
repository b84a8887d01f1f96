"""Correlation kernels shared by conv2d and its transpose.

Three array kernels cover both operators in both directions, because the
transposed convolution is literally the adjoint of cross-correlation:

    corr2d_forward      conv2d forward, deconv2d input-gradient
    corr2d_input_grad   conv2d input-gradient, deconv2d forward
    corr2d_weight_grad  weight gradient of both (with roles of the two
                        activations swapped for deconv2d)

Each kernel exists twice: a numba ``@njit`` version built on im2col plus a
BLAS matmul, and a pure-numpy version built on ``sliding_window_view`` and
``einsum``. The active backend is chosen at import time from the
``SONOSHADOW_BACKEND`` environment variable (``numba`` when available,
``numpy`` otherwise) and can be switched at runtime with ``use_backend``
for benchmarking and cross-checking.

These are the hot loops of the package: at the default 64x64 resolution
they account for nearly all training time (see ``benchmarks/``).
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ENV_BACKEND = "SONOSHADOW_BACKEND"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# pure numpy backend


def _corr2d_forward_numpy(x, w, stride, pad):
    kh, kw = w.shape[2], w.shape[3]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwpq,kcpq->nkhw", win, w, optimize=True)


def _corr2d_input_grad_numpy(gy, w, stride, pad, height, width):
    n = gy.shape[0]
    c = w.shape[1]
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = gy.shape[2], gy.shape[3]
    gx = np.zeros((n, c, height + 2 * pad, width + 2 * pad), dtype=gy.dtype)
    for p in range(kh):
        for q in range(kw):
            # each (p, q) tap scatters gy onto a strided slice of gx
            contrib = np.einsum("nkhw,kc->nchw", gy, w[:, :, p, q], optimize=True)
            gx[:, :, p : p + stride * ho : stride, q : q + stride * wo : stride] += contrib
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gx)


def _corr2d_weight_grad_numpy(x, gy, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = gy.shape[2], gy.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    return np.einsum("nchwpq,nkhw->kcpq", win, gy, optimize=True)


# ---------------------------------------------------------------------------
# numba backend: im2col worked per sample, matmuls via BLAS


@njit(cache=True)
def _im2col(img, kh, kw, stride, pad, ho, wo, cols):
    c, h, w = img.shape
    for ci in range(c):
        for p in range(kh):
            for q in range(kw):
                row = (ci * kh + p) * kw + q
                for oh in range(ho):
                    ih = oh * stride - pad + p
                    base = oh * wo
                    if ih < 0 or ih >= h:
                        for ow in range(wo):
                            cols[row, base + ow] = 0.0
                    else:
                        for ow in range(wo):
                            iw = ow * stride - pad + q
                            if 0 <= iw < w:
                                cols[row, base + ow] = img[ci, ih, iw]
                            else:
                                cols[row, base + ow] = 0.0


@njit(cache=True)
def _col2im_add(cols, kh, kw, stride, pad, ho, wo, out):
    c, h, w = out.shape
    for ci in range(c):
        for p in range(kh):
            for q in range(kw):
                row = (ci * kh + p) * kw + q
                for oh in range(ho):
                    ih = oh * stride - pad + p
                    if ih < 0 or ih >= h:
                        continue
                    base = oh * wo
                    for ow in range(wo):
                        iw = ow * stride - pad + q
                        if 0 <= iw < w:
                            out[ci, ih, iw] += cols[row, base + ow]


@njit(cache=True)
def _corr2d_forward_numba(x, w2d, kh, kw, stride, pad, ho, wo):
    n, c = x.shape[0], x.shape[1]
    k = w2d.shape[0]
    y = np.empty((n, k, ho, wo), dtype=x.dtype)
    cols = np.empty((c * kh * kw, ho * wo), dtype=x.dtype)
    for ni in range(n):
        _im2col(x[ni], kh, kw, stride, pad, ho, wo, cols)
        y[ni] = np.dot(w2d, cols).reshape(k, ho, wo)
    return y


@njit(cache=True)
def _corr2d_input_grad_numba(gy, w2d, kh, kw, stride, pad, height, width):
    n, k = gy.shape[0], gy.shape[1]
    ho, wo = gy.shape[2], gy.shape[3]
    c = w2d.shape[1] // (kh * kw)
    gx = np.zeros((n, c, height, width), dtype=gy.dtype)
    for ni in range(n):
        gy2d = gy[ni].reshape(k, ho * wo).copy()
        gcols = np.dot(w2d.T, gy2d)
        _col2im_add(gcols, kh, kw, stride, pad, ho, wo, gx[ni])
    return gx


@njit(cache=True)
def _corr2d_weight_grad_numba(x, gy, kh, kw, stride, pad, ho, wo):
    n, c = x.shape[0], x.shape[1]
    k = gy.shape[1]
    gw2d = np.zeros((k, c * kh * kw), dtype=x.dtype)
    cols = np.empty((c * kh * kw, ho * wo), dtype=x.dtype)
    for ni in range(n):
        _im2col(x[ni], kh, kw, stride, pad, ho, wo, cols)
        gy2d = gy[ni].reshape(k, ho * wo).copy()
        gw2d += np.dot(gy2d, cols.T)
    return gw2d


# ---------------------------------------------------------------------------
# dispatch


def _pick_backend() -> str:
    choice = os.environ.get(ENV_BACKEND, "").strip().lower()
    if choice in ("numba", "numpy"):
        if choice == "numba" and not HAS_NUMBA:
            raise RuntimeError(f"{ENV_BACKEND}=numba but numba is not importable")
        return choice
    if choice:
        raise RuntimeError(f"unknown {ENV_BACKEND}={choice!r}; expected 'numba' or 'numpy'")
    return "numba" if HAS_NUMBA else "numpy"


_active = _pick_backend()


def active_backend() -> str:
    """Name of the kernel backend in use, ``"numba"`` or ``"numpy"``."""
    return _active


def use_backend(name: str) -> str:
    """Switch backends at runtime; returns the previous backend name."""
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    previous, _active = _active, name
    return previous


def _out_extent(extent: int, k: int, stride: int, pad: int) -> int:
    span = extent + 2 * pad - k
    if span < 0 or span % stride:
        raise ValueError(
            f"window {k} with stride {stride}, padding {pad} does not tile extent {extent}"
        )
    out = span // stride + 1
    if out <= 0:
        raise ValueError(f"non-positive output extent for input extent {extent}")
    return out


def corr2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlate x[N,C,H,W] with w[K,C,kh,kw] -> y[N,K,Ho,Wo]."""
    kh, kw = w.shape[2], w.shape[3]
    ho = _out_extent(x.shape[2], kh, stride, pad)
    wo = _out_extent(x.shape[3], kw, stride, pad)
    if _active == "numba":
        w2d = np.ascontiguousarray(w.reshape(w.shape[0], -1))
        return _corr2d_forward_numba(
            np.ascontiguousarray(x), w2d, kh, kw, stride, pad, ho, wo
        )
    return _corr2d_forward_numpy(x, w, stride, pad)


def corr2d_input_grad(
    gy: np.ndarray, w: np.ndarray, stride: int, pad: int, height: int, width: int
) -> np.ndarray:
    """Adjoint of corr2d_forward: scatter gy[N,K,Ho,Wo] back to x's shape."""
    kh, kw = w.shape[2], w.shape[3]
    if _active == "numba":
        w2d = np.ascontiguousarray(w.reshape(w.shape[0], -1))
        return _corr2d_input_grad_numba(
            np.ascontiguousarray(gy), w2d, kh, kw, stride, pad, height, width
        )
    return _corr2d_input_grad_numpy(gy, w, stride, pad, height, width)


def corr2d_weight_grad(
    x: np.ndarray, gy: np.ndarray, kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Weight gradient: correlate x[N,C,H,W] against gy[N,K,Ho,Wo] -> [K,C,kh,kw]."""
    ho, wo = gy.shape[2], gy.shape[3]
    if _active == "numba":
        gw2d = _corr2d_weight_grad_numba(
            np.ascontiguousarray(x), np.ascontiguousarray(gy), kh, kw, stride, pad, ho, wo
        )
        return gw2d.reshape(gy.shape[1], x.shape[1], kh, kw)
    return _corr2d_weight_grad_numpy(x, gy, kh, kw, stride, pad)
