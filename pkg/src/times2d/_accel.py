"""Hot numeric kernels: conv2d forward/backward and radix-2 FFT butterflies.

Every kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The numba path is used when numba imports cleanly and the environment variable
``TIMES2D_DISABLE_NUMBA`` is unset (or ``0``). ``set_backend`` switches at runtime,
which the benchmark and the equivalence tests rely on.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


def _env_disabled() -> bool:
    return os.environ.get("TIMES2D_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


_backend = "numba" if NUMBA_AVAILABLE and not _env_disabled() else "numpy"


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _backend = name


# ---------------------------------------------------------------------------
# conv2d (cross-correlation, stride 1) on an already zero-padded input
# ---------------------------------------------------------------------------


@njit(cache=True)
def _conv2d_fwd_nb(xp, w):
    B, C, Hp, Wp = xp.shape
    O, _, kh, kw = w.shape
    Ho = Hp - kh + 1
    Wo = Wp - kw + 1
    out = np.zeros((B, O, Ho, Wo), dtype=xp.dtype)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[o, c, i, j]
                        for y in range(Ho):
                            for x in range(Wo):
                                out[b, o, y, x] += wv * xp[b, c, y + i, x + j]
    return out


@njit(cache=True)
def _conv2d_bwd_nb(xp, w, g):
    B, C, Hp, Wp = xp.shape
    O, _, kh, kw = w.shape
    Ho = g.shape[2]
    Wo = g.shape[3]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[o, c, i, j]
                        acc = 0.0
                        for y in range(Ho):
                            for x in range(Wo):
                                gv = g[b, o, y, x]
                                acc += gv * xp[b, c, y + i, x + j]
                                dxp[b, c, y + i, x + j] += gv * wv
                        dw[o, c, i, j] += acc
    return dxp, dw


def _conv2d_fwd_np(xp, w):
    kh, kw = w.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # B,C,Ho,Wo,kh,kw
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B,Ho,Wo,O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv2d_bwd_np(xp, w, g):
    kh, kw = w.shape[2:]
    Ho, Wo = g.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # O,C,kh,kw
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + Ho, j : j + Wo] += np.einsum("bohw,oc->bchw", g, w[:, :, i, j])
    return dxp, dw.astype(w.dtype, copy=False)


def conv2d_forward(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    if _backend == "numba":
        return _conv2d_fwd_nb(np.ascontiguousarray(xp), np.ascontiguousarray(w))
    return _conv2d_fwd_np(xp, w)


def conv2d_backward(xp: np.ndarray, w: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (grad wrt padded input, grad wrt kernel)."""
    if _backend == "numba":
        return _conv2d_bwd_nb(
            np.ascontiguousarray(xp), np.ascontiguousarray(w), np.ascontiguousarray(g)
        )
    return _conv2d_bwd_np(xp, w, g)


# ---------------------------------------------------------------------------
# radix-2 decimation-in-time FFT over the last axis of a 2D complex array
# ---------------------------------------------------------------------------


def bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@njit(cache=True)
def _radix2_nb(a, twiddle):
    rows, n = a.shape
    size = 2
    while size <= n:
        half = size // 2
        step = n // size
        for r in range(rows):
            for start in range(0, n, size):
                for j in range(half):
                    t = twiddle[j * step] * a[r, start + j + half]
                    u = a[r, start + j]
                    a[r, start + j] = u + t
                    a[r, start + j + half] = u - t
        size *= 2
    return a


def _radix2_np(a, twiddle):
    rows, n = a.shape
    size = 2
    while size <= n:
        half = size // 2
        v = a.reshape(rows, n // size, 2, half)
        t = twiddle[:: n // size][:half] * v[:, :, 1, :]
        u = v[:, :, 0, :].copy()
        v[:, :, 0, :] = u + t
        v[:, :, 1, :] = u - t
        size *= 2
    return a


def fft_pow2_rows(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT of each row of ``x``; row length must be a power of two."""
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    n = x.shape[1]
    if n & (n - 1):
        raise ValueError(f"radix-2 transform needs a power-of-two length, got {n}")
    sign = 1.0 if inverse else -1.0
    twiddle = np.exp(sign * 2j * np.pi * np.arange(max(n // 2, 1)) / n)
    a = np.ascontiguousarray(x[:, bit_reverse_permutation(n)])
    if n == 1:
        return a
    if _backend == "numba":
        return _radix2_nb(a, twiddle)
    return _radix2_np(a, twiddle)
