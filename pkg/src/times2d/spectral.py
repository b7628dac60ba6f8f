"""FFT magnitudes, dominant-period selection and 1D <-> 2D folding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .autodiff import Tensor, pad, permute, reshape, slice_


class InputTooShortError(ValueError):
    pass


class PeriodError(ValueError):
    """Invalid k, period or fold geometry."""


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def fft(x: np.ndarray) -> np.ndarray:
    """Unnormalized DFT along the last axis, any length.

    Power-of-two lengths go straight to the radix-2 kernel; everything else
    is routed through Bluestein's chirp-z reformulation as a convolution of
    power-of-two length.
    """
    x = np.asarray(x)
    lead = x.shape[:-1]
    n = x.shape[-1]
    rows = x.reshape(-1, n).astype(np.complex128)
    if n & (n - 1) == 0:
        out = _accel.fft_pow2_rows(rows)
    else:
        out = _bluestein(rows)
    return out.reshape(*lead, n)


def _bluestein(rows: np.ndarray) -> np.ndarray:
    n = rows.shape[1]
    m = _next_pow2(2 * n - 1)
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase accurate for large k
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    a = np.zeros((rows.shape[0], m), dtype=np.complex128)
    a[:, :n] = rows * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:][::-1])
    fa = _accel.fft_pow2_rows(a)
    fb = _accel.fft_pow2_rows(b[None, :])
    conv = _accel.fft_pow2_rows(fa * fb, inverse=True) / m
    return conv[:, :n] * chirp


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray
    seq_len: int

    def __post_init__(self):
        if self.magnitudes.shape != (self.seq_len // 2 + 1,):
            raise ValueError(
                f"spectrum of a length-{self.seq_len} series needs {self.seq_len // 2 + 1} bins, "
                f"got {self.magnitudes.shape}"
            )


@dataclass(frozen=True)
class PeriodEntry:
    freq: int
    period: int
    amplitude: float


@dataclass(frozen=True)
class PeriodSet:
    entries: tuple[PeriodEntry, ...]
    seq_len: int = field(default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def freqs(self) -> list[int]:
        return [e.freq for e in self.entries]

    @property
    def periods(self) -> list[int]:
        return [e.period for e in self.entries]

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([e.amplitude for e in self.entries])


def _as_bsn(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected [B, S, N] input, got shape {arr.shape}")
    return arr


def rfft_magnitude(x) -> Spectrum:
    """Non-negative-frequency DFT magnitudes, averaged over batch and variables.

    Magnitudes are taken per (batch, variable) series before averaging.
    """
    arr = _as_bsn(x)
    B, S, N = arr.shape
    if S < 4:
        raise InputTooShortError(f"need at least 4 time steps for spectral analysis, got {S}")
    rows = np.transpose(arr, (0, 2, 1)).reshape(B * N, S)
    mags = np.abs(fft(rows)[:, : S // 2 + 1])
    return Spectrum(mags.mean(axis=0), S)


def period_for(seq_len: int, freq: int) -> int:
    return -(-seq_len // freq)


def top_k_periods(spec: Spectrum, k: int) -> PeriodSet:
    """The ``k`` strongest non-DC bins, strongest first, ties toward lower frequency."""
    S = spec.seq_len
    if not 1 <= k <= S // 2:
        raise PeriodError(f"k must lie in [1, {S // 2}] for seq_len {S}, got {k}")
    mags = spec.magnitudes[1:]
    order = np.argsort(-mags, kind="stable")[:k]
    entries = tuple(
        PeriodEntry(int(i) + 1, period_for(S, int(i) + 1), float(mags[i])) for i in order
    )
    return PeriodSet(entries, S)


def detect_periods(x, k: int) -> PeriodSet:
    return top_k_periods(rfft_magnitude(x), k)


def fold_to_2d(x: Tensor, p: int, f: int) -> Tensor:
    """[B, S, N] -> [B, N, p, f]; column j holds time steps [j*p, (j+1)*p), tail zero-padded."""
    B, S, N = x.shape
    if p < 1 or f < 1 or p * f < S:
        raise PeriodError(f"cannot fold length {S} into a {p}x{f} grid")
    t = pad(x, ((0, 0), (0, p * f - S), (0, 0)))
    t = permute(t, (0, 2, 1))
    t = reshape(t, (B, N, f, p))
    return permute(t, (0, 1, 3, 2))


def unfold_to_1d(t: Tensor, seq_len: int) -> Tensor:
    """Inverse of :func:`fold_to_2d`; drops the padded tail."""
    B, N, p, f = t.shape
    if seq_len > p * f or seq_len < 1:
        raise PeriodError(f"cannot recover length {seq_len} from a {p}x{f} grid")
    u = permute(t, (0, 1, 3, 2))
    u = reshape(u, (B, N, p * f))
    if seq_len < p * f:
        u = slice_(u, (slice(None), slice(None), slice(0, seq_len)))
    return permute(u, (0, 2, 1))


def spectrum_lines(periods: PeriodSet) -> list[str]:
    return [f"f={e.freq} period={e.period} amplitude={e.amplitude:.9g}" for e in periods]

