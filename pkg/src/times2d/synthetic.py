"""Seeded synthetic series for smoke tests, examples and acceptance runs."""

from __future__ import annotations

import numpy as np


def sine_series(length: int, period: float = 24.0, amplitude: float = 1.0, phase: float = 0.0) -> np.ndarray:
    t = np.arange(length)
    return (amplitude * np.sin(2 * np.pi * t / period + phase))[:, None]


def multi_period_series(
    length: int = 5000,
    n_vars: int = 3,
    periods=(24, 12),
    trend: float = 2e-4,
    snr_db: float = 20.0,
    seed: int = 0,
) -> np.ndarray:
    """Sum of sinusoids per variable, plus a linear trend and white noise at ``snr_db``.

    The noise power is set against the power of the noiseless (seasonal +
    trend) signal of each variable.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length)[:, None]
    amps = rng.uniform(0.5, 1.5, size=(len(periods), n_vars))
    phases = rng.uniform(0, 2 * np.pi, size=(len(periods), n_vars))
    clean = sum(amps[i] * np.sin(2 * np.pi * t / p + phases[i]) for i, p in enumerate(periods))
    clean = clean + trend * rng.uniform(0.5, 1.5, size=n_vars) * t
    power = np.mean((clean - clean.mean(axis=0)) ** 2, axis=0)
    noise_std = np.sqrt(power / 10 ** (snr_db / 10))
    return clean + rng.normal(size=clean.shape) * noise_std


def planted_tones(seq_len: int, freqs, amps, phases, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(seq_len)
    x = sum(a * np.sin(2 * np.pi * f * t / seq_len + ph) for f, a, ph in zip(freqs, amps, phases))
    return x + rng.normal(size=seq_len) * noise_std
