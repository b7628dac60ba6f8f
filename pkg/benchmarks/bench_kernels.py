"""Time the hot kernels and a full training step under both backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Each row reports the median wall time per call. Numba compilation is paid
in a warm-up call and excluded.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from times2d import _accel
from times2d import autodiff as ad
from times2d.model import ModelConfig, Times2D
from times2d.spectral import fft
from times2d.training import Adam, compute_loss


def _median_time(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _cases(rng):
    # shapes match a default model on [32, 96, 3] input
    xp = rng.normal(size=(32, 3, 26, 6)).astype(np.float32)
    w = rng.normal(size=(16, 3, 3, 3)).astype(np.float32)
    g = rng.normal(size=(32, 16, 24, 4)).astype(np.float32)
    heat = rng.normal(size=(96, 8, 4, 98)).astype(np.float32)
    heat_w = rng.normal(size=(8, 8, 3, 3)).astype(np.float32)
    heat_g = rng.normal(size=(96, 8, 2, 96)).astype(np.float32)
    rows_pow2 = rng.normal(size=(96, 256)) + 0j
    rows_odd = rng.normal(size=(96, 96))

    cfg = ModelConfig(seq_len=96, pred_len=96, n_vars=3)
    model = Times2D(cfg)
    opt = Adam()
    xb = rng.normal(size=(32, 96, 3)).astype(np.float32)
    yb = rng.normal(size=(32, 96, 3)).astype(np.float32)

    def train_step():
        model.params.zero_grad()
        loss = compute_loss(model(xb, training=True), yb)
        ad.backward(loss)
        opt.step(model.params)

    return [
        ("conv2d forward (PDB grid)", lambda: _accel.conv2d_forward(xp, w)),
        ("conv2d backward (PDB grid)", lambda: _accel.conv2d_backward(xp, w, g)),
        ("conv2d backward (heatmap)", lambda: _accel.conv2d_backward(heat, heat_w, heat_g)),
        ("fft radix-2, 96 x 256", lambda: _accel.fft_pow2_rows(rows_pow2.copy())),
        ("fft Bluestein, 96 x 96", lambda: fft(rows_odd)),
        ("train step, B=32 S=P=96 N=3", train_step),
    ]


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = ["numba", "numpy"] if _accel.NUMBA_AVAILABLE else ["numpy"]
    results: dict[str, dict[str, float]] = {}
    prev = _accel.get_backend()
    try:
        for be in backends:
            _accel.set_backend(be)
            for name, fn in _cases(np.random.default_rng(0)):
                results.setdefault(name, {})[be] = _median_time(fn, args.repeat)
    finally:
        _accel.set_backend(prev)

    header = f"{'kernel':32s}" + "".join(f"{be + ' ms':>12s}" for be in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for name, row in results.items():
        line = f"{name:32s}" + "".join(f"{row[be] * 1e3:12.3f}" for be in backends)
        if len(backends) == 2:
            line += f"{row['numpy'] / row['numba']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
