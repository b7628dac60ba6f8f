"""First/second difference heatmaps and their convolutional forecasting head."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore
from .spectral import InputTooShortError


def _check_len(x: Tensor, minimum: int) -> None:
    if x.ndim != 3:
        raise ad.ShapeError(f"expected [B, S, N], got {x.shape}")
    if x.shape[1] < minimum:
        raise InputTooShortError(f"need at least {minimum} time steps, got {x.shape[1]}")


def first_difference(x: Tensor) -> Tensor:
    """out[t] = x[t] - x[t-1] for t >= 1, out[0] = 0."""
    _check_len(x, 2)
    d = ad.sub(ad.slice_(x, (slice(None), slice(1, None))), ad.slice_(x, (slice(None), slice(None, -1))))
    return ad.pad(d, ((0, 0), (1, 0), (0, 0)))


def second_difference(d1: Tensor) -> Tensor:
    """Difference of the valid part of ``d1``; front-padded with two zeros.

    The leading zero of ``d1`` is padding, not data, so it is never
    differenced: out[0] = out[1] = 0 and out[t] = d1[t] - d1[t-1] for t >= 2.
    """
    _check_len(d1, 2)
    S = d1.shape[1]
    if S < 3:
        return ad.mul(d1, 0.0)
    d = ad.sub(ad.slice_(d1, (slice(None), slice(2, None))), ad.slice_(d1, (slice(None), slice(1, -1))))
    return ad.pad(d, ((0, 0), (2, 0), (0, 0)))


def build_heatmap(d1: Tensor, d2: Tensor) -> Tensor:
    """Stack into [B, N, 2, S] with D1 at derivative index 0 and D2 at index 1."""
    if d1.shape != d2.shape:
        raise ad.ShapeError(f"derivative shapes differ: {d1.shape} vs {d2.shape}")
    return ad.permute(ad.stack([d1, d2], axis=1), (0, 3, 1, 2))


def heatmap(x: Tensor) -> Tensor:
    d1 = first_difference(x)
    return build_heatmap(d1, second_difference(d1))


class DerivativeHeatmapBlock:
    """Heatmap -> two 3x3 conv layers -> weighted sum over (derivative, channel) -> S->P head.

    The collapse weights are one scalar per (channel, derivative) pair and are
    shared over time. Per-time weights would tie the block to a fixed S twice
    over (the head already does); per-derivative-only weights would force the
    second conv layer to do all channel mixing.
    """

    def __init__(self, params: ParamStore, seq_len: int, pred_len: int, c_h: int = 8):
        self.params = params
        self.seq_len = seq_len
        self.pred_len = pred_len
        self.c_h = c_h
        params.uniform("fsdh.conv1.weight", (c_h, 1, 3, 3), fan_in=9)
        params.zeros("fsdh.conv1.bias", (c_h,))
        params.uniform("fsdh.conv2.weight", (c_h, c_h, 3, 3), fan_in=c_h * 9)
        params.zeros("fsdh.conv2.bias", (c_h,))
        params.uniform("fsdh.collapse.weight", (2 * c_h, 1), fan_in=2 * c_h)
        params.uniform("fsdh.head.weight", (seq_len, pred_len), fan_in=seq_len)
        params.zeros("fsdh.head.bias", (pred_len,))

    def forward(self, x: Tensor) -> Tensor:
        _check_len(x, 3)
        B, S, N = x.shape
        ps = self.params
        h = ad.reshape(heatmap(x), (B * N, 1, 2, S))
        h = ad.gelu(ad.conv2d(h, ps["fsdh.conv1.weight"], ps["fsdh.conv1.bias"], "same"))
        h = ad.conv2d(h, ps["fsdh.conv2.weight"], ps["fsdh.conv2.bias"], "same")
        feats = ad.reshape(ad.permute(h, (0, 3, 1, 2)), (B * N, S, 2 * self.c_h))
        series = ad.reshape(ad.linear(feats, ps["fsdh.collapse.weight"]), (B * N, S))
        out = ad.linear(series, ps["fsdh.head.weight"], ps["fsdh.head.bias"])
        return ad.permute(ad.reshape(out, (B, N, self.pred_len)), (0, 2, 1))


def _as_array(h) -> np.ndarray:
    arr = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    if arr.ndim != 4 or arr.shape[2] != 2:
        raise ad.ShapeError(f"heatmap must be [B, N, 2, S], got {arr.shape}")
    return arr


def heatmap_to_csv(h) -> str:
    arr = _as_array(h)
    B, N, _, S = arr.shape
    lines = []
    for b in range(B):
        for n in range(N):
            lines.append(f"# batch={b} variable={n}")
            lines.append("derivative," + ",".join(f"t{t}" for t in range(S)))
            for d, label in enumerate(("d1", "d2")):
                lines.append(label + "," + ",".join(repr(float(v)) for v in arr[b, n, d]))
    return "\n".join(lines) + "\n"


def parse_heatmap_csv(text: str) -> np.ndarray:
    blocks: list[list[list[float]]] = []
    index: list[tuple[int, int]] = []
    for line in text.splitlines():
        if line.startswith("# batch="):
            parts = dict(kv.split("=") for kv in line[2:].split())
            index.append((int(parts["batch"]), int(parts["variable"])))
            blocks.append([])
        elif line.startswith("d1,") or line.startswith("d2,"):
            blocks[-1].append([float(v) for v in line.split(",")[1:]])
    B = max(b for b, _ in index) + 1
    N = max(n for _, n in index) + 1
    S = len(blocks[0][0])
    out = np.zeros((B, N, 2, S))
    for (b, n), rows in zip(index, blocks):
        out[b, n] = rows
    return out


def heatmap_to_pgm(grid: np.ndarray) -> str:
    """ASCII PGM of one 2 x S grid; D1 on the bottom row, D2 above it."""
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        scaled = np.rint((grid - lo) / (hi - lo) * 255).astype(int)
    else:
        scaled = np.full(grid.shape, 128, dtype=int)
    rows = scaled[::-1]
    body = "\n".join(" ".join(str(v) for v in row) for row in rows)
    return f"P2\n{grid.shape[1]} {grid.shape[0]}\n255\n{body}\n"


def export_heatmap(h, path, fmt: str = "csv") -> list[Path]:
    """Write a heatmap to ``path``; PGM writes one image per (batch, variable)."""
    arr = _as_array(h)
    path = Path(path)
    if fmt == "csv":
        path.write_text(heatmap_to_csv(arr))
        return [path]
    if fmt != "pgm":
        raise ValueError(f"unknown heatmap format {fmt!r}")
    B, N = arr.shape[:2]
    written = []
    for b in range(B):
        for n in range(N):
            target = path if B * N == 1 else path.with_name(f"{path.stem}_b{b}_n{n}{path.suffix or '.pgm'}")
            target.write_text(heatmap_to_pgm(arr[b, n]))
            written.append(target)
    return written
