"""Periodic decomposition block.

Each dominant period folds the input window into a (period x cycles) grid. A
3x3 convolution mixes neighbouring steps inside and across cycles, then every
column (one whole cycle, all conv channels) becomes an attention token. The
branch ends in a linear head onto the prediction horizon; branches are merged
with softmax weights over their spectral amplitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore
from .spectral import PeriodEntry, PeriodSet, fold_to_2d


class ConfigError(ValueError):
    pass


def positional_encoding(n_tokens: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Fixed sinusoidal table; even columns sin, odd columns cos."""
    pos = np.arange(n_tokens)[:, None]
    two_m = np.arange(0, d_model, 2)
    angle = pos / np.power(10000.0, two_m / d_model)
    pe = np.zeros((n_tokens, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(dtype)


@dataclass
class AttentionParams:
    q_w: Tensor
    q_b: Tensor
    k_w: Tensor
    v_w: Tensor
    v_b: Tensor
    o_w: Tensor
    o_b: Tensor


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def mhsa(tokens: Tensor, p: AttentionParams, heads: int, dropout: float = 0.0, rng=None, training=False) -> Tensor:
    """Unmasked multi-head scaled dot-product self-attention over [B, T, d] tokens."""
    B, T, d = tokens.shape
    if d % heads:
        raise ConfigError(f"d_model={d} is not divisible by heads={heads}")
    dh = d // heads

    def split(t):
        return ad.permute(ad.reshape(t, (B, T, heads, dh)), (0, 2, 1, 3))

    q = split(ad.linear(tokens, p.q_w, p.q_b))
    # no key bias: it shifts every score in a row equally, so softmax ignores it
    k = split(ad.linear(tokens, p.k_w))
    v = split(ad.linear(tokens, p.v_w, p.v_b))
    scores = ad.mul(ad.bmatmul(q, ad.permute(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    attn = ad.dropout(attn, dropout, rng, training)
    ctx = ad.reshape(ad.permute(ad.bmatmul(attn, v), (0, 2, 1, 3)), (B, T, d))
    return ad.linear(ctx, p.o_w, p.o_b)


def ffn(tokens: Tensor, p: FfnParams) -> Tensor:
    return ad.linear(ad.gelu(ad.linear(tokens, p.w1, p.b1)), p.w2, p.b2)


@dataclass
class BranchOutput:
    prediction: Tensor
    amplitude: float


def merge_weights(amplitudes) -> np.ndarray:
    a = np.asarray(amplitudes, dtype=np.float64)
    e = np.exp(a - a.max())
    return e / e.sum()


def branch_merge(branches: list[BranchOutput]) -> Tensor:
    """Amplitude-softmax weighted sum of branch predictions."""
    if not branches:
        raise ad.ContractError("branch_merge needs at least one branch")
    shape = branches[0].prediction.shape
    for br in branches[1:]:
        if br.prediction.shape != shape:
            raise ad.ShapeError(f"branch shapes differ: {shape} vs {br.prediction.shape}")
    if len(branches) == 1:
        return branches[0].prediction
    w = merge_weights([br.amplitude for br in branches])
    out = ad.mul(branches[0].prediction, float(w[0]))
    for wi, br in zip(w[1:], branches[1:]):
        out = ad.add(out, ad.mul(br.prediction, float(wi)))
    return out


class PeriodicDecompositionBlock:
    def __init__(
        self,
        params: ParamStore,
        n_vars: int,
        pred_len: int,
        d_model: int = 32,
        d_ff: int = 128,
        heads: int = 4,
        c_mid: int = 16,
        depth: int = 1,
        dropout: float = 0.1,
        use_pos_enc: bool = True,
    ):
        if d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        self.params = params
        self.n_vars = n_vars
        self.pred_len = pred_len
        self.d_model = d_model
        self.d_ff = d_ff
        self.heads = heads
        self.c_mid = c_mid
        self.depth = depth
        self.dropout = dropout
        self.use_pos_enc = use_pos_enc
        self._pe_cache: dict[tuple[int, np.dtype], np.ndarray] = {}
        ps = params
        ps.uniform("pdb.conv.weight", (c_mid, n_vars, 3, 3), fan_in=n_vars * 9)
        ps.zeros("pdb.conv.bias", (c_mid,))
        for i in range(depth):
            self._layer_params(i)

    def _layer_params(self, i: int):
        ps, d = self.params, self.d_model
        pre = f"pdb.layer{i}."
        attn = AttentionParams(
            ps.uniform(pre + "attn.q.weight", (d, d), d),
            ps.zeros(pre + "attn.q.bias", (d,)),
            ps.uniform(pre + "attn.k.weight", (d, d), d),
            ps.uniform(pre + "attn.v.weight", (d, d), d),
            ps.zeros(pre + "attn.v.bias", (d,)),
            ps.uniform(pre + "attn.o.weight", (d, d), d),
            ps.zeros(pre + "attn.o.bias", (d,)),
        )
        ff = FfnParams(
            ps.uniform(pre + "ffn.w1", (d, self.d_ff), d),
            ps.zeros(pre + "ffn.b1", (self.d_ff,)),
            ps.uniform(pre + "ffn.w2", (self.d_ff, d), self.d_ff),
            ps.zeros(pre + "ffn.b2", (d,)),
        )
        norms = (
            ps.ones(pre + "norm1.gamma", (d,)),
            ps.zeros(pre + "norm1.beta", (d,)),
            ps.ones(pre + "norm2.gamma", (d,)),
            ps.zeros(pre + "norm2.beta", (d,)),
        )
        return attn, ff, norms

    def shape_params(self, p: int, f: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Token embedding and output head for one (period, cycles) grid, created on first use."""
        ps, d = self.params, self.d_model
        key = f"pdb.shape.p{p}_f{f}."
        out = self.pred_len * self.n_vars
        return (
            ps.uniform(key + "embed.weight", (p * self.c_mid, d), p * self.c_mid),
            ps.zeros(key + "embed.bias", (d,)),
            ps.uniform(key + "head.weight", (f * d, out), f * d),
            ps.zeros(key + "head.bias", (out,)),
        )

    def _pe(self, f: int, dtype) -> np.ndarray:
        key = (f, np.dtype(dtype))
        if key not in self._pe_cache:
            self._pe_cache[key] = positional_encoding(f, self.d_model, dtype)
        return self._pe_cache[key]

    def branch_forward(self, x: Tensor, entry: PeriodEntry, rng=None, training: bool = False) -> BranchOutput:
        B, S, N = x.shape
        p, f = entry.period, entry.freq
        embed_w, embed_b, head_w, head_b = self.shape_params(p, f)
        ps = self.params

        grid = fold_to_2d(x, p, f)
        grid = ad.conv2d(grid, ps["pdb.conv.weight"], ps["pdb.conv.bias"], "same")
        cols = ad.reshape(ad.permute(grid, (0, 3, 1, 2)), (B, f, self.c_mid * p))
        tok = ad.linear(cols, embed_w, embed_b)
        if self.use_pos_enc:
            pe = np.broadcast_to(self._pe(f, tok.dtype), tok.shape).copy()
            tok = ad.add(tok, Tensor(pe))
        for i in range(self.depth):
            attn, ff, (g1, b1, g2, b2) = self._layer_params(i)
            a = ad.dropout(mhsa(tok, attn, self.heads, self.dropout, rng, training), self.dropout, rng, training)
            tok = ad.layer_norm(ad.add(tok, a), g1, b1)
            h = ad.dropout(ffn(tok, ff), self.dropout, rng, training)
            tok = ad.layer_norm(ad.add(tok, h), g2, b2)
        flat = ad.reshape(tok, (B, f * self.d_model))
        pred = ad.reshape(ad.linear(flat, head_w, head_b), (B, self.pred_len, N))
        return BranchOutput(pred, entry.amplitude)

    def forward(self, x: Tensor, periods: PeriodSet, rng=None, training: bool = False) -> Tensor:
        return branch_merge([self.branch_forward(x, e, rng, training) for e in periods])
