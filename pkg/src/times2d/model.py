"""Full forecaster: periodic branches plus derivative heatmaps, summed elementwise."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fsdh import DerivativeHeatmapBlock
from .params import ParamStore
from .pdb import ConfigError, PeriodicDecompositionBlock
from .spectral import PeriodSet, detect_periods

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    seq_len: int = 96
    pred_len: int = 96
    n_vars: int = 1
    k: int = 3
    d_model: int = 32
    d_ff: int = 128
    heads: int = 4
    c_mid: int = 16
    c_h: int = 8
    depth: int = 1
    dropout: float = 0.1
    precision: str = "float32"
    seed: int = 0
    frozen_periods: bool = False
    use_pos_enc: bool = True
    instance_norm: bool = True

    def validate(self) -> "ModelConfig":
        if self.seq_len < 4:
            raise ConfigError(f"seq_len must be >= 4, got {self.seq_len}")
        if self.pred_len < 1:
            raise ConfigError(f"pred_len must be >= 1, got {self.pred_len}")
        if self.n_vars < 1:
            raise ConfigError(f"n_vars must be >= 1, got {self.n_vars}")
        if not 1 <= self.k <= self.seq_len // 2:
            raise ConfigError(f"k must lie in [1, {self.seq_len // 2}], got {self.k}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if min(self.d_ff, self.c_mid, self.c_h, self.depth) < 1:
            raise ConfigError("d_ff, c_mid, c_h and depth must all be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.precision not in _DTYPES:
            raise ConfigError(f"precision must be one of {sorted(_DTYPES)}, got {self.precision!r}")
        return self

    @property
    def dtype(self):
        return _DTYPES[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Times2D:
    def __init__(self, config: ModelConfig, params: ParamStore | None = None):
        self.config = config.validate()
        self.params = params or ParamStore(config.seed, config.dtype)
        c = config
        self.pdb = PeriodicDecompositionBlock(
            self.params, c.n_vars, c.pred_len, c.d_model, c.d_ff, c.heads, c.c_mid, c.depth, c.dropout, c.use_pos_enc
        )
        self.fsdh = DerivativeHeatmapBlock(self.params, c.seq_len, c.pred_len, c.c_h)
        self.rng = np.random.default_rng([c.seed, 1])
        self.frozen: PeriodSet | None = None

    # -- periods -------------------------------------------------------------

    def freeze_periods(self, windows: np.ndarray) -> PeriodSet:
        """Estimate periods once from training windows [n, S, N] and reuse them."""
        self.frozen = detect_periods(windows, self.config.k)
        for e in self.frozen:
            self.pdb.shape_params(e.period, e.freq)
        return self.frozen

    def periods_for(self, x: np.ndarray) -> PeriodSet:
        if self.frozen is not None:
            return self.frozen
        return detect_periods(x, self.config.k)

    # -- forward ---------------------------------------------------------------

    def _prepare(self, x) -> tuple[Tensor, np.ndarray | None]:
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        c = self.config
        if arr.ndim != 3 or arr.shape[1:] != (c.seq_len, c.n_vars):
            raise ad.ShapeError(f"model expects [B, {c.seq_len}, {c.n_vars}] input, got {arr.shape}")
        arr = arr.astype(c.dtype, copy=False)
        if not c.instance_norm:
            return Tensor(arr), None
        level = arr.mean(axis=1, keepdims=True)
        return Tensor(arr - level), level

    def _restore(self, out: Tensor, level: np.ndarray | None) -> Tensor:
        if level is None:
            return out
        return ad.add(out, Tensor(np.broadcast_to(level, out.shape).copy()))

    def pdb_path(self, x, training: bool = False, periods: PeriodSet | None = None) -> Tensor:
        xt, _ = self._prepare(x)
        periods = periods or self.periods_for(xt.data)
        return self.pdb.forward(xt, periods, self.rng, training)

    def fsdh_path(self, x) -> Tensor:
        xt, _ = self._prepare(x)
        return self.fsdh.forward(xt)

    def forward(self, x, training: bool = False) -> Tensor:
        """[B, S, N] -> [B, P, N]: PDB output + FSDH output (+ the window level when centring)."""
        xt, level = self._prepare(x)
        periods = self.periods_for(xt.data)
        out = ad.add(self.pdb.forward(xt, periods, self.rng, training), self.fsdh.forward(xt))
        return self._restore(out, level)

    __call__ = forward

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        arr = np.asarray(x)
        outs = []
        with ad.no_grad():
            for i in range(0, len(arr), batch_size):
                outs.append(self.forward(arr[i : i + batch_size]).data)
        return np.concatenate(outs, axis=0)
