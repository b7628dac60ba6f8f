"""Losses, Adam, and the epoch loop with early stopping."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _make
from .data import WindowSet, batch_iter
from .model import ModelConfig, Times2D
from .params import ParamStore
from .pdb import ConfigError

logger = logging.getLogger(__name__)

LOSS_KINDS = ("mse", "mae", "smape")
SMAPE_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def compute_loss(pred: Tensor, target, kind: str = "mse") -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"loss: prediction {pred.shape} vs target {target.shape}")
    n = pred.data.size
    diff = pred.data - target
    if kind == "mse":
        value = np.mean(diff * diff)
        return _make(np.asarray(value), (pred,), lambda g: (g * 2.0 * diff / n,), "mse_loss")
    if kind == "mae":
        value = np.mean(np.abs(diff))
        return _make(np.asarray(value), (pred,), lambda g: (g * np.sign(diff) / n,), "mae_loss")
    if kind == "smape":
        denom_raw = np.abs(pred.data) + np.abs(target)
        floored = denom_raw < SMAPE_EPS
        denom = np.where(floored, SMAPE_EPS, denom_raw)
        value = 200.0 / n * np.sum(np.abs(diff) / denom)

        def bwd(g):
            d_num = np.sign(diff) / denom
            d_den = np.where(floored, 0.0, np.abs(diff) * np.sign(pred.data) / denom**2)
            return (g * 200.0 / n * (d_num - d_den),)

        return _make(np.asarray(value, dtype=pred.dtype), (pred,), bwd, "smape_loss")
    raise ConfigError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)
    step: int = 0


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale all gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    clip: float | None = None,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Moments are created lazily so parameters that first appear mid-training
    (new period shapes) start their own bias-correction count.
    """
    b1, b2 = betas
    clip_grad_norm(grads, clip)
    state.step += 1
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            update = update + lr * weight_decay * p
        p -= update.astype(p.dtype, copy=False)


class Adam:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, clip: float | None = 5.0):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip = clip
        self.state = AdamState()

    def step(self, store: ParamStore) -> None:
        params = {name: t.data for name, t in store.items()}
        grads = {name: t.grad for name, t in store.items() if t.grad is not None}
        adam_step(params, grads, self.state, self.lr, self.betas, self.eps, self.weight_decay, self.clip)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    patience: int = 10
    loss: str = "mse"
    grad_clip: float = 5.0
    shuffle: bool = True
    target_loss: float | None = None  # stop once the epoch's train loss falls to this

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainResult:
    model: Times2D
    optimizer: Adam
    history: list[EpochRecord]
    best_epoch: int
    best_val: float


def evaluate_loss(model: Times2D, windows: WindowSet, kind: str, batch_size: int = 256) -> float:
    total, count = 0.0, 0
    with ad.no_grad():
        for xb, yb in batch_iter(windows, batch_size, shuffle=False):
            loss = compute_loss(model.forward(xb), yb.astype(model.config.dtype), kind)
            total += float(loss.data) * len(xb)
            count += len(xb)
    return total / count


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_windows: WindowSet,
    val_windows: WindowSet | None = None,
    model: Times2D | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Fit a model; returns it with best-validation parameters restored.

    Fully deterministic given ``model_cfg.seed``: batch order, dropout masks
    and initial values all derive from it.
    """
    train_cfg.validate()
    model = model or Times2D(model_cfg)
    if model_cfg.frozen_periods and model.frozen is None:
        model.freeze_periods(train_windows.inputs())
    opt = Adam(train_cfg.lr, (train_cfg.beta1, train_cfg.beta2), train_cfg.adam_eps, train_cfg.weight_decay, train_cfg.grad_clip)
    dtype = model_cfg.dtype
    history: list[EpochRecord] = []
    best_val, best_epoch, best_state, waited = np.inf, 0, model.params.state(), 0

    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for step, (xb, yb) in enumerate(
            batch_iter(train_windows, train_cfg.batch_size, train_cfg.shuffle, seed=(model_cfg.seed, epoch))
        ):
            model.params.zero_grad()
            pred = model.forward(xb, training=True)
            loss = compute_loss(pred, yb.astype(dtype), train_cfg.loss)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            ad.backward(loss)
            opt.step(model.params)
            total += value * len(xb)
            count += len(xb)
        train_loss = total / count
        if val_windows is not None and len(val_windows):
            val_loss = evaluate_loss(model, val_windows, train_cfg.loss)
        else:
            val_loss = train_loss
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0))
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        reached = train_cfg.target_loss is not None and train_loss <= train_cfg.target_loss
        if val_loss < best_val:
            best_val, best_epoch, best_state, waited = val_loss, epoch, model.params.state(), 0
        else:
            waited += 1
            if waited > train_cfg.patience:
                break
        if reached:
            break

    # shapes first seen after the best epoch keep their current values
    for name, value in best_state.items():
        model.params[name].data[...] = value
    return TrainResult(model, opt, history, best_epoch, float(best_val))


def history_csv(history: list[EpochRecord], timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
    for r in history:
        w.writerow([r.epoch, f"{r.train_loss:.9g}", f"{r.val_loss:.9g}", f"{r.seconds:.9g}" if timing else ""])
    return buf.getvalue()


def write_history(history: list[EpochRecord], path, timing: bool = True) -> None:
    Path(path).write_text(history_csv(history, timing))
