"""Command-line entry point: train, evaluate, forecast, inspect-periods, heatmap.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 training divergence,
5 checkpoint incompatible with the data/config.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CorruptCheckpointError, load_checkpoint, make_checkpoint, model_from_checkpoint, save_checkpoint
from .config import RunConfig, parse_kv
from .data import DataError, WindowConfigError, load_csv, make_windows, split_normalize
from .fsdh import export_heatmap, heatmap
from .metrics import MetricUndefinedError, evaluate_forecasts
from .autodiff import Tensor
from .pdb import ConfigError
from .spectral import InputTooShortError, PeriodError, detect_periods, spectrum_lines
from .training import TrainingDivergedError, train, write_history

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_INCOMPATIBLE = 2, 3, 4, 5

log = logging.getLogger("times2d")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# flag dest -> config key
_FLAG_KEYS = {
    "data": "data",
    "out": "out",
    "seed": "seed",
    "seq_len": "seq_len",
    "pred_len": "pred_len",
    "k": "k",
    "d_model": "d_model",
    "d_ff": "d_ff",
    "heads": "heads",
    "batch": "batch_size",
    "lr": "lr",
    "epochs": "epochs",
    "loss": "loss",
    "precision": "precision",
    "patience": "patience",
    "dropout": "dropout",
    "seasonal_period": "seasonal_period",
    "stride": "stride",
}
_BOOL_FLAGS = {"fill_forward": "fill_forward", "mase_insample": "mase_insample", "frozen_periods": "frozen_periods"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--data", help="input CSV (optional header, optional leading timestamp column)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--seq-len", type=int, help="input window length S")
    p.add_argument("--pred-len", type=int, help="prediction length P")
    p.add_argument("--k", type=int, help="number of dominant periods")
    p.add_argument("--d-model", type=int, help="token embedding size")
    p.add_argument("--d-ff", type=int, help="feed-forward hidden size")
    p.add_argument("--heads", type=int, help="attention heads")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int, help="early-stop patience in epochs")
    p.add_argument("--dropout", type=float)
    p.add_argument("--loss", choices=("mse", "mae", "smape"))
    p.add_argument("--precision", choices=("float32", "float64"))
    p.add_argument("--stride", type=int, help="training window stride")
    p.add_argument("--seasonal-period", type=int, help="season length s for MASE and the naive baseline")
    p.add_argument("--fill-forward", action="store_true", default=None, help="forward-fill blank CSV cells")
    p.add_argument("--mase-insample", action="store_true", default=None, help="scale MASE by the input history")
    p.add_argument("--frozen-periods", action="store_true", default=None, help="estimate periods once from training data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="times2d", description="2D multi-period / derivative-heatmap forecaster")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write best.ckpt, history.csv, config.txt")
    _common(p)
    p.add_argument("--no-timing", action="store_true", help="leave the seconds column of history.csv empty")

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: <out>/best.ckpt)")

    p = sub.add_parser("forecast", help="forecast from the latest window of the series")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: <out>/best.ckpt)")
    p.add_argument("--horizon", type=int, help="rows to emit (at most the trained prediction length)")

    p = sub.add_parser("inspect-periods", help="print the dominant periods of the first input window")
    _common(p)

    p = sub.add_parser("heatmap", help="export the derivative heatmap of the first input window")
    _common(p)
    p.add_argument("--format", choices=("csv", "pgm"), default="csv")
    return parser


def load_run_config(args) -> tuple[RunConfig, set[str]]:
    """Merge config file and flags; returns the config and the keys the user set."""
    values: dict[str, str] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}", EXIT_CONFIG)
        values.update(parse_kv(path.read_text(encoding="utf-8"), str(path)))
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = repr(v) if isinstance(v, float) else str(v)
    for dest, key in _BOOL_FLAGS.items():
        if getattr(args, dest, None):
            values[key] = "true"
    if getattr(args, "no_timing", False):
        values["history_timing"] = "false"
    cfg = RunConfig().update(values)
    return cfg, set(values)


def _load_data(cfg: RunConfig):
    if not cfg.data:
        raise CliError("no data file given (--data or 'data =' in the config)", EXIT_CONFIG)
    try:
        return load_csv(cfg.data, fill_forward=cfg.fill_forward)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    except (DataError, UnicodeDecodeError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None


def _splits(cfg: RunConfig, raw, stats=None):
    m = cfg.model
    try:
        return split_normalize(raw, cfg.split, stats, min_len=m.seq_len + m.pred_len)
    except WindowConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def cmd_train(cfg: RunConfig, explicit: set[str]) -> int:
    raw = _load_data(cfg)
    cfg.model.n_vars = raw.N
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sp = _splits(cfg, raw)
    m = cfg.model
    tr = make_windows(sp.train, m.seq_len, m.pred_len, cfg.stride)
    va = make_windows(sp.val, m.seq_len, m.pred_len, cfg.eval_stride)
    try:
        result = train(cfg.model, cfg.train, tr, va)
    except TrainingDivergedError as exc:
        raise CliError(f"training diverged: {exc}", EXIT_DIVERGED) from None
    save_checkpoint(make_checkpoint(result.model, result.optimizer, sp.stats), out / "best.ckpt")
    write_history(result.history, out / "history.csv", cfg.history_timing)
    (out / "config.txt").write_text(cfg.to_text())
    print(f"best epoch {result.best_epoch}, val loss {result.best_val:.9g}")
    print(f"final val loss {result.history[-1].val_loss:.9g}")
    return 0


def _checkpoint_for(cfg: RunConfig, args, explicit: set[str], n_vars: int):
    path = Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "best.ckpt"
    if not path.exists():
        raise CliError(f"checkpoint not found: {path}", EXIT_CONFIG)
    try:
        ckpt = load_checkpoint(path)
    except CorruptCheckpointError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INCOMPATIBLE) from None
    mc = ckpt.model_config
    if mc.n_vars != n_vars:
        raise CliError(f"checkpoint expects {mc.n_vars} variables, data has {n_vars}", EXIT_INCOMPATIBLE)
    for key in ("seq_len", "pred_len", "k", "d_model", "d_ff", "heads"):
        if key in explicit and getattr(cfg.model, key) != getattr(mc, key):
            raise CliError(
                f"checkpoint has {key}={getattr(mc, key)}, config asks for {getattr(cfg.model, key)}", EXIT_INCOMPATIBLE
            )
    cfg.model = mc
    return ckpt, model_from_checkpoint(ckpt)


def _write_matrix(path: Path, columns: list[str], values: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in values:
            w.writerow(f"{v:.9g}" for v in row)


def cmd_evaluate(cfg: RunConfig, explicit: set[str], args) -> int:
    raw = _load_data(cfg)
    ckpt, model = _checkpoint_for(cfg, args, explicit, raw.N)
    cfg.validate()
    sp = _splits(cfg, raw, ckpt.norm)
    m = cfg.model
    te = make_windows(sp.test, m.seq_len, m.pred_len, cfg.eval_stride)
    pred = model.predict(te.inputs(), batch_size=cfg.train.batch_size)
    stats = sp.stats
    pred_d = stats.denormalize(pred)
    actual_d = stats.denormalize(te.targets())
    hist_d = stats.denormalize(te.inputs())
    try:
        report = evaluate_forecasts(pred_d, actual_d, hist_d, cfg.seasonal_period, cfg.mase_insample)
    except MetricUndefinedError as exc:
        raise CliError(f"metric undefined: {exc}", EXIT_DATA) from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(report.as_text())
    (out / "metrics.csv").write_text(report.as_csv())
    _write_matrix(out / "first_window.csv", raw.columns, pred_d[0])
    sys.stdout.write(report.as_text())
    return 0


def cmd_forecast(cfg: RunConfig, explicit: set[str], args) -> int:
    raw = _load_data(cfg)
    ckpt, model = _checkpoint_for(cfg, args, explicit, raw.N)
    S, P = model.config.seq_len, model.config.pred_len
    if raw.T < S:
        raise CliError(f"series has {raw.T} rows, forecasting needs at least {S}", EXIT_DATA)
    horizon = args.horizon or P
    if not 1 <= horizon <= P:
        raise CliError(f"horizon must lie in [1, {P}], got {horizon}", EXIT_CONFIG)
    stats = ckpt.norm
    window = raw.values[-S:]
    x = (stats.normalize(window) if stats is not None else window)[None]
    pred = model.predict(x)[0]
    if stats is not None:
        pred = stats.denormalize(pred)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "forecast.csv", raw.columns, pred[:horizon])
    print(f"wrote {horizon} x {raw.N} forecast to {out / 'forecast.csv'}")
    return 0


def _first_window(cfg: RunConfig, raw) -> np.ndarray:
    S = cfg.model.seq_len
    if raw.T < S:
        raise CliError(f"series has {raw.T} rows, needs at least seq_len={S}", EXIT_DATA)
    return raw.values[:S][None]


def cmd_inspect_periods(cfg: RunConfig) -> int:
    raw = _load_data(cfg)
    cfg.validate()
    periods = detect_periods(_first_window(cfg, raw), cfg.model.k)
    for line in spectrum_lines(periods):
        print(line)
    return 0


def cmd_heatmap(cfg: RunConfig, args) -> int:
    raw = _load_data(cfg)
    cfg.validate()
    h = heatmap(Tensor(_first_window(cfg, raw)))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in export_heatmap(h, out / f"heatmap.{args.format}", args.format):
        print(path)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg, explicit = load_run_config(args)
        if args.command == "train":
            return cmd_train(cfg, explicit)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, explicit, args)
        if args.command == "forecast":
            return cmd_forecast(cfg, explicit, args)
        if args.command == "inspect-periods":
            return cmd_inspect_periods(cfg)
        return cmd_heatmap(cfg, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, PeriodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputTooShortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
