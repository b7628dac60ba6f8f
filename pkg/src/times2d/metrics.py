"""Point and scaled forecast errors, seasonal-naive baseline, and OWA.

MASE follows the horizon-scaled form by default: its denominator is the mean
absolute seasonal difference of the *actual horizon values*. Pass
``insample=history`` for the conventional M4 denominator over the history.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

SEASONAL_DEFAULTS = {"yearly": 1, "quarterly": 4, "monthly": 12}


class MetricUndefinedError(ValueError):
    pass


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.shape != actual.shape:
        raise ValueError(f"prediction length {pred.size} != actual length {actual.size}")
    if pred.size == 0:
        raise ValueError("empty horizon")
    return pred, actual


def point_metrics(pred, actual) -> tuple[float, float]:
    pred, actual = _pair(pred, actual)
    err = pred - actual
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def smape(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    num = np.abs(pred - actual)
    den = np.abs(pred) + np.abs(actual)
    # 0/0 terms (both values zero) contribute nothing
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(200.0 / pred.size * terms.sum())


def mase(pred, actual, s: int = 1, insample=None) -> float:
    pred, actual = _pair(pred, actual)
    ref = actual if insample is None else np.asarray(insample, dtype=np.float64).ravel()
    if s < 1 or len(ref) <= s:
        raise MetricUndefinedError(f"MASE needs more than s={s} reference points, got {len(ref)}")
    denom = float(np.mean(np.abs(ref[s:] - ref[:-s])))
    if denom == 0.0:
        raise MetricUndefinedError("MASE denominator is zero (reference series has no seasonal variation)")
    return float(np.mean(np.abs(pred - actual))) / denom


def owa(smape_model: float, mase_model: float, smape_naive: float, mase_naive: float) -> float:
    if smape_naive <= 0 or mase_naive <= 0:
        raise MetricUndefinedError(f"OWA needs positive naive metrics, got sMAPE={smape_naive}, MASE={mase_naive}")
    return 0.5 * (smape_model / smape_naive + mase_model / mase_naive)


def seasonal_naive_forecast(history, s: int, horizon: int) -> np.ndarray:
    """Repeat the last observed season: pred[i] = history[len - s + (i mod s)]."""
    history = np.asarray(history)
    if s < 1 or len(history) < s:
        raise MetricUndefinedError(f"seasonal naive needs at least s={s} history points, got {len(history)}")
    idx = len(history) - s + (np.arange(horizon) % s)
    return history[idx]


@dataclass
class MetricReport:
    mse: float
    mae: float
    smape: float
    mase: float
    owa: float
    naive_smape: float
    naive_mase: float
    horizon: int
    seasonal_period: int

    def as_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def as_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = asdict(self)
        w.writerow(d.keys())
        w.writerow(_fmt(v) for v in d.values())
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        d = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        ints = {"horizon", "seasonal_period"}
        return cls(**{k: int(v) if k in ints else float(v) for k, v in d.items()})


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else f"{v:.9g}"


def evaluate_forecasts(pred, actual, history, s: int = 1, insample: bool = False) -> MetricReport:
    """Score a batch of forecasts against the seasonal-naive baseline.

    pred, actual: [W, H, N]; history: [W, L, N] (the input windows). Each
    (window, variable) pair is one series for sMAPE/MASE; series whose MASE
    is undefined are excluded from the MASE average.
    """
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    history = np.asarray(history, dtype=np.float64)
    W, H, N = actual.shape
    mse, mae = point_metrics(pred, actual)
    sm, sm_naive, ms, ms_naive = [], [], [], []
    for w in range(W):
        for n in range(N):
            a, p, hist = actual[w, :, n], pred[w, :, n], history[w, :, n]
            naive = seasonal_naive_forecast(hist, s, H)
            sm.append(smape(p, a))
            sm_naive.append(smape(naive, a))
            try:
                ref = hist if insample else None
                ms_pair = (mase(p, a, s, ref), mase(naive, a, s, ref))
            except MetricUndefinedError:
                continue
            ms.append(ms_pair[0])
            ms_naive.append(ms_pair[1])
    if not ms:
        raise MetricUndefinedError("MASE is undefined for every evaluated series")
    report_smape, report_naive_smape = float(np.mean(sm)), float(np.mean(sm_naive))
    report_mase, report_naive_mase = float(np.mean(ms)), float(np.mean(ms_naive))
    return MetricReport(
        mse,
        mae,
        report_smape,
        report_mase,
        owa(report_smape, report_mase, report_naive_smape, report_naive_mase),
        report_naive_smape,
        report_naive_mase,
        H,
        s,
    )
