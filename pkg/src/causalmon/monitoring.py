"""Online fault detection against a trained reconstruction model.

Calibration fits the feature-space statistic (quadratic form of the
encoder's final hidden state) and the residual-space statistic (squared
reconstruction error per window) on normal training windows, then places
control limits at a significance level via Gaussian-kernel density
estimation.  Detection slides over a test series with stride one and
alarms whenever either statistic exceeds its limit.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .model import CAUSAL, ModelParams, model_forward
from .numerics import KdeEstimate, kde_control_limit

logger = logging.getLogger(__name__)

INSUFFICIENT = -1  # alarm flag for indices without a full window of history


@dataclass
class MonitorModel:
    """Frozen trained model plus everything needed to score new windows."""

    params: ModelParams
    h_mean: np.ndarray | None = None  # (n * d_h,)
    sigma_inv: np.ndarray | None = None  # (n * d_h, n * d_h)
    alpha_t2: float | None = None
    alpha_spe: float | None = None
    significance: float | None = None

    @property
    def calibrated(self):
        return self.h_mean is not None and self.sigma_inv is not None

    @property
    def window(self):
        return self.params.window


@dataclass
class StatisticTrace:
    """Per-time-index statistics; the first w-1 indices carry NaN statistics
    and the ``INSUFFICIENT`` alarm flag."""

    index: np.ndarray
    t2: np.ndarray
    spe: np.ndarray
    alarm: np.ndarray  # int8: 1 fault, 0 normal, -1 insufficient history
    alpha_t2: float
    alpha_spe: float
    label: np.ndarray | None = None  # 1 faulty, 0 normal, -1 unknown

    def scored(self):
        return self.alarm != INSUFFICIENT


@dataclass
class DetectionMetrics:
    fdr: float
    far: float
    f1: float
    precision: float
    n_faulty: int
    n_normal: int
    true_alarms: int
    false_alarms: int

    def to_dict(self):
        return {
            "fdr": self.fdr,
            "far": self.far,
            "f1": self.f1,
            "precision": self.precision,
            "n_faulty": self.n_faulty,
            "n_normal": self.n_normal,
            "true_alarms": self.true_alarms,
            "false_alarms": self.false_alarms,
        }


def t2_statistic(h, model: MonitorModel) -> float:
    """Quadratic form of a flattened final hidden state around the
    calibration mean."""
    if not model.calibrated:
        raise RuntimeError("monitor model is not calibrated")
    d = np.asarray(h, dtype=np.float64).ravel() - model.h_mean
    return float(d @ model.sigma_inv @ d)


def spe_statistic(x, x_hat) -> float:
    """Total squared reconstruction error over one window."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return float(((x - x_hat) ** 2).sum())


def _window_statistics(windows, params: ModelParams, chunk=256):
    """Hidden states (flattened) and SPE values for a stack of windows."""
    windows = np.asarray(windows, dtype=np.float64)
    n_windows = len(windows)
    h_flat = np.empty((n_windows, params.n_vars * params.hidden_dim))
    spe = np.empty(n_windows)
    recon_all = np.empty_like(windows)
    for start in range(0, n_windows, chunk):
        block = windows[start:start + chunk]
        recon, _, enc = model_forward(block, params, mode=CAUSAL)
        h_flat[start:start + len(block)] = enc.h.data.reshape(len(block), -1)
        spe[start:start + len(block)] = ((recon.data - block) ** 2).sum(axis=(1, 2))
        recon_all[start:start + len(block)] = recon.data
    return h_flat, spe, recon_all


def calibrate(params: ModelParams, train_windows, significance) -> MonitorModel:
    """Fit mean/covariance of the hidden features, compute both statistics
    over the training windows, and place KDE control limits.

    The covariance gets a trace-scaled ridge (with an absolute floor for
    degenerate features) before inversion.
    """
    if not 0.0 < significance < 0.5:
        raise ValueError("significance must be in (0, 0.5)")
    train_windows = np.asarray(train_windows, dtype=np.float64)
    if len(train_windows) < 2:
        raise ValueError("calibration needs at least 2 windows")
    if len(train_windows) < 100:
        logger.warning("calibrating on only %d windows; limits may be unstable",
                       len(train_windows))

    h_flat, spe, _ = _window_statistics(train_windows, params)
    h_mean = h_flat.mean(axis=0)
    centered = h_flat - h_mean
    dim = h_flat.shape[1]
    sigma = (centered.T @ centered) / (len(h_flat) - 1)
    ridge = max(1e-6 * np.trace(sigma) / dim, 1e-12)
    sigma_reg = sigma + ridge * np.eye(dim)
    try:
        np.linalg.cholesky(sigma_reg)
        sigma_inv = np.linalg.inv(sigma_reg)
    except np.linalg.LinAlgError as e:
        raise ArithmeticError(
            f"hidden-state covariance is singular even after ridge {ridge:.3e}") from e
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    if not np.all(np.isfinite(sigma_inv)):
        raise ArithmeticError("non-finite covariance inverse during calibration")

    centered_t2 = np.einsum("ij,jk,ik->i", centered, sigma_inv, centered)
    model = MonitorModel(
        params=params,
        h_mean=h_mean,
        sigma_inv=sigma_inv,
        significance=float(significance),
    )
    model.alpha_t2 = kde_control_limit(KdeEstimate.from_samples(centered_t2, significance))
    model.alpha_spe = kde_control_limit(KdeEstimate.from_samples(spe, significance))
    return model


def sliding_windows(series, window):
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValueError(f"series must be (T, n), got shape {series.shape}")
    if len(series) < window:
        raise ValueError(f"series has {len(series)} samples, need at least {window}")
    t, n = series.shape
    out = np.empty((t - window + 1, window, n))
    for i in range(t - window + 1):
        out[i] = series[i:i + window]
    return out


def detect(series, model: MonitorModel, onset=None) -> StatisticTrace:
    """Score every time index of a (already normalized) series.

    Index t is scored on the window ending at t; the first w-1 indices have
    no full window and are flagged insufficient.
    """
    if not model.calibrated:
        raise RuntimeError("monitor model is not calibrated")
    series = np.asarray(series, dtype=np.float64)
    w = model.window
    windows = sliding_windows(series, w)
    h_flat, spe, _ = _window_statistics(windows, model.params)
    d = h_flat - model.h_mean
    t2 = np.einsum("ij,jk,ik->i", d, model.sigma_inv, d)

    t_total = len(series)
    full_t2 = np.full(t_total, np.nan)
    full_spe = np.full(t_total, np.nan)
    alarm = np.full(t_total, INSUFFICIENT, dtype=np.int8)
    full_t2[w - 1:] = t2
    full_spe[w - 1:] = spe
    alarm[w - 1:] = ((t2 > model.alpha_t2) | (spe > model.alpha_spe)).astype(np.int8)

    label = None
    if onset is not None:
        label = (np.arange(t_total) >= onset).astype(np.int8)
    return StatisticTrace(
        index=np.arange(t_total),
        t2=full_t2,
        spe=full_spe,
        alarm=alarm,
        alpha_t2=model.alpha_t2,
        alpha_spe=model.alpha_spe,
        label=label,
    )


def score(trace: StatisticTrace, fault_onset_index) -> DetectionMetrics:
    """Sample-level detection/false-alarm rates and their F1 balance.

    Only indices with a full window of history count; recall is the fault
    detection rate and precision is the share of alarms that are true.
    """
    onset = int(fault_onset_index)
    if onset < 0 or onset >= len(trace.index):
        raise ValueError(f"fault onset {onset} outside trace of length {len(trace.index)}")
    scored = trace.scored()
    faulty = scored & (trace.index >= onset)
    normal = scored & (trace.index < onset)
    alarms = trace.alarm == 1
    true_alarms = int((alarms & faulty).sum())
    false_alarms = int((alarms & normal).sum())
    n_faulty = int(faulty.sum())
    n_normal = int(normal.sum())

    fdr = true_alarms / n_faulty if n_faulty else 0.0
    far = false_alarms / n_normal if n_normal else 0.0
    total_alarms = true_alarms + false_alarms
    if total_alarms:
        precision = true_alarms / total_alarms
    else:
        precision = 1.0 if n_faulty == 0 else 0.0
    f1 = (2.0 * precision * fdr / (precision + fdr)) if (precision + fdr) > 0 else 0.0
    return DetectionMetrics(fdr=fdr, far=far, f1=f1, precision=precision,
                            n_faulty=n_faulty, n_normal=n_normal,
                            true_alarms=true_alarms, false_alarms=false_alarms)


# -- persistence -------------------------------------------------------------------


def save_monitor(path, model: MonitorModel):
    if not model.calibrated:
        raise RuntimeError("refusing to save an uncalibrated monitor")
    np.savez(path, h_mean=model.h_mean, sigma_inv=model.sigma_inv,
             alpha=np.array([model.alpha_t2, model.alpha_spe, model.significance]))


def load_monitor(path, params: ModelParams) -> MonitorModel:
    with np.load(path) as bundle:
        alpha = bundle["alpha"]
        return MonitorModel(params=params, h_mean=bundle["h_mean"].copy(),
                            sigma_inv=bundle["sigma_inv"].copy(),
                            alpha_t2=float(alpha[0]), alpha_spe=float(alpha[1]),
                            significance=float(alpha[2]))


def write_trace_csv(path, trace: StatisticTrace):
    """Columns: t, T2, SPE, alpha_T2, alpha_SPE, alarm, label.

    Unscored rows leave the statistic cells empty; label is -1 when no
    ground truth is attached.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "T2", "SPE", "alpha_T2", "alpha_SPE", "alarm", "label"])
        for i in range(len(trace.index)):
            insufficient = trace.alarm[i] == INSUFFICIENT
            writer.writerow([
                int(trace.index[i]),
                "" if insufficient else f"{trace.t2[i]:.17g}",
                "" if insufficient else f"{trace.spe[i]:.17g}",
                f"{trace.alpha_t2:.17g}",
                f"{trace.alpha_spe:.17g}",
                int(trace.alarm[i]),
                -1 if trace.label is None else int(trace.label[i]),
            ])


def read_trace_csv(path) -> StatisticTrace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trace")
    trace = StatisticTrace(
        index=np.array([int(r["t"]) for r in rows]),
        t2=np.array([float(r["T2"]) if r["T2"] else np.nan for r in rows]),
        spe=np.array([float(r["SPE"]) if r["SPE"] else np.nan for r in rows]),
        alarm=np.array([int(r["alarm"]) for r in rows], dtype=np.int8),
        alpha_t2=float(rows[0]["alpha_T2"]),
        alpha_spe=float(rows[0]["alpha_SPE"]),
        label=np.array([int(r["label"]) for r in rows], dtype=np.int8),
    )
    if np.all(trace.label == -1):
        trace.label = None
    return trace
