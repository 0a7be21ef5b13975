"""Masked-index regression metrics and recovery signal-to-noise ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SNR_TABLE_CAP_DB = 120.0


@dataclass
class MetricReport:
    mae: float
    mse: float
    rmse: float
    r2: float  # NaN when ground truth is constant on the index set
    snr_db: float
    n_points: int
    target: str = ""
    meta: dict = None


def regression_metrics(x_hat, x_gt):
    """(mae, mse, rmse, r2) over the target index set.

    r2 needs at least two points and non-constant ground truth;
    otherwise it is NaN while the error metrics stay valid.
    """
    pred = np.asarray(x_hat, dtype=np.float64).ravel()
    gt = np.asarray(x_gt, dtype=np.float64).ravel()
    if pred.shape != gt.shape or pred.size < 1:
        raise ValueError(f"bad metric inputs: {pred.shape} vs {gt.shape}")
    err = pred - gt
    mae = float(np.abs(err).mean())
    mse = float((err * err).mean())
    rmse = math.sqrt(mse)
    ss_tot = float(((gt - gt.mean()) ** 2).sum())
    if gt.size < 2 or ss_tot <= 0.0:
        r2 = math.nan
    else:
        r2 = 1.0 - float((err * err).sum()) / ss_tot
    return mae, mse, rmse, r2


def recovery_snr(x_hat, x_gt):
    """10 log10(signal energy / error energy) in dB; +inf when exact."""
    pred = np.asarray(x_hat, dtype=np.float64).ravel()
    gt = np.asarray(x_gt, dtype=np.float64).ravel()
    signal = float((gt * gt).sum())
    if signal <= 0.0:
        raise ValueError("zero signal energy on the target index set")
    noise = float(((gt - pred) ** 2).sum())
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(signal / noise)


def snr_for_table(snr_db):
    """Cap the +inf perfect-recovery sentinel for tabular output."""
    return min(snr_db, SNR_TABLE_CAP_DB)


def metric_report(x_hat, x_gt, target="", **meta):
    mae, mse, rmse, r2 = regression_metrics(x_hat, x_gt)
    return MetricReport(
        mae=mae,
        mse=mse,
        rmse=rmse,
        r2=r2,
        snr_db=recovery_snr(x_hat, x_gt),
        n_points=int(np.asarray(x_gt).size),
        target=target,
        meta=meta or None,
    )
