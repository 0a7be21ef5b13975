"""Non-deep per-node recovery baselines: linear, cubic spline, Kalman.

Each fills only the masked cells of one series; observed values pass
through untouched, and no baseline ever sees other nodes (the collapsed
information-flow control group).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline


@dataclass
class BaselineSpec:
    method: str = "linear"  # linear | spline | kalman
    process_var: float = 1e-2
    obs_var: float = 1e-2

    def validate(self):
        if self.method not in ("linear", "spline", "kalman"):
            raise ValueError(f"unknown baseline {self.method!r}")
        if self.method == "kalman" and (self.process_var <= 0 or self.obs_var <= 0):
            raise ValueError("kalman noise variances must be positive")
        return self


def _observed(series, mask_row):
    series = np.asarray(series, dtype=np.float64)
    mask_row = np.asarray(mask_row, dtype=bool)
    if series.shape != mask_row.shape or series.ndim != 1:
        raise ValueError("series and mask must be equal-length 1-D")
    obs = np.flatnonzero(~mask_row)
    if obs.size == 0:
        raise ValueError("cannot recover an all-masked series")
    return series, mask_row, obs


def linear_interp_recover(series, mask_row):
    """Linear fill between bracketing observations; ends hold the nearest."""
    series, mask_row, obs = _observed(series, mask_row)
    out = series.copy()
    t = np.arange(series.size)
    out[mask_row] = np.interp(t[mask_row], obs, series[obs])
    return out


def spline_recover(series, mask_row):
    """Natural cubic spline through the observations.

    Extrapolation beyond the first/last observation is clamped to the
    boundary values; fewer than four observations falls back to linear
    with a warning.
    """
    series, mask_row, obs = _observed(series, mask_row)
    if obs.size < 4:
        warnings.warn("fewer than 4 observed points; spline fell back to linear")
        return linear_interp_recover(series, mask_row)
    spline = CubicSpline(obs, series[obs], bc_type="natural")
    out = series.copy()
    fill_t = np.flatnonzero(mask_row)
    vals = spline(np.clip(fill_t, obs[0], obs[-1]))
    out[fill_t] = vals
    return out


def kalman_recover(series, mask_row, process_var=1e-2, obs_var=1e-2):
    """Local-level model: random-walk state, noisy observation.

    Forward filter with prediction-only steps at masked times, then RTS
    smoothing; masked cells take the smoothed means.  The filter starts
    at the first observed value with diffuse variance 1e7.
    """
    if process_var <= 0 or obs_var <= 0:
        raise ValueError("noise variances must be positive")
    series, mask_row, obs = _observed(series, mask_row)
    t_total = series.size
    x_pred = np.zeros(t_total)
    p_pred = np.zeros(t_total)
    x_filt = np.zeros(t_total)
    p_filt = np.zeros(t_total)

    mean, var = series[obs[0]], 1e7
    for t in range(t_total):
        if t > 0:
            mean, var = x_filt[t - 1], p_filt[t - 1] + process_var
        x_pred[t], p_pred[t] = mean, var
        if mask_row[t]:
            x_filt[t], p_filt[t] = mean, var
        else:
            gain = var / (var + obs_var)
            x_filt[t] = mean + gain * (series[t] - mean)
            p_filt[t] = (1.0 - gain) * var

    x_smooth = x_filt.copy()
    for t in range(t_total - 2, -1, -1):
        c = p_filt[t] / p_pred[t + 1]
        x_smooth[t] = x_filt[t] + c * (x_smooth[t + 1] - x_pred[t + 1])

    out = series.copy()
    out[mask_row] = x_smooth[mask_row]
    return out


def recover(series, mask_row, spec):
    spec.validate()
    if spec.method == "linear":
        return linear_interp_recover(series, mask_row)
    if spec.method == "spline":
        return spline_recover(series, mask_row)
    return kalman_recover(series, mask_row, spec.process_var, spec.obs_var)


BASELINE_METHODS = ("linear", "spline", "kalman")
