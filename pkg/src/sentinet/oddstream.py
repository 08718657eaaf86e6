"""Feature-based streaming anomaly detector with an extreme-value threshold.

Training summarizes each sensor's typical series by a fixed feature
vector, projects the normalized features onto their first two principal
components, and estimates the bivariate density of typical behaviour
with a Gaussian kernel. The anomalous contour is calibrated by sampling
batches of n synthetic points from that density, mapping each batch's
density minimum through the extreme-value transform

    psi(f) = sqrt(-2 ln f - 2 ln 2pi)   for f < 1/(2pi), else 0,

fitting a Gumbel distribution to the transformed minima, and inverting
its CDF at the exceedance level tau_f. Detection flags a series when its
projected feature density falls below the contour.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .rng import as_generator

_EULER_GAMMA = 0.5772156649015329
_LOG_2PI = math.log(2.0 * math.pi)
_SAMPLE_CHUNK = 4096

_ROLL = 5  # rolling-window width for level-shift / variance-change features

FEATURE_NAMES = (
    "mean", "variance", "lag1_autocorr", "maximum", "minimum",
    "trend_slope", "mean_crossings", "excursion_ratio",
    "level_shift", "variance_change", "spikiness",
    "max_diff", "diff_sd",
)


class OddstreamError(RuntimeError):
    pass


_counter_lock = threading.Lock()
_constant_series_events = 0


def constant_series_event_count() -> int:
    """Times a test window contained a constant series (verdict forced to 1)."""
    return _constant_series_events


def reset_constant_series_event_count() -> None:
    global _constant_series_events
    with _counter_lock:
        _constant_series_events = 0


def extract_features(panel: np.ndarray):
    """(n, m) feature matrix from a (w, n) panel of series in columns.

    Whole-window summaries (mean, variance, lag-1 autocorrelation, extremes,
    trend slope, mean crossings, 3-sigma excursion ratio) are complemented
    by short-scale contrasts that stay informative when the level wanders:
    rolling-mean and rolling-variance shifts, a robust spike magnitude, and
    first-difference extremes/scale. Returns the matrix and a boolean vector
    marking constant (zero variance) series, whose rows are left at zero.
    """
    panel = np.atleast_2d(np.asarray(panel, dtype=float))
    w, n = panel.shape
    if w < 3:
        raise ValueError("feature extraction needs at least 3 time points")
    t_centred = np.arange(w) - (w - 1) / 2.0
    t_ss = float((t_centred**2).sum())

    mean = panel.mean(axis=0)
    dev = panel - mean
    ss = (dev**2).sum(axis=0)
    constant = ss == 0.0
    safe_ss = np.where(constant, 1.0, ss)

    var = ss / (w - 1)
    sd = np.sqrt(var)
    ac1 = (dev[:-1] * dev[1:]).sum(axis=0) / safe_ss
    slope = (t_centred[:, None] * dev).sum(axis=0) / t_ss
    signs = dev >= 0
    crossings = (signs[1:] != signs[:-1]).sum(axis=0).astype(float)
    excursions = (np.abs(dev) > 3.0 * sd).mean(axis=0)

    k = min(_ROLL, w)
    cs = np.vstack([np.zeros(n), np.cumsum(panel, axis=0)])
    cs2 = np.vstack([np.zeros(n), np.cumsum(panel**2, axis=0)])
    roll_mean = (cs[k:] - cs[:-k]) / k
    roll_var = (cs2[k:] - cs2[:-k]) / k - roll_mean**2
    if roll_mean.shape[0] > 1:
        level_shift = np.abs(np.diff(roll_mean, axis=0)).max(axis=0)
        var_change = np.abs(np.diff(roll_var, axis=0)).max(axis=0)
    else:
        level_shift = np.zeros(n)
        var_change = np.zeros(n)

    med = np.median(panel, axis=0)
    mad = 1.4826 * np.median(np.abs(panel - med), axis=0)
    robust_scale = np.where(mad > 0, mad, np.where(sd > 0, sd, 1.0))
    spikiness = np.abs(panel - med).max(axis=0) / robust_scale

    diffs = np.diff(panel, axis=0)
    max_diff = np.abs(diffs).max(axis=0)
    diff_sd = diffs.std(axis=0)

    feats = np.column_stack([
        mean, var, ac1, panel.max(axis=0), panel.min(axis=0), slope,
        crossings, excursions, level_shift, var_change, spikiness,
        max_diff, diff_sd,
    ])
    feats[constant] = 0.0
    return feats, constant


@dataclass(frozen=True)
class OddstreamModel:
    """Frozen training state: feature scaling, 2-D principal basis, kernel
    density over the typical cloud, and the calibrated density threshold."""

    feat_min: np.ndarray
    feat_span: np.ndarray
    feat_mean: np.ndarray
    basis: np.ndarray  # (m, 2), orthonormal columns
    points: np.ndarray  # (n_cloud, 2) projected training cloud
    bandwidth: np.ndarray  # (2,) per-axis kernel scale
    gumbel_loc: float
    gumbel_scale: float
    tau_star: float  # density threshold: flag when density < tau_star
    tau_f: float
    batch_n: int  # series per judged window (extreme-calibration batch size)

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.feat_min) / self.feat_span

    def project(self, feats: np.ndarray) -> np.ndarray:
        return (self.normalize(feats) - self.feat_mean) @ self.basis

    def density(self, xy: np.ndarray) -> np.ndarray:
        return _kde_density(self.points, self.bandwidth, np.atleast_2d(xy))


def _kde_density(points: np.ndarray, bandwidth: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Bivariate Gaussian product-kernel density of ``points`` at ``xy``."""
    norm = 1.0 / (2.0 * math.pi * bandwidth[0] * bandwidth[1] * len(points))
    out = np.empty(len(xy))
    for start in range(0, len(xy), _SAMPLE_CHUNK):
        chunk = xy[start:start + _SAMPLE_CHUNK]
        z0 = (chunk[:, None, 0] - points[None, :, 0]) / bandwidth[0]
        z1 = (chunk[:, None, 1] - points[None, :, 1]) / bandwidth[1]
        out[start:start + _SAMPLE_CHUNK] = norm * np.exp(-0.5 * (z0**2 + z1**2)).sum(axis=1)
    return out


def _psi(density: np.ndarray) -> np.ndarray:
    """Extreme-value transform of density values; 0 in the dense region."""
    d = np.asarray(density, dtype=float)
    arg = -2.0 * np.log(np.maximum(d, 1e-300)) - 2.0 * _LOG_2PI
    out = np.sqrt(np.maximum(arg, 0.0))
    return out if out.ndim else float(out)


def psi_transform(density):
    """Public alias used by tests and diagnostics."""
    return _psi(density)


def oddstream_train(y_train, tau_f: float = 0.95, rng_seed=0,
                    n_extremes: int = 100_000) -> OddstreamModel:
    """Fit the detector to typical data: one (T_train, n) panel or a sequence
    of replicate panels sharing the same n (their feature points pool into
    one cloud, which steadies the density estimate).

    ``n_extremes`` batches of n points are sampled from the fitted density
    to form the empirical extreme distribution; n here is the width of the
    windows the detector will judge. Raises OddstreamError when every
    training series is constant (no usable features).
    """
    if isinstance(y_train, np.ndarray) and y_train.ndim <= 2:
        panels = [np.atleast_2d(np.asarray(y_train, dtype=float))]
    else:
        panels = [np.atleast_2d(np.asarray(p, dtype=float)) for p in y_train]
    n = panels[0].shape[1]
    if any(p.shape[1] != n for p in panels):
        raise ValueError("all training panels must have the same series count")
    if n < 3:
        raise ValueError("training needs at least 3 series")
    if not 0.0 < tau_f < 1.0:
        raise ValueError("tau_f must lie in (0, 1)")
    rng = as_generator(rng_seed)

    parts = [extract_features(p) for p in panels]
    feats = np.vstack([f for f, _ in parts])
    constant = np.concatenate([c for _, c in parts])
    feats = feats[~constant]
    if feats.shape[0] < 3:
        raise OddstreamError("fewer than 3 non-constant training series; no cloud to fit")

    fmin = feats.min(axis=0)
    span = feats.max(axis=0) - fmin
    degenerate_cols = span == 0.0
    span = np.where(degenerate_cols, 1.0, span)
    normed = (feats - fmin) / span
    if not np.any(normed.std(axis=0) > 0):
        raise OddstreamError("training features are degenerate across all series")

    centre = normed.mean(axis=0)
    centred = normed - centre
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    basis = vt[:2].T
    if basis.shape[1] < 2:
        raise OddstreamError("fewer than two principal directions in training features")
    points = centred @ basis

    bw = points.std(axis=0, ddof=1) * len(points) ** (-1.0 / 6.0)
    bw = np.maximum(bw, 1e-9)

    # Empirical distribution of per-batch density minima, on the psi scale.
    minima = np.empty(n_extremes)
    pos = 0
    while pos < n_extremes:
        m = min(_SAMPLE_CHUNK, n_extremes - pos)
        comp = rng.integers(0, len(points), size=(m, n))
        noise = rng.standard_normal((m, n, 2)) * bw
        sample = points[comp] + noise
        dens = _kde_density(points, bw, sample.reshape(-1, 2)).reshape(m, n)
        minima[pos:pos + m] = dens.min(axis=1)
        pos += m
    psi_max = _psi(minima)

    scale = psi_max.std(ddof=1) * math.sqrt(6.0) / math.pi
    if scale <= 0:
        raise OddstreamError("degenerate extreme distribution; cannot fit threshold")
    loc = psi_max.mean() - _EULER_GAMMA * scale
    psi_star = loc - scale * math.log(-math.log(tau_f))
    tau_star = math.exp(-0.5 * psi_star**2 - _LOG_2PI) if psi_star > 0 else 1.0 / (2.0 * math.pi)

    return OddstreamModel(
        feat_min=fmin, feat_span=span, feat_mean=centre, basis=basis,
        points=points, bandwidth=bw, gumbel_loc=loc, gumbel_scale=scale,
        tau_star=tau_star, tau_f=tau_f, batch_n=n,
    )


def oddstream_detect(model: OddstreamModel, window: np.ndarray) -> np.ndarray:
    """Per-sensor verdict for one (w, n) window: 1 where the projected
    feature density falls below the calibrated contour. Constant series
    cannot be featurized and are flagged (counted as warnings)."""
    window = np.atleast_2d(np.asarray(window, dtype=float))
    n = window.shape[1]
    if n != model.batch_n:
        raise ValueError(f"window has {n} series, model was calibrated for {model.batch_n}")
    feats, constant = extract_features(window)
    flags = np.zeros((1, n), dtype=np.int8)
    if constant.any():
        global _constant_series_events
        with _counter_lock:
            _constant_series_events += int(constant.sum())
        flags[0, constant] = 1
    live = ~constant
    if live.any():
        dens = model.density(model.project(feats[live]))
        flags[0, live] = (dens < model.tau_star).astype(np.int8)
    return flags
