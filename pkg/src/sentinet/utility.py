"""Monte Carlo estimation of the dual-purpose design utility.

One estimate runs B joint draws of (parameters, field, anomalies):
simulate the response at design and prediction sites together, inject
anomalies at the design sites, detect and clean them, krige from the
cleaned data, and score prediction (inverse RMSE against the held-out
truth) and detection (specificity pooled over all draws). The dual
objective is the product of the two aggregates.

Seed discipline: every stage of draw b consumes the substream
(root_seed, STAGE, b), so draws are independent, reproducible, and
insensitive to evaluation order. Training data use (root_seed, TRAIN, ...)
once per estimate. Two estimates with the same root seed therefore see
identical parameter/field/anomaly draws even if their designs differ,
which is what makes paired design comparisons sharp.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .anomaly import (AnomalyGenParams, ConfusionMatrix, contaminate,
                      detect_spatial_knn, generate_mask, metrics,
                      reduce_mask_to_windows, score)
from .covariance import (CovarianceSpec, PriorSpec, SiteGeometry, build_sigma,
                         chol_lower, draw_params, geometry_from_network,
                         geometry_from_points, simulate_spatial,
                         simulate_spatiotemporal)
from .kriging import (build_spacetime_cross_covariance, partition_covariance,
                      posterior_mean_spatial, posterior_mean_spatiotemporal)
from .oddstream import oddstream_detect, oddstream_train
from .rng import substream

# substream stage tags
_TRAIN, _THETA, _FIELD, _MASK, _NOISE, _DETECTOR = range(6)

OBJECTIVES = ("dual", "irmse-only", "specificity-only")

IRMSE_CAP = 1e12

_counter_lock = threading.Lock()
_zero_rmse_events = 0
_all_flagged_events = 0


class UtilityError(RuntimeError):
    pass


def zero_rmse_event_count() -> int:
    return _zero_rmse_events


def reset_zero_rmse_event_count() -> None:
    global _zero_rmse_events
    with _counter_lock:
        _zero_rmse_events = 0


def all_flagged_event_count() -> int:
    """Draws where the detector flagged every sensor and predictions fell
    back to the prior mean."""
    return _all_flagged_events


def reset_all_flagged_event_count() -> None:
    global _all_flagged_events
    with _counter_lock:
        _all_flagged_events = 0


def _count_all_flagged() -> None:
    global _all_flagged_events
    with _counter_lock:
        _all_flagged_events += 1


def irmse(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Inverse root-mean-squared error; capped (and counted) on zero RMSE."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and truth must be equal-length and nonempty")
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        global _zero_rmse_events
        with _counter_lock:
            _zero_rmse_events += 1
        return IRMSE_CAP
    return min(mse ** -0.5, IRMSE_CAP)


# -- model contexts ------------------------------------------------------------


@dataclass(frozen=True)
class SpatialModel:
    """Zero-mean Gaussian field observed at free 2-D sensors; predictions on
    fixed points. Per-draw measurement noise is tau^2 * sigma2_e (plus
    sigma2_0 if the prior activates it)."""

    prior: PriorSpec
    cov_spec: CovarianceSpec
    pred_points: np.ndarray
    tau: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "pred_points",
                           np.atleast_2d(np.asarray(self.pred_points, dtype=float)))

    @property
    def T(self) -> int:
        return 1


@dataclass(frozen=True)
class NetworkModel:
    """First-order dynamical model on a river network; sensors and prediction
    sites are network locations, detection runs on whole windows (w = T)."""

    prior: PriorSpec
    cov_spec: CovarianceSpec
    network: object
    pred_locations: tuple
    T: int

    def __post_init__(self):
        object.__setattr__(self, "pred_locations", tuple(self.pred_locations))
        if self.T < 3:
            raise ValueError("network model needs T >= 3 (feature extraction)")


@dataclass(frozen=True)
class DetectorConfig:
    kind: str  # "spatial-knn" | "oddstream"
    k: int = 3
    tau_f: float = 0.95
    n_extremes: int = 100_000
    train_replicates: int = 4  # typical panels pooled into the oddstream cloud

    def __post_init__(self):
        if self.kind not in ("spatial-knn", "oddstream"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.train_replicates < 1:
            raise ValueError("train_replicates must be >= 1")


@dataclass(frozen=True)
class UtilityConfig:
    anomaly: AnomalyGenParams
    detector: DetectorConfig
    b_draws: int
    b_train: int = 100
    objective: str = "dual"

    def __post_init__(self):
        if self.b_draws < 1:
            raise ValueError("b_draws must be >= 1")
        if self.b_train < 2:
            raise ValueError("b_train must be >= 2")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


@dataclass(frozen=True)
class UtilitySample:
    draw: int
    irmse_cleaned: float
    irmse_anom: float
    specificity: float
    n_flagged: int
    n_cells: int


@dataclass(frozen=True)
class UtilityEstimate:
    """Aggregated estimate. ``confusion`` pools the detector's verdicts at
    the granularity it operates on (windows for windowed detectors);
    ``confusion_cells`` pools at data-cell granularity, which is what the
    removed/retained percentages describe."""

    value: float
    u_irmse: float
    u_sp: float
    se_irmse: float
    sd_irmse: float
    u_irmse_anom: float
    sd_irmse_anom: float
    confusion: ConfusionMatrix
    confusion_cells: ConfusionMatrix
    b_draws: int
    objective: str
    degenerate: frozenset
    samples: np.ndarray = field(repr=False)
    per_draw: tuple = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "u_irmse": self.u_irmse,
            "u_sp": self.u_sp,
            "se_irmse": self.se_irmse,
            "sd_irmse": self.sd_irmse,
            "u_irmse_anom": self.u_irmse_anom,
            "sd_irmse_anom": self.sd_irmse_anom,
            "confusion": {"tp": self.confusion.tp, "tn": self.confusion.tn,
                          "fp": self.confusion.fp, "fn": self.confusion.fn},
            "confusion_cells": {"tp": self.confusion_cells.tp,
                                "tn": self.confusion_cells.tn,
                                "fp": self.confusion_cells.fp,
                                "fn": self.confusion_cells.fn},
            "b_draws": self.b_draws,
            "objective": self.objective,
            "degenerate": sorted(self.degenerate),
        }


def _draw_specificity(cm: ConfusionMatrix) -> float:
    # within one draw, no normal entries means nothing could be misflagged
    return cm.tn / (cm.tn + cm.fp) if (cm.tn + cm.fp) > 0 else 1.0


def _spatial_nugget(model: SpatialModel, theta) -> float:
    nug = model.tau**2 * theta.spatial.sigma2_e
    if model.cov_spec.nugget:
        nug += theta.spatial.sigma2_0
    return nug


def estimate_utility(design, space, model, config: UtilityConfig, rng_seed: int) -> UtilityEstimate:
    """Run Algorithm-style utility estimation for one design.

    Deterministic given ``rng_seed``. Raises UtilityError with the draw
    index attached when a draw's linear algebra or detector fails.
    """
    if isinstance(model, SpatialModel):
        return _estimate_spatial(design, space, model, config, rng_seed)
    if isinstance(model, NetworkModel):
        return _estimate_network(design, space, model, config, rng_seed)
    raise TypeError(f"unsupported model context {type(model).__name__}")


def _aggregate(u_clean, u_anom, spec_draws, confusion, confusion_cells,
               config) -> UtilityEstimate:
    u_clean = np.asarray(u_clean)
    u_anom = np.asarray(u_anom)
    b = len(u_clean)
    m = metrics(confusion)
    u_irmse = float(u_clean.mean())
    sd = float(u_clean.std(ddof=1)) if b > 1 else 0.0
    sd_anom = float(u_anom.std(ddof=1)) if b > 1 else 0.0
    pooled_spec = m.specificity  # metrics() already maps degenerate to 0

    if config.objective == "dual":
        value = u_irmse * pooled_spec
        samples = u_clean * spec_draws
    elif config.objective == "irmse-only":
        value = u_irmse
        samples = u_clean.copy()
    else:
        value = pooled_spec
        samples = np.asarray(spec_draws, dtype=float).copy()

    return UtilityEstimate(
        value=value, u_irmse=u_irmse, u_sp=pooled_spec,
        se_irmse=sd / b**0.5 if b > 1 else 0.0, sd_irmse=sd,
        u_irmse_anom=float(u_anom.mean()), sd_irmse_anom=sd_anom,
        confusion=confusion, confusion_cells=confusion_cells, b_draws=b,
        objective=config.objective, degenerate=m.degenerate, samples=samples,
    )


def _estimate_spatial(design, space, model, config, rng_seed) -> UtilityEstimate:
    sites = np.asarray(space.sites(design), dtype=float)
    n = sites.shape[0]
    all_pts = np.vstack([sites, model.pred_points])
    geom_all = geometry_from_points(all_pts)

    u_clean = np.empty(config.b_draws)
    u_anom = np.empty(config.b_draws)
    spec_draws = np.empty(config.b_draws)
    per_draw = []
    confusion = ConfusionMatrix()
    for b in range(config.b_draws):
        try:
            theta = draw_params(model.prior, substream(rng_seed, _THETA, b))
            sigma_all = build_sigma(model.cov_spec, theta.spatial, geom_all)
            nug = _spatial_nugget(model, theta)
            joint = simulate_spatial(theta, sigma_all, nug, substream(rng_seed, _FIELD, b))
            y, truth = joint[:n], joint[n:]

            # Per-draw training replicates from the draw's own likelihood:
            # the detector's tolerances adapt to theta(b).
            cov_obs = sigma_all[:n, :n] + nug * np.eye(n)
            L = chol_lower(cov_obs)
            z = substream(rng_seed, _TRAIN, b).standard_normal((n, config.b_train))
            train = (L @ z).T

            mask = generate_mask(config.anomaly, 1, n, substream(rng_seed, _MASK, b))
            y_anom = contaminate(y[None, :], mask, config.anomaly,
                                 substream(rng_seed, _NOISE, b))[0]
            flags = detect_spatial_knn(y_anom, sites, train, config.detector.k)

            cm = score(mask, flags)
            confusion = confusion + cm
            spec_draws[b] = _draw_specificity(cm)

            pc = partition_covariance(sigma_all, n, nugget=nug)
            keep = flags[0] == 0
            if keep.any():
                pred_clean = posterior_mean_spatial(pc, y_anom, keep=keep)
            else:  # every sensor removed: prediction degenerates to the prior mean
                _count_all_flagged()
                pred_clean = np.zeros(truth.size)
            pred_anom = posterior_mean_spatial(pc, y_anom)
            u_clean[b] = irmse(pred_clean, truth)
            u_anom[b] = irmse(pred_anom, truth)
            per_draw.append(UtilitySample(b, u_clean[b], u_anom[b], spec_draws[b],
                                          int(flags.sum()), n))
        except Exception as exc:
            raise UtilityError(f"draw {b} failed: {exc}") from exc

    # T = 1: cell and window granularity coincide
    est = _aggregate(u_clean, u_anom, spec_draws, confusion, confusion, config)
    return replace(est, per_draw=tuple(per_draw))


def _estimate_network(design, space, model, config, rng_seed) -> UtilityEstimate:
    if config.detector.kind != "oddstream":
        raise ValueError("network model requires the oddstream detector")
    sites = list(space.sites(design))
    n = len(sites)
    T = model.T
    all_locs = sites + list(model.pred_locations)
    geom_all = geometry_from_network(model.network, all_locs)

    u_clean = np.empty(config.b_draws)
    u_anom = np.empty(config.b_draws)
    spec_draws = np.empty(config.b_draws)
    per_draw = []
    confusion = ConfusionMatrix()
    confusion_cells = ConfusionMatrix()
    for b in range(config.b_draws):
        try:
            theta = draw_params(model.prior, substream(rng_seed, _THETA, b))
            sigma_all = build_sigma(model.cov_spec, theta.spatial, geom_all)
            nug = theta.spatial.sigma2_0 if model.cov_spec.nugget else 0.0
            panel = simulate_spatiotemporal(theta, sigma_all, T, None,
                                            substream(rng_seed, _FIELD, b)).T
            obs, truth = panel[:, :n], panel[:, n:]

            # Typical T x n training panels from the draw's own likelihood,
            # so the detector's density model matches theta(b).
            panels_tr = [
                simulate_spatiotemporal(theta, sigma_all[:n, :n], T, None,
                                        substream(rng_seed, _TRAIN, b, r)).T
                for r in range(config.detector.train_replicates)
            ]
            detector = oddstream_train(panels_tr, config.detector.tau_f,
                                       substream(rng_seed, _DETECTOR, b),
                                       n_extremes=config.detector.n_extremes)

            mask = generate_mask(config.anomaly, T, n, substream(rng_seed, _MASK, b))
            y_anom = contaminate(obs, mask, config.anomaly, substream(rng_seed, _NOISE, b))
            flags = oddstream_detect(detector, y_anom)

            cm = score(reduce_mask_to_windows(mask, T), flags)
            confusion = confusion + cm
            confusion_cells = confusion_cells + score(mask, np.repeat(flags, T, axis=0))
            spec_draws[b] = _draw_specificity(cm)

            y_clean = _impute_flagged(y_anom, flags[0] == 1, sigma_all[:n, :n],
                                      theta.phi, nug)

            pc = build_spacetime_cross_covariance(sigma_all, theta.phi, T, nug, n_obs=n)
            ys = np.column_stack([y_clean.reshape(-1), y_anom.reshape(-1)])
            preds = posterior_mean_spatiotemporal(pc, None, None, None, ys)
            u_clean[b] = irmse(preds[:, 0], truth.reshape(-1))
            u_anom[b] = irmse(preds[:, 1], truth.reshape(-1))
            per_draw.append(UtilitySample(b, u_clean[b], u_anom[b], spec_draws[b],
                                          int(flags.sum()), n))
        except Exception as exc:
            raise UtilityError(f"draw {b} failed: {exc}") from exc

    est = _aggregate(u_clean, u_anom, spec_draws, confusion, confusion_cells, config)
    return replace(est, per_draw=tuple(per_draw))


def _subset_geometry(geom, n) -> SiteGeometry:
    idx = np.arange(n)

    def take(m):
        return None if m is None else m[np.ix_(idx, idx)]

    return SiteGeometry(n=n, euclidean=take(geom.euclidean), stream=take(geom.stream),
                        connected=take(geom.connected), weights=take(geom.weights))


def _impute_flagged(y_anom, flagged, sigma_obs, phi, nugget):
    """Replace flagged sensors' whole windows with the posterior predictive
    mean conditioned on the unflagged sensors; prior mean (zero) when every
    sensor is flagged."""
    if not flagged.any():
        return y_anom
    T = y_anom.shape[0]
    y_clean = y_anom.copy()
    kept = np.flatnonzero(~flagged)
    cut = np.flatnonzero(flagged)
    if kept.size == 0:
        _count_all_flagged()
        y_clean[:, cut] = 0.0
        return y_clean
    order = np.concatenate([kept, cut])
    sigma_perm = sigma_obs[np.ix_(order, order)]
    pc = build_spacetime_cross_covariance(sigma_perm, phi, T, nugget, n_obs=kept.size)
    imputed = posterior_mean_spatiotemporal(pc, None, None, None,
                                            y_anom[:, kept].reshape(-1))
    y_clean[:, cut] = imputed.reshape(T, cut.size)
    return y_clean


def data_quality_report(confusion: ConfusionMatrix) -> dict:
    """Percent of injected anomalies removed and good data retained; None for
    sides with no classified entries."""
    removed = 100.0 * confusion.tp / (confusion.tp + confusion.fn) \
        if (confusion.tp + confusion.fn) > 0 else None
    retained = 100.0 * confusion.tn / (confusion.tn + confusion.fp) \
        if (confusion.tn + confusion.fp) > 0 else None
    return {"pct_anomalies_removed": removed, "pct_good_retained": retained}


class UtilityEvaluator:
    """Callable bundle handed to the optimizer: estimates and per-draw
    samples for a design at a requested Monte Carlo size."""

    def __init__(self, space, model, config: UtilityConfig):
        self.space = space
        self.model = model
        self.config = config

    def estimate(self, design, b_draws: int, rng_seed: int) -> UtilityEstimate:
        cfg = replace(self.config, b_draws=b_draws)
        return estimate_utility(design, self.space, self.model, cfg, rng_seed)

    def samples(self, design, b_draws: int, rng_seed: int) -> np.ndarray:
        return self.estimate(design, b_draws, rng_seed).samples
