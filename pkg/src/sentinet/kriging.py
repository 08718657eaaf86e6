"""Posterior predictive means for spatial and space-time models.

Simple kriging only: the utility pipeline needs the predictive mean, not
the full posterior predictive distribution. Solves use a symmetric
positive-definite factorization with the shared jitter fallback; no
explicit inverse is ever formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .covariance import chol_lower


class KrigingError(RuntimeError):
    """Degenerate kriging system (empty observation set or bad covariance)."""


@dataclass(frozen=True)
class PredictionSet:
    """Prediction targets: locations (2-D points or network sites) and, for
    space-time use, the time horizon."""

    locations: tuple
    T: int = 1

    def __post_init__(self):
        if len(self.locations) < 1:
            raise ValueError("at least one prediction location required")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @property
    def n_pred(self) -> int:
        return len(self.locations)


@dataclass(frozen=True)
class PartitionedCovariance:
    """Covariance blocks between observations and prediction targets.

    ``nugget`` is added to the diagonal of ``obs_obs`` when solving; pass 0
    if the blocks already include measurement error (the space-time
    construction below does).
    """

    obs_obs: np.ndarray
    pred_pred: np.ndarray
    obs_pred: np.ndarray
    nugget: float = 0.0

    def __post_init__(self):
        c, chat, s = (np.asarray(m, dtype=float) for m in
                      (self.obs_obs, self.pred_pred, self.obs_pred))
        n, nhat = c.shape[0], chat.shape[0]
        if c.shape != (n, n) or chat.shape != (nhat, nhat) or s.shape != (n, nhat):
            raise ValueError("inconsistent covariance block shapes")
        if self.nugget < 0:
            raise ValueError("nugget must be nonnegative")


def partition_covariance(full: np.ndarray, n_obs: int, nugget: float = 0.0) -> PartitionedCovariance:
    """Split a covariance over [observations..., predictions...] into blocks."""
    full = np.asarray(full, dtype=float)
    return PartitionedCovariance(
        obs_obs=full[:n_obs, :n_obs],
        pred_pred=full[n_obs:, n_obs:],
        obs_pred=full[:n_obs, n_obs:],
        nugget=nugget,
    )


def _solve_spd(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    L = chol_lower(mat)
    return scipy.linalg.cho_solve((L, True), rhs)


def posterior_mean_spatial(pc: PartitionedCovariance, y: np.ndarray, keep=None) -> np.ndarray:
    """Zero-mean posterior predictive mean S^T (C + tau^2 I)^{-1} y.

    ``keep`` optionally selects the retained observations (boolean mask or
    index array) after anomaly removal; rows/columns of C, rows of S and
    entries of y are restricted accordingly.
    """
    y = np.asarray(y, dtype=float)
    n = pc.obs_obs.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"y has length {y.shape[0]}, expected {n}")
    if keep is None:
        idx = np.arange(n)
    else:
        keep = np.asarray(keep)
        idx = np.flatnonzero(keep) if keep.dtype == bool else keep.astype(int)
    if idx.size == 0:
        raise KrigingError("all observations removed; kriging system is empty")
    c = pc.obs_obs[np.ix_(idx, idx)] + pc.nugget * np.eye(idx.size)
    s = pc.obs_pred[idx, :]
    try:
        alpha = _solve_spd(c, y[idx])
    except Exception as exc:
        raise KrigingError(f"kriging solve failed: {exc}") from exc
    return s.T @ alpha


def posterior_mean_spatiotemporal(pc: PartitionedCovariance, X, X_hat, beta,
                                  y: np.ndarray) -> np.ndarray:
    """Simple-kriging mean with known beta:
    X_hat beta + S^T C^{-1} (y - X beta).

    ``pc.obs_obs`` must already include measurement error on its diagonal
    (plus ``pc.nugget`` if nonzero). ``y`` may be a vector or a matrix whose
    columns are alternative observation vectors sharing the geometry.
    """
    y = np.asarray(y, dtype=float)
    n = pc.obs_obs.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows, expected {n}")
    if X is None:
        resid = y
        mean_pred = 0.0
    else:
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        mu_obs = np.asarray(X, dtype=float) @ beta
        mu_pred = np.asarray(X_hat, dtype=float) @ beta
        resid = y - (mu_obs[:, None] if y.ndim == 2 else mu_obs)
        mean_pred = mu_pred[:, None] if y.ndim == 2 else mu_pred
    c = pc.obs_obs + (pc.nugget * np.eye(n) if pc.nugget else 0.0)
    try:
        alpha = _solve_spd(c, resid)
    except Exception as exc:
        raise KrigingError(f"kriging solve failed: {exc}") from exc
    return mean_pred + pc.obs_pred.T @ alpha


def spacetime_lag_blocks(sigma: np.ndarray, phi: float, T: int, nugget: float) -> list:
    """Per-step covariances V_t implied by the dynamical recursion:
    V_1 = sigma + nugget I, V_{t+1} = phi^2 V_t + sigma + nugget I."""
    S = sigma.shape[0]
    step = sigma + nugget * np.eye(S)
    blocks = [step]
    for _ in range(1, T):
        blocks.append(phi * phi * blocks[-1] + step)
    return blocks


def build_spacetime_cross_covariance(sigma: np.ndarray, phi: float, T: int, nugget: float,
                                     n_obs: int) -> PartitionedCovariance:
    """Joint space-time covariance of the dynamical model, partitioned.

    ``sigma`` is the structured spatial covariance over all sites with the
    first ``n_obs`` treated as observation sites. Stacking is time-major:
    index (t, site) -> t * S + site. Cross-lag blocks follow
    cov(y_{t+k}, y_t) = phi^k cov(y_t). Measurement error is baked into the
    blocks, so the returned partition has nugget 0.
    """
    if not abs(phi) < 1:
        raise ValueError("|phi| must be < 1")
    sigma = np.asarray(sigma, dtype=float)
    S = sigma.shape[0]
    if not 0 <= n_obs <= S:
        raise ValueError("n_obs out of range")
    V = spacetime_lag_blocks(sigma, phi, T, nugget)
    full = np.empty((S * T, S * T))
    for t in range(T):
        for u in range(t, T):
            block = (phi ** (u - t)) * V[t]
            full[u * S:(u + 1) * S, t * S:(t + 1) * S] = block
            if u != t:
                full[t * S:(t + 1) * S, u * S:(u + 1) * S] = block.T
    obs_idx = np.concatenate([t * S + np.arange(n_obs) for t in range(T)])
    pred_idx = np.concatenate([t * S + np.arange(n_obs, S) for t in range(T)]) \
        if n_obs < S else np.empty(0, dtype=int)
    return PartitionedCovariance(
        obs_obs=full[np.ix_(obs_idx, obs_idx)],
        pred_pred=full[np.ix_(pred_idx, pred_idx)],
        obs_pred=full[np.ix_(obs_idx, pred_idx)],
        nugget=0.0,
    )
