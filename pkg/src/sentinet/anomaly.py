"""Synthetic anomaly generation, spatial detection, and scoring.

Anomalies are persistent runs: at each quiet time step a sensor starts an
anomaly with probability ``p_a``, and every anomalous cell prolongs the
run by a fresh Poisson(``lambda_a``) extension as time advances, so runs
are self-sustaining and heavy-tailed. Masks are sampled from the
stationary regime of this process (a warm-up horizon precedes the
returned window), which is what calibrates the realized anomaly
fractions at the documented (p_a, lambda_a) operating points. With a
single time step the process degenerates to independent Bernoulli
draws per sensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import as_generator

_RUN_CHUNK = 64


@dataclass(frozen=True)
class AnomalyGenParams:
    """Anomaly frequency, persistence and contamination magnitude."""

    p_a: float
    lambda_a: float
    mu_a: float = 0.0
    sigma_a: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_a <= 1.0:
            raise ValueError("p_a must lie in [0, 1]")
        if self.lambda_a < 0:
            raise ValueError("lambda_a must be nonnegative")
        if self.sigma_a <= 0:
            raise ValueError("sigma_a must be positive")


def _run_lengths(rng: np.random.Generator, lam: float, count: int, cap: int) -> np.ndarray:
    """Sample ``count`` run lengths of the self-prolonging anomaly process.

    A run's cells each draw a Poisson(lam) extension; the run ends at the
    first cell the extension frontier fails to pass. Lengths are capped at
    ``cap`` (the remaining horizon).
    """
    if count == 0:
        return np.zeros(0, dtype=int)
    lengths = np.full(count, cap, dtype=int)
    alive = np.arange(count)
    frontier = np.full(count, -1, dtype=int)
    j0 = 0
    while alive.size and j0 < cap:
        w = min(_RUN_CHUNK, cap - j0)
        draws = rng.poisson(lam, (alive.size, w))
        cols = j0 + np.arange(w)
        reach = np.maximum.accumulate(cols[None, :] + draws, axis=1)
        reach = np.maximum(reach, frontier[alive, None])
        settled = reach == cols[None, :]
        has = settled.any(axis=1)
        first = settled.argmax(axis=1)
        lengths[alive[has]] = j0 + first[has] + 1
        frontier[alive] = reach[:, -1]
        alive = alive[~has]
        j0 += w
    return lengths


def _stationary_warmup(lam: float) -> int:
    # long enough for run-length transients at the persistence levels used
    return 200 + int(40.0 * lam * lam)


def generate_mask(params: AnomalyGenParams, T: int, n: int, rng_seed) -> np.ndarray:
    """(T, n) binary anomaly indicator matrix; deterministic given the seed.

    For T == 1 the run machinery is bypassed and each sensor is anomalous
    independently with probability ``p_a``, so the expected anomaly
    fraction equals ``p_a`` exactly.
    """
    if T < 1 or n < 1:
        raise ValueError("T and n must be >= 1")
    rng = as_generator(rng_seed)
    if params.p_a == 0.0:
        return np.zeros((T, n), dtype=np.int8)
    if T == 1:
        return (rng.random((1, n)) < params.p_a).astype(np.int8)

    warm = _stationary_warmup(params.lambda_a)
    H = warm + T
    mask = np.zeros((T, n), dtype=np.int8)
    batch = max(4, int(H * params.p_a * 1.5) + 4)
    for i in range(n):
        pos = 0
        while pos < H:
            gaps = rng.geometric(params.p_a, batch)
            runs = _run_lengths(rng, params.lambda_a, batch, H)
            for g, r in zip(gaps, runs):
                start = pos + g - 1
                if start >= H:
                    pos = H
                    break
                end = min(start + r, H)
                a, b = max(start, warm) - warm, end - warm
                if b > a:
                    mask[a:b, i] = 1
                pos = end
    return mask


def contaminate(y: np.ndarray, mask: np.ndarray, params: AnomalyGenParams, rng_seed) -> np.ndarray:
    """Shift masked entries by independent N(mu_a, sigma_a^2) noise; unmasked
    entries are returned bit-exact."""
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask)
    if y.shape != mask.shape:
        raise ValueError(f"data shape {y.shape} does not match mask shape {mask.shape}")
    rng = as_generator(rng_seed)
    z = rng.normal(params.mu_a, params.sigma_a, y.shape)
    return np.where(mask == 1, y + z, y)


def detect_spatial_knn(y_anom: np.ndarray, sites: np.ndarray, train: np.ndarray,
                       k: int) -> np.ndarray:
    """Neighbourhood threshold detector for one spatial snapshot.

    For each sensor the reference level is the mean of its k nearest
    sensors (plane distance between sensor coordinates, self excluded); the
    tolerance is three training standard deviations of that sensor. Values
    on or outside the bounds are flagged. Returns a (1, n) indicator row.
    """
    y_anom = np.asarray(y_anom, dtype=float).ravel()
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    train = np.atleast_2d(np.asarray(train, dtype=float))
    n = y_anom.shape[0]
    if sites.shape[0] != n:
        raise ValueError("sites do not match data length")
    if train.shape[1] != n:
        raise ValueError("training matrix columns do not match data length")
    if train.shape[0] < 2:
        raise ValueError("training matrix needs at least 2 rows")
    if not 1 <= k < n:
        raise ValueError("k must satisfy 1 <= k < n")

    diff = sites[:, None, :] - sites[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    sd = train.std(axis=0, ddof=1)

    flags = np.zeros((1, n), dtype=np.int8)
    for i in range(n):
        neighbours = np.argsort(dist[i], kind="stable")[:k]
        centre = y_anom[neighbours].mean()
        lo, hi = centre - 3.0 * sd[i], centre + 3.0 * sd[i]
        if not (lo < y_anom[i] < hi):
            flags[0, i] = 1
    return flags


# -- scoring -------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def score(true_mask: np.ndarray, pred_mask: np.ndarray) -> ConfusionMatrix:
    """Exact entrywise confusion counts between two equal-shape masks."""
    t = np.asarray(true_mask)
    p = np.asarray(pred_mask)
    if t.shape != p.shape:
        raise ValueError(f"mask shapes differ: {t.shape} vs {p.shape}")
    t = t.astype(bool)
    p = p.astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(t & p)),
        tn=int(np.sum(~t & ~p)),
        fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)),
    )


def reduce_mask_to_windows(mask: np.ndarray, w: int) -> np.ndarray:
    """Collapse a (T, n) mask to window granularity: a window-sensor cell is
    anomalous if any contained entry is. Used to score windowed detectors."""
    mask = np.atleast_2d(np.asarray(mask))
    T = mask.shape[0]
    if w < 1:
        raise ValueError("window length must be >= 1")
    n_windows = math.ceil(T / w)
    out = np.zeros((n_windows, mask.shape[1]), dtype=np.int8)
    for j in range(n_windows):
        out[j] = mask[j * w:(j + 1) * w].any(axis=0)
    return out


@dataclass(frozen=True)
class DetectionMetrics:
    """Confusion-matrix summary; metrics whose denominator was zero are
    reported as 0.0 and listed in ``degenerate``."""

    specificity: float
    sensitivity: float
    accuracy: float
    mcc: float
    degenerate: frozenset


def metrics(cm: ConfusionMatrix) -> DetectionMetrics:
    """Specificity, sensitivity, accuracy and Matthews correlation from exact
    integer arithmetic."""
    degenerate = set()

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            degenerate.add(name)
            return 0.0
        return num / den

    spec = ratio(cm.tn, cm.tn + cm.fp, "specificity")
    sens = ratio(cm.tp, cm.tp + cm.fn, "sensitivity")
    acc = ratio(cm.tn + cm.tp, cm.total, "accuracy")

    denom2 = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if denom2 == 0:
        degenerate.add("mcc")
        mcc = 0.0
    else:
        mcc = (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom2)
    return DetectionMetrics(spec, sens, acc, mcc, frozenset(degenerate))
