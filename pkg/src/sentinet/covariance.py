"""Covariance construction, priors, and likelihood simulation.

Builds mixed spatial covariance matrices (Euclidean kernels plus stream
tail-up/tail-down components), draws model parameters from priors, and
simulates responses from the spatial and the first-order dynamical
spatio-temporal model. The measurement-error nugget is never folded into
the structured matrix; callers add it per model.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .rng import as_generator

EUCLIDEAN_FAMILIES = ("exponential", "gaussian", "spherical")
COMPONENTS = (
    "euclidean-exponential",
    "euclidean-gaussian",
    "euclidean-spherical",
    "tail-up",
    "tail-down",
)


class FactorizationError(RuntimeError):
    """Covariance matrix could not be factorized even with jitter."""


_jitter_lock = threading.Lock()
_jitter_events = 0


def jitter_event_count() -> int:
    """Number of factorizations that needed the diagonal jitter fallback."""
    return _jitter_events


def reset_jitter_event_count() -> None:
    global _jitter_events
    with _jitter_lock:
        _jitter_events = 0


def chol_lower(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with a counted 1e-10 jitter fallback."""
    try:
        return scipy.linalg.cholesky(mat, lower=True)
    except scipy.linalg.LinAlgError:
        pass
    global _jitter_events
    with _jitter_lock:
        _jitter_events += 1
    try:
        return scipy.linalg.cholesky(mat + 1e-10 * np.eye(mat.shape[0]), lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(f"covariance not positive definite: {exc}") from exc


# -- parameters and priors ---------------------------------------------------


@dataclass(frozen=True)
class SpatialParams:
    """Sills, ranges and nugget of the covariance mixture components."""

    sigma2_e: float = 0.0
    rho_e: float = 1.0
    sigma2_u: float = 0.0
    alpha_u: float = 1.0
    sigma2_d: float = 0.0
    alpha_d: float = 1.0
    sigma2_0: float = 0.0

    def __post_init__(self):
        for name in ("sigma2_e", "sigma2_u", "sigma2_d", "sigma2_0"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for sill, rng_name in (("sigma2_e", "rho_e"), ("sigma2_u", "alpha_u"),
                               ("sigma2_d", "alpha_d")):
            if getattr(self, sill) > 0 and getattr(self, rng_name) <= 0:
                raise ValueError(f"{rng_name} must be positive when {sill} is active")


@dataclass(frozen=True)
class ModelParams:
    """One draw of the full parameter vector (spatial, regression, temporal)."""

    spatial: SpatialParams
    beta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not abs(self.phi) < 1:
            raise ValueError("|phi| must be < 1 for stationarity")


@dataclass(frozen=True)
class Prior:
    """Distribution descriptor: uniform(a, b), gamma(shape=a, rate=b) or a
    point mass at ``a``. With ``reciprocal`` the draw is inverted afterwards,
    e.g. a gamma prior on a precision yielding the variance."""

    kind: str
    a: float
    b: float = 0.0
    reciprocal: bool = False

    def __post_init__(self):
        if self.kind not in ("uniform", "gamma", "fixed"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "uniform" and not (np.isfinite(self.a) and np.isfinite(self.b) and self.a <= self.b):
            raise ValueError("uniform prior requires finite ordered bounds")
        if self.kind == "gamma" and (self.a <= 0 or self.b <= 0):
            raise ValueError("gamma prior requires positive shape and rate")

    def draw(self, rng: np.random.Generator) -> float:
        if self.kind == "uniform":
            x = float(rng.uniform(self.a, self.b))
        elif self.kind == "gamma":
            x = float(rng.gamma(self.a, 1.0 / self.b))
        else:
            x = self.a
        return 1.0 / x if self.reciprocal else x

    @classmethod
    def fixed(cls, value: float) -> "Prior":
        return cls("fixed", value)

    @classmethod
    def uniform(cls, low: float, high: float) -> "Prior":
        return cls("uniform", low, high)

    @classmethod
    def gamma(cls, shape: float, rate: float, reciprocal: bool = False) -> "Prior":
        return cls("gamma", shape, rate, reciprocal=reciprocal)


_SPATIAL_FIELDS = ("sigma2_e", "rho_e", "sigma2_u", "alpha_u", "sigma2_d", "alpha_d", "sigma2_0")


@dataclass(frozen=True)
class PriorSpec:
    """Per-parameter priors; unspecified spatial parameters stay at the
    inactive defaults (zero sills, unit ranges). ``beta`` is a point mass."""

    spatial: dict
    phi: Prior = Prior.fixed(0.0)
    beta: tuple = (0.0,)

    def __post_init__(self):
        unknown = set(self.spatial) - set(_SPATIAL_FIELDS)
        if unknown:
            raise ValueError(f"unknown spatial parameters in prior: {sorted(unknown)}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))


def draw_params(prior: PriorSpec, rng_seed) -> ModelParams:
    """One draw from the prior; deterministic given the seed. Spatial
    parameters are drawn in canonical field order, then phi."""
    rng = as_generator(rng_seed)
    sp = SpatialParams()
    values = {}
    for name in _SPATIAL_FIELDS:
        if name in prior.spatial:
            values[name] = prior.spatial[name].draw(rng)
    sp = replace(sp, **values)
    phi = prior.phi.draw(rng)
    return ModelParams(spatial=sp, beta=np.array(prior.beta), phi=phi)


# -- kernels -----------------------------------------------------------------


def kernel_euclidean(h_e, sigma2: float, rho: float, family: str):
    """Euclidean covariance at lag ``h_e``; the sill is reached at zero lag
    and the spherical model vanishes beyond its range."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    h = np.asarray(h_e, dtype=float)
    if family == "exponential":
        out = sigma2 * np.exp(-3.0 * h / rho)
    elif family == "gaussian":
        out = sigma2 * np.exp(-3.0 * (h / rho) ** 2)
    elif family == "spherical":
        t = h / rho
        out = sigma2 * (1.0 - 1.5 * t + 0.5 * t**3) * (t <= 1.0)
    else:
        raise ValueError(f"unknown euclidean family {family!r}")
    return out if out.ndim else float(out)


def kernel_tailup(h, connected, weight, sigma2_u: float, alpha_u: float):
    """Tail-up stream covariance: zero for flow-unconnected pairs, otherwise
    the exponential decay scaled by the junction split weight."""
    if alpha_u <= 0:
        raise ValueError("alpha_u must be positive")
    h = np.asarray(h, dtype=float)
    w = np.asarray(weight, dtype=float)
    if np.any((w < 0) | (w > 1)):
        raise ValueError("weights must lie in [0, 1]")
    out = np.where(connected, w * sigma2_u * np.exp(-3.0 * h / alpha_u), 0.0)
    return out if out.ndim else float(out)


def kernel_taildown(h, sigma2_d: float, alpha_d: float):
    """Tail-down stream covariance: exponential decay in stream distance for
    all pairs, flow-connected or not."""
    if alpha_d <= 0:
        raise ValueError("alpha_d must be positive")
    h = np.asarray(h, dtype=float)
    out = sigma2_d * np.exp(-3.0 * h / alpha_d)
    return out if out.ndim else float(out)


# -- covariance assembly -------------------------------------------------------


@dataclass(frozen=True)
class CovarianceSpec:
    """Which mixture components are active."""

    components: tuple
    nugget: bool = True

    def __post_init__(self):
        comps = tuple(self.components)
        unknown = set(comps) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown covariance components: {sorted(unknown)}")
        if not comps:
            raise ValueError("at least one covariance component must be active")
        object.__setattr__(self, "components", comps)

    @property
    def needs_euclidean(self) -> bool:
        return any(c.startswith("euclidean") for c in self.components)

    @property
    def needs_stream(self) -> bool:
        return "tail-up" in self.components or "tail-down" in self.components


@dataclass(frozen=True)
class SiteGeometry:
    """Pairwise geometry between sites, as needed by the active components.

    ``euclidean`` holds plane distances; ``stream``, ``connected`` and
    ``weights`` hold hydrologic distance, flow connectivity and tail-up
    split weights. Unused blocks may be None.
    """

    n: int
    euclidean: np.ndarray | None = None
    stream: np.ndarray | None = None
    connected: np.ndarray | None = None
    weights: np.ndarray | None = None

    def _check(self, mat, name):
        if mat.shape != (self.n, self.n):
            raise ValueError(f"{name} matrix has shape {mat.shape}, expected {(self.n, self.n)}")
        return mat

    def __post_init__(self):
        for name in ("euclidean", "stream", "connected", "weights"):
            m = getattr(self, name)
            if m is not None:
                self._check(np.asarray(m), name)


def geometry_from_points(points: np.ndarray) -> SiteGeometry:
    """Euclidean-only geometry from an (n, 2) coordinate array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    return SiteGeometry(n=len(pts), euclidean=dist)


def geometry_from_network(net, locations) -> SiteGeometry:
    """Stream geometry (distance, connectivity, weights) for network sites."""
    dist, conn, wt = net.pairwise_arrays(list(locations))
    return SiteGeometry(n=dist.shape[0], stream=dist, connected=conn, weights=wt)


def build_sigma(spec: CovarianceSpec, params: SpatialParams, geom: SiteGeometry) -> np.ndarray:
    """Structured covariance over the sites: Euclidean plus weighted tail-up
    plus tail-down components. The nugget is NOT included; add it as
    ``sigma2_0 * I`` where the model requires it."""
    if spec.needs_euclidean and geom.euclidean is None:
        raise ValueError("active Euclidean component requires point geometry")
    if spec.needs_stream and geom.stream is None:
        raise ValueError("active stream component requires network geometry")
    sigma = np.zeros((geom.n, geom.n))
    for comp in spec.components:
        if comp.startswith("euclidean-"):
            family = comp.split("-", 1)[1]
            sigma += kernel_euclidean(geom.euclidean, params.sigma2_e, params.rho_e, family)
        elif comp == "tail-up":
            sigma += kernel_tailup(geom.stream, geom.connected, geom.weights,
                                   params.sigma2_u, params.alpha_u)
        elif comp == "tail-down":
            sigma += kernel_taildown(geom.stream, params.sigma2_d, params.alpha_d)
    return sigma


# -- simulation ----------------------------------------------------------------


def simulate_spatial(params: ModelParams, sigma: np.ndarray, tau2: float, rng_seed,
                     X: np.ndarray | None = None) -> np.ndarray:
    """One draw from N(X beta, sigma + tau2 I); zero mean when X is None."""
    if tau2 < 0:
        raise ValueError("tau2 must be nonnegative")
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    rng = as_generator(rng_seed)
    cov = sigma + tau2 * np.eye(n)
    if not np.any(cov):
        y = np.zeros(n)
    else:
        L = chol_lower(cov)
        y = L @ rng.standard_normal(n)
    if X is not None:
        y = y + np.asarray(X, dtype=float) @ params.beta
    return y


def simulate_spatiotemporal(params: ModelParams, sigma: np.ndarray, T: int, X, rng_seed) -> np.ndarray:
    """Simulate the first-order dynamical model over T steps.

    The first column is drawn from N(X_1 beta, sigma + sigma2_0 I); each
    later column recurses through mu_t = X_t beta + phi (y_{t-1} - X_{t-1} beta)
    with the same per-step covariance. Returns an (S, T) matrix whose columns
    are time points. ``X`` is the (S*T, p) time-major covariate stack or None.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    sigma = np.asarray(sigma, dtype=float)
    S = sigma.shape[0]
    rng = as_generator(rng_seed)
    cov = sigma + params.spatial.sigma2_0 * np.eye(S)
    L = chol_lower(cov) if np.any(cov) else None

    if X is None:
        means = np.zeros((T, S))
    else:
        X = np.asarray(X, dtype=float)
        if X.shape[0] != S * T:
            raise ValueError(f"X has {X.shape[0]} rows, expected S*T = {S * T}")
        means = (X @ params.beta).reshape(T, S)

    out = np.empty((S, T))
    prev_dev = np.zeros(S)
    for t in range(T):
        noise = L @ rng.standard_normal(S) if L is not None else np.zeros(S)
        dev = (params.phi * prev_dev if t > 0 else 0.0) + noise
        out[:, t] = means[t] + dev
        prev_dev = out[:, t] - means[t]
    return out
