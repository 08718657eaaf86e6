"""Approximate coordinate exchange over noisy Monte Carlo utilities.

Cyclic per-coordinate search: each coordinate of the design is swept by
evaluating the estimated utility at a handful of points across the
coordinate's domain, fitting a one-dimensional Gaussian-process emulator
to those noisy evaluations, and proposing the maximizer of the emulator
mean on a dense grid. A proposal only replaces the current design with
probability p*, the posterior probability (normal approximation) that
its expected utility beats the current design's, judged on fresh,
larger Monte Carlo samples.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .rng import substream

_GRID_POINTS = 1000
_TIE_EPS = 1e-12

# substream stage tags
_S_INIT, _S_EMULATE, _S_TEST, _S_FINAL = range(4)


class EmulatorError(RuntimeError):
    pass


def derive_seed(root_seed: int, *path: int) -> int:
    """Stable 64-bit child seed for a (root, path) address."""
    return int(np.random.SeedSequence(root_seed, spawn_key=tuple(path))
               .generate_state(1, np.uint64)[0])


# -- one-dimensional GP emulator -------------------------------------------------


@dataclass
class EmulatorFit:
    """Squared-exponential GP fit to Q utility evaluations along one
    coordinate; hyperparameters are in the standardized data space."""

    x: np.ndarray
    y: np.ndarray
    x_lo: float
    x_hi: float
    y_mean: float
    y_scale: float
    signal_var: float
    length_scale: float
    noise_var: float
    alpha: np.ndarray = field(repr=False, default=None)
    fallback: bool = False

    @property
    def q(self) -> int:
        return len(self.x)


def _gp_nll(log_params, x01, ystd):
    sf2, ls, sn2 = np.exp(log_params)
    d = x01[:, None] - x01[None, :]
    K = sf2 * np.exp(-0.5 * (d / ls) ** 2) + sn2 * np.eye(len(x01))
    try:
        L = scipy.linalg.cholesky(K, lower=True)
    except scipy.linalg.LinAlgError:
        return 1e12
    alpha = scipy.linalg.cho_solve((L, True), ystd)
    return float(0.5 * ystd @ alpha + np.log(np.diag(L)).sum()
                 + 0.5 * len(x01) * math.log(2.0 * math.pi))


def fit_gp1d(x: np.ndarray, y: np.ndarray, lo: float, hi: float) -> EmulatorFit:
    """Maximum-marginal-likelihood fit with multi-start over length scales."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 4:
        raise EmulatorError("emulator needs at least 4 evaluations")
    x01 = (x - lo) / (hi - lo)
    y_mean = float(y.mean())
    y_scale = max(float(y.std()), 1e-12)
    ystd = (y - y_mean) / y_scale

    bounds = [(math.log(1e-8), math.log(1e4)),
              (math.log(5e-3), math.log(1e2)),
              (math.log(1e-10), math.log(1e2))]
    best = None
    for ls0 in (0.05, 0.15, 0.4, 1.0):
        for sn0 in (1e-3, 0.1):
            res = scipy.optimize.minimize(
                _gp_nll, np.log([1.0, ls0, sn0]), args=(x01, ystd),
                method="L-BFGS-B", bounds=bounds)
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
    if best is None:
        raise EmulatorError("all emulator hyperparameter starts failed")
    sf2, ls, sn2 = np.exp(best.x)
    d = x01[:, None] - x01[None, :]
    K = sf2 * np.exp(-0.5 * (d / ls) ** 2) + sn2 * np.eye(len(x01))
    try:
        L = scipy.linalg.cholesky(K, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise EmulatorError(f"emulator covariance not PD: {exc}") from exc
    alpha = scipy.linalg.cho_solve((L, True), ystd)
    return EmulatorFit(x=x, y=y, x_lo=lo, x_hi=hi, y_mean=y_mean, y_scale=y_scale,
                       signal_var=float(sf2), length_scale=float(ls),
                       noise_var=float(sn2), alpha=alpha)


def gp_mean(fit: EmulatorFit, xq: np.ndarray) -> np.ndarray:
    """Emulator predictive mean at query points (original coordinate units)."""
    xq01 = (np.asarray(xq, dtype=float) - fit.x_lo) / (fit.x_hi - fit.x_lo)
    x01 = (fit.x - fit.x_lo) / (fit.x_hi - fit.x_lo)
    k = fit.signal_var * np.exp(-0.5 * ((xq01[:, None] - x01[None, :])
                                        / fit.length_scale) ** 2)
    return fit.y_mean + fit.y_scale * (k @ fit.alpha)


# -- coordinate emulation and acceptance ----------------------------------------


def emulate_coordinate(design, coord, space, evaluator, q_points: int,
                       b_emulator: int, rng_seed: int):
    """Propose a new value for one coordinate.

    Evaluates the Monte Carlo utility at ``q_points`` equally spaced values
    across the coordinate's domain (all other coordinates held fixed), fits
    the 1-D GP, and returns the dense-grid maximizer of its predictive mean
    together with the fit. Falls back to the best raw evaluation when the
    fit fails; retains the current value on ties.
    """
    i, j = coord
    if q_points < 4:
        raise ValueError("q_points must be >= 4")
    lo, hi = space.domain(design, i, j)
    xs = np.linspace(lo, hi, q_points)
    us = np.empty(q_points)
    for q, xq in enumerate(xs):
        d_q = design.with_coordinate(i, j, float(xq))
        us[q] = evaluator.estimate(d_q, b_emulator, derive_seed(rng_seed, q)).value

    current = design.get(i, j)
    try:
        fit = fit_gp1d(xs, us, lo, hi)
    except EmulatorError:
        best = int(np.argmax(us))
        fit = EmulatorFit(x=xs, y=us, x_lo=lo, x_hi=hi, y_mean=float(us.mean()),
                          y_scale=1.0, signal_var=0.0, length_scale=1.0,
                          noise_var=float(us.var()), alpha=np.zeros(q_points),
                          fallback=True)
        return float(xs[best]), fit

    grid = np.linspace(lo, hi, _GRID_POINTS)
    mean = gp_mean(fit, grid)
    best = int(np.argmax(mean))
    if mean[best] <= gp_mean(fit, np.array([current]))[0] + _TIE_EPS:
        return current, fit
    return float(grid[best]), fit


def _acceptance_detail(current, proposal, evaluator, b_test: int, rng_seed: int):
    s_cur = np.asarray(evaluator.samples(current, b_test, derive_seed(rng_seed, 0)))
    s_prop = np.asarray(evaluator.samples(proposal, b_test, derive_seed(rng_seed, 1)))
    delta = float(s_prop.mean() - s_cur.mean())
    var = (s_prop.var(ddof=1) + s_cur.var(ddof=1)) / b_test if b_test > 1 else 0.0
    if var <= 0.0:
        p_star = 0.5 if delta == 0.0 else (1.0 if delta > 0.0 else 0.0)
    else:
        p_star = 0.5 * (1.0 + math.erf(delta / math.sqrt(2.0 * var)))
    coin = substream(rng_seed, 2).random()
    accepted = bool(coin < p_star)
    return accepted, p_star, float(s_cur.mean()), float(s_prop.mean())


def acceptance_test(current, proposal, evaluator, b_test: int, rng_seed: int):
    """Probabilistic exchange decision.

    Draws ``b_test`` fresh utility samples at each design and accepts the
    proposal with probability p*, the normal-approximation posterior
    probability that the proposal's expected utility is the larger one.
    """
    accepted, p_star, _, _ = _acceptance_detail(current, proposal, evaluator,
                                                b_test, rng_seed)
    return accepted, p_star


# -- the optimizer ----------------------------------------------------------------


@dataclass(frozen=True)
class AceStep:
    start: int
    sweep: int
    point: int
    axis: int
    current: float
    proposal: float
    p_star: float
    accepted: bool
    utility: float
    emulator_fallback: bool = False


@dataclass(frozen=True)
class AceStartTrace:
    start: int
    initial_utility: float
    steps: tuple
    final_design: object
    final_utility: float


@dataclass(frozen=True)
class AceResult:
    best_design: object
    best_utility: float
    best_start: int
    starts: tuple

    def trace_rows(self):
        """Flat (start, sweep, point, axis, current, proposal, p_star,
        accepted, utility) rows for CSV export."""
        rows = []
        for st in self.starts:
            rows.extend(st.steps)
        return rows


def optimize(space, evaluator, n_sweeps: int, n_starts: int, q_points: int,
             b_emulator: int, b_test: int, rng_seed: int) -> AceResult:
    """Run coordinate exchange from ``n_starts`` random designs and return
    the start whose final design wins the last utility comparison.

    Network spaces re-randomize the per-point path assignment at every
    start; assignments stay fixed within a start. Deterministic given the
    seed; evaluator failures abort only the affected start.
    """
    if n_sweeps < 0 or n_starts < 1 or q_points < 4 or b_emulator < 1 or b_test < 1:
        raise ValueError("invalid optimizer sizes")
    starts = []
    best = None
    for s in range(n_starts):
        try:
            trace = _run_start(space, evaluator, s, n_sweeps, q_points,
                               b_emulator, b_test, rng_seed)
        except Exception as exc:  # a failed start must not sink the others
            if n_starts == 1:
                raise
            warnings.warn(f"ACE start {s} aborted: {exc}")
            continue
        starts.append(trace)
        if best is None or trace.final_utility > best.final_utility:
            best = trace
    if best is None:
        raise RuntimeError("every ACE start failed")
    return AceResult(best_design=best.final_design, best_utility=best.final_utility,
                     best_start=best.start, starts=tuple(starts))


def _run_start(space, evaluator, s, n_sweeps, q_points, b_emulator, b_test, rng_seed):
    design = space.sample(substream(rng_seed, _S_INIT, s))
    est0 = evaluator.estimate(design, b_test, derive_seed(rng_seed, _S_FINAL, s, 0))
    running = est0.value
    steps = []
    for sweep in range(1, n_sweeps + 1):
        for i in range(design.n_points):
            for j in range(design.n_coords):
                cur = design.get(i, j)
                prop, fit = emulate_coordinate(
                    design, (i, j), space, evaluator, q_points, b_emulator,
                    derive_seed(rng_seed, _S_EMULATE, s, sweep, i, j))
                if prop == cur:
                    steps.append(AceStep(s, sweep, i, j, cur, prop, 0.5, False,
                                         running, fit.fallback))
                    continue
                d_prop = design.with_coordinate(i, j, prop)
                accepted, p_star, m_cur, m_prop = _acceptance_detail(
                    design, d_prop, evaluator, b_test,
                    derive_seed(rng_seed, _S_TEST, s, sweep, i, j))
                if accepted:
                    design = d_prop
                    running = m_prop
                else:
                    running = m_cur
                steps.append(AceStep(s, sweep, i, j, cur, prop, p_star, accepted,
                                     running, fit.fallback))
    final = evaluator.estimate(design, b_test, derive_seed(rng_seed, _S_FINAL, s, 1))
    return AceStartTrace(start=s, initial_utility=est0.value, steps=tuple(steps),
                         final_design=design, final_utility=final.value)
