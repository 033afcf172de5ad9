"""Maximum-likelihood reconstruction: EM deconvolution of photocount histograms
and a multinomial fit of the full twin-beam model to the joint 2D histogram."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .detector import ResponseMatrix, _dark_matrix, _occupancy_matrix, _registration_matrix
from .distributions import TwinBeamParams, _mandel_rice_pmf, _twin_joint_array, PhotonDistribution
from .errors import DegenerateHistogramError

EM_TOL = 1e-9
EM_MAX_ITER = 10_000
_DENOM_FLOOR = 1e-300


@dataclass(frozen=True)
class PhotocountHistogram:
    """Raw counts over photocount value c = 0..c_max."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("counts must be a nonempty 1-d array")
        if np.any(c < 0) or not np.issubdtype(c.dtype, np.integer):
            raise ValueError("counts must be nonnegative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class JointPhotocountHistogram:
    """Raw joint counts over (c_s, c_i)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.size == 0:
            raise ValueError("counts must be a nonempty 2-d array")
        if np.any(c < 0) or not np.issubdtype(c.dtype, np.integer):
            raise ValueError("counts must be nonnegative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def signal_marginal(self) -> PhotocountHistogram:
        return PhotocountHistogram(self.counts.sum(axis=1))

    def idler_marginal(self) -> PhotocountHistogram:
        return PhotocountHistogram(self.counts.sum(axis=0))


def conditional_histogram(joint: JointPhotocountHistogram, c_s: int):
    """Normalized idler histogram of the events with exactly c_s signal counts.

    Returns the probability vector over c_i together with the number N_r of
    contributing realizations (used for error scaling).
    """
    if not 0 <= c_s < joint.counts.shape[0]:
        raise ValueError(f"c_s={c_s} outside histogram extent 0..{joint.counts.shape[0] - 1}")
    row = joint.counts[c_s]
    n_r = int(row.sum())
    if n_r == 0:
        raise DegenerateHistogramError(f"no events recorded with c_s={c_s}")
    return row / n_r, n_r


def _em_update(p: np.ndarray, f: np.ndarray, T: np.ndarray):
    """One multiplicative EM update; returns (new p, log-likelihood of old p)."""
    denom = T @ p
    safe = denom > _DENOM_FLOOR
    ratio = np.where(safe, f / np.where(safe, denom, 1.0), 0.0)
    observed = f > 0
    log_lik = float(f[observed & safe] @ np.log(denom[observed & safe]))
    if np.any(observed & ~safe):
        log_lik = -math.inf
    new_p = p * (T.T @ ratio)
    total = new_p.sum()
    if total <= 0:
        raise DegenerateHistogramError("EM update annihilated the distribution")
    return new_p / total, log_lik


@dataclass(frozen=True)
class EmDiagnostics:
    """Iteration count, final update size and the log-likelihood trace of a run."""

    iterations: int
    final_delta: float
    log_likelihood_trace: np.ndarray
    tol: float = EM_TOL

    def __post_init__(self):
        trace = np.asarray(self.log_likelihood_trace, dtype=float)
        trace.setflags(write=False)
        object.__setattr__(self, "log_likelihood_trace", trace)

    @property
    def converged(self) -> bool:
        return self.final_delta < self.tol


def em_step(p, f, T: ResponseMatrix) -> PhotonDistribution:
    """Single EM refinement of a photon-number distribution given photocounts f."""
    probs = p.probs if isinstance(p, PhotonDistribution) else np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    if f.size != T.T.shape[0] or probs.size != T.T.shape[1]:
        raise ValueError(
            f"shape mismatch: f has {f.size} bins, p has {probs.size} levels, "
            f"response is {T.T.shape[0]}x{T.T.shape[1]}")
    new_p, _ = _em_update(probs, f, T.T)
    return PhotonDistribution(new_p, tail_tol=1e-12)


def em_reconstruct(f, T: ResponseMatrix, tol: float = EM_TOL,
                   max_iter: int = EM_MAX_ITER, init=None):
    """Iterate the EM update from a uniform start until the distribution settles.

    Stops when the largest per-level change drops below ``tol`` or after
    ``max_iter`` sweeps; non-convergence is reported through the diagnostics,
    not raised.  Returns (distribution, EmDiagnostics).
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size != T.T.shape[0]:
        raise ValueError(f"f must have {T.T.shape[0]} bins")
    total = f.sum()
    if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-6):
        raise ValueError(f"f must be normalized, sums to {total!r}")
    n_levels = T.T.shape[1]
    if init is None:
        p = np.full(n_levels, 1.0 / n_levels)
    else:
        p = (init.probs if isinstance(init, PhotonDistribution) else np.asarray(init, dtype=float)).copy()
        p = p / p.sum()
    trace = []
    delta = math.inf
    iterations = 0
    Tarr = T.T
    for iterations in range(1, max_iter + 1):
        new_p, log_lik = _em_update(p, f, Tarr)
        trace.append(log_lik)
        delta = float(np.max(np.abs(new_p - p)))
        p = new_p
        if delta < tol:
            break
    diag = EmDiagnostics(iterations=iterations, final_delta=delta,
                         log_likelihood_trace=np.array(trace), tol=tol)
    return PhotonDistribution(p, tail_tol=1e-12), diag


@dataclass(frozen=True)
class FitResult:
    """Best twin-beam parameters and detector efficiencies for a 2D histogram."""

    params: TwinBeamParams
    eta_s: float
    eta_i: float
    objective_value: float
    converged: bool
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if not 0.0 <= self.eta_s < 1.0 or not 0.0 <= self.eta_i < 1.0:
            raise ValueError("efficiencies must lie in [0, 1)")
        trace = np.asarray(self.objective_trace, dtype=float)
        trace.setflags(write=False)
        object.__setattr__(self, "objective_trace", trace)


class _ModelCache:
    """Rebuilds the predicted photocount table cheaply across optimizer steps."""

    def __init__(self, geometry, shape, n_cap: int = 420):
        self.N_s, self.N_i, self.D_s, self.D_i = geometry
        self.shape = shape
        self.n_cap = n_cap
        self._grid = np.arange(n_cap + 1, dtype=float)
        self._dark = {}

    def _bound(self, M, B, tol):
        pmf = _mandel_rice_pmf(self.n_cap, M, B)
        return int(np.searchsorted(np.cumsum(pmf), 1.0 - tol))

    def n_max_for(self, params: TwinBeamParams, tol: float = 1e-8) -> int:
        quarter = tol / 4.0
        pair = self._bound(params.M_p, params.B_p, quarter)
        noise = max(self._bound(params.M_s, params.B_s, quarter),
                    self._bound(params.M_i, params.B_i, quarter))
        return min(self.n_cap, pair + noise)

    def _response(self, N, D, eta, n_max, c_top):
        m_top = min(N, n_max, c_top)
        key = (N, D, c_top, m_top)
        if key not in self._dark:
            self._dark[key] = _dark_matrix(N, D, c_top, m_top)
        stages = self._dark[key] @ (_occupancy_matrix(N, n_max, m_top)[:, :n_max + 1]
                                    @ _registration_matrix(eta, n_max))
        return stages

    def predicted(self, params: TwinBeamParams, eta_s: float, eta_i: float) -> np.ndarray:
        n_max = self.n_max_for(params)
        joint = _twin_joint_array(params, n_max)
        T_s = self._response(self.N_s, self.D_s, eta_s, n_max, self.shape[0] - 1)
        T_i = self._response(self.N_i, self.D_i, eta_i, n_max, self.shape[1] - 1)
        return T_s @ joint @ T_i.T


def _unpack(x: np.ndarray):
    params = TwinBeamParams(*np.exp(x[:6]))
    eta_s = 1.0 / (1.0 + math.exp(-x[6]))
    eta_i = 1.0 / (1.0 + math.exp(-x[7]))
    return params, eta_s, eta_i


def _moment_seeds(counts: np.ndarray, dark_s: float, dark_i: float):
    """Start points from the marginal means/variances and the count covariance."""
    c_s = np.arange(counts.shape[0], dtype=float)
    c_i = np.arange(counts.shape[1], dtype=float)
    total = counts.sum()
    p = counts / total
    mean_s = c_s @ p.sum(axis=1)
    mean_i = c_i @ p.sum(axis=0)
    cov = c_s @ p @ c_i - mean_s * mean_i
    seeds = []
    for eta in (0.2, 0.3):
        for b_pair in (0.02, 0.05, 0.1, 0.3):
            n_mean_s = max((mean_s - dark_s) / eta, 0.1)
            n_mean_i = max((mean_i - dark_i) / eta, 0.1)
            cov_n = max(cov / eta ** 2, 0.05)
            m_pair = max(cov_n / (b_pair * (1.0 + b_pair)), 1.0)
            noise_s = max(n_mean_s - m_pair * b_pair, 0.01)
            noise_i = max(n_mean_i - m_pair * b_pair, 0.01)
            b_noise = 5.0
            seeds.append(np.array([
                math.log(m_pair), math.log(b_pair),
                math.log(noise_s / b_noise), math.log(b_noise),
                math.log(noise_i / b_noise), math.log(b_noise),
                math.log(eta / (1.0 - eta)), math.log(eta / (1.0 - eta)),
            ]))
    return seeds


def fit_twin_beam(joint: JointPhotocountHistogram, geometry,
                  n_restarts: int = 8, restart_iter: int = 500,
                  polish_iter: int = 2000) -> FitResult:
    """Maximize the multinomial likelihood of the joint histogram over the
    six twin-beam parameters and the two detection efficiencies.

    ``geometry`` fixes the known detector layout as (N_s, N_i, D_s, D_i).
    Derivative-free simplex descent runs from moment-based start points with
    positivity enforced through log/logit transforms; the best restart is
    polished and returned.  Raw parameters may trade off against each other;
    the predicted count observables are the quantity to trust.
    """
    counts = joint.counts
    if joint.total < 10_000:
        raise ValueError(f"fit needs at least 1e4 events, histogram holds {joint.total}")
    occupied = np.count_nonzero(counts)
    marg_s = counts.sum(axis=1)
    marg_i = counts.sum(axis=0)
    if occupied < 4 or np.count_nonzero(marg_s) < 2 or np.count_nonzero(marg_i) < 2:
        raise DegenerateHistogramError(
            "histogram carries no usable structure (all mass in a line or a point)")

    N_s, N_i, D_s, D_i = geometry
    cache = _ModelCache((int(N_s), int(N_i), float(D_s), float(D_i)), counts.shape)
    counts_f = counts.astype(float)
    total = counts_f.sum()
    eval_log: dict[bytes, float] = {}

    def negative_log_lik(x: np.ndarray) -> float:
        if np.any(np.abs(x) > 30):
            return 1e12
        try:
            params, eta_s, eta_i = _unpack(x)
        except (ValueError, OverflowError):
            return 1e12
        if not (1e-3 < eta_s < 0.95 and 1e-3 < eta_i < 0.95):
            return 1e12
        predicted = np.clip(cache.predicted(params, eta_s, eta_i), 1e-300, None)
        value = -float((counts_f * np.log(predicted)).sum()) / total
        eval_log[x.tobytes()] = value
        return value

    best_x = None
    best_f = math.inf
    seeds = _moment_seeds(counts_f, D_s * N_s, D_i * N_i)[:n_restarts]
    while len(seeds) < n_restarts:
        seeds.append(seeds[0] + 0.05 * (len(seeds) + 1))
    for x0 in seeds:
        res = minimize(negative_log_lik, x0, method="Nelder-Mead",
                       options=dict(maxiter=restart_iter, xatol=1e-4, fatol=1e-9,
                                    adaptive=True))
        if res.fun < best_f:
            best_f, best_x = res.fun, res.x

    trace = []
    res = minimize(negative_log_lik, best_x, method="Nelder-Mead",
                   callback=lambda xk: trace.append(eval_log.get(xk.tobytes(), math.nan)),
                   options=dict(maxiter=polish_iter, xatol=1e-6, fatol=1e-11,
                                adaptive=True))
    final_x = res.x if res.fun <= best_f else best_x
    final_f = min(res.fun, best_f)
    params, eta_s, eta_i = _unpack(final_x)
    trace_arr = np.asarray([t for t in trace if not math.isnan(t)])
    return FitResult(params=params, eta_s=eta_s, eta_i=eta_i,
                     objective_value=-final_f, converged=bool(res.success),
                     objective_trace=-trace_arr)
