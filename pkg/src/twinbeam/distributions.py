"""Photon-number distributions and intensity-moment utilities.

Provides Mandel-Rice (multimode thermal) statistics, the joint photon-number
distribution of a noisy twin beam, and factorial/ordinary moment helpers used
by the nonclassicality criteria.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import TruncationError, VacuumError

TAIL_TOL = 1e-10
AUTO_NMAX_CAP = 512


def mandel_rice(n, M: float, B: float):
    """Mandel-Rice probability of n photons in M thermal modes with B photons/mode.

    p(n) = Gamma(n+M) / (n! Gamma(M)) * B^n / (1+B)^(n+M), evaluated in
    log-space so that fractional mode numbers down to ~1e-2 and large n do
    not overflow.  Accepts a scalar or an array of photon numbers.
    """
    if M <= 0:
        raise ValueError(f"mode number M must be > 0, got {M}")
    if B <= 0:
        raise ValueError(f"mean photon number per mode B must be > 0, got {B}")
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or not np.issubdtype(n_arr.dtype, np.integer) and np.any(n_arr != np.floor(n_arr)):
        raise ValueError("photon number n must be a nonnegative integer")
    n_arr = n_arr.astype(float)
    log_p = (gammaln(n_arr + M) - gammaln(n_arr + 1) - gammaln(M)
             + n_arr * np.log(B) - (n_arr + M) * np.log1p(B))
    p = np.exp(log_p)
    return float(p) if np.isscalar(n) or np.ndim(n) == 0 else p


@dataclass(frozen=True)
class PhotonDistribution:
    """Probability vector over photon number n = 0..n_max.

    Entries are nonnegative and the total mass lies within ``tail_tol`` of 1,
    where ``tail_tol`` is the truncation tolerance accepted at construction.
    The array is frozen after validation and safe to share between workers.
    """

    probs: np.ndarray
    tail_tol: float = TAIL_TOL

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a nonempty 1-d array")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        total = float(p.sum())
        if not (1.0 - self.tail_tol <= total <= 1.0 + 1e-12):
            raise TruncationError(
                f"distribution mass {total!r} outside [1 - {self.tail_tol}, 1 + 1e-12]")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    @property
    def mean(self) -> float:
        return float(self.probs @ np.arange(self.probs.size))


@dataclass(frozen=True)
class JointPhotonDistribution:
    """Joint probability matrix over signal/idler photon numbers (n_s, n_i)."""

    probs: np.ndarray
    tail_tol: float = TAIL_TOL

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.size == 0:
            raise ValueError("probs must be a nonempty square matrix")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        total = float(p.sum())
        if not (1.0 - self.tail_tol <= total <= 1.0 + 1e-12):
            raise TruncationError(
                f"joint mass {total!r} outside [1 - {self.tail_tol}, 1 + 1e-12]")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_max(self) -> int:
        return self.probs.shape[0] - 1

    def signal_marginal(self) -> PhotonDistribution:
        return PhotonDistribution(self.probs.sum(axis=1), tail_tol=self.tail_tol)

    def idler_marginal(self) -> PhotonDistribution:
        return PhotonDistribution(self.probs.sum(axis=0), tail_tol=self.tail_tol)


@dataclass(frozen=True)
class TwinBeamParams:
    """Mode counts and mean photon(-pair) numbers per mode of a noisy twin beam.

    The beam is the superposition of a paired part (p) feeding both arms and
    independent noise parts in the signal (s) and idler (i) arms.  Mode counts
    may be fractional; all six values must be positive.
    """

    M_p: float
    B_p: float
    M_s: float
    B_s: float
    M_i: float
    B_i: float

    def __post_init__(self):
        for name in ("M_p", "B_p", "M_s", "B_s", "M_i", "B_i"):
            value = getattr(self, name)
            if not (value > 0):
                raise ValueError(f"{name} must be > 0, got {value}")

    def to_dict(self) -> dict:
        return {name: float(getattr(self, name))
                for name in ("M_p", "B_p", "M_s", "B_s", "M_i", "B_i")}

    @classmethod
    def from_dict(cls, d: dict) -> "TwinBeamParams":
        return cls(**{name: float(d[name])
                      for name in ("M_p", "B_p", "M_s", "B_s", "M_i", "B_i")})


@dataclass(frozen=True)
class MomentSet:
    """Factorial (normally ordered) moments of orders k = 1..K.

    ``values[k-1]`` holds the k-th factorial moment.  ``source`` records
    whether the moments describe photon numbers or raw photocounts.
    """

    values: np.ndarray
    source: str = "photon"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("values must be a nonempty 1-d array")
        if np.any(v < 0):
            raise ValueError("factorial moments of a distribution are nonnegative")
        if self.source not in ("photon", "photocount"):
            raise ValueError(f"source must be 'photon' or 'photocount', got {self.source!r}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def max_order(self) -> int:
        return self.values.size

    def moment(self, k: int) -> float:
        if not 1 <= k <= self.max_order:
            raise ValueError(f"order {k} outside 1..{self.max_order}")
        return float(self.values[k - 1])


def _mandel_rice_pmf(n_max: int, M: float, B: float) -> np.ndarray:
    n = np.arange(n_max + 1, dtype=float)
    return np.exp(gammaln(n + M) - gammaln(n + 1) - gammaln(M)
                  + n * np.log(B) - (n + M) * np.log1p(B))


def _poisson_pmf(n_max: int, mu: float) -> np.ndarray:
    if mu == 0:
        p = np.zeros(n_max + 1)
        p[0] = 1.0
        return p
    n = np.arange(n_max + 1, dtype=float)
    return np.exp(n * np.log(mu) - mu - gammaln(n + 1))


def _auto_bound(pmf, tail_tol: float, cap: int = AUTO_NMAX_CAP) -> int:
    """Smallest n with cumulative tail mass below tail_tol, or raise."""
    p = pmf(cap)
    c = np.cumsum(p)
    if c[-1] < 1.0 - tail_tol:
        raise TruncationError(
            f"tail mass {1.0 - c[-1]:.3e} above n={cap} exceeds tolerance {tail_tol}")
    return int(np.searchsorted(c, 1.0 - tail_tol))


def make_distribution(kind: str, n_max: int | None = None, *,
                      tail_tol: float = TAIL_TOL, **params) -> PhotonDistribution:
    """Construct a truncated reference photon-number distribution.

    kind is one of ``mandel_rice`` (M, B), ``fock`` (m), ``poisson`` (mu) or
    ``thermal`` (mu, a single thermal mode).  When ``n_max`` is omitted it is
    chosen as the smallest bound with tail mass below ``tail_tol`` (capped at
    512); an explicit ``n_max`` may exceed the cap but must still leave tail
    mass below ``tail_tol``.
    """
    if kind == "fock":
        m = int(params.pop("m"))
        if params:
            raise ValueError(f"unexpected parameters for fock: {sorted(params)}")
        if m < 0:
            raise ValueError("fock level m must be >= 0")
        bound = m if n_max is None else int(n_max)
        if bound < m:
            raise TruncationError(f"n_max={bound} truncates fock({m}) entirely")
        probs = np.zeros(bound + 1)
        probs[m] = 1.0
        return PhotonDistribution(probs, tail_tol=tail_tol)

    if kind == "poisson":
        mu = float(params.pop("mu"))
        if params:
            raise ValueError(f"unexpected parameters for poisson: {sorted(params)}")
        if mu < 0:
            raise ValueError("poisson mean must be >= 0")
        pmf = lambda top: _poisson_pmf(top, mu)
    elif kind == "thermal":
        mu = float(params.pop("mu"))
        if params:
            raise ValueError(f"unexpected parameters for thermal: {sorted(params)}")
        if mu < 0:
            raise ValueError("thermal mean must be >= 0")
        if mu == 0:
            pmf = lambda top: _poisson_pmf(top, 0.0)
        else:
            pmf = lambda top: _mandel_rice_pmf(top, 1.0, mu)
    elif kind == "mandel_rice":
        M = float(params.pop("M"))
        B = float(params.pop("B"))
        if params:
            raise ValueError(f"unexpected parameters for mandel_rice: {sorted(params)}")
        if M <= 0 or B <= 0:
            raise ValueError("mandel_rice requires M > 0 and B > 0")
        pmf = lambda top: _mandel_rice_pmf(top, M, B)
    else:
        raise ValueError(f"unknown distribution kind {kind!r}")

    if n_max is None:
        bound = _auto_bound(pmf, tail_tol)
    else:
        bound = int(n_max)
        if bound < 0:
            raise ValueError("n_max must be >= 0")
    probs = pmf(bound)
    tail = 1.0 - probs.sum()
    if tail > tail_tol:
        raise TruncationError(
            f"tail mass {tail:.3e} above n_max={bound} exceeds tolerance {tail_tol}")
    return PhotonDistribution(probs, tail_tol=tail_tol)


def _twin_joint_array(params: TwinBeamParams, n_max: int) -> np.ndarray:
    """Joint pmf as the diagonal convolution of the paired part with the arm noises."""
    top = n_max
    p_pair = _mandel_rice_pmf(top, params.M_p, params.B_p)
    p_s = _mandel_rice_pmf(top, params.M_s, params.B_s)
    p_i = _mandel_rice_pmf(top, params.M_i, params.B_i)
    joint = np.zeros((top + 1, top + 1))
    outer = np.outer(p_s, p_i)
    covered = 0.0
    for n in range(top + 1):
        w = p_pair[n]
        if w > 1e-300:
            joint[n:, n:] += w * outer[:top + 1 - n, :top + 1 - n]
        covered += w
        if 1.0 - covered < 1e-16:
            break
    return joint


def twin_beam_joint(params: TwinBeamParams, n_max: int | None = None, *,
                    tail_tol: float = TAIL_TOL) -> JointPhotonDistribution:
    """Joint signal/idler photon-number distribution of the twin beam.

    Each arm carries the photons of the shared paired part plus its own
    thermal noise, so the joint pmf is the paired distribution folded along
    the diagonal with the two noise distributions.
    """
    if n_max is None:
        part = tail_tol / 4.0
        b_pair = _auto_bound(lambda t: _mandel_rice_pmf(t, params.M_p, params.B_p), part)
        b_s = _auto_bound(lambda t: _mandel_rice_pmf(t, params.M_s, params.B_s), part)
        b_i = _auto_bound(lambda t: _mandel_rice_pmf(t, params.M_i, params.B_i), part)
        n_max = min(AUTO_NMAX_CAP, b_pair + max(b_s, b_i))
    joint = _twin_joint_array(params, int(n_max))
    tail = 1.0 - joint.sum()
    if tail > tail_tol:
        raise TruncationError(
            f"joint tail mass {tail:.3e} above n_max={n_max} exceeds tolerance {tail_tol}")
    return JointPhotonDistribution(joint, tail_tol=tail_tol)


def falling_factorial(n, k: int):
    """n (n-1) ... (n-k+1), exactly 0 whenever n < k."""
    n_arr = np.asarray(n, dtype=float)
    out = np.ones_like(n_arr)
    for j in range(k):
        out = out * np.clip(n_arr - j, 0.0, None)
    return float(out) if np.ndim(n) == 0 else out


def _probs_of(dist) -> np.ndarray:
    if isinstance(dist, PhotonDistribution):
        return dist.probs
    arr = np.asarray(dist, dtype=float)
    if arr.ndim != 1:
        raise ValueError("expected a 1-d probability vector")
    return arr


def _counts_of(hist) -> np.ndarray:
    counts = np.asarray(getattr(hist, "counts", hist))
    if counts.ndim != 1:
        raise ValueError("expected a 1-d count vector")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    return counts.astype(float)


def factorial_moment(dist, k: int) -> float:
    """k-th factorial moment sum_n p(n) n!/(n-k)! of a photon-number distribution."""
    if k < 1:
        raise ValueError("order k must be >= 1")
    p = _probs_of(dist)
    return float(p @ falling_factorial(np.arange(p.size), k))


def count_factorial_moment(hist, k: int) -> float:
    """k-th factorial moment of the empirical distribution behind a count histogram."""
    if k < 1:
        raise ValueError("order k must be >= 1")
    counts = _counts_of(hist)
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram holds no counts")
    return float(counts @ falling_factorial(np.arange(counts.size), k) / total)


def moments(dist_or_hist, K: int, source: str | None = None) -> MomentSet:
    """Factorial moments of orders 1..K as a MomentSet."""
    if K < 1:
        raise ValueError("K must be >= 1")
    is_counts = not isinstance(dist_or_hist, PhotonDistribution) and (
        hasattr(dist_or_hist, "counts")
        or np.issubdtype(np.asarray(dist_or_hist).dtype, np.integer))
    if is_counts:
        values = [count_factorial_moment(dist_or_hist, k) for k in range(1, K + 1)]
        return MomentSet(np.array(values), source=source or "photocount")
    values = [factorial_moment(dist_or_hist, k) for k in range(1, K + 1)]
    return MomentSet(np.array(values), source=source or "photon")


def fano(dist_or_hist) -> float:
    """Variance-to-mean ratio from ordinary first and second moments."""
    if isinstance(dist_or_hist, PhotonDistribution):
        p = dist_or_hist.probs
    elif hasattr(dist_or_hist, "counts") or np.issubdtype(np.asarray(dist_or_hist).dtype, np.integer):
        counts = _counts_of(dist_or_hist)
        total = counts.sum()
        if total <= 0:
            raise ValueError("histogram holds no counts")
        p = counts / total
    else:
        p = _probs_of(dist_or_hist)
    n = np.arange(p.size, dtype=float)
    norm = p.sum()
    mean = float(p @ n) / norm
    if mean <= 0:
        raise VacuumError("Fano factor is undefined for a field with zero mean")
    second = float(p @ n ** 2) / norm
    return (second - mean ** 2) / mean


def poisson_moments(mu: float, K: int) -> MomentSet:
    """Closed-form factorial moments mu^k of a Poisson field."""
    if mu < 0:
        raise ValueError("poisson mean must be >= 0")
    return MomentSet(np.array([mu ** k for k in range(1, K + 1)]))


def thermal_moments(mu: float, K: int) -> MomentSet:
    """Closed-form factorial moments k! mu^k of a single thermal mode."""
    if mu < 0:
        raise ValueError("thermal mean must be >= 0")
    values = [float(np.exp(gammaln(k + 1))) * mu ** k for k in range(1, K + 1)]
    return MomentSet(np.array(values))


def mandel_rice_moments(M: float, B: float, K: int) -> MomentSet:
    """Closed-form factorial moments Gamma(M+k)/Gamma(M) B^k of a Mandel-Rice field."""
    if M <= 0 or B <= 0:
        raise ValueError("mandel_rice requires M > 0 and B > 0")
    values = [float(np.exp(gammaln(M + k) - gammaln(M))) * B ** k for k in range(1, K + 1)]
    return MomentSet(np.array(values))


def fock_moments(m: int, K: int) -> MomentSet:
    """Closed-form factorial moments m!/(m-k)! of a Fock state."""
    if m < 0:
        raise ValueError("fock level must be >= 0")
    return MomentSet(np.array([falling_factorial(m, k) for k in range(1, K + 1)]))
