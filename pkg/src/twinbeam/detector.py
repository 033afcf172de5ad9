"""Photon-counting camera response: analytic matrix, forward maps and a physical sampler.

The detector is a photocathode of N binary pixels: every incident photon lands
on a uniformly random pixel and registers with probability eta, every pixel
additionally dark-fires with probability D per frame, and the reading is the
number of pixels with at least one registration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np
from scipy.special import gammaln

from .distributions import PhotonDistribution
from .errors import NumericalInstabilityError, ZeroConditionError

COL_TOL = 1e-9
INSTABILITY_THRESHOLD = 1e-6
# extra ulps allotted to the log/exp evaluation of each series term
_TERM_EPS = 16 * np.finfo(float).eps


@dataclass(frozen=True)
class DetectorModel:
    """Pixel count, detection efficiency and per-pixel dark-count rate."""

    n_pixels: int
    efficiency: float
    dark_per_pixel: float

    def __post_init__(self):
        if self.n_pixels < 1:
            raise ValueError(f"n_pixels must be >= 1, got {self.n_pixels}")
        if not 0.0 <= self.efficiency < 1.0:
            raise ValueError(f"efficiency must lie in [0, 1), got {self.efficiency}")
        if not 0.0 <= self.dark_per_pixel < 1.0:
            raise ValueError(f"dark_per_pixel must lie in [0, 1), got {self.dark_per_pixel}")

    @classmethod
    def with_total_dark(cls, n_pixels: int, efficiency: float, dark_total: float) -> "DetectorModel":
        """Build a model from the total dark rate d, stored per pixel as d / n_pixels."""
        return cls(n_pixels=n_pixels, efficiency=efficiency,
                   dark_per_pixel=dark_total / n_pixels)

    @property
    def dark_total(self) -> float:
        return self.n_pixels * self.dark_per_pixel

    def to_dict(self) -> dict:
        return {"pixels": int(self.n_pixels),
                "efficiency": float(self.efficiency),
                "dark_total": float(self.dark_total)}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        pixels = int(d["pixels"])
        if "dark_total" in d:
            return cls.with_total_dark(pixels, float(d["efficiency"]), float(d["dark_total"]))
        return cls(pixels, float(d["efficiency"]), float(d["dark_per_pixel"]))


@dataclass(frozen=True)
class ResponseMatrix:
    """Table T[c, n] of photocount probabilities given n incident photons.

    Every column over c = 0..c_max is a truncated pmf whose sum lies within
    COL_TOL of 1.  Immutable after construction.
    """

    T: np.ndarray
    model: DetectorModel | None = None

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        if T.ndim != 2 or T.size == 0:
            raise ValueError("T must be a nonempty 2-d array")
        if np.any(T < 0) or np.any(T > 1.0 + 1e-12):
            raise ValueError("response entries must lie in [0, 1]")
        sums = T.sum(axis=0)
        if np.any(sums < 1.0 - COL_TOL) or np.any(sums > 1.0 + 1e-12):
            raise ValueError(
                f"column sums outside [1 - {COL_TOL}, 1 + 1e-12]: "
                f"min={sums.min()!r}, max={sums.max()!r}")
        T = np.minimum(T, 1.0)
        T.setflags(write=False)
        object.__setattr__(self, "T", T)

    @property
    def c_max(self) -> int:
        return self.T.shape[0] - 1

    @property
    def n_max(self) -> int:
        return self.T.shape[1] - 1


def _log_binomial(n: float, k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _alternating_terms(model: DetectorModel, c: int, n: int):
    """Log magnitudes and signs of the inclusion-exclusion series for T(c, n)."""
    N, eta, D = model.n_pixels, model.efficiency, model.dark_per_pixel
    l = np.arange(c + 1, dtype=float)
    log_mag = (_log_binomial(N, c) + N * math.log1p(-D)
               + n * math.log1p(-eta)
               + _log_binomial(c, l) - l * math.log1p(-D))
    if eta > 0:
        log_mag = log_mag + n * np.log1p(l * eta / (N * (1.0 - eta)))
    signs = np.where((c - np.arange(c + 1)) % 2 == 0, 1.0, -1.0)
    return log_mag, signs


def _alternating_float(model: DetectorModel, c: int, n: int):
    """Evaluate the signed series in float64.

    Terms are rescaled by the largest log magnitude and accumulated smallest
    first with Neumaier compensation; returns the value together with an
    estimate of its relative rounding error.
    """
    log_mag, signs = _alternating_terms(model, c, n)
    order = np.argsort(log_mag)
    peak = log_mag[order[-1]]
    scaled = np.exp(log_mag[order] - peak) * signs[order]
    total = 0.0
    comp = 0.0
    abs_total = 0.0
    for t in scaled:
        abs_total += abs(t)
        s = total + t
        if abs(total) >= abs(t):
            comp += (total - s) + t
        else:
            comp += (t - s) + total
        total = s
    total += comp
    if total == 0.0:
        rel_err = math.inf if abs_total > 0 else 0.0
        return 0.0, rel_err
    rel_err = _TERM_EPS * abs_total / abs(total)
    log_value = peak + math.log(abs(total))
    value = math.copysign(math.exp(log_value), total) if log_value < 700 else math.inf
    return value, rel_err


def _alternating_exact(model: DetectorModel, c: int, n: int, max_prec: int = 4096) -> float:
    """Evaluate the same signed series in adaptive arbitrary precision."""
    N, eta, D = model.n_pixels, model.efficiency, model.dark_per_pixel
    prec = 128
    while prec <= max_prec:
        with mp.workprec(prec):
            one = mp.mpf(1)
            rate = mp.mpf(eta) / (N * (one - mp.mpf(eta))) if eta > 0 else mp.mpf(0)
            inv_keep = one / (one - mp.mpf(D))
            total = mp.mpf(0)
            abs_total = mp.mpf(0)
            for l in range(c + 1):
                term = mp.binomial(c, l) * inv_keep ** l * (one + l * rate) ** n
                if (c - l) % 2:
                    term = -term
                total += term
                abs_total += abs(term)
            if abs_total == 0:
                return 0.0
            if total != 0 and mp.mag(abs_total) - mp.mag(total) < prec - 64:
                prefactor = (mp.binomial(N, c) * (one - mp.mpf(D)) ** N
                             * (one - mp.mpf(eta)) ** n)
                return min(max(float(prefactor * total), 0.0), 1.0)
        prec *= 2
    # cancellation beyond max_prec bits: the value is zero at float precision
    return 0.0


def response_element(model: DetectorModel, c: int, n: int, method: str = "auto") -> float:
    """Probability of reading c photocounts from a field of n photons.

    ``method='alternating'`` evaluates the signed inclusion-exclusion series in
    float64 with compensated summation and raises NumericalInstabilityError
    when the estimated relative error exceeds 1e-6 (the alternation cancels
    catastrophically for large pixel counts).  ``method='exact'`` evaluates the
    same series in adaptive arbitrary precision; ``'auto'`` tries the float
    path first and escalates on instability.
    """
    if not 0 <= c <= model.n_pixels:
        raise ValueError(f"c must lie in 0..{model.n_pixels}, got {c}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if method not in ("auto", "alternating", "exact"):
        raise ValueError(f"unknown method {method!r}")
    if method == "exact":
        return _alternating_exact(model, int(c), int(n))
    value, rel_err = _alternating_float(model, int(c), int(n))
    if rel_err > INSTABILITY_THRESHOLD or not math.isfinite(value):
        if method == "alternating":
            raise NumericalInstabilityError(
                f"signed series for T({c}, {n}) carries estimated relative error "
                f"{rel_err:.2e} (> {INSTABILITY_THRESHOLD:.0e})")
        return _alternating_exact(model, int(c), int(n))
    return min(max(value, 0.0), 1.0)


@lru_cache(maxsize=16)
def _occupancy_matrix(n_pixels: int, k_max: int, m_max: int) -> np.ndarray:
    """O[m, k]: probability that k registered photons occupy exactly m distinct pixels."""
    O = np.zeros((m_max + 1, k_max + 1))
    O[0, 0] = 1.0
    m = np.arange(m_max + 1, dtype=float)
    for k in range(1, k_max + 1):
        prev = O[:, k - 1]
        grow = np.zeros_like(prev)
        grow[1:] = prev[:-1] * (1.0 - (m[1:] - 1.0) / n_pixels)
        O[:, k] = prev * (m / n_pixels) + grow
    O.setflags(write=False)
    return O


def _registration_matrix(eta: float, n_max: int) -> np.ndarray:
    """L[k, n]: binomial probability that k of n photons register."""
    n = np.arange(n_max + 1, dtype=float)
    k = n[:, None]
    if eta == 0.0:
        L = np.zeros((n_max + 1, n_max + 1))
        L[0, :] = 1.0
        return L
    # the grid is -inf for k > n, so exp() zeroes the impossible entries
    log_l = _log_binomial_grid(n_max) + k * math.log(eta) + (n[None, :] - k) * math.log1p(-eta)
    return np.exp(log_l)


@lru_cache(maxsize=8)
def _log_binomial_grid(n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1, dtype=float)
    with np.errstate(invalid="ignore"):
        g = gammaln(n[None, :] + 1) - gammaln(n[:, None] + 1) - gammaln(n[None, :] - n[:, None] + 1)
    g[np.arange(n_max + 1)[:, None] > np.arange(n_max + 1)[None, :]] = -np.inf
    g.setflags(write=False)
    return g


def _dark_matrix(n_pixels: int, D: float, c_top: int, m_max: int) -> np.ndarray:
    """BD[c, m]: probability of c total firings given m photon-occupied pixels."""
    BD = np.zeros((c_top + 1, m_max + 1))
    c = np.arange(c_top + 1)
    for m in range(m_max + 1):
        j = c - m
        ok = (j >= 0) & (j <= n_pixels - m)
        jo = j[ok].astype(float)
        if D == 0.0:
            BD[ok, m] = (jo == 0).astype(float)
            continue
        log_b = (_log_binomial(n_pixels - m, jo)
                 + jo * math.log(D) + (n_pixels - m - jo) * math.log1p(-D))
        BD[ok, m] = np.exp(log_b)
    return BD


def build_response(model: DetectorModel, n_max: int, c_max: int | None = None) -> ResponseMatrix:
    """Tabulate the response for all n <= n_max.

    The table is assembled from three exact, nonnegative stages (binomial
    registration, pixel occupancy, dark firings on the remaining pixels),
    which is algebraically identical to the signed series of
    ``response_element`` but free of cancellation at any pixel count.  The
    count extent defaults to the smallest c_max at which every column reaches
    mass 1 - 1e-9 and is auto-extended above a smaller requested value.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if c_max is not None and not 0 <= c_max <= model.n_pixels:
        raise ValueError(f"c_max must lie in 0..{model.n_pixels}")
    N, eta, D = model.n_pixels, model.efficiency, model.dark_per_pixel
    L = _registration_matrix(eta, n_max)

    mean_top = N * (1.0 - (1.0 - D) * (1.0 - eta / N) ** n_max)
    extent = min(N, int(math.ceil(mean_top + 12.0 * math.sqrt(mean_top + 1.0) + 16)))
    while True:
        m_top = min(N, n_max, extent)
        occupancy = _occupancy_matrix(N, n_max, m_top)
        T = _dark_matrix(N, D, extent, m_top) @ (occupancy @ L)
        col_sums = T.sum(axis=0)
        if col_sums.min() >= 1.0 - COL_TOL or extent >= N:
            break
        extent = min(N, 2 * extent + 8)

    # trim to the smallest extent at which every column satisfies the mass bound
    cum = np.cumsum(T, axis=0)
    needed = [int(np.searchsorted(cum[:, j], 1.0 - COL_TOL)) for j in range(T.shape[1])]
    c_star = max(needed)
    final = max(c_star, c_max if c_max is not None else 0)
    return ResponseMatrix(T[:final + 1, :], model=model)


def apply_response(response: ResponseMatrix, dist) -> np.ndarray:
    """Photocount distribution f(c) = sum_n T(c, n) p(n)."""
    probs = dist.probs if isinstance(dist, PhotonDistribution) else np.asarray(dist, dtype=float)
    if probs.ndim != 1:
        raise ValueError("expected a 1-d photon-number distribution")
    if probs.size - 1 > response.n_max:
        raise ValueError(
            f"distribution extends to n={probs.size - 1} but the response "
            f"only covers n<={response.n_max}")
    return response.T[:, :probs.size] @ probs


def photocount_joint(joint, T_s: ResponseMatrix, T_i: ResponseMatrix) -> np.ndarray:
    """Joint photocount distribution F(c_s, c_i) of a joint photon distribution."""
    probs = joint.probs if hasattr(joint, "probs") else np.asarray(joint, dtype=float)
    if probs.shape[0] - 1 > T_s.n_max or probs.shape[1] - 1 > T_i.n_max:
        raise ValueError("joint distribution exceeds the response extent")
    return T_s.T[:, :probs.shape[0]] @ probs @ T_i.T[:, :probs.shape[1]].T


def conditional_theory(joint, T_s: ResponseMatrix, c_s: int) -> PhotonDistribution:
    """Idler photon-number distribution after postselecting on c_s signal counts."""
    probs = joint.probs if hasattr(joint, "probs") else np.asarray(joint, dtype=float)
    if not 0 <= c_s <= T_s.c_max:
        raise ValueError(f"c_s must lie in 0..{T_s.c_max}")
    if probs.shape[0] - 1 > T_s.n_max:
        raise ValueError("joint distribution exceeds the response extent")
    weights = T_s.T[c_s, :probs.shape[0]] @ probs
    norm = weights.sum()
    if norm < 1e-300:
        raise ZeroConditionError(
            f"probability of c_s={c_s} underflows; the conditional field is undefined")
    return PhotonDistribution(weights / norm, tail_tol=1e-9)


def signal_count_theory(joint, T_s: ResponseMatrix) -> np.ndarray:
    """Predicted signal photocount distribution of the joint photon distribution."""
    probs = joint.probs if hasattr(joint, "probs") else np.asarray(joint, dtype=float)
    return apply_response(T_s, probs.sum(axis=1))


def sample_physical(model: DetectorModel, n: int, rng: np.random.Generator,
                    size: int | None = None):
    """Simulate the detector pixel by pixel: the independent oracle for the response.

    Each of the n photons is assigned a uniformly random pixel and registers
    with probability eta; the pixels left without a registered photon dark-fire
    independently with probability D.  Returns the number of firing pixels,
    as a scalar for ``size=None`` or as an int64 array otherwise.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    scalar = size is None
    draws = 1 if scalar else int(size)
    N, eta, D = model.n_pixels, model.efficiency, model.dark_per_pixel
    out = np.empty(draws, dtype=np.int64)
    chunk = max(1, min(draws, (1 << 22) // max(n, 1)))
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        if n == 0 or eta == 0.0:
            occupied = np.zeros(m, dtype=np.int64)
        else:
            pixels = rng.integers(0, N, size=(m, n))
            registered = rng.random((m, n)) < eta
            pixels = np.where(registered, pixels, -1)
            pixels.sort(axis=1)
            fresh = np.ones((m, n), dtype=bool)
            fresh[:, 1:] = pixels[:, 1:] != pixels[:, :-1]
            occupied = (fresh & (pixels >= 0)).sum(axis=1)
        dark = rng.binomial(N - occupied, D) if D > 0 else 0
        out[done:done + m] = occupied + dark
        done += m
    return int(out[0]) if scalar else out
