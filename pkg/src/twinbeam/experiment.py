"""End-to-end synthetic experiment: seeded sampling of the twin beam through
both cameras, conditional analysis of the joint histogram and error bars."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .criteria import IdentifierSpec, enumerate_identifiers
from .detector import (DetectorModel, ResponseMatrix, build_response,
                       conditional_theory, signal_count_theory)
from .distributions import TwinBeamParams, fano, falling_factorial, twin_beam_joint
from .errors import VacuumError
from .reconstruct import JointPhotocountHistogram, em_reconstruct

CHUNK = 1 << 16
LOW_STATS_THRESHOLD = 50


@dataclass(frozen=True)
class ExperimentConfig:
    """Twin-beam source, the two cameras, and the sampling run layout."""

    twin_beam: TwinBeamParams
    signal_detector: DetectorModel
    idler_detector: DetectorModel
    runs: int
    seed: int

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")

    def to_dict(self) -> dict:
        return {"twin_beam": self.twin_beam.to_dict(),
                "signal_detector": self.signal_detector.to_dict(),
                "idler_detector": self.idler_detector.to_dict(),
                "runs": int(self.runs),
                "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(twin_beam=TwinBeamParams.from_dict(d["twin_beam"]),
                   signal_detector=DetectorModel.from_dict(d["signal_detector"]),
                   idler_detector=DetectorModel.from_dict(d["idler_detector"]),
                   runs=int(d["runs"]), seed=int(d["seed"]))


def _sample_counts(row_cdf: np.ndarray, levels: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF count draws where each event uses the CDF row of its level."""
    out = np.empty(u.size, dtype=np.int64)
    order = np.argsort(levels, kind="stable")
    sorted_levels = levels[order]
    edges = np.searchsorted(sorted_levels, np.arange(row_cdf.shape[0] + 1))
    top = row_cdf.shape[1] - 1
    for level in np.unique(sorted_levels):
        segment = order[edges[level]:edges[level + 1]]
        out[segment] = np.searchsorted(row_cdf[level], u[segment], side="right")
    np.clip(out, 0, top, out=out)
    return out


def _simulate_chunk(seed: int, index: int, size: int, joint_cdf: np.ndarray,
                    width: int, cdf_s: np.ndarray, cdf_i: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))
    u = rng.random(size)
    flat = np.searchsorted(joint_cdf, u, side="right")
    n_s, n_i = np.divmod(np.clip(flat, 0, joint_cdf.size - 1), width)
    c_s = _sample_counts(cdf_s, n_s, rng.random(size))
    c_i = _sample_counts(cdf_i, n_i, rng.random(size))
    hist = np.zeros((cdf_s.shape[1], cdf_i.shape[1]), dtype=np.int64)
    np.add.at(hist, (c_s, c_i), 1)
    return hist


def simulate(config: ExperimentConfig, threads: int = 1) -> JointPhotocountHistogram:
    """Sample the full experiment and accumulate the joint photocount histogram.

    Each run draws a photon pair count from the joint distribution by inverse
    CDF on a flattened table, then a count for each arm by inverse CDF on the
    response row of the drawn photon number.  Runs are partitioned into fixed
    chunks whose substreams are seeded by (seed, chunk index), so the result
    is bit-reproducible for any worker count.
    """
    joint = twin_beam_joint(config.twin_beam)
    T_s = build_response(config.signal_detector, n_max=joint.n_max)
    T_i = build_response(config.idler_detector, n_max=joint.n_max)
    width = joint.n_max + 1
    joint_cdf = np.cumsum(joint.probs.ravel())
    joint_cdf /= joint_cdf[-1]
    cdf_s = np.cumsum(T_s.T, axis=0).T.copy()
    cdf_i = np.cumsum(T_i.T, axis=0).T.copy()

    sizes = [CHUNK] * (config.runs // CHUNK)
    if config.runs % CHUNK:
        sizes.append(config.runs % CHUNK)
    jobs = [(config.seed, idx, size, joint_cdf, width, cdf_s, cdf_i)
            for idx, size in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda args: _simulate_chunk(*args), jobs))
    else:
        parts = [_simulate_chunk(*args) for args in jobs]
    total = np.zeros((T_s.c_max + 1, T_i.c_max + 1), dtype=np.int64)
    for part in parts:
        total += part
    top_s = int(np.max(np.nonzero(total.sum(axis=1))[0]))
    top_i = int(np.max(np.nonzero(total.sum(axis=0))[0]))
    return JointPhotocountHistogram(total[:top_s + 1, :top_i + 1])


def moment_error(hist, statistic) -> float:
    """Standard error sigma_x / sqrt(N_r) of a per-event statistic.

    ``statistic`` maps count values to the kernel x(c) whose empirical mean is
    the estimate; sigma_x is the root mean squared fluctuation of the kernel
    under the histogram.
    """
    counts = np.asarray(getattr(hist, "counts", hist), dtype=float)
    total = counts.sum()
    if total < 2:
        raise ValueError("error estimation needs at least 2 counts")
    kernel = np.asarray(statistic(np.arange(counts.size, dtype=float)), dtype=float)
    mean = counts @ kernel / total
    second = counts @ kernel ** 2 / total
    return math.sqrt(max(second - mean ** 2, 0.0) / total)


def bootstrap_error(hist, statistic, n_boot: int = 1000, seed: int = 0) -> float:
    """Standard deviation of a histogram statistic over multinomial resamples."""
    counts = np.asarray(getattr(hist, "counts", hist))
    total = int(counts.sum())
    if total < 10:
        raise ValueError("bootstrap needs at least 10 counts")
    rng = np.random.default_rng(seed)
    p = counts / total
    resamples = rng.multinomial(total, p, size=n_boot)
    values = np.array([statistic(resamples[b]) for b in range(n_boot)], dtype=float)
    return float(values.std(ddof=1))


@dataclass(frozen=True)
class VariantStats:
    """Statistics of one analysis route for a single conditional field."""

    mean: float
    fano: float
    values: np.ndarray
    mean_err: float | None = None
    fano_err: float | None = None
    value_errs: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.value_errs is not None:
            errs = np.asarray(self.value_errs, dtype=float)
            if errs.shape != values.shape:
                raise ValueError("value_errs must match values")
            if np.any(errs < 0):
                raise ValueError("errors must be nonnegative")
            errs.setflags(write=False)
            object.__setattr__(self, "value_errs", errs)


@dataclass(frozen=True)
class ConditionalRow:
    c_s: int
    n_r: int
    low_stats: bool
    photocount: VariantStats | None
    reconstructed: VariantStats | None
    theory: VariantStats | None
    em_iterations: int | None = None
    em_converged: bool | None = None


@dataclass(frozen=True)
class ConditionalReport:
    """Per-c_s conditional statistics in up to three variants plus the signal marginal."""

    identifiers: tuple[IdentifierSpec, ...]
    rows: tuple[ConditionalRow, ...]
    max_order: int
    n_boot: int
    seed: int
    f_s: np.ndarray
    f_s_theory: np.ndarray | None = None

    def __post_init__(self):
        f_s = np.asarray(self.f_s, dtype=float)
        f_s.setflags(write=False)
        object.__setattr__(self, "f_s", f_s)
        object.__setattr__(self, "identifiers", tuple(self.identifiers))
        object.__setattr__(self, "rows", tuple(self.rows))


def _falling_kernel(size: int, max_order: int) -> np.ndarray:
    values = np.arange(size, dtype=float)
    return np.stack([falling_factorial(values, k) for k in range(1, max_order + 1)])


def _identifier_values(specs, factorial_moments: np.ndarray) -> np.ndarray:
    """Vectorized identifier evaluation; moments indexed (..., order-1)."""
    m = np.asarray(factorial_moments, dtype=float)
    m1 = m[..., 0]
    out = np.empty(m.shape[:-1] + (len(specs),))
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = m / m1[..., None] ** np.arange(1, m.shape[-1] + 1)
        for j, spec in enumerate(specs):
            lead = np.prod([normalized[..., p - 1] for p in spec.lam], axis=0)
            sub = np.prod([normalized[..., p - 1] for p in spec.mu], axis=0)
            out[..., j] = lead - sub
    return out


def _stats_from_probs(probs: np.ndarray, specs, max_order: int):
    levels = np.arange(probs.size, dtype=float)
    norm = probs.sum()
    mean = float(probs @ levels) / norm
    fano_value = fano(probs / norm)
    kernels = _falling_kernel(probs.size, max_order)
    fm = kernels @ (probs / norm)
    values = _identifier_values(specs, fm)
    return mean, fano_value, values


def _bootstrap_photocount(row: np.ndarray, specs, max_order: int, n_boot: int,
                          rng: np.random.Generator):
    total = int(row.sum())
    p = row / total
    resamples = rng.multinomial(total, p, size=n_boot) / total
    levels = np.arange(row.size, dtype=float)
    kernels = _falling_kernel(row.size, max_order)
    fm = resamples @ kernels.T
    value_errs = _identifier_values(specs, fm).std(axis=0, ddof=1)
    means = resamples @ levels
    seconds = resamples @ levels ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        fanos = (seconds - means ** 2) / means
    return value_errs, float(np.nanstd(fanos, ddof=1))


def _bootstrap_reconstructed(counts: np.ndarray, warm: np.ndarray, T: ResponseMatrix,
                             specs, max_order: int, n_boot: int,
                             rng: np.random.Generator):
    """Resample the conditional counts and re-run EM from the converged solution."""
    total = int(counts.sum())
    p = counts / total
    resamples = rng.multinomial(total, p, size=n_boot)
    kernels = _falling_kernel(T.n_max + 1, max_order)
    levels = np.arange(T.n_max + 1, dtype=float)
    fms = np.empty((n_boot, max_order))
    means = np.empty(n_boot)
    fanos = np.empty(n_boot)
    for b in range(n_boot):
        dist, _ = em_reconstruct(resamples[b] / total, T, tol=1e-6, max_iter=300,
                                 init=warm)
        fms[b] = kernels @ dist.probs
        means[b] = dist.mean
        second = float(dist.probs @ levels ** 2)
        fanos[b] = (second - means[b] ** 2) / means[b] if means[b] > 0 else np.nan
    value_errs = _identifier_values(specs, fms).std(axis=0, ddof=1)
    return value_errs, float(np.nanstd(fanos, ddof=1)), means.std(ddof=1)


def analyze(joint: JointPhotocountHistogram, idler_response: ResponseMatrix,
            theory=None, max_order: int = 5, c_s_range: tuple[int, int] = (0, 10),
            n_boot: int = 1000, seed: int = 0,
            with_reconstruction: bool = True) -> ConditionalReport:
    """Conditional analysis of every signal-count slice in ``c_s_range``.

    For each populated c_s the photocount moments feed the identifier values
    directly, the EM deconvolution provides photon-number values, and, when
    ``theory`` is given as (TwinBeamParams, signal DetectorModel, idler
    DetectorModel), the model prediction supplies the third variant.  Raw
    first-moment errors follow the sigma/sqrt(N_r) rule; composite statistics
    carry seeded multinomial-bootstrap errors.  Empty rows are absent from the
    report; rows with fewer than 50 events are flagged low-statistics.
    """
    specs = tuple(enumerate_identifiers(max_order))
    rng = np.random.default_rng(seed)

    theory_joint = None
    theory_T_s = None
    f_s_theory = None
    if theory is not None:
        params, signal_model, _idler_model = theory
        theory_joint = twin_beam_joint(params)
        theory_T_s = build_response(signal_model, n_max=theory_joint.n_max)
        f_s_theory = signal_count_theory(theory_joint, theory_T_s)

    lo, hi = c_s_range
    rows = []
    for c_s in range(lo, hi + 1):
        if c_s >= joint.counts.shape[0]:
            break
        row = joint.counts[c_s].astype(float)
        n_r = int(row.sum())
        if n_r == 0:
            continue
        low_stats = n_r < LOW_STATS_THRESHOLD

        photocount = None
        if row @ np.arange(row.size) > 0:
            mean, fano_value, values = _stats_from_probs(row, specs, max_order)
            mean_err = moment_error(row, lambda c: c) if n_r >= 2 else None
            value_errs = fano_err = None
            if n_r >= 10:
                value_errs, fano_err = _bootstrap_photocount(
                    row, specs, max_order, n_boot, rng)
            photocount = VariantStats(mean=mean, fano=fano_value, values=values,
                                      mean_err=mean_err, fano_err=fano_err,
                                      value_errs=value_errs)

        reconstructed = None
        em_iterations = em_converged = None
        if with_reconstruction and photocount is not None:
            padded_counts = np.zeros(idler_response.c_max + 1)
            width = min(row.size, padded_counts.size)
            padded_counts[:width] = row[:width]
            dist, diag = em_reconstruct(padded_counts / n_r, idler_response)
            em_iterations, em_converged = diag.iterations, diag.converged
            try:
                mean, fano_value, values = _stats_from_probs(dist.probs, specs, max_order)
            except VacuumError:
                mean = dist.mean
                fano_value, values = math.nan, np.full(len(specs), np.nan)
            value_errs = fano_err = mean_err = None
            if n_r >= 10:
                value_errs, fano_err, mean_err = _bootstrap_reconstructed(
                    padded_counts, dist.probs, idler_response, specs, max_order,
                    n_boot, rng)
            reconstructed = VariantStats(mean=mean, fano=fano_value, values=values,
                                         mean_err=mean_err, fano_err=fano_err,
                                         value_errs=value_errs)

        theory_stats = None
        if theory_joint is not None and c_s <= theory_T_s.c_max:
            cond = conditional_theory(theory_joint, theory_T_s, c_s)
            mean, fano_value, values = _stats_from_probs(cond.probs, specs, max_order)
            theory_stats = VariantStats(mean=mean, fano=fano_value, values=values)

        rows.append(ConditionalRow(c_s=c_s, n_r=n_r, low_stats=low_stats,
                                   photocount=photocount, reconstructed=reconstructed,
                                   theory=theory_stats, em_iterations=em_iterations,
                                   em_converged=em_converged))

    f_s = joint.counts.sum(axis=1) / joint.total
    return ConditionalReport(identifiers=specs, rows=tuple(rows), max_order=max_order,
                             n_boot=n_boot, seed=seed, f_s=f_s, f_s_theory=f_s_theory)
