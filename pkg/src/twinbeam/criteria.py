"""Nonclassicality criteria from intensity moments.

Two families are provided: principal minors of the moment matrix
M[j, j'] = <:n^(j+j'):>, and dominance-order (majorization) identifiers that
compare two products of factorial moments.  A negative value of either kind
certifies a nonclassical field.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .distributions import MomentSet
from .errors import MomentOrderError, VacuumError

Partition = tuple[int, ...]


def as_partition(parts) -> Partition:
    """Canonical partition: a nonincreasing tuple of positive integers."""
    t = tuple(int(p) for p in parts)
    if not t:
        raise ValueError("partition must have at least one part")
    if any(p < 1 for p in t):
        raise ValueError(f"partition parts must be >= 1, got {t}")
    if any(t[i] < t[i + 1] for i in range(len(t) - 1)):
        raise ValueError(f"partition parts must be nonincreasing, got {t}")
    return t


def majorizes(a, b, strict: bool = False) -> bool:
    """Dominance order: equal sums and every prefix sum of a >= that of b.

    The shorter partition is padded with zeros.  With ``strict=True`` equal
    partitions compare False.
    """
    a = as_partition(a)
    b = as_partition(b)
    if sum(a) != sum(b):
        return False
    if strict and a == b:
        return False
    width = max(len(a), len(b))
    pa = a + (0,) * (width - len(a))
    pb = b + (0,) * (width - len(b))
    run_a = run_b = 0
    for x, y in zip(pa, pb):
        run_a += x
        run_b += y
        if run_a < run_b:
            return False
    return True


def _sub_multisets(parts: Partition):
    """Distinct nonempty proper sub-multisets with their complements."""
    seen = set()
    idx = range(len(parts))
    for r in range(1, len(parts)):
        for pick in combinations(idx, r):
            sub = tuple(sorted((parts[i] for i in pick), reverse=True))
            if sub in seen:
                continue
            seen.add(sub)
            rest = list(parts)
            for i in sorted(pick, reverse=True):
                del rest[i]
            yield sub, tuple(rest)


def is_irreducible(lam, mu) -> bool:
    """True unless (lam, mu) splits into two disjoint dominance-ordered sub-pairs.

    A reducible pair factors as a product of two smaller nonnegative
    differences, so its negativity is already implied by a component.
    """
    lam = as_partition(lam)
    mu = as_partition(mu)
    for lam1, lam2 in _sub_multisets(lam):
        target = sum(lam1)
        for mu1, mu2 in _sub_multisets(mu):
            if sum(mu1) != target:
                continue
            if majorizes(lam1, mu1) and majorizes(lam2, mu2):
                return False
    return True


@dataclass(frozen=True)
class IdentifierSpec:
    """A dominance-order witness: moment products over lam minus those over mu.

    Requires equal sums, strict majorization of mu by lam, disjoint parts and
    irreducibility; the normalized value is negative only for nonclassical
    fields.
    """

    lam: Partition
    mu: Partition

    def __post_init__(self):
        lam = as_partition(self.lam)
        mu = as_partition(self.mu)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        if sum(lam) != sum(mu):
            raise ValueError(f"sums differ: {lam} vs {mu}")
        if not majorizes(lam, mu, strict=True):
            raise ValueError(f"{lam} does not strictly majorize {mu}")
        if _share_part(lam, mu):
            raise ValueError(f"{lam} and {mu} share a common part")
        if not is_irreducible(lam, mu):
            raise ValueError(f"({lam}, {mu}) is reducible")

    @property
    def order(self) -> int:
        return sum(self.lam)

    @property
    def name(self) -> str:
        width = max(len(self.lam), len(self.mu))
        lam = self.lam + (0,) * (width - len(self.lam))
        mu = self.mu + (0,) * (width - len(self.mu))
        return "R_{%s}^{%s}" % (",".join(map(str, mu)), ",".join(map(str, lam)))

    @property
    def definition(self) -> str:
        """Rendered formula with m[k] denoting the k-th normalized moment."""
        top = "*".join(f"m{p}" for p in self.lam)
        bottom = "*".join(f"m{p}" for p in self.mu)
        return f"({top} - {bottom})/m1^{self.order} < 0"

    @classmethod
    def from_name(cls, name: str) -> "IdentifierSpec":
        match = re.fullmatch(r"R_\{([0-9,]+)\}\^\{([0-9,]+)\}", name.strip())
        if match is None:
            raise ValueError(f"cannot parse identifier name {name!r}")
        mu = tuple(int(x) for x in match.group(1).split(",") if int(x) > 0)
        lam = tuple(int(x) for x in match.group(2).split(",") if int(x) > 0)
        return cls(lam=lam, mu=mu)


def _share_part(lam: Partition, mu: Partition) -> bool:
    return bool(set(lam) & set(mu))


@dataclass(frozen=True)
class IdentifierValue:
    """An evaluated identifier; negative values certify nonclassicality."""

    spec: IdentifierSpec
    value: float
    std_error: float | None = None
    nonclassical: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nonclassical", bool(self.value < 0))
        if self.std_error is not None and self.std_error < 0:
            raise ValueError("std_error must be nonnegative")


@lru_cache(maxsize=32)
def _partitions(total: int) -> tuple[Partition, ...]:
    """All partitions of ``total`` in descending lexicographic order."""
    result: list[Partition] = []

    def extend(remaining: int, cap: int, head: tuple):
        if remaining == 0:
            result.append(head)
            return
        for part in range(min(cap, remaining), 0, -1):
            extend(remaining - part, part, head + (part,))

    extend(total, total, ())
    return tuple(result)


def enumerate_identifiers(max_order: int) -> list[IdentifierSpec]:
    """All irreducible dominance-order witnesses with moment order 2..max_order.

    Pairs are emitted in ascending order, then descending lexicographic on the
    leading partition and on the subtracted partition, which is stable across
    runs and suitable for report diffs.
    """
    if max_order < 2:
        raise ValueError("max_order must be >= 2")
    specs: list[IdentifierSpec] = []
    for total in range(2, max_order + 1):
        parts = _partitions(total)
        for i, lam in enumerate(parts):
            for mu in parts[i + 1:]:
                if not majorizes(lam, mu, strict=True):
                    continue
                if _share_part(lam, mu):
                    continue
                if not is_irreducible(lam, mu):
                    continue
                specs.append(IdentifierSpec(lam=lam, mu=mu))
    return specs


def evaluate_identifier(spec: IdentifierSpec, m: MomentSet) -> IdentifierValue:
    """Normalized value prod(m_lam) / m1^S - prod(m_mu) / m1^S."""
    top_order = max(max(spec.lam), max(spec.mu))
    if top_order > m.max_order:
        raise MomentOrderError(
            f"{spec.name} needs moments up to order {top_order}, set holds {m.max_order}")
    m1 = m.moment(1)
    if m1 <= 0:
        raise VacuumError("identifiers are undefined for a field with zero mean")
    normalized = [m.moment(k) / m1 ** k for k in range(1, top_order + 1)]
    lead = float(np.prod([normalized[p - 1] for p in spec.lam]))
    sub = float(np.prod([normalized[p - 1] for p in spec.mu]))
    return IdentifierValue(spec=spec, value=lead - sub)


@dataclass(frozen=True)
class MomentMatrix:
    """Symmetric matrix of factorial moments over an index subset."""

    entries: np.ndarray
    index_set: tuple[int, ...]

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("entries must be square")
        if not np.allclose(e, e.T):
            raise ValueError("moment matrix must be symmetric")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "index_set", tuple(int(i) for i in self.index_set))

    def determinant(self) -> float:
        return float(np.linalg.det(self.entries))


def moment_matrix(m: MomentSet, index_set, normalized: bool = False) -> MomentMatrix:
    """Matrix with entries <:n^(j+j'):> over the given power indices (m_0 = 1)."""
    idx = tuple(int(i) for i in index_set)
    if any(i < 0 for i in idx):
        raise ValueError("indices must be nonnegative")
    if list(idx) != sorted(set(idx)):
        raise ValueError("index_set must be strictly ascending")
    if 2 * max(idx) > m.max_order:
        raise MomentOrderError(
            f"index set {idx} needs moments up to order {2 * max(idx)}, "
            f"set holds {m.max_order}")

    def entry(order: int) -> float:
        return 1.0 if order == 0 else m.moment(order)

    scale = m.moment(1) if normalized else 1.0
    if normalized and scale <= 0:
        raise VacuumError("normalization is undefined for a field with zero mean")
    size = len(idx)
    out = np.empty((size, size))
    for a in range(size):
        for b in range(size):
            order = idx[a] + idx[b]
            out[a, b] = entry(order) / (scale ** order if normalized else 1.0)
    return MomentMatrix(entries=out, index_set=idx)


@dataclass(frozen=True)
class MinorResult:
    index_set: tuple[int, ...]
    determinant: float
    nonclassical: bool


def minor_criteria(m: MomentSet, normalized: bool = False) -> list[MinorResult]:
    """Determinants of all principal minors reachable with moments up to order K.

    Index subsets {i_1 < ... < i_d} with d >= 2 and 2 i_d <= K are covered; a
    negative determinant flags a nonclassical field.
    """
    if m.max_order < 2:
        raise ValueError("minors need moments up to at least order 2")
    top = m.max_order // 2
    indices = range(top + 1)
    results = []
    for d in range(2, top + 2):
        for subset in combinations(indices, d):
            det = moment_matrix(m, subset, normalized=normalized).determinant()
            results.append(MinorResult(index_set=subset, determinant=det,
                                       nonclassical=bool(det < 0)))
    return results


def minor_to_majorization(k: int, l: int) -> IdentifierSpec:
    """Dominance-order witness carrying the sign of the 2x2 minor over powers (k, l).

    The minor determinant <:n^2k:><:n^2l:> - <:n^(k+l):>^2 equals the
    unnormalized identifier with leading parts (2l, 2k) and subtracted parts
    (k+l, k+l); zero parts are dropped.
    """
    if not 0 <= k < l:
        raise ValueError(f"need 0 <= k < l, got k={k}, l={l}")
    lam = tuple(p for p in (2 * l, 2 * k) if p > 0)
    mu = (k + l, k + l)
    return IdentifierSpec(lam=lam, mu=mu)
