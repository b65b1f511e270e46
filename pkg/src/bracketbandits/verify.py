"""Independent oracles for the combinatorial coverage bound and for
upper/lower hardness comparisons.

The coverage question: a size-k target set S of [m] is drawn from a known
distribution; an auditor picks a size-ell probe subset sigma.  The oracle
enumerates every probe exactly (big-integer rationals) and reports the best
achievable hit probability max_sigma P(sigma intersects S) next to the two
analytic bounds

    1 - C(m-k, ell)/C(m, ell)   and   1 - exp(-ell*k/m).

Under the uniform distribution every probe achieves the first bound exactly;
for ell > m-k every probe of a concentrated distribution hits with
certainty.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import combinations
from pathlib import Path

from .confidence import reg_log
from .instance import (
    BanditInstance,
    hardness_best,
    hardness_fdr,
    hardness_fdr_tilde,
    hardness_fwer,
    hardness_fwpd,
    hardness_low,
    hardness_pac,
    summarize,
)

ENUM_CAP = 14           # largest m for exhaustive subset enumeration
EXP_BOUND_TOL = 1e-12   # floating tolerance on the exponential bound


# ---------------------------------------------------------------------------
# coverage bound


@dataclass(frozen=True)
class CoverageCheck:
    """One (m, k, ell) coverage evaluation with both analytic bounds."""

    m: int
    k: int
    ell: int
    exact_best: Fraction      # max over probes of the exact hit probability
    formula_bound: Fraction   # 1 - C(m-k, ell)/C(m, ell)
    exp_bound: float          # 1 - exp(-ell*k/m)

    def violations(self, require_uniform_equality: bool = False) -> list[str]:
        """Empty list iff every claimed inequality holds."""
        where = f"(m={self.m}, k={self.k}, ell={self.ell})"
        out = []
        if not 0 <= self.exact_best <= 1:
            out.append(f"{where}: exact_best outside [0, 1]")
        if not 0 <= self.formula_bound <= 1:
            out.append(f"{where}: formula_bound outside [0, 1]")
        if not -EXP_BOUND_TOL <= self.exp_bound <= 1 + EXP_BOUND_TOL:
            out.append(f"{where}: exp_bound outside [0, 1]")
        if self.exact_best < self.formula_bound:
            out.append(f"{where}: exact_best {self.exact_best} < "
                       f"formula_bound {self.formula_bound}")
        if float(self.formula_bound) < self.exp_bound - EXP_BOUND_TOL:
            out.append(f"{where}: formula_bound {float(self.formula_bound)} < "
                       f"exp bound {self.exp_bound}")
        if require_uniform_equality and self.exact_best != self.formula_bound:
            out.append(f"{where}: uniform exact_best {self.exact_best} != "
                       f"formula_bound {self.formula_bound}")
        return out


def _check_mkl(m: int, k: int, ell: int) -> None:
    if m > ENUM_CAP:
        raise ValueError(f"enumeration budget exceeded: m={m} > {ENUM_CAP}")
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    if not 1 <= ell <= m:
        raise ValueError(f"need 1 <= ell <= m, got ell={ell}, m={m}")


def _bounds(m: int, k: int, ell: int) -> tuple[Fraction, float]:
    formula = 1 - Fraction(math.comb(m - k, ell), math.comb(m, ell))
    expb = 1.0 - math.exp(-ell * k / m)
    return formula, expb


def _subset_mass(m: int, dist) -> list[Fraction]:
    """dist as Fraction mass per bitmask; validates support and total mass."""
    mass = [Fraction(0)] * (1 << m)
    total = Fraction(0)
    for subset, p in dist.items():
        if isinstance(subset, int):
            bm = subset
        else:
            bm = 0
            for e in subset:
                if not 0 <= e < m:
                    raise ValueError(f"subset element {e} outside [0, {m})")
                bm |= 1 << e
        if not 0 <= bm < (1 << m):
            raise ValueError(f"bitmask {bm} outside [0, 2^{m})")
        p = Fraction(p)
        if p < 0:
            raise ValueError("negative probability")
        mass[bm] += p
        total += p
    if total != 1:
        raise ValueError(f"distribution sums to {total}, not 1")
    return mass


def _zeta(mass: list, m: int) -> list:
    """Subset-sum transform in place: out[T] = sum of mass over subsets of T."""
    f = list(mass)
    for b in range(m):
        bit = 1 << b
        for t in range(1 << m):
            if t & bit:
                f[t] += f[t ^ bit]
    return f


def coverage_check(m: int, k: int, ell: int, dist=None) -> CoverageCheck:
    """Exhaustively evaluate the best probe against a k-subset distribution.

    ``dist`` maps size-k subsets (iterables of elements or bitmasks) to
    probabilities; None means uniform.  Exact rational arithmetic throughout;
    every size-ell probe is considered and the best one reported.
    """
    _check_mkl(m, k, ell)
    full = (1 << m) - 1
    if dist is None:
        counts = [0] * (1 << m)
        for s in combinations(range(m), k):
            bm = 0
            for e in s:
                bm |= 1 << e
            counts[bm] = 1
        f = _zeta(counts, m)
        denom = math.comb(m, k)
        worst_miss = min(f[full ^ sigma_c] for sigma_c in _masks_of_size(m, ell))
        exact = 1 - Fraction(worst_miss, denom)
    else:
        for subset in dist:
            bc = subset.bit_count() if isinstance(subset, int) else len(set(subset))
            if bc != k:
                raise ValueError(f"support contains a size-{bc} subset, need k={k}")
        f = _zeta(_subset_mass(m, dist), m)
        worst_miss = min(f[full ^ sigma_c] for sigma_c in _masks_of_size(m, ell))
        exact = 1 - worst_miss
    formula, expb = _bounds(m, k, ell)
    return CoverageCheck(m, k, ell, exact, formula, expb)


def _masks_of_size(m: int, ell: int):
    for s in combinations(range(m), ell):
        bm = 0
        for e in s:
            bm |= 1 << e
        yield bm


def coverage_grid(m_max: int = 12) -> list[CoverageCheck]:
    """Every (m <= m_max, k <= m, ell <= m) under the uniform distribution.

    Shares one subset-sum transform per (m, k); row order is lexicographic in
    (m, k, ell).
    """
    if m_max > ENUM_CAP:
        raise ValueError(f"enumeration budget exceeded: m_max={m_max} > {ENUM_CAP}")
    out = []
    for m in range(1, m_max + 1):
        full = (1 << m) - 1
        by_size = [[] for _ in range(m + 1)]
        for t in range(1 << m):
            by_size[t.bit_count()].append(t)
        for k in range(1, m + 1):
            counts = [0] * (1 << m)
            for bm in by_size[k]:
                counts[bm] = 1
            f = _zeta(counts, m)
            denom = math.comb(m, k)
            for ell in range(1, m + 1):
                worst_miss = min(f[full ^ c] for c in by_size[ell])
                exact = 1 - Fraction(worst_miss, denom)
                formula, expb = _bounds(m, k, ell)
                out.append(CoverageCheck(m, k, ell, exact, formula, expb))
    return out


def grid_violations(checks: list[CoverageCheck], uniform: bool = True) -> list[str]:
    out = []
    for c in checks:
        out.extend(c.violations(require_uniform_equality=uniform))
    return out


def corrupt_one(checks: list[CoverageCheck]) -> list[CoverageCheck]:
    """Test hook: damage one middle entry so the checker must flag it."""
    if not checks:
        return checks
    i = len(checks) // 2
    bad = replace(checks[i], exact_best=checks[i].formula_bound - Fraction(1, 7) - 1)
    return checks[:i] + [bad] + checks[i + 1 :]


def write_coverage_report(checks: list[CoverageCheck], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "k", "ell", "exact_best", "formula_bound", "exp_bound",
                    "uniform_tight"])
        for c in checks:
            w.writerow([c.m, c.k, c.ell, str(c.exact_best), str(c.formula_bound),
                        repr(c.exp_bound), int(c.exact_best == c.formula_bound)])


# ---------------------------------------------------------------------------
# hardness gap report


@dataclass(frozen=True)
class GapRow:
    """One upper functional against the floored lower bound.

    ratio uses denom = max(lower bound clamped at 0, eps^-2); raw_ratio is
    None whenever the unfloored lower bound is <= 0 (flagged undefined).
    """

    functional: str
    k: int
    j: int | None
    upper: float
    h_low: float
    denom: float
    ratio: float
    raw_ratio: float | None
    envelope: float
    ratio_over_envelope: float


@dataclass
class GapReport:
    label: str
    n: int
    delta: float
    eps: float
    mu0: float
    k: int
    m_eps: int
    m_thr: int
    rows: list[GapRow] = field(default_factory=list)

    def row(self, functional: str, j=None) -> GapRow:
        for r in self.rows:
            if r.functional == functional and r.j == j:
                return r
        raise KeyError((functional, j))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["functional", "k", "j", "upper", "h_low", "denom",
                        "ratio", "raw_ratio", "envelope", "ratio_over_envelope"])
            for r in self.rows:
                w.writerow([r.functional, r.k, "" if r.j is None else r.j,
                            repr(r.upper), repr(r.h_low), repr(r.denom),
                            repr(r.ratio),
                            "undefined" if r.raw_ratio is None else repr(r.raw_ratio),
                            repr(r.envelope), repr(r.ratio_over_envelope)])


def bound_gap_report(instance: BanditInstance, eps: float, mu0: float, k: int,
                     delta: float) -> GapReport:
    """Upper/lower ratios for every applicable functional at one k.

    For each j-indexed family the j-minimizer and the j = (set size) endpoint
    are both reported; the log envelope reg_log(n*k/delta) normalizes the
    ratios for the matching-up-to-logs claim.
    """
    summary = summarize(instance, eps=eps, mu0=mu0)
    m_eps, m_thr = summary.m_eps, summary.m_thr
    if m_thr == 0:
        raise ValueError("no above-threshold arms (m_thr = 0)")
    if not 1 <= k <= min(m_eps, m_thr):
        raise ValueError(f"need 1 <= k <= min(m_eps={m_eps}, m_thr={m_thr}), got k={k}")
    h_low = hardness_low(summary, k)
    denom = max(h_low, 0.0, 1.0 / (eps * eps))
    envelope = reg_log(instance.n * k / delta)
    report = GapReport(instance.label, instance.n, delta, eps, mu0, k,
                       m_eps, m_thr)

    def add(name, j, upper):
        raw = upper / h_low if h_low > 0 else None
        ratio = upper / denom
        report.rows.append(GapRow(name, k, j, upper, h_low, denom, ratio, raw,
                                  envelope, ratio / envelope))

    best_vals = {j: hardness_best(summary, delta, j) for j in range(1, m_eps + 1)}
    jb = min(best_vals, key=best_vals.get)
    add("best", jb, best_vals[jb])
    if jb != m_eps:
        add("best", m_eps, best_vals[m_eps])
    js = range(k, m_thr + 1)
    for name, fn in (("fdr", hardness_fdr), ("fdr_tilde", hardness_fdr_tilde),
                     ("fwer", hardness_fwer)):
        vals = {j: fn(summary, delta, k, j) for j in js}
        jm = min(vals, key=vals.get)
        add(name, jm, vals[jm])
        if jm != m_thr:
            add(name, m_thr, vals[m_thr])
    add("fwpd", None, hardness_fwpd(summary, delta, k))
    k1, km = hardness_pac(summary, delta)
    add("pac_k1", None, k1)
    add("pac_km", None, km)
    return report
