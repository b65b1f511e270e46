"""Bandit instances, their summaries, and sample-complexity functionals.

An instance is a fixed finite set of reward distributions ("arms").  The
summary object orders arms by mean and exposes the gap structure that the
hardness functionals are written in terms of: for ranks i, j (1-indexed,
descending means) the gap is mean_i - mean_j, and gap-to-threshold is
mean_j - mu0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .confidence import reg_log

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"

_INSTANCE_FORMAT = "bandit-instance/1"


@dataclass(frozen=True)
class ArmDistribution:
    """One arm: kind 'gaussian' (mean, variance) or 'bernoulli' (mean = success prob)."""

    kind: str
    mean: float
    variance: float = 1.0

    def __post_init__(self) -> None:
        if self.kind == GAUSSIAN:
            if not (self.variance > 0.0) or not math.isfinite(self.variance):
                raise ValueError(f"gaussian arm needs variance > 0, got {self.variance}")
            if not math.isfinite(self.mean):
                raise ValueError(f"gaussian arm mean must be finite, got {self.mean}")
        elif self.kind == BERNOULLI:
            if not (0.0 <= self.mean <= 1.0):
                raise ValueError(f"bernoulli arm needs p in [0, 1], got {self.mean}")
            object.__setattr__(self, "variance", self.mean * (1.0 - self.mean))
        else:
            raise ValueError(f"unknown arm kind {self.kind!r}")


@dataclass(frozen=True)
class BanditInstance:
    """A fixed arm set plus the thresholds the experiments are run against."""

    arms: tuple[ArmDistribution, ...]
    label: str = ""
    mu0: float | None = None
    epsilon: float | None = None

    def __post_init__(self) -> None:
        if len(self.arms) == 0:
            raise ValueError("instance needs at least one arm")
        if self.epsilon is not None and not (self.epsilon > 0.0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def n(self) -> int:
        return len(self.arms)

    def means(self) -> np.ndarray:
        return np.array([a.mean for a in self.arms], dtype=np.float64)


def gaussian_instance(
    means, variance: float = 1.0, label: str = "", mu0=None, epsilon=None
) -> BanditInstance:
    arms = tuple(ArmDistribution(GAUSSIAN, float(m), variance) for m in means)
    return BanditInstance(arms, label=label, mu0=mu0, epsilon=epsilon)


def bernoulli_instance(ps, label: str = "", mu0=None, epsilon=None) -> BanditInstance:
    arms = tuple(ArmDistribution(BERNOULLI, float(p)) for p in ps)
    return BanditInstance(arms, label=label, mu0=mu0, epsilon=epsilon)


def two_spike(
    n: int,
    m: int,
    mu0: float = 0.0,
    eps: float = 0.5,
    kind: str = GAUSSIAN,
    seed: int = 0,
    variance: float = 1.0,
) -> BanditInstance:
    """n arms, exactly m at mu0 + eps and n - m at mu0, positions shuffled by seed."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if not (eps > 0.0):
        raise ValueError(f"eps must be positive, got {eps}")
    if kind == BERNOULLI and not (0.0 <= mu0 and mu0 + eps <= 1.0):
        raise ValueError(f"bernoulli two-spike needs [mu0, mu0+eps] within [0,1]")
    means = np.full(n, mu0, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x75F0]))
    spikes = rng.permutation(n)[:m]
    means[spikes] = mu0 + eps
    label = f"two-spike(n={n},m={m},mu0={mu0},eps={eps},kind={kind},seed={seed})"
    if kind == GAUSSIAN:
        arms = tuple(ArmDistribution(GAUSSIAN, float(v), variance) for v in means)
    else:
        arms = tuple(ArmDistribution(BERNOULLI, float(v)) for v in means)
    return BanditInstance(arms, label=label, mu0=mu0, epsilon=eps)


def sample_arm(instance: BanditInstance, arm: int, rng: np.random.Generator) -> float:
    """One reward draw from arm ``arm``; identical seeds give identical sequences."""
    a = instance.arms[arm]
    if a.kind == GAUSSIAN:
        return float(a.mean + math.sqrt(a.variance) * rng.standard_normal())
    return 1.0 if rng.random() < a.mean else 0.0


def arm_arrays(instance: BanditInstance):
    """(kind codes, means, gaussian sds) as flat arrays for the simulation kernels.

    kind code 0 = gaussian (reward = mean + sd * z), 1 = bernoulli
    (reward = 1{u < mean}).
    """
    kinds = np.array([0 if a.kind == GAUSSIAN else 1 for a in instance.arms], dtype=np.uint8)
    means = instance.means()
    sds = np.array(
        [math.sqrt(a.variance) if a.kind == GAUSSIAN else 0.0 for a in instance.arms],
        dtype=np.float64,
    )
    return kinds, means, sds


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class InstanceSummary:
    """Arms ordered by descending mean with the derived counts.

    m_eps: number of eps-good arms, |{i : mean_i > best - eps}| (strict).
    m_thr: number of above-threshold arms, |{i : mean_i > mu0}| (strict; arms
        exactly at mu0 count as nulls).
    """

    n: int
    sorted_means: np.ndarray  # descending
    order: np.ndarray  # rank -> original index (stable on ties)
    rank_of: np.ndarray  # original index -> rank
    eps: float | None = None
    mu0: float | None = None
    m_eps: int | None = None
    m_thr: int | None = None

    def gap(self, i: int, j: int) -> float:
        """mean_i - mean_j over 1-indexed ranks (descending order)."""
        if not (1 <= i <= self.n and 1 <= j <= self.n):
            raise ValueError(f"ranks must lie in [1, {self.n}], got ({i}, {j})")
        return float(self.sorted_means[i - 1] - self.sorted_means[j - 1])

    def gap_to_threshold(self, j: int) -> float:
        """mean_j - mu0 for 1-indexed rank j."""
        if self.mu0 is None:
            raise ValueError("summary has no threshold mu0")
        if not 1 <= j <= self.n:
            raise ValueError(f"rank must lie in [1, {self.n}], got {j}")
        return float(self.sorted_means[j - 1] - self.mu0)


def summarize(instance: BanditInstance, eps=None, mu0=None) -> InstanceSummary:
    """Order arms by mean and count the eps-good / above-threshold sets.

    eps and mu0 fall back to the values stored on the instance.
    """
    eps = instance.epsilon if eps is None else eps
    mu0 = instance.mu0 if mu0 is None else mu0
    if eps is not None and not (eps > 0.0):
        raise ValueError(f"eps must be positive, got {eps}")
    means = instance.means()
    order = np.argsort(-means, kind="stable")
    sorted_means = means[order]
    rank_of = np.empty(instance.n, dtype=np.int64)
    rank_of[order] = np.arange(instance.n)
    m_eps = None
    if eps is not None:
        m_eps = int(np.count_nonzero(means > sorted_means[0] - eps))
    m_thr = None
    if mu0 is not None:
        m_thr = int(np.count_nonzero(means > mu0))
    return InstanceSummary(
        n=instance.n,
        sorted_means=sorted_means,
        order=order,
        rank_of=rank_of,
        eps=eps,
        mu0=mu0,
        m_eps=m_eps,
        m_thr=m_thr,
    )


# ---------------------------------------------------------------------------
# hardness functionals (all logs regularized; gaps in descending-rank order)


def _need(summary: InstanceSummary, *, eps=False, mu0=False) -> None:
    if eps and summary.eps is None:
        raise ValueError("summary must carry eps for this functional")
    if mu0 and summary.mu0 is None:
        raise ValueError("summary must carry mu0 for this functional")


def _inv_sq(gap: float) -> float:
    """gap^-2 with +inf gaps mapping to 0 and zero gaps to +inf."""
    if gap == math.inf:
        return 0.0
    if gap <= 0.0:
        return math.inf
    return 1.0 / (gap * gap)


def _mean_at(summary: InstanceSummary, rank: int) -> float:
    """Mean at 1-indexed rank; rank n+1 is -inf (no arm below the last)."""
    if rank > summary.n:
        return -math.inf
    return float(summary.sorted_means[rank - 1])


def hardness_low(summary: InstanceSummary, k: int) -> float:
    """Lower-bound functional for unverifiable k-of-top-m identification.

    (1/64) * ( -(mean_1 - mean_{m+1})^-2
               + (k/m) * sum_{i=m+1}^n (mean_1 - mean_i)^-2 ),
    m = m_eps.  Can be <= 0 when the top gap dominates; callers clamp.  With
    m = n the bound is vacuous and evaluates to 0.
    """
    _need(summary, eps=True)
    m = summary.m_eps
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m_eps={m}, got k={k}")
    mu1 = _mean_at(summary, 1)
    head = -_inv_sq(mu1 - _mean_at(summary, m + 1))
    tail = sum(_inv_sq(mu1 - _mean_at(summary, i)) for i in range(m + 1, summary.n + 1))
    return (head + (k / m) * tail) / 64.0


def hardness_best(summary: InstanceSummary, delta: float, j: int) -> float:
    """Upper-bound functional for eps-good identification through rank j.

    (1/j) * ( { sum_{i<=j} gap(i, m+1)^-2
                + sum_{j<i<=m} max(gap(j,i), gap(i,m+1))^-2 } * reg_log(n/(j delta))
              + sum_{i>m} gap(j,i)^-2 * reg_log(1/delta) ),  m = m_eps.
    """
    _need(summary, eps=True)
    _check_delta(delta)
    m = summary.m_eps
    if not 1 <= j <= m:
        raise ValueError(f"need 1 <= j <= m_eps={m}, got j={j}")
    n = summary.n
    mu_next = _mean_at(summary, m + 1)
    top = sum(_inv_sq(_mean_at(summary, i) - mu_next) for i in range(1, j + 1))
    mu_j = _mean_at(summary, j)
    mid = sum(
        _inv_sq(max(mu_j - _mean_at(summary, i), _mean_at(summary, i) - mu_next))
        for i in range(j + 1, m + 1)
    )
    bottom = sum(_inv_sq(mu_j - _mean_at(summary, i)) for i in range(m + 1, n + 1))
    return ((top + mid) * reg_log(n / (j * delta)) + bottom * reg_log(1.0 / delta)) / j


def hardness_fdr(summary: InstanceSummary, delta: float, k: int, j: int) -> float:
    """Upper-bound functional for k discoveries with FDR control, via rank j.

    (k/j) * ( sum_{i<=m} (mean_{max(i,j)} - mu0)^-2 * reg_log(n k/(j delta))
              + sum_{i>m} gap(j,i)^-2 * reg_log(1/delta) ),  m = m_thr.
    Infinite when mean_j == mu0 (zero gap); reports flag it.
    """
    _need(summary, mu0=True)
    _check_delta(delta)
    m = summary.m_thr
    _check_kj(k, j, m)
    n = summary.n
    mu0 = summary.mu0
    top = sum(_inv_sq(_mean_at(summary, max(i, j)) - mu0) for i in range(1, m + 1))
    mu_j = _mean_at(summary, j)
    bottom = sum(_inv_sq(mu_j - _mean_at(summary, i)) for i in range(m + 1, n + 1))
    return k * (top * reg_log(n * k / (j * delta)) + bottom * reg_log(1.0 / delta)) / j


def hardness_fdr_tilde(summary: InstanceSummary, delta: float, k: int, j: int) -> float:
    """Coarse FDR functional: (n/j) * k * (mean_j - mu0)^-2 * reg_log(1/delta)."""
    _need(summary, mu0=True)
    _check_delta(delta)
    _check_kj(k, j, summary.m_thr)
    return summary.n * k * _inv_sq(summary.gap_to_threshold(j)) * reg_log(1.0 / delta) / j


def hardness_fwer(summary: InstanceSummary, delta: float, k: int, j: int) -> float:
    """Upper-bound functional for k discoveries with FWER control, via rank j.

    Like ``hardness_fdr`` but with the doubly-logarithmic per-arm terms:
    top log factor reg_log((n k/(j delta)) * reg_log(gap^-2)), bottom factor
    reg_log(reg_log(gap^-2)/delta).
    """
    _need(summary, mu0=True)
    _check_delta(delta)
    m = summary.m_thr
    _check_kj(k, j, m)
    n = summary.n
    mu0 = summary.mu0
    top = 0.0
    for i in range(1, m + 1):
        g2 = _inv_sq(_mean_at(summary, max(i, j)) - mu0)
        if g2 == math.inf:
            return math.inf
        top += g2 * reg_log((n * k / (j * delta)) * reg_log(g2))
    mu_j = _mean_at(summary, j)
    bottom = 0.0
    for i in range(m + 1, n + 1):
        g2 = _inv_sq(mu_j - _mean_at(summary, i))
        if g2 == math.inf:
            return math.inf
        if g2 > 0.0:
            bottom += g2 * reg_log(reg_log(g2) / delta)
    return k * (top + bottom) / j


def hardness_fwpd(summary: InstanceSummary, delta: float, k: int) -> float:
    """Diagnostic functional for FWER + few-pull detection at k discoveries.

    With q = (n/m) * k, Delta = min above-threshold gap to mu0:
    (q - k) * Delta^-2 * reg_log(max(k, llog) * reg_log(Delta^-2) * reg_log(q)/delta)
    + k * Delta^-2 * reg_log(max(q - (1 - 2 delta (1+4 delta)) k, llog)
                             * reg_log(Delta^-2) * reg_log(q)/delta),
    llog = reg_log(reg_log(q/delta)).
    """
    _need(summary, mu0=True)
    _check_delta(delta)
    m = summary.m_thr
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m_thr={m}, got k={k}")
    gap = summary.gap_to_threshold(m)
    d2 = _inv_sq(gap)
    if d2 == math.inf:
        return math.inf
    q = summary.n * k / m
    llog = reg_log(reg_log(q / delta))
    lq = reg_log(q)
    ld = reg_log(d2) if d2 > 0 else 1.0
    first = (q - k) * d2 * reg_log(max(k, llog) * ld * lq / delta)
    slack = q - (1.0 - 2.0 * delta * (1.0 + 4.0 * delta)) * k
    second = k * d2 * reg_log(max(slack, llog) * ld * lq / delta)
    return first + second


def hardness_pac(summary: InstanceSummary, delta: float) -> tuple[float, float]:
    """Classical fixed-confidence PAC functionals at k=1 and k=m (m = m_eps).

    k=1: 0.5 * reg_log(1/(2.4 delta)) * ((m-1) eps^-2 + sum_{i>m} (mean_1 - mean_i)^-2)
    k=m: 2 * reg_log(1/(2.4 delta)) * (sum_{i<=m} (mean_i - mean_{m+1})^-2
                                       + sum_{i>m} (mean_m - mean_i)^-2)
    """
    _need(summary, eps=True)
    _check_delta(delta)
    m = summary.m_eps
    n = summary.n
    eps = summary.eps
    lg = reg_log(1.0 / (2.4 * delta))
    mu1 = _mean_at(summary, 1)
    k1 = 0.5 * lg * (
        (m - 1) / (eps * eps)
        + sum(_inv_sq(mu1 - _mean_at(summary, i)) for i in range(m + 1, n + 1))
    )
    mu_next = _mean_at(summary, m + 1)
    mu_m = _mean_at(summary, m)
    km = 2.0 * lg * (
        sum(_inv_sq(_mean_at(summary, i) - mu_next) for i in range(1, m + 1))
        + sum(_inv_sq(mu_m - _mean_at(summary, i)) for i in range(m + 1, n + 1))
    )
    return k1, km


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def _check_kj(k: int, j: int, m: int | None) -> None:
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m_thr={m}, got k={k}")
    if not k <= j <= m:
        raise ValueError(f"need k <= j <= m_thr={m}, got j={j}")


# ---------------------------------------------------------------------------
# report


@dataclass
class HardnessReport:
    """All functionals of one instance at one delta, with range flags.

    Minimizer entries are (argmin j, value) pairs.  ``flags`` records whether
    delta sits inside each guarantee's stated range plus degeneracy markers
    (vacuous eps-good set, infinite threshold gaps).
    """

    label: str
    n: int
    delta: float
    eps: float | None
    mu0: float | None
    m_eps: int | None
    m_thr: int | None
    ks: tuple[int, ...]
    flags: dict = field(default_factory=dict)
    h_low: dict = field(default_factory=dict)  # k -> raw value
    h_low_clamped: dict = field(default_factory=dict)  # k -> max(0, value)
    h_best: dict = field(default_factory=dict)  # j -> value
    h_best_min: tuple | None = None
    h_fdr: dict = field(default_factory=dict)  # k -> {j: value}
    h_fdr_min: dict = field(default_factory=dict)  # k -> (j, value)
    h_fdr_tilde: dict = field(default_factory=dict)
    h_fdr_tilde_min: dict = field(default_factory=dict)
    h_fwer: dict = field(default_factory=dict)
    h_fwer_min: dict = field(default_factory=dict)
    h_fwpd: dict = field(default_factory=dict)  # k -> value
    pac_k1: float | None = None
    pac_km: float | None = None

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, dict):
                return {str(k): clean(x) for k, x in v.items()}
            if isinstance(v, (tuple, list)):
                return [clean(x) for x in v]
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, (np.floating,)):
                return float(v)
            return v

        payload = {k: clean(v) for k, v in self.__dict__.items()}
        payload["format"] = "hardness-report/1"
        return json.dumps(payload, indent=2, sort_keys=True)


def _argmin_over(values: dict) -> tuple | None:
    best = None
    for j, v in values.items():
        if best is None or v < best[1]:
            best = (j, v)
    return best


def hardness_report(
    instance: BanditInstance,
    delta: float,
    eps=None,
    mu0=None,
    ks=None,
) -> HardnessReport:
    """Evaluate every applicable functional; flags mark out-of-range deltas."""
    _check_delta(delta)
    summary = summarize(instance, eps=eps, mu0=mu0)
    flags = {
        "delta_in_low_range": delta < 1.0 / 16.0,
        "delta_in_upper_range": delta <= 0.025,
        "delta_in_fwpd_range": delta < 1.0 / 600.0,
        "delta_in_pac_range": 2.4 * delta < 1.0,
    }
    report = HardnessReport(
        label=instance.label,
        n=instance.n,
        delta=delta,
        eps=summary.eps,
        mu0=summary.mu0,
        m_eps=summary.m_eps,
        m_thr=summary.m_thr,
        ks=(),
        flags=flags,
    )
    if summary.eps is not None:
        m = summary.m_eps
        flags["vacuous_eps_good"] = m == summary.n
        report.h_best = {j: hardness_best(summary, delta, j) for j in range(1, m + 1)}
        report.h_best_min = _argmin_over(report.h_best)
        k1, km = hardness_pac(summary, delta)
        report.pac_k1, report.pac_km = k1, km
        if ks is None:
            ks = sorted({1, m})
        report.h_low = {k: hardness_low(summary, k) for k in ks if k <= m}
        report.h_low_clamped = {k: max(0.0, v) for k, v in report.h_low.items()}
    if summary.mu0 is not None:
        m = summary.m_thr
        if m == 0:
            flags["empty_discovery_set"] = True
        else:
            if ks is None:
                ks = sorted({1, m})
            ks_thr = [k for k in ks if 1 <= k <= m]
            report.ks = tuple(ks_thr)
            flags["infinite_threshold_gap"] = any(
                summary.gap_to_threshold(j) <= 0.0 for j in range(1, m + 1)
            )
            for k in ks_thr:
                js = range(k, m + 1)
                report.h_fdr[k] = {j: hardness_fdr(summary, delta, k, j) for j in js}
                report.h_fdr_min[k] = _argmin_over(report.h_fdr[k])
                report.h_fdr_tilde[k] = {
                    j: hardness_fdr_tilde(summary, delta, k, j) for j in js
                }
                report.h_fdr_tilde_min[k] = _argmin_over(report.h_fdr_tilde[k])
                report.h_fwer[k] = {j: hardness_fwer(summary, delta, k, j) for j in js}
                report.h_fwer_min[k] = _argmin_over(report.h_fwer[k])
                report.h_fwpd[k] = hardness_fwpd(summary, delta, k)
    if ks is not None:
        report.ks = tuple(ks)
    return report


# ---------------------------------------------------------------------------
# instance files


def instance_to_dict(instance: BanditInstance) -> dict:
    """Plain-JSON representation (lossless round-trip)."""
    arms = []
    for a in instance.arms:
        if a.kind == GAUSSIAN:
            arms.append({"kind": GAUSSIAN, "mean": a.mean, "variance": a.variance})
        else:
            arms.append({"kind": BERNOULLI, "p": a.mean})
    return {
        "format": _INSTANCE_FORMAT,
        "label": instance.label,
        "mu0": instance.mu0,
        "epsilon": instance.epsilon,
        "arms": arms,
    }


def instance_from_dict(doc: dict, where: str = "instance") -> BanditInstance:
    if not isinstance(doc, dict) or doc.get("format") != _INSTANCE_FORMAT:
        raise ValueError(f"{where}: expected format tag {_INSTANCE_FORMAT!r}")
    arms = []
    for rec in doc["arms"]:
        kind = rec.get("kind")
        if kind == GAUSSIAN:
            arms.append(ArmDistribution(GAUSSIAN, rec["mean"], rec.get("variance", 1.0)))
        elif kind == BERNOULLI:
            arms.append(ArmDistribution(BERNOULLI, rec["p"]))
        else:
            raise ValueError(f"{where}: unknown arm kind {kind!r}")
    return BanditInstance(
        tuple(arms),
        label=doc.get("label", ""),
        mu0=doc.get("mu0"),
        epsilon=doc.get("epsilon"),
    )


def save_instance(instance: BanditInstance, path) -> None:
    """Write the documented JSON instance format (lossless round-trip)."""
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=1))


def load_instance(path) -> BanditInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    return instance_from_dict(doc, where=str(path))
