"""Tests for instance construction, summaries, and hardness functionals.

The hardness oracles here are deliberate straight-line re-implementations
(independent loops over sorted means) frozen against the library versions.
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from bracketbandits.instance import (
    ArmDistribution,
    BanditInstance,
    bernoulli_instance,
    gaussian_instance,
    hardness_best,
    hardness_fdr,
    hardness_fdr_tilde,
    hardness_fwer,
    hardness_fwpd,
    hardness_low,
    hardness_pac,
    hardness_report,
    load_instance,
    sample_arm,
    save_instance,
    summarize,
    two_spike,
)


def _rlog(x: float) -> float:
    return max(math.log(x), 1.0)


# ---------------------------------------------------------------------------
# construction and summaries


def test_two_spike_multiset():
    inst = two_spike(4, 2, mu0=0.0, eps=1.0)
    assert sorted(inst.means().tolist()) == [0.0, 0.0, 1.0, 1.0]
    assert inst.mu0 == 0.0 and inst.epsilon == 1.0


def test_two_spike_positions_seeded():
    a = two_spike(50, 5, seed=3).means()
    b = two_spike(50, 5, seed=3).means()
    c = two_spike(50, 5, seed=4).means()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_two_spike_validation():
    with pytest.raises(ValueError):
        two_spike(4, 0)
    with pytest.raises(ValueError):
        two_spike(4, 5)
    with pytest.raises(ValueError):
        two_spike(4, 2, eps=0.0)
    with pytest.raises(ValueError):
        two_spike(4, 2, mu0=0.8, eps=0.5, kind="bernoulli")


def test_arm_validation():
    with pytest.raises(ValueError):
        ArmDistribution("gaussian", 0.0, variance=0.0)
    with pytest.raises(ValueError):
        ArmDistribution("bernoulli", 1.5)
    with pytest.raises(ValueError):
        ArmDistribution("poisson", 1.0)
    with pytest.raises(ValueError):
        BanditInstance(())


def test_summary_counts_and_strictness():
    # means 1.0, 0.5, 0.5, 0.0; eps = 0.5 counts only arms strictly above 0.5
    inst = gaussian_instance([0.5, 1.0, 0.0, 0.5], mu0=0.0, epsilon=0.5)
    s = summarize(inst)
    assert s.m_eps == 1
    assert s.m_thr == 3  # arms exactly at mu0 are nulls
    assert s.sorted_means.tolist() == [1.0, 0.5, 0.5, 0.0]
    # stable order: the two 0.5 arms keep original index order 0 then 3
    assert s.order.tolist() == [1, 0, 3, 2]
    assert np.array_equal(s.sorted_means[s.rank_of], inst.means())


def test_summary_m_eps_at_least_one():
    inst = gaussian_instance([0.3, 0.3, 0.3], epsilon=0.01)
    assert summarize(inst).m_eps == 3
    inst2 = gaussian_instance([1.0, 0.0], epsilon=1e-9)
    assert summarize(inst2).m_eps == 1


def test_two_spike_summary_matches_m():
    inst = two_spike(40, 7, mu0=0.2, eps=0.3)
    s = summarize(inst)
    assert s.m_eps == 7
    assert s.m_thr == 7


def test_gap_accessors():
    inst = gaussian_instance([2.0, 1.0, -1.0], mu0=0.5, epsilon=0.5)
    s = summarize(inst)
    assert s.gap(1, 3) == pytest.approx(3.0)
    assert s.gap(2, 2) == 0.0
    assert s.gap_to_threshold(2) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        s.gap(0, 1)
    with pytest.raises(ValueError):
        s.gap_to_threshold(4)


def test_sample_arm_deterministic():
    inst = two_spike(8, 2, kind="bernoulli", mu0=0.3, eps=0.4)
    draws1 = [sample_arm(inst, i % 8, np.random.default_rng(42)) for i in range(1)]
    r1 = np.random.default_rng(9)
    r2 = np.random.default_rng(9)
    seq1 = [sample_arm(inst, i % 8, r1) for i in range(100)]
    seq2 = [sample_arm(inst, i % 8, r2) for i in range(100)]
    assert seq1 == seq2
    assert set(seq1) <= {0.0, 1.0}
    assert draws1[0] in (0.0, 1.0)


# ---------------------------------------------------------------------------
# hardness: frozen straight-line oracles


def test_hardness_low_two_spike_vanishes():
    # n=4, m=2, eps=1, k=1: (1/64) * (-1 + (1/2) * 2 * 1) == 0
    s = summarize(two_spike(4, 2, mu0=0.0, eps=1.0))
    assert hardness_low(s, 1) == pytest.approx(0.0, abs=1e-15)


def test_hardness_low_two_spike_positive():
    # n=6, m=2, eps=1, k=2: (1/64) * (-1 + (2/2) * 4 * 1) == 3/64
    s = summarize(two_spike(6, 2, mu0=0.0, eps=1.0))
    assert hardness_low(s, 2) == pytest.approx(3.0 / 64.0, rel=1e-12)


def test_hardness_low_oracle_general():
    means = [0.9, 0.6, 0.55, 0.1, -0.2, -0.2]
    inst = gaussian_instance(means, epsilon=0.4)
    s = summarize(inst)
    m = s.m_eps
    assert m == 3
    srt = sorted(means, reverse=True)
    for k in (1, 2, 3):
        head = -((srt[0] - srt[m]) ** -2)
        tail = sum((srt[0] - srt[i]) ** -2 for i in range(m, len(means)))
        assert hardness_low(s, k) == pytest.approx((head + k / m * tail) / 64.0, rel=1e-9)


def test_hardness_best_two_spike_frozen():
    s = summarize(two_spike(100, 10, mu0=0.0, eps=0.5), eps=0.5)
    got = hardness_best(s, 0.05, 10)
    expect = (10 * 4.0 * _rlog(200.0) + 90 * 4.0 * _rlog(20.0)) / 10.0
    assert got == pytest.approx(expect, rel=1e-12)
    assert got == pytest.approx(129.03963131413583, rel=1e-10)


def test_hardness_best_minimizer_is_m_on_two_spike():
    s = summarize(two_spike(100, 10, mu0=0.0, eps=0.5))
    vals = {j: hardness_best(s, 0.05, j) for j in range(1, 11)}
    assert min(vals, key=vals.get) == 10


def test_hardness_best_single_good_collapse():
    n, eps, delta = 30, 0.5, 0.05
    s = summarize(two_spike(n, 1, mu0=0.0, eps=eps))
    got = hardness_best(s, delta, 1)
    expect = eps**-2 * _rlog(n / delta) + (n - 1) * eps**-2 * _rlog(1 / delta)
    assert got == pytest.approx(expect, rel=1e-12)


def test_hardness_best_oracle_general():
    means = [1.2, 1.0, 0.8, 0.75, 0.1, 0.0, -0.3]
    inst = gaussian_instance(means, epsilon=0.5)
    s = summarize(inst)
    n, m, delta = len(means), s.m_eps, 0.02
    assert m == 4
    srt = sorted(means, reverse=True) + [-math.inf]
    for j in range(1, m + 1):
        top = sum((srt[i - 1] - srt[m]) ** -2 for i in range(1, j + 1))
        mid = sum(
            max(srt[j - 1] - srt[i - 1], srt[i - 1] - srt[m]) ** -2
            for i in range(j + 1, m + 1)
        )
        bot = sum((srt[j - 1] - srt[i - 1]) ** -2 for i in range(m + 1, n + 1))
        expect = ((top + mid) * _rlog(n / (j * delta)) + bot * _rlog(1 / delta)) / j
        assert hardness_best(s, delta, j) == pytest.approx(expect, rel=1e-9)


def test_hardness_fdr_tilde_frozen():
    # (n/j) k Delta^-2 reg_log(1/delta) = 10 * 5 * 4 * ln 20 = 200 ln 20
    s = summarize(two_spike(100, 10, mu0=0.0, eps=0.5))
    got = hardness_fdr_tilde(s, 0.05, 5, 10)
    assert got == pytest.approx(200.0 * _rlog(20.0), rel=1e-12)
    assert got == pytest.approx(599.1464547107982, rel=1e-10)


def test_hardness_fdr_oracle_general():
    means = [1.0, 0.9, 0.6, 0.2, 0.0, -0.5]
    inst = gaussian_instance(means, mu0=0.1, epsilon=0.5)
    s = summarize(inst)
    n, m, delta = len(means), s.m_thr, 0.05
    assert m == 4
    srt = sorted(means, reverse=True)
    mu0 = 0.1
    for k in (1, 2, 4):
        for j in range(k, m + 1):
            top = sum((srt[max(i, j) - 1] - mu0) ** -2 for i in range(1, m + 1))
            bot = sum((srt[j - 1] - srt[i - 1]) ** -2 for i in range(m + 1, n + 1))
            expect = k / j * (top * _rlog(n * k / (j * delta)) + bot * _rlog(1 / delta))
            assert hardness_fdr(s, delta, k, j) == pytest.approx(expect, rel=1e-9)


def test_hardness_fdr_infinite_at_threshold():
    inst = gaussian_instance([0.5, 0.5, 0.0], mu0=0.5 - 1e-17, epsilon=0.5)
    # mean_j - mu0 == 0 in double precision -> infinite functional
    s = summarize(inst, mu0=0.5)
    assert s.m_thr == 0  # arms exactly at mu0 are nulls; no H1 arms at all
    inst2 = gaussian_instance([0.5, 0.25, 0.0], mu0=0.25)
    s2 = summarize(inst2)
    assert s2.m_thr == 1
    assert math.isfinite(hardness_fdr(s2, 0.05, 1, 1))


def test_hardness_fwer_dominates_fdr():
    rng = np.random.default_rng(5)
    for _ in range(10):
        means = rng.normal(0.0, 1.0, size=12)
        mu0 = float(np.quantile(means, 0.4))
        inst = gaussian_instance(means, mu0=mu0)
        s = summarize(inst)
        m = s.m_thr
        if m < 1:
            continue
        for k in {1, m}:
            for j in range(k, m + 1):
                assert hardness_fwer(s, 0.05, k, j) >= hardness_fdr(s, 0.05, k, j) - 1e-12


def test_hardness_fwer_oracle_two_spike():
    n, m, k, delta, eps = 100, 10, 5, 0.05, 0.5
    s = summarize(two_spike(n, m, mu0=0.0, eps=eps))
    j = m
    d2 = eps**-2
    top = m * d2 * _rlog((n * k / (j * delta)) * _rlog(d2))
    bottom = (n - m) * d2 * _rlog(_rlog(d2) / delta)
    expect = k / j * (top + bottom)
    assert hardness_fwer(s, delta, k, j) == pytest.approx(expect, rel=1e-12)


def test_hardness_fwpd_oracle_two_spike():
    n, m, k, delta, eps = 128, 16, 4, 1e-3, 0.5
    s = summarize(two_spike(n, m, mu0=0.0, eps=eps))
    d2 = eps**-2
    q = n * k / m
    llog = _rlog(_rlog(q / delta))
    expect = (q - k) * d2 * _rlog(max(k, llog) * _rlog(d2) * _rlog(q) / delta) + k * d2 * _rlog(
        max(q - (1 - 2 * delta * (1 + 4 * delta)) * k, llog) * _rlog(d2) * _rlog(q) / delta
    )
    assert hardness_fwpd(s, delta, k) == pytest.approx(expect, rel=1e-12)


def test_hardness_pac_frozen():
    s = summarize(two_spike(100, 10, mu0=0.0, eps=0.5))
    k1, km = hardness_pac(s, 0.05)
    assert k1 == pytest.approx(0.5 * math.log(1 / 0.12) * (9 * 4.0 + 90 * 4.0), rel=1e-12)
    assert km == pytest.approx(2.0 * math.log(1 / 0.12) * (10 * 4.0 + 90 * 4.0), rel=1e-12)


def test_hardness_all_good_degenerates():
    inst = gaussian_instance([1.0, 0.9, 0.8], mu0=0.0, epsilon=0.5)
    s = summarize(inst)
    assert s.m_eps == 3
    assert hardness_low(s, 2) == 0.0
    # only the top-gap terms survive; bottom sums are empty
    v = hardness_best(s, 0.05, 3)
    assert v == 0.0  # gaps to the (m+1)-th mean are +inf
    k1, km = hardness_pac(s, 0.05)
    assert km == 0.0 and k1 > 0.0


def test_hardness_permutation_invariant():
    rng = np.random.default_rng(11)
    means = rng.normal(size=9)
    perm = rng.permutation(9)
    a = summarize(gaussian_instance(means, mu0=0.0, epsilon=0.5))
    b = summarize(gaussian_instance(means[perm], mu0=0.0, epsilon=0.5))
    assert a.m_eps == b.m_eps and a.m_thr == b.m_thr
    for j in range(1, a.m_eps + 1):
        assert hardness_best(a, 0.03, j) == pytest.approx(hardness_best(b, 0.03, j), rel=1e-12)
    if a.m_thr >= 1:
        assert hardness_fdr(a, 0.03, 1, a.m_thr) == pytest.approx(
            hardness_fdr(b, 0.03, 1, b.m_thr), rel=1e-12
        )


def test_hardness_domain_errors():
    s = summarize(two_spike(10, 3, mu0=0.0, eps=0.5))
    with pytest.raises(ValueError):
        hardness_low(s, 0)
    with pytest.raises(ValueError):
        hardness_low(s, 4)
    with pytest.raises(ValueError):
        hardness_best(s, 0.05, 0)
    with pytest.raises(ValueError):
        hardness_best(s, 1.5, 1)
    with pytest.raises(ValueError):
        hardness_fdr(s, 0.05, 2, 1)  # j < k
    s_no_mu0 = summarize(gaussian_instance([1.0, 0.0], epsilon=0.5))
    with pytest.raises(ValueError):
        hardness_fdr(s_no_mu0, 0.05, 1, 1)
    s_no_eps = summarize(gaussian_instance([1.0, 0.0], mu0=0.0))
    with pytest.raises(ValueError):
        hardness_best(s_no_eps, 0.05, 1)


def test_hardness_report_structure_and_flags():
    inst = two_spike(20, 4, mu0=0.0, eps=0.5)
    rep = hardness_report(inst, 0.05, ks=[1, 2, 4])
    assert rep.flags["delta_in_low_range"] is True
    assert rep.flags["delta_in_upper_range"] is False
    assert rep.flags["delta_in_fwpd_range"] is False
    assert rep.flags["delta_in_pac_range"] is True
    assert rep.h_best_min[0] == 4
    assert set(rep.h_fdr.keys()) == {1, 2, 4}
    assert set(rep.h_fdr[2].keys()) == {2, 3, 4}
    for k in (1, 2, 4):
        jmin, vmin = rep.h_fdr_min[k]
        assert vmin == min(rep.h_fdr[k].values())
        assert rep.h_fwer[k][jmin] >= vmin
    assert rep.pac_k1 > 0
    js = rep.to_json()
    assert "hardness-report/1" in js


def test_hardness_report_vacuous_flag():
    inst = gaussian_instance([1.0, 0.95], mu0=0.0, epsilon=0.5)
    rep = hardness_report(inst, 0.01)
    assert rep.flags["vacuous_eps_good"] is True
    assert rep.h_low_clamped[1] == 0.0


# ---------------------------------------------------------------------------
# file round-trip


def test_instance_round_trip(tmp_path):
    inst = BanditInstance(
        (
            ArmDistribution("gaussian", 0.1234567890123456, 2.5),
            ArmDistribution("bernoulli", 1.0 / 3.0),
            ArmDistribution("gaussian", -1e-17, 1.0),
        ),
        label="round trip",
        mu0=0.1,
        epsilon=0.25,
    )
    p = tmp_path / "inst.json"
    save_instance(inst, p)
    back = load_instance(p)
    assert back == inst


def test_instance_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValueError):
        load_instance(p)
    p2 = tmp_path / "wrong.json"
    p2.write_text('{"format": "other/1", "arms": []}')
    with pytest.raises(ValueError):
        load_instance(p2)


def test_bernoulli_instance_round_trip(tmp_path):
    inst = bernoulli_instance([0.1, 0.9, 0.5], label="bern", mu0=0.5)
    p = tmp_path / "b.json"
    save_instance(inst, p)
    assert load_instance(p) == inst
