"""Engine mechanics: schedule, membership, selection, and trace-exact
agreement with the straight-line reference implementation."""
import math

import numpy as np
import pytest

from bracketbandits import _kernels as K
from bracketbandits.confidence import DEFAULT_SCHEDULE, radius, reg_log
from bracketbandits.engine import (
    Engine,
    bracket_size,
    draw_bracket_members,
    opening_time,
)
from bracketbandits.instance import two_spike, gaussian_instance, arm_arrays

from reference_engine import RefEngine, rad as ref_rad

C4 = DEFAULT_SCHEDULE.c4


# ---------------------------------------------------------------------------
# opening schedule and membership


def test_opening_times():
    assert [opening_time(k) for k in range(1, 7)] == [1, 2, 8, 24, 64, 160]


def test_bracket_sizes_doubling_capped():
    assert [bracket_size(k, 40) for k in range(1, 7)] == [2, 4, 8, 16, 32, 40]
    assert [bracket_size(k, 3) for k in range(1, 5)] == [2, 3, 3, 3]
    assert [bracket_size(k, 1000, "practice") for k in range(1, 5)] == [64, 128, 256, 512]


def test_engine_opens_on_schedule():
    eng = Engine(two_spike(40, 4), "best", 0.1, horizon=70, seed=0).run()
    views = eng.brackets
    assert [b.opened_at for b in views] == [1, 2, 8, 24, 64]
    assert [b.size for b in views] == [2, 4, 8, 16, 32]


def test_engine_small_n_schedule():
    eng = Engine(two_spike(3, 1), "best", 0.1, horizon=30, seed=0).run()
    assert [b.size for b in eng.brackets] == [2, 3, 3, 3]
    assert [b.opened_at for b in eng.brackets] == [1, 2, 8, 24]


def test_practice_opening_stops_at_full_size():
    eng = Engine(two_spike(100, 5), "best", 0.1, horizon=300, seed=0, mode="practice").run()
    assert [b.size for b in eng.brackets] == [64, 100]
    assert [b.opened_at for b in eng.brackets] == [1, 2]
    eng64 = Engine(two_spike(64, 5), "best", 0.1, horizon=300, seed=0, mode="practice").run()
    assert [b.size for b in eng64.brackets] == [64]


def test_single_bracket_pin():
    eng = Engine(two_spike(10, 2), "fdr", 0.1, horizon=50, seed=0, single_bracket=True).run()
    assert len(eng.brackets) == 1
    assert eng.brackets[0].size == 10
    assert np.array_equal(eng.brackets[0].arm_ids, np.arange(10))


def test_membership_draw_matches_fisher_yates():
    rng = np.random.default_rng(1234)
    got = draw_bracket_members(10, 4, rng)
    rng2 = np.random.default_rng(1234)
    pool = list(range(10))
    for i in range(4):
        j = i + int(rng2.integers(10 - i))
        pool[i], pool[j] = pool[j], pool[i]
    assert sorted(pool[:4]) == got.tolist()
    assert np.all(np.diff(got) > 0)


def test_membership_draw_is_uniform_ish():
    rng = np.random.default_rng(7)
    counts = np.zeros(6)
    for _ in range(3000):
        counts[draw_bracket_members(6, 2, rng)] += 1
    # each arm appears with probability 2/6 per draw
    assert np.all(np.abs(counts / 3000 - 1 / 3) < 0.04)


def test_membership_full_size_is_permutation():
    got = draw_bracket_members(8, 8, np.random.default_rng(0))
    assert got.tolist() == list(range(8))


# ---------------------------------------------------------------------------
# cursor fairness


def test_round_robin_cursor():
    eng = Engine(two_spike(40, 4), "best", 0.1, horizon=23, seed=3).run()
    rb = eng.rec_bracket
    # one bracket during t=1, two during t=2..7 alternating, three from t=8
    assert rb[0] == 0
    assert rb[1:7].tolist() == [1, 0, 1, 0, 1, 0]
    assert rb[7:23].tolist() == [1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1]


def test_bracket_pull_counts_balanced():
    eng = Engine(two_spike(16, 2), "best", 0.1, horizon=383, seed=5).run()
    # between the openings at t=160 and t=384 six brackets are live and the
    # cursor gives each one the same number of rounds (up to one)
    window = eng.rec_bracket[159:383]
    counts = np.bincount(window, minlength=6)
    assert counts.sum() == 224
    assert counts.max() - counts.min() <= 1


# ---------------------------------------------------------------------------
# trace-exact agreement with the reference implementation


def _run_pair(objective, n=12, m=3, eps=1.0, delta=0.2, horizon=600, seed=0, kind="gaussian"):
    inst = two_spike(n, m, mu0=0.0, eps=eps, kind=kind, seed=seed)
    eng = Engine(inst, objective, delta, horizon=horizon, seed=seed)
    eng.run()
    memberships = [b.arm_ids.tolist() for b in eng.brackets]
    kinds, mu, sd = arm_arrays(inst)
    ref = RefEngine(objective, delta, inst.mu0, C4, kinds, mu, sd, memberships,
                    eng._zblock, eng._ublock)
    ref.run(horizon)
    return eng, ref


@pytest.mark.parametrize("objective", ["best", "fdr", "fwer", "fwpd"])
@pytest.mark.parametrize("seed", [0, 1])
def test_trace_matches_reference(objective, seed):
    eng, ref = _run_pair(objective, seed=seed)
    for i, (t, r, arm, x, forced, out, jarm, jrew) in enumerate(ref.trace):
        assert eng.rec_bracket[i] == r, f"round {t} bracket"
        assert eng.rec_arm[i] == arm, f"round {t} arm"
        assert eng.rec_reward[i] == pytest.approx(x, abs=0), f"round {t} reward"
        assert eng.rec_forced[i] == forced, f"round {t} forced"
        assert eng.rec_out[i] == out, f"round {t} output"
        assert eng.rec_jarm[i] == jarm, f"round {t} re-pull arm"
        assert eng.rec_jrew[i] == pytest.approx(jrew, abs=0), f"round {t} re-pull reward"


@pytest.mark.parametrize("objective,seed,kind", [
    ("fdr", 2, "bernoulli"), ("fwer", 3, "gaussian"), ("fwpd", 4, "gaussian"),
])
def test_sets_and_events_match_reference(objective, seed, kind):
    eps = 0.6 if kind == "bernoulli" else 1.0
    mu0_off = 0.2 if kind == "bernoulli" else 0.0
    inst = two_spike(12, 3, mu0=mu0_off, eps=eps, kind=kind, seed=seed)
    eng = Engine(inst, objective, 0.2, horizon=900, seed=seed).run()
    kinds, mu, sd = arm_arrays(inst)
    ref = RefEngine(objective, 0.2, inst.mu0, C4, kinds, mu, sd,
                    [b.arm_ids.tolist() for b in eng.brackets],
                    eng._zblock, eng._ublock).run(900)
    assert set(eng.accepted().tolist()) == (ref.Q if objective == "fwer" else ref.S)
    if objective == "fwpd":
        assert set(eng.detected().tolist()) == ref.D
        assert ref.D <= ref.S
    got = [(e.t, e.kind, e.bracket, sorted(e.arms)) for e in eng.events()]
    want = [(t, k, r, arms) for (t, k, r, arms) in ref.events]
    assert got == want


def test_fdr_counts_against_reference_long():
    # longer horizon, larger eps-free overlap of null arms near the threshold
    inst = gaussian_instance([0.9, 0.8, 0.05, 0.0, -0.1, 0.0, 0.4, 0.0], mu0=0.0)
    eng = Engine(inst, "fdr", 0.1, horizon=2500, seed=11).run()
    kinds, mu, sd = arm_arrays(inst)
    ref = RefEngine("fdr", 0.1, 0.0, C4, kinds, mu, sd,
                    [b.arm_ids.tolist() for b in eng.brackets],
                    eng._zblock, eng._ublock).run(2500)
    assert set(eng.accepted().tolist()) == ref.S
    assert [(e.t, sorted(e.arms)) for e in eng.events()] == [(t, a) for (t, _, _, a) in ref.events]


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_identical_trace():
    a = Engine(two_spike(20, 4), "fdr", 0.1, horizon=400, seed=42).run()
    b = Engine(two_spike(20, 4), "fdr", 0.1, horizon=400, seed=42).run()
    assert np.array_equal(a.rec_arm, b.rec_arm)
    assert np.array_equal(a.rec_reward, b.rec_reward)
    assert np.array_equal(a.rec_bracket, b.rec_bracket)
    assert a.events() == b.events()


def test_different_seed_differs():
    a = Engine(two_spike(20, 4), "best", 0.1, horizon=400, seed=1).run()
    b = Engine(two_spike(20, 4), "best", 0.1, horizon=400, seed=2).run()
    assert not (np.array_equal(a.rec_arm, b.rec_arm) and np.array_equal(a.rec_reward, b.rec_reward))


# ---------------------------------------------------------------------------
# kernel-level pieces


def test_critical_p_matches_linear_scan():
    rng = np.random.default_rng(0)
    M = 40
    unit = 0.0008 / M
    for _ in range(300):
        T = int(rng.integers(1, 600))
        mean = float(rng.uniform(-0.5, 1.5))
        got = K._critical_p(C4, T, mean, 0.0, unit, M)
        want = M + 1
        for p in range(1, M + 1):
            if mean - radius(T, max(p * unit, 1e-300)) >= 0.0:
                want = p
                break
        assert got == want, (T, mean)


def test_critical_p_monotone_in_T():
    vals = [K._critical_p(C4, T, 0.9, 0.0, 1e-5, 100) for T in range(1, 400)]
    finite = [v for v in vals if v <= 100]
    assert finite == sorted(finite, reverse=True)


def test_critical_p_huge_statistic_hits_floor():
    # overwhelming evidence: the closed-form budget underflows, p=1 qualifies
    assert K._critical_p(C4, 2_000_000, 5.0, 0.0, 1e-8, 10) == 1


def test_bh_phat_matches_definition():
    rng = np.random.default_rng(3)
    for _ in range(200):
        M = int(rng.integers(1, 30))
        critp = rng.integers(1, M + 2, size=M)
        cnt = np.zeros(M + 1, dtype=np.int64)
        for v in critp:
            cnt[v - 1] += 1
        cntoff = np.array([0, M + 1], dtype=np.int64)
        got = K._bh_phat(0, M, cnt, cntoff)
        want = 0
        for p in range(1, M + 1):
            if int((critp <= p).sum()) >= p:
                want = p
        assert got == want


def test_stepped_threshold_sets_are_nested():
    # the acceptance set at step p is contained in the set at step p+1
    rng = np.random.default_rng(9)
    M = 25
    unit = 0.001 / M
    T = rng.integers(1, 200, size=M)
    mean = rng.uniform(-0.2, 1.2, size=M)
    prev = set()
    for p in range(1, M + 1):
        cur = {i for i in range(M) if mean[i] - radius(int(T[i]), max(p * unit, 1e-300)) >= 0.0}
        assert prev <= cur
        prev = cur


def test_heuristic_pick_rate():
    # two brackets with cost estimates (100, 1e6): the cheap one is picked
    # ~90.9% of rounds (90% directly + the cursor cycling through it)
    statev = np.zeros(K.STATEV_LEN, dtype=np.int64)
    statev[K.NBRACKETS] = 2
    statev[K.CURSOR] = -1
    active = np.ones(2, dtype=np.uint8)
    exhausted = np.zeros(2, dtype=np.uint8)
    est = np.array([100.0, 1e6])
    coins = np.random.default_rng(0).random(100_000)
    picks = np.zeros(2)
    for c in coins:
        r = K._pick_heuristic(c, statev, active, exhausted, est)
        statev[K.CURSOR] = r
        picks[r] += 1
    frac = picks[0] / picks.sum()
    assert abs(frac - 10 / 11) < 0.01


def test_prune_by_lcb_rule():
    statev = np.zeros(K.STATEV_LEN, dtype=np.int64)
    statev[K.NBRACKETS] = 3
    bsize = np.array([2, 4, 8], dtype=np.int64)
    active = np.ones(3, dtype=np.uint8)
    max_lcb = np.array([0.5, 0.7, 0.6])
    K._prune_by_lcb(statev, bsize, active, max_lcb)
    # bracket 0 trails both larger brackets; bracket 1 beats bracket 2;
    # the largest bracket is never pruned
    assert active.tolist() == [0, 1, 1]


def test_prune_by_score_rule():
    statev = np.zeros(K.STATEV_LEN, dtype=np.int64)
    statev[K.NBRACKETS] = 3
    bsize = np.array([2, 4, 8], dtype=np.int64)
    active = np.ones(3, dtype=np.uint8)
    score = np.array([1, 3, 2], dtype=np.int64)
    K._prune_by_score(statev, bsize, active, score)
    assert active.tolist() == [0, 1, 1]


def test_detection_budget_constants():
    # single bracket of 64 arms at delta = 0.05: the per-bracket constants
    # match their defining formulas evaluated straight-line
    inst = two_spike(64, 4, mu0=0.0, eps=1.0)
    eng = Engine(inst, "fwpd", 0.05, horizon=1, seed=0, single_bracket=True).run()
    d_r = 0.05
    dp = d_r / (6.4 * reg_log(36.0 / d_r))
    assert eng.delta_r[0] == pytest.approx(d_r)
    assert eng.bh_unit[0] == pytest.approx(dp / 64)
    assert eng.pullc[0] == pytest.approx((5.0 / (3.0 * (1.0 - 4.0 * d_r))) * reg_log(1.0 / d_r))
    assert eng.chi_c0[0] == pytest.approx((4.0 * (1.0 + 4.0 * dp) / 3.0)
                                          * reg_log(5.0 * math.log2(64.0 / dp) / dp))
    assert eng.chi_c1[0] == pytest.approx(1.0 - 2.0 * dp * (1.0 + 4.0 * dp))


def test_second_bracket_budgets_quarter():
    eng = Engine(two_spike(40, 4), "fdr", 0.2, horizon=2, seed=0).run()
    assert eng.delta_r[1] == pytest.approx(0.2 / 4)
    assert eng.out_budget[1] == pytest.approx(0.2 / (4 * 4))


# ---------------------------------------------------------------------------
# practice-mode behaviors


def test_share_samples_statistics_visible_across_brackets():
    inst = two_spike(100, 5, mu0=0.0, eps=1.0, seed=9)
    eng = Engine(inst, "fdr", 0.1, horizon=500, seed=9, mode="practice",
                 share_samples=True).run()
    # global counters equal the per-bracket sums
    per_arm = eng.arm_pull_totals()
    assert np.array_equal(per_arm, eng.gpulls)
    assert per_arm.sum() == eng.total_pulls
    # an arm pulled anywhere has a finite bound in every bracket holding it
    for r, b in enumerate(eng.brackets):
        lo = int(eng.boff[r])
        for rel, a in enumerate(b.arm_ids):
            if eng.gpulls[a] > 0 and not eng.in_s[a]:
                assert np.isfinite(eng.ucb[lo + rel])


def test_share_samples_means_are_global():
    inst = two_spike(100, 5, mu0=0.0, eps=1.0, seed=2)
    eng = Engine(inst, "best", 0.1, horizon=400, seed=2, mode="practice",
                 share_samples=True).run()
    gmeans = np.where(eng.gpulls > 0, eng.gsums / np.maximum(eng.gpulls, 1), np.nan)
    for b in eng.brackets:
        for rel, a in enumerate(b.arm_ids):
            if eng.gpulls[a] > 0:
                assert b.means[rel] == pytest.approx(gmeans[a])


def test_noop_rounds_after_everything_accepted():
    inst = gaussian_instance([1.0, 1.2], mu0=0.0)
    eng = Engine(inst, "fdr", 0.1, horizon=3000, seed=0, single_bracket=True).run()
    assert set(eng.accepted().tolist()) == {0, 1}
    assert eng.noop_rounds > 0
    assert eng.rec_arm[-1] == -1


def test_detection_continues_after_acceptance_exhausts_pulls():
    # every arm clears the threshold; acceptance empties the pull candidates
    # but re-pull rounds keep running until each arm is individually detected
    inst = gaussian_instance([1.0, 1.1, 0.9], mu0=0.0)
    eng = Engine(inst, "fwpd", 0.2, horizon=5000, seed=1, single_bracket=True).run()
    assert set(eng.accepted().tolist()) == {0, 1, 2}
    assert set(eng.detected().tolist()) == {0, 1, 2}
    kinds = [e.kind for e in eng.events()]
    assert "detection" in kinds


# ---------------------------------------------------------------------------
# validation


def test_constructor_validation():
    inst = two_spike(8, 2)
    with pytest.raises(ValueError):
        Engine(inst, "nope", 0.1, 10, 0)
    with pytest.raises(ValueError):
        Engine(inst, "fwpd", 0.3, 10, 0)
    with pytest.raises(ValueError):
        Engine(inst, "best", 0.0, 10, 0)
    with pytest.raises(ValueError):
        Engine(inst, "best", 0.1, 0, 0)
    with pytest.raises(ValueError):
        Engine(inst, "best", 0.1, 10, 0, share_samples=True)  # theory mode
    with pytest.raises(ValueError):
        Engine(inst, "best", 0.1, 10, 0, mode="practice", heuristic_select=True)
    with pytest.raises(ValueError):
        Engine(inst, "fwer", 0.1, 10, 0, mode="practice", heuristic_prune=True)


def test_outputs_follow_first_pull():
    eng = Engine(two_spike(6, 1), "best", 0.1, horizon=1, seed=0).run()
    assert eng.outputs[0] == eng.rec_arm[0]
