"""Numba inner loops for the bracket engine, LUCB, and the combined runner.

Everything here operates on flat arrays owned by the Python wrapper classes
(`engine.Engine`, `lucb` runners).  Brackets are laid out CSR-style: bracket
r occupies slots boff[r] .. boff[r] + bsize[r] in the per-slot arrays; arm ids
within a bracket are sorted ascending so "first maximizer" scans break ties
toward the lowest arm id.

Statistics conventions:
  - ``pulls``/``sums`` are bracket-local counters; with sample sharing enabled
    the engine additionally keeps ``gpulls``/``gsums`` indexed by arm id and
    all means/radii are computed from those (bracket-local counters remain as
    the bookkeeping used by the pruning scoreboard).
  - ``ucb[slot]`` is -inf for arms without usable data (initialization pulls
    handle those) and for arms excluded from pulling (accepted under the
    current mode).
  - ``critp[slot]`` is the smallest p for which the arm clears the stepped-up
    acceptance threshold at budget p * bh_unit, or M + 1 if none; ``cnt``
    histograms critp values per bracket.

statev layout (int64): see the index constants below.  paramv (float64):
global risk level, acceptance threshold, radius constant, and the
cost-estimate log factor for the selection heuristic.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

MIND = 1e-300
NEG = -np.inf

T_CUR, CURSOR, ZPTR, UPTR, COINPTR, EV_N, EV_ARM_N, CLAMPS, NOOPS = range(9)
SHARE, HEUR_PRUNE, HEUR_SEL, MODE, NBRACKETS, NARMS, S_COUNT = range(9, 16)
EST_AGE, TOT_PULLS, STOPPED, FINAL_ARM, STOP_T, EV_OVERFLOW = range(16, 22)
STATEV_LEN = 24

P_DELTA, P_MU0, P_C4, P_EST_LG = range(4)
PARAMV_LEN = 8

MODE_BEST, MODE_FDR, MODE_FWER, MODE_FWPD = 0, 1, 2, 3
EV_S, EV_Q, EV_D = 1, 2, 3

EST_REFRESH_PERIOD = 64


@njit(cache=True, inline="always")
def _rad(c4, T, b, statev):
    """Anytime confidence radius with the tiny-budget clamp counted."""
    if b < MIND:
        b = MIND
        statev[CLAMPS] += 1
    lg = math.log(math.log2(2.0 * T) / b)
    if lg < 1.0:
        lg = 1.0
    return math.sqrt(c4 * lg / T)


@njit(cache=True, inline="always")
def _bfind(ids, lo, hi, a):
    """Index of arm a in the sorted slice ids[lo:hi], or -1."""
    while lo < hi:
        mid = (lo + hi) >> 1
        v = ids[mid]
        if v == a:
            return mid
        if v < a:
            lo = mid + 1
        else:
            hi = mid
    return -1


@njit(cache=True, inline="always")
def _draw(arm, kinds, mu, sd, zblock, ublock, statev):
    statev[TOT_PULLS] += 1
    if kinds[arm] == 0:
        z = zblock[statev[ZPTR]]
        statev[ZPTR] += 1
        return mu[arm] + sd[arm] * z
    u = ublock[statev[UPTR]]
    statev[UPTR] += 1
    return 1.0 if u < mu[arm] else 0.0


@njit(cache=True, inline="always")
def _stat(slot, arm, share, pulls, sums, gpulls, gsums):
    """(count, mean) for the arm in this slot under the sharing convention."""
    if share:
        T = gpulls[arm]
        return T, gsums[arm] / T
    T = pulls[slot]
    return T, sums[slot] / T


@njit(cache=True, inline="always")
def _eff_pulls(slot, arm, share, pulls, gpulls):
    if share:
        return gpulls[arm]
    return pulls[slot]


@njit(cache=True)
def _qualifies(c4, T, g, b):
    if b < MIND:
        b = MIND
    lg = math.log(math.log2(2.0 * T) / b)
    if lg < 1.0:
        lg = 1.0
    return c4 * lg / T <= g * g


@njit(cache=True)
def _critical_p(c4, T, mean, mu0, unit, M):
    """Smallest p in 1..M whose stepped-up budget p * unit certifies mean > mu0.

    Returns M + 1 when no p works.  The closed-form inversion is corrected by
    direct threshold checks so it agrees exactly with evaluating the radius
    at each candidate p despite float rounding.
    """
    g = mean - mu0
    if g <= 0.0 or T < 1:
        return M + 1
    A = T * g * g / c4
    if A < 1.0:
        return M + 1
    dstar = math.log2(2.0 * T) * math.exp(-A)
    if dstar <= MIND:
        return 1
    p0 = dstar / unit
    if p0 > M + 1.0:
        p = M + 1
    else:
        p = int(math.ceil(p0))
        if p < 1:
            p = 1
    while p > 1 and _qualifies(c4, T, g, (p - 1) * unit):
        p -= 1
    while p <= M and not _qualifies(c4, T, g, p * unit):
        p += 1
    return p


@njit(cache=True, inline="always")
def _set_critp(slot, newp, r, critp, cnt, cntoff):
    old = critp[slot]
    if old != newp:
        cnt[cntoff[r] + old - 1] -= 1
        cnt[cntoff[r] + newp - 1] += 1
        critp[slot] = newp


@njit(cache=True)
def _bh_phat(r, M, cnt, cntoff):
    """Largest p with #{arms: critp <= p} >= p, or 0 when none."""
    cum = 0
    phat = 0
    base = cntoff[r]
    for p in range(1, M + 1):
        cum += cnt[base + p - 1]
        if cum >= p:
            phat = p
    return phat


@njit(cache=True)
def _bracket_max_lcb(r, boff, bsize, lcb, max_lcb, max_pos):
    lo = boff[r]
    hi = lo + bsize[r]
    best = NEG
    pos = -1
    for s in range(lo, hi):
        if lcb[s] > best:
            best = lcb[s]
            pos = s - lo
    max_lcb[r] = best
    max_pos[r] = pos


@njit(cache=True, inline="always")
def _update_max_lcb(r, slot_rel, value, boff, bsize, lcb, max_lcb, max_pos):
    if slot_rel == max_pos[r]:
        if value < max_lcb[r]:
            _bracket_max_lcb(r, boff, bsize, lcb, max_lcb, max_pos)
        else:
            max_lcb[r] = value
    elif value > max_lcb[r] or (value == max_lcb[r] and slot_rel < max_pos[r]):
        max_lcb[r] = value
        max_pos[r] = slot_rel


@njit(cache=True)
def _global_output(L, boff, bsize, ids, active, max_lcb, max_pos):
    """Best (arm, value) by output-rule LCB over active brackets.

    Ties break toward the lowest arm id, then the earliest bracket.
    """
    best = NEG
    arm = -1
    for r in range(L):
        if active[r] == 0 or max_pos[r] < 0:
            continue
        v = max_lcb[r]
        if v == NEG:
            continue
        a = ids[boff[r] + max_pos[r]]
        if v > best or (v == best and a < arm):
            best = v
            arm = a
    return arm, best


@njit(cache=True)
def _select_arm(r, skip_s, share, boff, bsize, ids, ucb, pulls, gpulls, init_ptr, in_s):
    """(relative slot, forced flag); (-1, 0) when the bracket has no candidate.

    Initialization: lowest-id arm without usable data in this bracket (and,
    when accepted arms leave the candidate set, not accepted).  Otherwise the
    first maximizer of the cached upper confidence bounds.
    """
    lo = boff[r]
    M = bsize[r]
    p = init_ptr[r]
    while p < M:
        a = ids[lo + p]
        if _eff_pulls(lo + p, a, share, pulls, gpulls) == 0 and not (skip_s and in_s[a] != 0):
            break
        p += 1
    init_ptr[r] = p
    if p < M:
        return p, 1
    best = NEG
    pos = -1
    for s in range(M):
        v = ucb[lo + s]
        if v > best:
            best = v
            pos = s
    if pos < 0 or best == NEG:
        return -1, 0
    return pos, 0


@njit(cache=True)
def _next_bracket(statev, active, exhausted):
    """Round-robin cursor over active, non-exhausted brackets (-1 if none)."""
    L = statev[NBRACKETS]
    start = statev[CURSOR]
    for step in range(1, L + 1):
        r = (start + step) % L
        if active[r] != 0 and exhausted[r] == 0:
            return r
    return -1


@njit(cache=True)
def _record_event(statev, t, kind, r, phat, arms_buf, n_arms, ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms):
    e = statev[EV_N]
    if e >= ev_t.shape[0] or statev[EV_ARM_N] + n_arms > ev_arms.shape[0]:
        statev[EV_OVERFLOW] = 1
        return
    ev_t[e] = t
    ev_kind[e] = kind
    ev_bracket[e] = r
    ev_phat[e] = phat
    base = statev[EV_ARM_N]
    for i in range(n_arms):
        ev_arms[base + i] = arms_buf[i]
    statev[EV_ARM_N] = base + n_arms
    ev_armoff[e + 1] = statev[EV_ARM_N]
    statev[EV_N] = e + 1


@njit(cache=True)
def _accept_into_s(arm, statev, boff, bsize, ids, ucb, in_s, s_list, s_in_cnt, in_d, pend, pend_cnt, exhausted):
    """Mark one arm accepted: exclude it from pulls everywhere, grow the
    per-bracket accepted counters and pending-detection lists."""
    in_s[arm] = 1
    s_list[statev[S_COUNT]] = arm
    statev[S_COUNT] += 1
    L = statev[NBRACKETS]
    for rb in range(L):
        lo = boff[rb]
        slot = _bfind(ids, lo, lo + bsize[rb], arm)
        if slot >= 0:
            ucb[slot] = NEG
            s_in_cnt[rb] += 1
            if in_d[arm] == 0:
                pend[lo + pend_cnt[rb]] = slot
                pend_cnt[rb] += 1
                if statev[MODE] == MODE_FWPD:
                    exhausted[rb] = 0


@njit(cache=True)
def _accept_into_q(arm, statev, boff, bsize, ids, ucb, in_q):
    in_q[arm] = 1
    L = statev[NBRACKETS]
    for rb in range(L):
        lo = boff[rb]
        slot = _bfind(ids, lo, lo + bsize[rb], arm)
        if slot >= 0:
            ucb[slot] = NEG


@njit(cache=True)
def _accept_into_d(arm, statev, boff, bsize, ids, in_d, pend, pend_cnt):
    in_d[arm] = 1
    L = statev[NBRACKETS]
    for rb in range(L):
        lo = boff[rb]
        k = pend_cnt[rb]
        for i in range(k):
            slot = pend[lo + i]
            if ids[slot] == arm:
                pend[lo + i] = pend[lo + k - 1]
                pend_cnt[rb] = k - 1
                break


@njit(cache=True)
def _fdr_scores(statev, boff, bsize, ids, pulls, s_list, score):
    """A bracket scores a point per accepted arm it pulled strictly most."""
    L = statev[NBRACKETS]
    for r in range(L):
        score[r] = 0
    for i in range(statev[S_COUNT]):
        arm = s_list[i]
        best = -1
        best_r = -1
        tied = False
        for rb in range(L):
            lo = boff[rb]
            slot = _bfind(ids, lo, lo + bsize[rb], arm)
            if slot >= 0:
                c = pulls[slot]
                if c > best:
                    best = c
                    best_r = rb
                    tied = False
                elif c == best:
                    tied = True
        if best_r >= 0 and not tied and best > 0:
            score[best_r] += 1


@njit(cache=True)
def _prune_by_score(statev, bsize, active, score):
    """Deactivate brackets outscored by a strictly larger bracket.

    The largest bracket (last opened) is never pruned.
    """
    L = statev[NBRACKETS]
    for r in range(L - 1):
        if active[r] == 0:
            continue
        for rb in range(L):
            if active[rb] != 0 and bsize[rb] > bsize[r] and score[r] < score[rb]:
                active[r] = 0
                break


@njit(cache=True)
def _prune_by_lcb(statev, bsize, active, max_lcb):
    """Deactivate brackets whose best output LCB trails a strictly larger
    bracket's.  The largest bracket is never pruned."""
    L = statev[NBRACKETS]
    for r in range(L - 1):
        if active[r] == 0:
            continue
        for rb in range(L):
            if active[rb] != 0 and bsize[rb] > bsize[r] and max_lcb[r] < max_lcb[rb]:
                active[r] = 0
                break


@njit(cache=True)
def _refresh_estimates(statev, paramv, boff, bsize, active, pulls, sums, gpulls, gsums, ids, est, est_lg_top):
    """Per-bracket cost-to-completion estimates for the selection heuristic.

    The five largest empirical means (pulled arms only, ties by slot order)
    cost mean^-2 * lg_top - T each; the rest cost (lam - mean)^-2 * lg_other
    - T with lam twice the smallest top-5 mean; negative terms clamp to 0;
    arms without data enter the second group with mean 0.
    """
    L = statev[NBRACKETS]
    share = statev[SHARE]
    lg_oth = paramv[P_EST_LG]
    for r in range(L):
        if active[r] == 0:
            est[r] = np.inf
            continue
        lo = boff[r]
        M = bsize[r]
        m1 = NEG
        m2 = NEG
        m3 = NEG
        m4 = NEG
        m5 = NEG
        npulled = 0
        for s in range(lo, lo + M):
            T = _eff_pulls(s, ids[s], share, pulls, gpulls)
            if T == 0:
                continue
            _, mean = _stat(s, ids[s], share, pulls, sums, gpulls, gsums)
            npulled += 1
            if mean > m5:
                if mean > m1:
                    m5, m4, m3, m2, m1 = m4, m3, m2, m1, mean
                elif mean > m2:
                    m5, m4, m3, m2 = m4, m3, m2, mean
                elif mean > m3:
                    m5, m4, m3 = m4, m3, mean
                elif mean > m4:
                    m5, m4 = m4, mean
                else:
                    m5 = mean
        if npulled == 0:
            est[r] = np.inf
            continue
        if npulled >= 5:
            cut = m5
        elif npulled == 4:
            cut = m4
        elif npulled == 3:
            cut = m3
        elif npulled == 2:
            cut = m2
        else:
            cut = m1
        lam = 2.0 * cut
        top_n = npulled if npulled < 5 else 5
        total = 0.0
        taken = 0
        for s in range(lo, lo + M):
            T = _eff_pulls(s, ids[s], share, pulls, gpulls)
            mean = 0.0
            if T > 0:
                _, mean = _stat(s, ids[s], share, pulls, sums, gpulls, gsums)
            if T > 0 and taken < top_n and mean >= cut:
                taken += 1
                if mean != 0.0:
                    c = est_lg_top[r] / (mean * mean) - T
                    if c > 0.0:
                        total += c
                else:
                    total = np.inf
            else:
                d = lam - mean
                if d > 0.0:
                    c = lg_oth / (d * d) - T
                    if c > 0.0:
                        total += c
        est[r] = total
    statev[EST_AGE] = 0


@njit(cache=True)
def _pick_heuristic(coin, statev, active, exhausted, est):
    """90% of rounds: active bracket with the smallest cost estimate (ties
    toward the lowest index); otherwise advance the round-robin cursor."""
    if coin < 0.9:
        L = statev[NBRACKETS]
        best = np.inf
        pick = -1
        for r in range(L):
            if active[r] != 0 and exhausted[r] == 0 and est[r] < best:
                best = est[r]
                pick = r
        if pick >= 0:
            return pick
    return _next_bracket(statev, active, exhausted)


@njit(cache=True)
def _rebuild_ucb_at(r, budget, c4, statev, boff, bsize, ids, pulls, sums, gpulls, gsums, ucb, in_excl):
    """Recompute one bracket's pull-rule UCBs at a new budget.

    Excluded arms and arms without data stay at -inf.
    """
    share = statev[SHARE]
    lo = boff[r]
    M = bsize[r]
    for s in range(lo, lo + M):
        a = ids[s]
        if in_excl[a] != 0:
            ucb[s] = NEG
            continue
        T = _eff_pulls(s, a, share, pulls, gpulls)
        if T == 0:
            ucb[s] = NEG
            continue
        _, mean = _stat(s, a, share, pulls, sums, gpulls, gsums)
        ucb[s] = mean + _rad(c4, T, budget, statev)


@njit(cache=True)
def _propagate_pull(arm, statev, paramv, boff, bsize, ids, pulls, sums,
                    gpulls, gsums, ucb, lcb, critp, cnt, cntoff, out_budget, bh_unit, ucb_budget,
                    in_excl, max_lcb, max_pos, r_current):
    """Refresh cached per-bracket quantities after one arm's stats changed.

    Without sharing only bracket ``r_current`` sees the change; with sharing
    every bracket containing the arm does (each at its own cached budget).
    """
    c4 = paramv[P_C4]
    mu0 = paramv[P_MU0]
    mode = statev[MODE]
    share = statev[SHARE]
    L = statev[NBRACKETS]
    for rb in range(L):
        if not share and rb != r_current:
            continue
        lo = boff[rb]
        slot = _bfind(ids, lo, lo + bsize[rb], arm)
        if slot < 0:
            continue
        T, mean = _stat(slot, arm, share, pulls, sums, gpulls, gsums)
        if in_excl[arm] != 0:
            ucb[slot] = NEG
        else:
            ucb[slot] = mean + _rad(c4, T, ucb_budget[rb], statev)
        if mode == MODE_BEST:
            v = mean - _rad(c4, T, out_budget[rb], statev)
            lcb[slot] = v
            _update_max_lcb(rb, slot - lo, v, boff, bsize, lcb, max_lcb, max_pos)
        elif mode == MODE_FDR or mode == MODE_FWPD:
            newp = _critical_p(c4, T, mean, mu0, bh_unit[rb], bsize[rb])
            _set_critp(slot, newp, rb, critp, cnt, cntoff)


@njit(cache=True)
def _bh_accept(r, t, statev, boff, bsize, ids, ucb, critp, cnt, cntoff,
               in_s, s_list, s_in_cnt, in_d, pend, pend_cnt, exhausted, scratch,
               ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms):
    """Stepped-up acceptance pass for bracket r; returns the number accepted."""
    M = bsize[r]
    phat = _bh_phat(r, M, cnt, cntoff)
    if phat == 0:
        return 0
    lo = boff[r]
    nnew = 0
    for s in range(lo, lo + M):
        if critp[s] <= phat and in_s[ids[s]] == 0:
            scratch[nnew] = ids[s]
            nnew += 1
    if nnew == 0:
        return 0
    for i in range(nnew):
        _accept_into_s(scratch[i], statev, boff, bsize, ids, ucb, in_s, s_list,
                       s_in_cnt, in_d, pend, pend_cnt, exhausted)
    _record_event(statev, t, EV_S, r, phat, scratch, nnew, ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms)
    return nnew


@njit(cache=True)
def _engine_round(statev, paramv,
                  bsize, boff, cntoff, ids, pulls, sums, ucb, lcb, critp, cnt,
                  init_ptr, active, exhausted,
                  delta_r, bh_unit, out_budget, pullc, chi_c0, chi_c1,
                  max_lcb, max_pos, ucb_budget, score, est, est_lg_top,
                  in_s, in_q, in_d, s_list, pend, pend_cnt, s_in_cnt, scratch,
                  gpulls, gsums, kinds, mu, sd, zblock, ublock, coin,
                  rec_bracket, rec_arm, rec_reward, rec_forced, rec_jarm, rec_jrew, rec_out,
                  ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms):
    """One engine round at t = statev[T_CUR]; bracket opening is the driver's
    job.  Returns the round's recommended arm (best-arm mode; -1 otherwise).
    """
    mode = statev[MODE]
    share = statev[SHARE]
    c4 = paramv[P_C4]
    delta = paramv[P_DELTA]
    mu0 = paramv[P_MU0]
    t = statev[T_CUR]
    idx = t - 1
    rec_jarm[idx] = -1
    rec_jrew[idx] = 0.0

    if mode == MODE_FDR and statev[HEUR_SEL] != 0:
        if statev[EST_AGE] >= EST_REFRESH_PERIOD:
            _refresh_estimates(statev, paramv, boff, bsize, active, pulls, sums, gpulls, gsums, ids, est, est_lg_top)
        statev[EST_AGE] += 1
        c = coin[statev[COINPTR]]
        statev[COINPTR] += 1
        r = _pick_heuristic(c, statev, active, exhausted, est)
    else:
        r = _next_bracket(statev, active, exhausted)

    # A bracket picked while stale may turn out to have no pull candidate;
    # mark it exhausted and keep scanning.  In detection mode a bracket with
    # pending (accepted, undetected) arms still runs its re-pull phase.
    slot_rel = -1
    forced = 0
    do_ipull = False
    attempts = 0
    while r >= 0:
        if mode == MODE_FWPD:
            xi = 2.0 * s_in_cnt[r]
            if pullc[r] > xi:
                xi = pullc[r]
            budget = delta / xi
            if budget != ucb_budget[r]:
                _rebuild_ucb_at(r, budget, c4, statev, boff, bsize, ids, pulls, sums, gpulls, gsums, ucb, in_s)
                ucb_budget[r] = budget
        skip_s = mode != MODE_FWER
        slot_rel, forced = _select_arm(r, skip_s, share, boff, bsize, ids, ucb, pulls, gpulls, init_ptr, in_s)
        if slot_rel >= 0:
            do_ipull = True
            break
        if mode == MODE_FWPD and pend_cnt[r] > 0:
            break
        exhausted[r] = 1
        statev[CURSOR] = r
        attempts += 1
        if attempts > statev[NBRACKETS]:
            r = -1
            break
        r = _next_bracket(statev, active, exhausted)

    if r < 0:
        statev[NOOPS] += 1
        rec_bracket[idx] = -1
        rec_arm[idx] = -1
        rec_reward[idx] = 0.0
        rec_forced[idx] = 0
        out = -1
        if mode == MODE_BEST:
            out, _ = _global_output(statev[NBRACKETS], boff, bsize, ids, active, max_lcb, max_pos)
        rec_out[idx] = out
        statev[T_CUR] = t + 1
        return out

    statev[CURSOR] = r
    lo = boff[r]
    rec_bracket[idx] = r

    if do_ipull:
        slot = lo + slot_rel
        arm = ids[slot]
        x = _draw(arm, kinds, mu, sd, zblock, ublock, statev)
        pulls[slot] += 1
        sums[slot] += x
        if share:
            gpulls[arm] += 1
            gsums[arm] += x
        excl = in_s if mode != MODE_FWER else in_q
        _propagate_pull(arm, statev, paramv, boff, bsize, ids, pulls, sums,
                        gpulls, gsums, ucb, lcb, critp, cnt, cntoff, out_budget, bh_unit, ucb_budget,
                        excl, max_lcb, max_pos, r)
        rec_arm[idx] = arm
        rec_reward[idx] = x
        rec_forced[idx] = forced
    else:
        rec_arm[idx] = -1
        rec_reward[idx] = 0.0
        rec_forced[idx] = 0

    out = -1
    if mode == MODE_BEST:
        out, _ = _global_output(statev[NBRACKETS], boff, bsize, ids, active, max_lcb, max_pos)
        if statev[HEUR_PRUNE] != 0:
            _prune_by_lcb(statev, bsize, active, max_lcb)
    elif mode == MODE_FDR:
        n_acc = _bh_accept(r, t, statev, boff, bsize, ids, ucb, critp, cnt, cntoff,
                           in_s, s_list, s_in_cnt, in_d, pend, pend_cnt, exhausted, scratch,
                           ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms)
        if n_acc > 0:
            if statev[HEUR_SEL] != 0:
                statev[EST_AGE] = EST_REFRESH_PERIOD
            if statev[HEUR_PRUNE] != 0:
                _fdr_scores(statev, boff, bsize, ids, pulls, s_list, score)
                _prune_by_score(statev, bsize, active, score)
    elif mode == MODE_FWER:
        slot = lo + slot_rel
        arm = ids[slot]
        T, mean = _stat(slot, arm, share, pulls, sums, gpulls, gsums)
        if in_q[arm] == 0 and mean - _rad(c4, T, out_budget[r], statev) >= mu0:
            scratch[0] = arm
            _accept_into_q(arm, statev, boff, bsize, ids, ucb, in_q)
            _record_event(statev, t, EV_Q, r, 0, scratch, 1, ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms)
    else:
        # Detection mode: re-pull the most promising accepted-but-undetected
        # arm and run the detection test, both against this round's
        # pre-acceptance membership; then the acceptance pass.
        if s_in_cnt[r] > 0 and pend_cnt[r] > 0:
            nu = s_in_cnt[r]
            nub = delta_r[r] / nu
            bestv = NEG
            bestslot = -1
            for i in range(pend_cnt[r]):
                ps = pend[lo + i]
                a2 = ids[ps]
                T2 = _eff_pulls(ps, a2, share, pulls, gpulls)
                if T2 == 0:
                    # accepted elsewhere, never pulled here: re-pull first
                    v = np.inf
                else:
                    _, mean2 = _stat(ps, a2, share, pulls, sums, gpulls, gsums)
                    v = mean2 + _rad(c4, T2, nub, statev)
                if bestslot < 0 or v > bestv or (v == bestv and a2 < ids[bestslot]):
                    bestv = v
                    bestslot = ps
            jarm = ids[bestslot]
            xj = _draw(jarm, kinds, mu, sd, zblock, ublock, statev)
            pulls[bestslot] += 1
            sums[bestslot] += xj
            if share:
                gpulls[jarm] += 1
                gsums[jarm] += xj
            _propagate_pull(jarm, statev, paramv, boff, bsize, ids, pulls, sums,
                            gpulls, gsums, ucb, lcb, critp, cnt, cntoff, out_budget, bh_unit,
                            ucb_budget, in_s, max_lcb, max_pos, r)
            rec_jarm[idx] = jarm
            rec_jrew[idx] = xj
            chi = bsize[r] - chi_c1[r] * s_in_cnt[r] + chi_c0[r]
            chib = delta / chi
            ndet = 0
            for i in range(pend_cnt[r]):
                ps = pend[lo + i]
                a2 = ids[ps]
                T2 = _eff_pulls(ps, a2, share, pulls, gpulls)
                if T2 == 0:
                    continue
                _, mean2 = _stat(ps, a2, share, pulls, sums, gpulls, gsums)
                if mean2 - _rad(c4, T2, chib, statev) >= mu0:
                    scratch[ndet] = a2
                    ndet += 1
            for i in range(ndet):
                _accept_into_d(scratch[i], statev, boff, bsize, ids, in_d, pend, pend_cnt)
            if ndet > 0:
                _record_event(statev, t, EV_D, r, 0, scratch, ndet, ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms)
        _bh_accept(r, t, statev, boff, bsize, ids, ucb, critp, cnt, cntoff,
                   in_s, s_list, s_in_cnt, in_d, pend, pend_cnt, exhausted, scratch,
                   ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms)
    rec_out[idx] = out
    statev[T_CUR] = t + 1
    return out


@njit(cache=True)
def run_span(t_end, statev, paramv,
             bsize, boff, cntoff, ids, pulls, sums, ucb, lcb, critp, cnt,
             init_ptr, active, exhausted,
             delta_r, bh_unit, out_budget, pullc, chi_c0, chi_c1,
             max_lcb, max_pos, ucb_budget, score, est, est_lg_top,
             in_s, in_q, in_d, s_list, pend, pend_cnt, s_in_cnt, scratch,
             gpulls, gsums, kinds, mu, sd, zblock, ublock, coin,
             rec_bracket, rec_arm, rec_reward, rec_forced, rec_jarm, rec_jrew, rec_out,
             ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms):
    """Run engine rounds until t reaches t_end (exclusive)."""
    while statev[T_CUR] < t_end:
        _engine_round(statev, paramv,
                      bsize, boff, cntoff, ids, pulls, sums, ucb, lcb, critp, cnt,
                      init_ptr, active, exhausted,
                      delta_r, bh_unit, out_budget, pullc, chi_c0, chi_c1,
                      max_lcb, max_pos, ucb_budget, score, est, est_lg_top,
                      in_s, in_q, in_d, s_list, pend, pend_cnt, s_in_cnt, scratch,
                      gpulls, gsums, kinds, mu, sd, zblock, ublock, coin,
                      rec_bracket, rec_arm, rec_reward, rec_forced, rec_jarm, rec_jrew, rec_out,
                      ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms)


# ---------------------------------------------------------------------------
# LUCB

LU_INIT_NEXT, LU_STOPPED, LU_CERT, LU_PULLS, LU_ZPTR, LU_UPTR, LU_STOP_T = range(7)
LUCB_STATEV_LEN = 8


@njit(cache=True, inline="always")
def _lucb_beta(T, n, delta):
    ft = float(T)
    return math.sqrt(math.log(1.25 * n * (ft * ft * ft * ft) / delta) / (2.0 * ft))


@njit(cache=True, inline="always")
def _lucb_draw(arm, kinds, mu, sd, zblock, ublock, lstate):
    lstate[LU_PULLS] += 1
    if kinds[arm] == 0:
        z = zblock[lstate[LU_ZPTR]]
        lstate[LU_ZPTR] += 1
        return mu[arm] + sd[arm] * z
    u = ublock[lstate[LU_UPTR]]
    lstate[LU_UPTR] += 1
    return 1.0 if u < mu[arm] else 0.0


@njit(cache=True, inline="always")
def _lucb_pull(arm, n, delta, lstate, pulls, sums, beta, kinds, mu, sd, zblock, ublock):
    x = _lucb_draw(arm, kinds, mu, sd, zblock, ublock, lstate)
    pulls[arm] += 1
    sums[arm] += x
    beta[arm] = _lucb_beta(pulls[arm], n, delta)
    return x


@njit(cache=True)
def _lucb_leader(n, pulls, sums):
    """Empirical-mean leader among arms with data (lowest id on ties)."""
    best = NEG
    pos = -1
    for i in range(n):
        if pulls[i] == 0:
            continue
        m = sums[i] / pulls[i]
        if m > best:
            best = m
            pos = i
    return pos, best


@njit(cache=True)
def _lucb_round(t, n, delta, eps, lstate, pulls, sums, beta, kinds, mu, sd, zblock, ublock):
    """One LUCB round (two pulls; initialization first, then leader and
    challenger).  Returns (stopped, leader, arm1, x1, arm2, x2); the stopping
    check runs once every arm has data, on the post-pull statistics.
    """
    a1 = -1
    a2 = -1
    x1 = 0.0
    x2 = 0.0
    if lstate[LU_INIT_NEXT] < n:
        a1 = lstate[LU_INIT_NEXT]
        x1 = _lucb_pull(a1, n, delta, lstate, pulls, sums, beta, kinds, mu, sd, zblock, ublock)
        lstate[LU_INIT_NEXT] += 1
        if lstate[LU_INIT_NEXT] < n:
            a2 = lstate[LU_INIT_NEXT]
            x2 = _lucb_pull(a2, n, delta, lstate, pulls, sums, beta, kinds, mu, sd, zblock, ublock)
            lstate[LU_INIT_NEXT] += 1
        else:
            h, _ = _lucb_leader(n, pulls, sums)
            a2 = h
            x2 = _lucb_pull(h, n, delta, lstate, pulls, sums, beta, kinds, mu, sd, zblock, ublock)
    else:
        h, _ = _lucb_leader(n, pulls, sums)
        bestu = NEG
        l = -1
        for i in range(n):
            if i == h:
                continue
            u = sums[i] / pulls[i] + beta[i]
            if u > bestu:
                bestu = u
                l = i
        a1 = h
        x1 = _lucb_pull(h, n, delta, lstate, pulls, sums, beta, kinds, mu, sd, zblock, ublock)
        if l >= 0:
            a2 = l
            x2 = _lucb_pull(l, n, delta, lstate, pulls, sums, beta, kinds, mu, sd, zblock, ublock)
    h, hm = _lucb_leader(n, pulls, sums)
    stopped = 0
    if lstate[LU_INIT_NEXT] >= n:
        bestu = NEG
        for i in range(n):
            if i == h:
                continue
            u = sums[i] / pulls[i] + beta[i]
            if u > bestu:
                bestu = u
        if bestu <= hm - beta[h] + eps:
            lstate[LU_STOPPED] = 1
            lstate[LU_CERT] = h
            lstate[LU_STOP_T] = t
            stopped = 1
    return stopped, h, a1, x1, a2, x2


@njit(cache=True)
def lucb_run(horizon, n, delta, eps, lstate, pulls, sums, beta, kinds, mu, sd,
             zblock, ublock, outputs, rec_a, rec_xa, rec_b, rec_xb):
    """Run LUCB rounds 1..horizon, stopping once the certificate fires.

    Records the anytime leader and both pulls per round; returns the last
    round executed.
    """
    t = 1
    while t <= horizon and lstate[LU_STOPPED] == 0:
        _, h, a1, x1, a2, x2 = _lucb_round(t, n, delta, eps, lstate, pulls, sums, beta,
                                           kinds, mu, sd, zblock, ublock)
        outputs[t - 1] = h
        rec_a[t - 1] = a1
        rec_xa[t - 1] = x1
        rec_b[t - 1] = a2
        rec_xb[t - 1] = x2
        t += 1
    return t - 1


@njit(cache=True)
def run_span_bob(t_end, lucb_delta, lucb_eps, statev, paramv,
                 bsize, boff, cntoff, ids, pulls, sums, ucb, lcb, critp, cnt,
                 init_ptr, active, exhausted,
                 delta_r, bh_unit, out_budget, pullc, chi_c0, chi_c1,
                 max_lcb, max_pos, ucb_budget, score, est, est_lg_top,
                 in_s, in_q, in_d, s_list, pend, pend_cnt, s_in_cnt, scratch,
                 gpulls, gsums, kinds, mu, sd, zblock, ublock, coin,
                 rec_bracket, rec_arm, rec_reward, rec_forced, rec_jarm, rec_jrew, rec_out,
                 ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms,
                 lstate, lpulls, lsums, lbeta, lzblock, lublock,
                 lrec_a, lrec_xa, lrec_b, lrec_xb):
    """Engine round plus LUCB round per iteration; stop when LUCB certifies.

    On termination the engine output's best LCB is compared against the LUCB
    certificate's LCB and the winner lands in statev[FINAL_ARM].  The engine
    side runs on its own reward stream, so its trajectory matches an
    engine-only run with the same seed exactly.
    """
    n = statev[NARMS]
    while statev[T_CUR] < t_end and statev[STOPPED] == 0:
        t = statev[T_CUR]
        out = _engine_round(statev, paramv,
                            bsize, boff, cntoff, ids, pulls, sums, ucb, lcb, critp, cnt,
                            init_ptr, active, exhausted,
                            delta_r, bh_unit, out_budget, pullc, chi_c0, chi_c1,
                            max_lcb, max_pos, ucb_budget, score, est, est_lg_top,
                            in_s, in_q, in_d, s_list, pend, pend_cnt, s_in_cnt, scratch,
                            gpulls, gsums, kinds, mu, sd, zblock, ublock, coin,
                            rec_bracket, rec_arm, rec_reward, rec_forced, rec_jarm, rec_jrew, rec_out,
                            ev_t, ev_kind, ev_bracket, ev_phat, ev_armoff, ev_arms)
        stopped, h, a1, x1, a2, x2 = _lucb_round(t, n, lucb_delta, lucb_eps, lstate,
                                                 lpulls, lsums, lbeta, kinds, mu, sd,
                                                 lzblock, lublock)
        lrec_a[t - 1] = a1
        lrec_xa[t - 1] = x1
        lrec_b[t - 1] = a2
        lrec_xb[t - 1] = x2
        if stopped == 1:
            jhat = lstate[LU_CERT]
            _, engine_lcb = _global_output(statev[NBRACKETS], boff, bsize, ids, active, max_lcb, max_pos)
            jl = lsums[jhat] / lpulls[jhat] - lbeta[jhat]
            if out >= 0 and engine_lcb >= jl:
                statev[FINAL_ARM] = out
            else:
                statev[FINAL_ARM] = jhat
            statev[STOPPED] = 1
            statev[STOP_T] = t
