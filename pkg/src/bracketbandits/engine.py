"""Anytime pure-exploration engine running UCB sampling inside doubling
brackets.

The engine opens brackets of (capped) doubling sizes on a fixed schedule,
round-robins pulls across them, and applies one of four per-round analysis
rules:

* ``"best"`` — recommend the (arm, bracket) pair with the highest
  lower confidence bound under per-bracket output budgets.
* ``"fdr"``  — accept arms whose lower confidence bound clears the
  threshold under a stepped-up (Benjamini-Hochberg style) budget; the
  accepted set has false discovery rate control.
* ``"fwer"`` — accept the pulled arm when it clears the threshold under a
  per-bracket union-bound budget; family-wise error control.
* ``"fwpd"`` — like ``"fdr"`` but with a second re-pull phase per round
  that drives every accepted arm to an individually certified detection;
  requires ``delta < 1/4``.

The per-round loops are compiled (see ``_kernels``); this module owns array
layout, the opening schedule, seeding, and result views.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .confidence import ConfidenceSchedule, DEFAULT_SCHEDULE, reg_log
from .instance import BanditInstance, arm_arrays

OBJECTIVES = ("best", "fdr", "fwer", "fwpd")
MODES = ("theory", "practice")

#: First practice-mode bracket holds 2**PRACTICE_FIRST_EXP arms.
PRACTICE_FIRST_EXP = 6

_EVENT_KIND = {K.EV_S: "discovery", K.EV_Q: "accept", K.EV_D: "detection"}


def opening_time(k: int) -> int:
    """Round at which the k-th bracket (k >= 1) opens."""
    if k < 1:
        raise ValueError("bracket index starts at 1")
    if k == 1:
        return 1
    return (1 << (k - 1)) * (k - 1)


def bracket_size(k: int, n: int, mode: str = "theory") -> int:
    """Number of arms in the k-th bracket: doubling, capped at n."""
    if mode == "practice":
        return min(n, 1 << (PRACTICE_FIRST_EXP + k - 1))
    return min(n, 1 << k)


def draw_bracket_members(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of ``size`` arm ids out of ``n``, without replacement.

    Partial Fisher-Yates over an id pool so the draw consumes exactly
    ``size`` integers from ``rng``; the result is sorted ascending.
    """
    if not 1 <= size <= n:
        raise ValueError("bracket size must be in 1..n")
    pool = np.arange(n, dtype=np.int64)
    for i in range(size):
        j = i + int(rng.integers(n - i))
        pool[i], pool[j] = pool[j], pool[i]
    out = pool[:size]
    out.sort()
    return out


@dataclass(frozen=True)
class AcceptanceEvent:
    """One change of an output set: which arms, when, where."""

    t: int
    kind: str
    bracket: int
    arms: tuple[int, ...]
    threshold_step: int = 0


@dataclass(frozen=True)
class BracketView:
    """Read-only snapshot of one bracket's state."""

    index: int
    size: int
    opened_at: int
    arm_ids: np.ndarray
    pulls: np.ndarray
    means: np.ndarray
    active: bool
    exhausted: bool


class Engine:
    """Driver for one simulated run; see the module docstring for the modes.

    Parameters
    ----------
    instance : the arm distributions and threshold.
    objective : one of ``OBJECTIVES``.
    delta : global risk level in (0, 1); ``"fwpd"`` needs ``delta < 1/4``.
    horizon : number of rounds to simulate.
    seed : int or ``np.random.SeedSequence``; all randomness (memberships,
        rewards, heuristic coins) derives from it through fixed substreams.
    mode : ``"theory"`` (doubling sizes from 2, brackets keep opening) or
        ``"practice"`` (sizes from 64, opening stops at full coverage).
    mu0 : acceptance threshold; defaults to the instance's.
    share_samples : practice only; pool reward statistics across brackets.
    heuristic_prune : practice only; drop dominated brackets
        (best: by output LCB; fdr: by the accepted-arm scoreboard).
    heuristic_select : practice + fdr only; bias bracket choice toward the
        smallest estimated cost to five more acceptances.
    single_bracket : open exactly one size-n bracket at t=1 (uniform
        baseline); overrides the schedule.
    schedule : confidence radius constants.
    """

    def __init__(self, instance: BanditInstance, objective: str, delta: float,
                 horizon: int, seed, *, mode: str = "theory", mu0: float | None = None,
                 share_samples: bool = False, heuristic_prune: bool = False,
                 heuristic_select: bool = False, single_bracket: bool = False,
                 schedule: ConfidenceSchedule = DEFAULT_SCHEDULE) -> None:
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if objective == "fwpd" and delta >= 0.25:
            raise ValueError("fwpd requires delta < 1/4")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if (share_samples or heuristic_prune or heuristic_select) and mode != "practice":
            raise ValueError("sampling heuristics require practice mode")
        if heuristic_select and objective != "fdr":
            raise ValueError("heuristic_select applies to the fdr objective only")
        if heuristic_prune and objective not in ("best", "fdr"):
            raise ValueError("heuristic_prune applies to best or fdr objectives")

        self.instance = instance
        self.objective = objective
        self.delta = float(delta)
        self.horizon = int(horizon)
        self.mode = mode
        self.share_samples = bool(share_samples)
        self.heuristic_prune = bool(heuristic_prune)
        self.heuristic_select = bool(heuristic_select)
        self.single_bracket = bool(single_bracket)
        self.schedule = schedule
        self.n = instance.n
        if mu0 is None:
            mu0 = instance.mu0
        if mu0 is None:
            if objective != "best":
                raise ValueError("mu0 is required for acceptance objectives")
            mu0 = 0.0
        self.mu0 = float(mu0)

        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._root_ss = root
        engine_ss, lucb_ss = root.spawn(2)
        self.lucb_seed = lucb_ss  # consumed by the combined runner
        mem_ss, rew_ss, heur_ss = engine_ss.spawn(3)
        self._mem_rng = np.random.default_rng(mem_ss)

        kinds, mu, sd = arm_arrays(instance)
        self._kinds = kinds
        self._mu = mu
        self._sd = sd

        pulls_per_round = 2 if objective == "fwpd" else 1
        cap = pulls_per_round * self.horizon + 8
        rew_rng = np.random.default_rng(rew_ss)
        self._zblock = rew_rng.standard_normal(cap) if (kinds == 0).any() else np.zeros(1)
        self._ublock = rew_rng.random(cap) if (kinds == 1).any() else np.zeros(1)
        if heuristic_select:
            self._coin = np.random.default_rng(heur_ss).random(self.horizon + 4)
        else:
            self._coin = np.zeros(1)

        n = self.n
        self.statev = np.zeros(K.STATEV_LEN, dtype=np.int64)
        self.paramv = np.zeros(K.PARAMV_LEN, dtype=np.float64)
        self.statev[K.T_CUR] = 1
        self.statev[K.CURSOR] = -1
        self.statev[K.SHARE] = 1 if share_samples else 0
        self.statev[K.HEUR_PRUNE] = 1 if heuristic_prune else 0
        self.statev[K.HEUR_SEL] = 1 if heuristic_select else 0
        self.statev[K.MODE] = OBJECTIVES.index(objective)
        self.statev[K.NARMS] = n
        self.statev[K.EST_AGE] = K.EST_REFRESH_PERIOD
        self.paramv[K.P_DELTA] = self.delta
        self.paramv[K.P_MU0] = self.mu0
        self.paramv[K.P_C4] = schedule.c4
        b_total = max(1, int(np.ceil(np.log2(max(n, 2)))) - (PRACTICE_FIRST_EXP - 1))
        self.paramv[K.P_EST_LG] = reg_log(b_total / self.delta)
        self._b_total = b_total

        # bracket-indexed state (grows at openings)
        self.bsize = np.zeros(0, dtype=np.int64)
        self.boff = np.zeros(1, dtype=np.int64)
        self.cntoff = np.zeros(1, dtype=np.int64)
        self.delta_r = np.zeros(0)
        self.bh_unit = np.zeros(0)
        self.out_budget = np.zeros(0)
        self.pullc = np.zeros(0)
        self.chi_c0 = np.zeros(0)
        self.chi_c1 = np.zeros(0)
        self.init_ptr = np.zeros(0, dtype=np.int64)
        self.active = np.zeros(0, dtype=np.uint8)
        self.exhausted = np.zeros(0, dtype=np.uint8)
        self.max_lcb = np.zeros(0)
        self.max_pos = np.zeros(0, dtype=np.int64)
        self.ucb_budget = np.zeros(0)
        self.score = np.zeros(0, dtype=np.int64)
        self.est = np.zeros(0)
        self.est_lg_top = np.zeros(0)
        self.s_in_cnt = np.zeros(0, dtype=np.int64)
        self.pend_cnt = np.zeros(0, dtype=np.int64)
        self._opened_at: list[int] = []
        # slot-indexed CSR state
        self.ids = np.zeros(0, dtype=np.int64)
        self.pulls = np.zeros(0, dtype=np.int64)
        self.sums = np.zeros(0)
        self.ucb = np.zeros(0)
        self.lcb = np.zeros(0)
        self.critp = np.zeros(0, dtype=np.int64)
        self.cnt = np.zeros(0, dtype=np.int64)
        self.pend = np.zeros(0, dtype=np.int64)
        # arm-indexed state
        self.in_s = np.zeros(n, dtype=np.uint8)
        self.in_q = np.zeros(n, dtype=np.uint8)
        self.in_d = np.zeros(n, dtype=np.uint8)
        self.s_list = np.zeros(n, dtype=np.int64)
        self.scratch = np.zeros(max(n, 1), dtype=np.int64)
        self.gpulls = np.zeros(n, dtype=np.int64)
        self.gsums = np.zeros(n)
        # traces
        h = self.horizon
        self.rec_bracket = np.full(h, -1, dtype=np.int32)
        self.rec_arm = np.full(h, -1, dtype=np.int32)
        self.rec_reward = np.zeros(h)
        self.rec_forced = np.zeros(h, dtype=np.uint8)
        self.rec_jarm = np.full(h, -1, dtype=np.int32)
        self.rec_jrew = np.zeros(h)
        self.rec_out = np.full(h, -1, dtype=np.int32)
        ev_cap = 3 * n + 8
        self.ev_t = np.zeros(ev_cap, dtype=np.int64)
        self.ev_kind = np.zeros(ev_cap, dtype=np.uint8)
        self.ev_bracket = np.zeros(ev_cap, dtype=np.int32)
        self.ev_phat = np.zeros(ev_cap, dtype=np.int64)
        self.ev_armoff = np.zeros(ev_cap + 1, dtype=np.int64)
        self.ev_arms = np.zeros(ev_cap, dtype=np.int32)

    # -- opening schedule ---------------------------------------------------

    @property
    def n_brackets(self) -> int:
        return int(self.statev[K.NBRACKETS])

    def _opening_done(self) -> bool:
        k = self.n_brackets
        if self.single_bracket:
            return k >= 1
        if self.mode == "practice":
            return k >= 1 and self.bsize[k - 1] == self.n
        return False

    def _next_opening(self) -> int:
        """Round of the next bracket opening, or a sentinel past the horizon."""
        if self._opening_done():
            return self.horizon + 1
        if self.single_bracket:
            return 1
        return opening_time(self.n_brackets + 1)

    def _open_bracket(self) -> None:
        k = self.n_brackets + 1
        n = self.n
        size = n if self.single_bracket else bracket_size(k, n, self.mode)
        members = draw_bracket_members(n, size, self._mem_rng)
        delta = self.delta
        d_r = delta / (k * k)
        dp = d_r / (6.4 * reg_log(36.0 / d_r))
        unit = (d_r if self.mode == "practice" else dp) / size
        sched = self.schedule

        self.bsize = np.append(self.bsize, np.int64(size))
        self.boff = np.append(self.boff, self.boff[-1] + size)
        self.cntoff = np.append(self.cntoff, self.cntoff[-1] + size + 1)
        self.delta_r = np.append(self.delta_r, d_r)
        self.bh_unit = np.append(self.bh_unit, unit)
        self.out_budget = np.append(self.out_budget, delta / (size * k * k))
        if delta < 0.25:
            pc = (5.0 / (3.0 * (1.0 - 4.0 * d_r))) * reg_log(1.0 / d_r) * k * k
        else:
            pc = 1.0
        self.pullc = np.append(self.pullc, pc)
        self.chi_c0 = np.append(
            self.chi_c0, (4.0 * (1.0 + 4.0 * dp) / 3.0) * reg_log(5.0 * np.log2(size / dp) / dp))
        self.chi_c1 = np.append(self.chi_c1, 1.0 - 2.0 * dp * (1.0 + 4.0 * dp))
        self.init_ptr = np.append(self.init_ptr, np.int64(0))
        self.active = np.append(self.active, np.uint8(1))
        self.exhausted = np.append(self.exhausted, np.uint8(0))
        self.max_lcb = np.append(self.max_lcb, -np.inf)
        self.max_pos = np.append(self.max_pos, np.int64(-1))
        if self.objective == "fwpd":
            init_budget = delta / pc
        else:
            init_budget = delta
        self.ucb_budget = np.append(self.ucb_budget, init_budget)
        self.score = np.append(self.score, np.int64(0))
        self.est = np.append(self.est, np.inf)
        self.est_lg_top = np.append(self.est_lg_top, reg_log(size * self._b_total / delta))
        self.s_in_cnt = np.append(self.s_in_cnt, np.int64(0))
        self.pend_cnt = np.append(self.pend_cnt, np.int64(0))
        self._opened_at.append(int(self.statev[K.T_CUR]))

        self.ids = np.concatenate([self.ids, members])
        self.pulls = np.concatenate([self.pulls, np.zeros(size, dtype=np.int64)])
        self.sums = np.concatenate([self.sums, np.zeros(size)])
        self.ucb = np.concatenate([self.ucb, np.full(size, -np.inf)])
        self.lcb = np.concatenate([self.lcb, np.full(size, -np.inf)])
        self.critp = np.concatenate([self.critp, np.full(size, size + 1, dtype=np.int64)])
        newcnt = np.zeros(size + 1, dtype=np.int64)
        newcnt[size] = size
        self.cnt = np.concatenate([self.cnt, newcnt])
        self.pend = np.concatenate([self.pend, np.zeros(size, dtype=np.int64)])
        self.statev[K.NBRACKETS] = k

        # Fold in arms already accepted elsewhere and, with sharing, any
        # existing global statistics.
        r = k - 1
        lo = int(self.boff[r])
        if self.objective in ("fdr", "fwpd"):
            present = np.isin(members, np.flatnonzero(self.in_s))
            for rel in np.flatnonzero(present):
                arm = int(members[rel])
                self.s_in_cnt[r] += 1
                if self.objective == "fwpd" and not self.in_d[arm]:
                    self.pend[lo + self.pend_cnt[r]] = lo + rel
                    self.pend_cnt[r] += 1
        if self.share_samples:
            excl = self.in_q if self.objective == "fwer" else self.in_s
            K._rebuild_ucb_at(r, float(self.ucb_budget[r]), sched.c4, self.statev,
                              self.boff, self.bsize, self.ids, self.pulls, self.sums,
                              self.gpulls, self.gsums, self.ucb, excl)
            if self.objective in ("fdr", "fwpd"):
                for rel in range(size):
                    arm = int(members[rel])
                    T = int(self.gpulls[arm])
                    if T == 0:
                        continue
                    mean = self.gsums[arm] / T
                    newp = K._critical_p(sched.c4, T, mean, self.mu0, float(self.bh_unit[r]), size)
                    K._set_critp(lo + rel, int(newp), r, self.critp, self.cnt, self.cntoff)
            elif self.objective == "best":
                for rel in range(size):
                    arm = int(members[rel])
                    T = int(self.gpulls[arm])
                    if T == 0:
                        continue
                    mean = self.gsums[arm] / T
                    v = mean - K._rad(sched.c4, T, float(self.out_budget[r]), self.statev)
                    self.lcb[lo + rel] = v
                K._bracket_max_lcb(r, self.boff, self.bsize, self.lcb, self.max_lcb, self.max_pos)

    # -- running ------------------------------------------------------------

    def _kernel_args(self):
        return (self.statev, self.paramv,
                self.bsize, self.boff, self.cntoff, self.ids, self.pulls, self.sums,
                self.ucb, self.lcb, self.critp, self.cnt,
                self.init_ptr, self.active, self.exhausted,
                self.delta_r, self.bh_unit, self.out_budget, self.pullc, self.chi_c0, self.chi_c1,
                self.max_lcb, self.max_pos, self.ucb_budget, self.score, self.est, self.est_lg_top,
                self.in_s, self.in_q, self.in_d, self.s_list, self.pend, self.pend_cnt,
                self.s_in_cnt, self.scratch,
                self.gpulls, self.gsums, self._kinds, self._mu, self._sd,
                self._zblock, self._ublock, self._coin,
                self.rec_bracket, self.rec_arm, self.rec_reward, self.rec_forced,
                self.rec_jarm, self.rec_jrew, self.rec_out,
                self.ev_t, self.ev_kind, self.ev_bracket, self.ev_phat, self.ev_armoff, self.ev_arms)

    def run(self, until: int | None = None):
        """Advance the simulation to round ``until`` (default: the horizon)."""
        target = self.horizon if until is None else min(int(until), self.horizon)
        while True:
            t = int(self.statev[K.T_CUR])
            if t > target:
                break
            while not self._opening_done() and t >= self._next_opening():
                self._open_bracket()
            t_end = min(target + 1, self._next_opening())
            K.run_span(t_end, *self._kernel_args())
        return self

    # -- results ------------------------------------------------------------

    @property
    def t(self) -> int:
        """Next round to execute (rounds completed = t - 1)."""
        return int(self.statev[K.T_CUR])

    @property
    def rounds_completed(self) -> int:
        return self.t - 1

    @property
    def total_pulls(self) -> int:
        return int(self.statev[K.TOT_PULLS])

    @property
    def noop_rounds(self) -> int:
        return int(self.statev[K.NOOPS])

    @property
    def clamp_events(self) -> int:
        return int(self.statev[K.CLAMPS])

    @property
    def outputs(self) -> np.ndarray:
        """Per-round recommended arm (best objective; -1 before any data)."""
        return self.rec_out[: self.rounds_completed]

    def accepted(self) -> np.ndarray:
        """Arm ids in the accepted set (fdr/fwpd: discoveries; fwer: accepts)."""
        mask = self.in_q if self.objective == "fwer" else self.in_s
        return np.flatnonzero(mask)

    def detected(self) -> np.ndarray:
        return np.flatnonzero(self.in_d)

    def events(self) -> list[AcceptanceEvent]:
        out = []
        for e in range(int(self.statev[K.EV_N])):
            arms = self.ev_arms[self.ev_armoff[e]: self.ev_armoff[e + 1]]
            out.append(AcceptanceEvent(
                t=int(self.ev_t[e]), kind=_EVENT_KIND[int(self.ev_kind[e])],
                bracket=int(self.ev_bracket[e]), arms=tuple(int(a) for a in arms),
                threshold_step=int(self.ev_phat[e])))
        return out

    @property
    def brackets(self) -> list[BracketView]:
        out = []
        for r in range(self.n_brackets):
            lo, size = int(self.boff[r]), int(self.bsize[r])
            pulls = self.pulls[lo: lo + size]
            if self.share_samples:
                gp = self.gpulls[self.ids[lo: lo + size]]
                means = np.where(gp > 0, self.gsums[self.ids[lo: lo + size]] / np.maximum(gp, 1), np.nan)
            else:
                means = np.where(pulls > 0, self.sums[lo: lo + size] / np.maximum(pulls, 1), np.nan)
            out.append(BracketView(
                index=r, size=size, opened_at=self._opened_at[r],
                arm_ids=self.ids[lo: lo + size].copy(), pulls=pulls.copy(), means=means,
                active=bool(self.active[r]), exhausted=bool(self.exhausted[r])))
        return out

    def arm_pull_totals(self) -> np.ndarray:
        """Physical pulls per arm, summed over brackets."""
        out = np.zeros(self.n, dtype=np.int64)
        np.add.at(out, self.ids, self.pulls)
        return out

    def trace(self) -> dict[str, np.ndarray]:
        """Per-round record arrays trimmed to the completed rounds."""
        m = self.rounds_completed
        tr = {
            "bracket": self.rec_bracket[:m].copy(),
            "arm": self.rec_arm[:m].copy(),
            "reward": self.rec_reward[:m].copy(),
            "forced": self.rec_forced[:m].copy(),
            "output": self.rec_out[:m].copy(),
        }
        if self.objective == "fwpd":
            tr["repull_arm"] = self.rec_jarm[:m].copy()
            tr["repull_reward"] = self.rec_jrew[:m].copy()
        return tr
