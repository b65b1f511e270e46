"""LUCB baseline and the combined engine+LUCB runner.

LUCB pulls the empirical leader and its strongest challenger each round and
stops when the challenger's upper confidence bound falls below the leader's
lower bound plus the accuracy slack.  The combined runner interleaves one
engine round and one LUCB round (three pulls per round) on separate reward
streams; it emits the engine's anytime recommendation every round and, when
LUCB's certificate fires, terminates with whichever of the two candidate
arms has the better lower confidence bound.  Because the streams are
separate, the engine component of a combined run is pull-for-pull identical
to an engine-only run with the same seed.
"""
from __future__ import annotations

import numpy as np

from . import _kernels as K
from .engine import Engine
from .instance import BanditInstance, arm_arrays


class LucbRun:
    """Plain LUCB with an anytime output stream.

    Rounds pull two arms: during initialization the next two unseen arms (an
    odd tail pairs the last unseen arm with the current leader), afterwards
    the leader and challenger.  ``eps`` is the accuracy slack of the stopping
    rule; ``horizon`` caps the number of rounds.
    """

    def __init__(self, instance: BanditInstance, delta: float, eps: float,
                 horizon: int, seed) -> None:
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if eps < 0.0:
            raise ValueError("eps must be >= 0")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.instance = instance
        self.delta = float(delta)
        self.eps = float(eps)
        self.horizon = int(horizon)
        n = instance.n
        self.n = n
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rng = np.random.default_rng(root)
        kinds, mu, sd = arm_arrays(instance)
        self._kinds, self._mu, self._sd = kinds, mu, sd
        cap = 2 * self.horizon + 8
        self._zblock = rng.standard_normal(cap) if (kinds == 0).any() else np.zeros(1)
        self._ublock = rng.random(cap) if (kinds == 1).any() else np.zeros(1)
        self.lstate = np.zeros(K.LUCB_STATEV_LEN, dtype=np.int64)
        self.pulls = np.zeros(n, dtype=np.int64)
        self.sums = np.zeros(n)
        self.beta = np.zeros(n)
        self.outputs = np.full(self.horizon, -1, dtype=np.int32)
        self.rec_a = np.full(self.horizon, -1, dtype=np.int32)
        self.rec_xa = np.zeros(self.horizon)
        self.rec_b = np.full(self.horizon, -1, dtype=np.int32)
        self.rec_xb = np.zeros(self.horizon)
        self.rounds_completed = 0

    def run(self) -> "LucbRun":
        self.rounds_completed = int(K.lucb_run(
            self.horizon, self.n, self.delta, self.eps, self.lstate,
            self.pulls, self.sums, self.beta, self._kinds, self._mu, self._sd,
            self._zblock, self._ublock, self.outputs,
            self.rec_a, self.rec_xa, self.rec_b, self.rec_xb))
        return self

    @property
    def stopped(self) -> bool:
        return bool(self.lstate[K.LU_STOPPED])

    @property
    def certified_arm(self) -> int | None:
        return int(self.lstate[K.LU_CERT]) if self.stopped else None

    @property
    def stop_round(self) -> int | None:
        return int(self.lstate[K.LU_STOP_T]) if self.stopped else None

    @property
    def total_pulls(self) -> int:
        return int(self.lstate[K.LU_PULLS])


class CombinedRun:
    """Engine (best objective) and LUCB in lockstep; terminates on the
    LUCB certificate with the better-certified of the two candidates.

    Extra engine keyword arguments (mode, heuristics, schedule, ...) pass
    through to :class:`~bracketbandits.engine.Engine`.
    """

    def __init__(self, instance: BanditInstance, delta: float, eps: float,
                 horizon: int, seed, **engine_kwargs) -> None:
        self.engine = Engine(instance, "best", delta, horizon, seed, **engine_kwargs)
        self.delta = float(delta)
        self.eps = float(eps)
        self.horizon = int(horizon)
        n = instance.n
        self.n = n
        lrng = np.random.default_rng(self.engine.lucb_seed)
        kinds = self.engine._kinds
        cap = 2 * self.horizon + 8
        self._lzblock = lrng.standard_normal(cap) if (kinds == 0).any() else np.zeros(1)
        self._lublock = lrng.random(cap) if (kinds == 1).any() else np.zeros(1)
        self.lstate = np.zeros(K.LUCB_STATEV_LEN, dtype=np.int64)
        self.lpulls = np.zeros(n, dtype=np.int64)
        self.lsums = np.zeros(n)
        self.lbeta = np.zeros(n)
        self.lrec_a = np.full(self.horizon, -1, dtype=np.int32)
        self.lrec_xa = np.zeros(self.horizon)
        self.lrec_b = np.full(self.horizon, -1, dtype=np.int32)
        self.lrec_xb = np.zeros(self.horizon)

    def run(self) -> "CombinedRun":
        eng = self.engine
        target = self.horizon
        while True:
            if eng.statev[K.STOPPED]:
                break
            t = int(eng.statev[K.T_CUR])
            if t > target:
                break
            while not eng._opening_done() and t >= eng._next_opening():
                eng._open_bracket()
            t_end = min(target + 1, eng._next_opening())
            K.run_span_bob(t_end, self.delta, self.eps, *eng._kernel_args(),
                           self.lstate, self.lpulls, self.lsums, self.lbeta,
                           self._lzblock, self._lublock,
                           self.lrec_a, self.lrec_xa, self.lrec_b, self.lrec_xb)
        return self

    @property
    def terminated(self) -> bool:
        return bool(self.engine.statev[K.STOPPED])

    @property
    def final_arm(self) -> int | None:
        return int(self.engine.statev[K.FINAL_ARM]) if self.terminated else None

    @property
    def stop_round(self) -> int | None:
        return int(self.engine.statev[K.STOP_T]) if self.terminated else None

    @property
    def outputs(self) -> np.ndarray:
        """Per-round engine recommendations up to (and including) the stop."""
        return self.engine.outputs

    @property
    def total_pulls(self) -> int:
        return self.engine.total_pulls + int(self.lstate[K.LU_PULLS])
