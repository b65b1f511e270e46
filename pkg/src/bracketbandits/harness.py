"""Simulation harness: single trials, metrics, campaigns, persistence.

A *trial* is one seeded run of an algorithm on an instance.  A *campaign* is
``trials`` independent trials whose seeds derive from ``SeedSequence([master,
trial_index])``, so results are identical regardless of how many worker
processes execute them.  Campaign outputs:

* ``metrics.csv``      one row per trial, fixed columns, no wall-clock data
  (byte-deterministic across reruns and worker counts);
* ``checkpoints.csv``  discovery-set sizes and false-discovery proportions at
  geometric times;
* ``timings.csv``      wall-clock seconds per trial (not hashed);
* ``summary.json``     aggregate statistics plus the SHA-256 of the two
  deterministic CSV files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .engine import Engine, OBJECTIVES
from .instance import BanditInstance, instance_from_dict, instance_to_dict
from .lucb import CombinedRun, LucbRun

ALGORITHMS = ("engine", "lucb", "combined")

_CAMPAIGN_FORMAT = "campaign/1"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a campaign except the trial index."""

    algorithm: str
    delta: float
    horizon: int
    trials: int = 1
    master_seed: int = 0
    objective: str = "best"          # engine only
    mode: str = "theory"
    mu0: float | None = None
    eps: float = 0.0                 # lucb / combined slack
    eps_good: float | None = None    # goodness margin for output metrics
    share_samples: bool = False
    heuristic_prune: bool = False
    heuristic_select: bool = False
    single_bracket: bool = False
    ks: tuple[int, ...] = (1,)
    checkpoints: tuple[int, ...] | None = None   # default: geometric grid

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.horizon < 1 or self.trials < 1:
            raise ValueError("horizon and trials must be >= 1")
        if any(k < 1 for k in self.ks):
            raise ValueError("ks must be positive")
        if list(self.ks) != sorted(set(self.ks)):
            raise ValueError("ks must be strictly increasing")
        if self.checkpoints is not None:
            c = list(self.checkpoints)
            if not c or c != sorted(set(c)) or c[0] < 1 or c[-1] > self.horizon:
                raise ValueError("checkpoints must be strictly increasing in [1, horizon]")

    def checkpoint_grid(self) -> list[int]:
        if self.checkpoints is not None:
            return list(self.checkpoints)
        return checkpoint_times(self.horizon)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ks"] = list(self.ks)
        d["checkpoints"] = None if self.checkpoints is None else list(self.checkpoints)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        d["ks"] = tuple(d.get("ks", [1]))
        if d.get("checkpoints") is not None:
            d["checkpoints"] = tuple(d["checkpoints"])
        return RunConfig(**d)


def trial_seed(master_seed: int, trial: int) -> np.random.SeedSequence:
    """The seed of one trial; depends only on (master, index)."""
    return np.random.SeedSequence([int(master_seed), int(trial)])


def checkpoint_times(horizon: int) -> list[int]:
    """1, 2, 4, ... up to and always including the horizon."""
    out = []
    t = 1
    while t < horizon:
        out.append(t)
        t *= 2
    out.append(horizon)
    return out


# ---------------------------------------------------------------------------
# per-trial metrics


@dataclass
class TrialResult:
    trial: int
    final_arm: int
    stop_round: int                      # 0 = ran to horizon without a stop
    total_pulls: int
    noop_rounds: int
    clamp_events: int
    tau_simple: int                      # 0 = not applicable
    tau_simple_censored: bool
    tau_k: dict[int, int]                # k -> round; 0 = never (censored)
    tau_det_k: dict[int, int]
    n_accepted: int
    n_false: int
    n_true: int
    n_detected: int
    checkpoints: list[tuple[int, int, int]]   # (t, |S|, |S ∩ nulls|)
    trace_sha: str
    seconds: float


def _good_arms(instance: BanditInstance, eps_good: float | None) -> np.ndarray:
    means = instance.means()
    if eps_good is None:
        eps_good = instance.epsilon if instance.epsilon is not None else 0.0
    return np.flatnonzero(means > means.max() - eps_good) if eps_good > 0 else \
        np.flatnonzero(means == means.max())


def _alternative_arms(instance: BanditInstance, mu0: float | None) -> np.ndarray:
    if mu0 is None:
        mu0 = instance.mu0
    if mu0 is None:
        raise ValueError("mu0 required for acceptance metrics")
    return np.flatnonzero(instance.means() > mu0)


def tau_from_outputs(outputs: np.ndarray, good: np.ndarray) -> tuple[int, bool]:
    """1 + the last round with a not-good recommendation (0 if none).

    A run whose *final* recommendation is still bad is right-censored: the
    value (the number of observed rounds) is only a lower bound and the
    second element is True.
    """
    bad = ~np.isin(outputs, good)
    if not bad.any():
        return 0, False
    last_bad = int(np.flatnonzero(bad)[-1]) + 1
    if last_bad == len(outputs):
        return len(outputs), True
    return last_bad + 1, False


def _tau_k_from_events(events, kinds: tuple[str, ...], alt: set[int],
                       ks: tuple[int, ...]) -> dict[int, int]:
    """First round at which the running set holds >= k alternative arms."""
    out = {k: 0 for k in ks}
    count = 0
    seen: set[int] = set()
    for e in events:
        if e.kind not in kinds:
            continue
        for a in e.arms:
            if a in seen:
                continue
            seen.add(a)
            if a in alt:
                count += 1
        for k in ks:
            if out[k] == 0 and count >= k:
                out[k] = e.t
    return out


def _checkpoint_counts(events, kinds: tuple[str, ...], alt: set[int],
                       times: list[int]) -> list[tuple[int, int, int]]:
    rows = []
    idx = 0
    n_s = 0
    n_false = 0
    seen: set[int] = set()
    evs = [e for e in events if e.kind in kinds]
    for t in times:
        while idx < len(evs) and evs[idx].t <= t:
            for a in evs[idx].arms:
                if a not in seen:
                    seen.add(a)
                    n_s += 1
                    if a not in alt:
                        n_false += 1
            idx += 1
        rows.append((t, n_s, n_false))
    return rows


def _trace_sha(arrays: list[np.ndarray], extras: list[bytes] = ()) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    for b in extras:
        h.update(b)
    return h.hexdigest()


def run(instance: BanditInstance, config: RunConfig, trial: int = 0):
    """Execute one seeded trial; returns the raw runner (Engine, LucbRun or
    CombinedRun) whose per-round records form the trial's trace."""
    seed = trial_seed(config.master_seed, trial)
    if config.algorithm == "lucb":
        return LucbRun(instance, config.delta, config.eps, config.horizon, seed).run()
    if config.algorithm == "combined":
        r = CombinedRun(instance, config.delta, config.eps, config.horizon, seed,
                        mode=config.mode, share_samples=config.share_samples,
                        heuristic_prune=config.heuristic_prune,
                        single_bracket=config.single_bracket, mu0=config.mu0)
        r.run()
        return r
    eng = Engine(instance, config.objective, config.delta, config.horizon, seed,
                 mode=config.mode, mu0=config.mu0, share_samples=config.share_samples,
                 heuristic_prune=config.heuristic_prune,
                 heuristic_select=config.heuristic_select,
                 single_bracket=config.single_bracket)
    return eng.run()


def baseline_uniform_bh(instance: BanditInstance, config: RunConfig,
                        trial: int = 0) -> Engine:
    """The single-bracket pinned run: one size-n bracket opened at round 1,
    uniform cycling plus the same stepped acceptance rule."""
    from dataclasses import replace
    return run(instance, replace(config, algorithm="engine", single_bracket=True),
               trial)


def run_trial(instance: BanditInstance, config: RunConfig, trial: int) -> TrialResult:
    """Execute one seeded trial and compute its metrics."""
    t0 = time.perf_counter()
    tau_simple, censored = 0, False
    tau_k: dict[int, int] = {}
    tau_det: dict[int, int] = {}
    ckpt: list[tuple[int, int, int]] = []
    n_acc = n_false = n_true = n_det = 0
    stop_round = 0
    final_arm = -1

    obj = run(instance, config, trial)

    if config.algorithm == "lucb":
        m = obj.rounds_completed
        good = _good_arms(instance, config.eps_good)
        tau_simple, censored = tau_from_outputs(obj.outputs[:m], good)
        stop_round = obj.stop_round or 0
        final_arm = obj.certified_arm if obj.certified_arm is not None else -1
        sha = _trace_sha([obj.rec_a[:m], obj.rec_xa[:m], obj.rec_b[:m], obj.rec_xb[:m]])
        return TrialResult(trial, final_arm, stop_round, obj.total_pulls, 0, 0,
                           tau_simple, censored, {}, {}, 0, 0, 0, 0, [], sha,
                           time.perf_counter() - t0)

    if config.algorithm == "combined":
        eng = obj.engine
        m = eng.rounds_completed
        good = _good_arms(instance, config.eps_good)
        tau_simple, censored = tau_from_outputs(eng.outputs, good)
        stop_round = obj.stop_round or 0
        final_arm = obj.final_arm if obj.final_arm is not None else -1
        sha = _trace_sha([eng.rec_bracket[:m], eng.rec_arm[:m], eng.rec_reward[:m],
                          obj.lrec_a[:m], obj.lrec_xa[:m]])
        return TrialResult(trial, final_arm, stop_round, obj.total_pulls,
                           eng.noop_rounds, eng.clamp_events, tau_simple, censored,
                           {}, {}, 0, 0, 0, 0, [], sha, time.perf_counter() - t0)

    eng = obj
    events = eng.events()
    if config.objective == "best":
        good = _good_arms(instance, config.eps_good)
        tau_simple, censored = tau_from_outputs(eng.outputs, good)
        final_arm = int(eng.outputs[-1]) if eng.rounds_completed else -1
    else:
        alt = set(_alternative_arms(instance, config.mu0).tolist())
        kinds = ("accept",) if config.objective == "fwer" else ("discovery",)
        tau_k = _tau_k_from_events(events, kinds, alt, config.ks)
        ckpt = _checkpoint_counts(events, kinds, alt, config.checkpoint_grid())
        acc = eng.accepted()
        n_acc = len(acc)
        n_true = int(np.isin(acc, list(alt)).sum())
        n_false = n_acc - n_true
        if config.objective == "fwpd":
            tau_det = _tau_k_from_events(events, ("detection",), alt, config.ks)
            n_det = len(eng.detected())
    ev_bytes = json.dumps([(e.t, e.kind, e.bracket, list(e.arms)) for e in events],
                          separators=(",", ":")).encode()
    m = eng.rounds_completed
    sha = _trace_sha([eng.rec_bracket[:m], eng.rec_arm[:m], eng.rec_reward[:m],
                      eng.rec_out[:m]], [ev_bytes])
    return TrialResult(trial, final_arm, stop_round, eng.total_pulls,
                       eng.noop_rounds, eng.clamp_events, tau_simple, censored,
                       tau_k, tau_det, n_acc, n_false, n_true, n_det, ckpt, sha,
                       time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class AggregateStats:
    """Mean / sd / normal 95% CI of the uncensored values."""

    n: int
    n_censored: int
    mean: float
    sd: float
    ci_lo: float
    ci_hi: float

    @staticmethod
    def of(values, censored=None) -> "AggregateStats":
        v = np.asarray(values, dtype=np.float64)
        if censored is not None:
            c = np.asarray(censored, dtype=bool)
            n_cens = int(c.sum())
            v = v[~c]
        else:
            n_cens = 0
        if v.size == 0:
            return AggregateStats(0, n_cens, math.nan, math.nan, math.nan, math.nan)
        mean = float(v.mean())
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        half = 1.96 * sd / math.sqrt(v.size) if v.size else math.nan
        return AggregateStats(int(v.size), n_cens, mean, sd, mean - half, mean + half)


def aggregate_tau_k(results: list[TrialResult], k: int) -> AggregateStats:
    vals = [r.tau_k.get(k, 0) for r in results]
    cens = [v == 0 for v in vals]
    vals = [v if v else 0 for v in vals]
    return AggregateStats.of(vals, cens)


def aggregate_tau_simple(results: list[TrialResult]) -> AggregateStats:
    return AggregateStats.of([r.tau_simple for r in results],
                             [r.tau_simple_censored for r in results])


def final_fdp(r: TrialResult) -> float:
    return r.n_false / max(r.n_accepted, 1)


# ---------------------------------------------------------------------------
# campaigns


def _job(payload):
    inst_d, conf_d, trial = payload
    instance = instance_from_dict(inst_d)
    config = RunConfig.from_dict(conf_d)
    return run_trial(instance, config, trial)


def run_campaign(instance: BanditInstance, config: RunConfig,
                 workers: int = 1) -> list[TrialResult]:
    """All trials of a campaign, in trial order, independent of ``workers``."""
    payloads = [(instance_to_dict(instance), config.to_dict(), t)
                for t in range(config.trials)]
    if workers <= 1:
        return [_job(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_job, payloads, chunksize=max(1, config.trials // (4 * workers))))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_campaign_outputs(out_dir, instance: BanditInstance, config: RunConfig,
                           results: list[TrialResult]) -> dict:
    """Write metrics/checkpoints/timings CSVs plus summary.json; returns the
    summary dict (which includes the deterministic files' SHA-256)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ks = config.ks

    mpath = out / "metrics.csv"
    with open(mpath, "w", newline="") as f:
        w = csv.writer(f)
        header = ["trial", "final_arm", "stop_round", "total_pulls", "noop_rounds",
                  "clamp_events", "tau_simple", "tau_simple_censored",
                  "n_accepted", "n_false", "n_true", "n_detected"]
        header += [f"tau_{k}" for k in ks] + [f"tau_det_{k}" for k in ks]
        header += ["trace_sha256"]
        w.writerow(header)
        for r in results:
            row = [r.trial, r.final_arm, r.stop_round, r.total_pulls, r.noop_rounds,
                   r.clamp_events, r.tau_simple, int(r.tau_simple_censored),
                   r.n_accepted, r.n_false, r.n_true, r.n_detected]
            row += [r.tau_k.get(k, 0) for k in ks] + [r.tau_det_k.get(k, 0) for k in ks]
            row += [r.trace_sha]
            w.writerow([_fmt(x) for x in row])

    cpath = out / "checkpoints.csv"
    with open(cpath, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trial", "t", "n_accepted", "n_false", "n_true", "fdp"])
        for r in results:
            for (t, n_s, n_f) in r.checkpoints:
                w.writerow([r.trial, t, n_s, n_f, n_s - n_f, repr(n_f / max(n_s, 1))])

    # plot-ready aggregate series: one row per checkpoint
    if any(r.checkpoints for r in results):
        grid = [t for (t, _, _) in results[0].checkpoints]
        with open(out / "series.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "fdp_mean", "fdp_ci_lo", "fdp_ci_hi",
                        "tpr_mean", "tpr_ci_lo", "tpr_ci_hi"])
            for i, t in enumerate(grid):
                fdps = [r.checkpoints[i][2] / max(r.checkpoints[i][1], 1)
                        for r in results]
                tprs = [r.checkpoints[i][1] - r.checkpoints[i][2] for r in results]
                fa = AggregateStats.of(fdps)
                ta = AggregateStats.of(tprs)
                w.writerow([t, repr(fa.mean), repr(fa.ci_lo), repr(fa.ci_hi),
                            repr(ta.mean), repr(ta.ci_lo), repr(ta.ci_hi)])

    with open(out / "timings.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trial", "seconds"])
        for r in results:
            w.writerow([r.trial, repr(r.seconds)])

    summary = {
        "format": "campaign-summary/1",
        "config": config.to_dict(),
        "instance_label": instance.label,
        "n_trials": len(results),
        "metrics_sha256": hashlib.sha256(mpath.read_bytes()).hexdigest(),
        "checkpoints_sha256": hashlib.sha256(cpath.read_bytes()).hexdigest(),
    }
    if config.algorithm != "engine" or config.objective == "best":
        agg = aggregate_tau_simple(results)
        summary["tau_simple"] = asdict(agg)
    else:
        summary["final_fdp_mean"] = float(np.mean([final_fdp(r) for r in results]))
        for k in ks:
            summary[f"tau_{k}"] = asdict(aggregate_tau_k(results, k))
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def instance_from_spec(spec: dict, base_dir=".") -> BanditInstance:
    """Resolve an instance source: a file reference ``{"path": ...}``, a
    generator call ``{"generator": "two_spike"|"gaussian"|"bernoulli", ...}``,
    or an inline instance document."""
    from . import instance as inst_mod

    if not isinstance(spec, dict):
        raise ValueError("instance spec must be an object")
    if "path" in spec:
        return inst_mod.load_instance(Path(base_dir) / spec["path"])
    if "generator" in spec:
        kw = {k: v for k, v in spec.items() if k != "generator"}
        gen = spec["generator"]
        if gen == "two_spike":
            return inst_mod.two_spike(**kw)
        if gen == "gaussian":
            return inst_mod.gaussian_instance(**kw)
        if gen == "bernoulli":
            return inst_mod.bernoulli_instance(**kw)
        raise ValueError(f"unknown instance generator {gen!r}")
    return instance_from_dict(spec)


def load_campaign_file(path) -> tuple[BanditInstance, list[tuple[str, RunConfig]]]:
    """Parse a campaign JSON file.

    Schema (``"format": "campaign/1"``): an ``instance`` source plus run
    settings.  Either the top level carries one run's settings directly, or a
    ``runs`` array lists several ``{"name": ..., overrides...}`` entries that
    each inherit the top-level settings.
    """
    with open(path) as f:
        d = json.load(f)
    if not isinstance(d, dict) or d.get("format") != _CAMPAIGN_FORMAT:
        raise ValueError(f"not a campaign file (format tag "
                         f"{d.get('format') if isinstance(d, dict) else None!r})")
    if "instance" not in d:
        raise ValueError("campaign file lacks an 'instance' source")
    instance = instance_from_spec(d["instance"], base_dir=Path(path).parent)
    keys = {f.name for f in RunConfig.__dataclass_fields__.values()}
    shared = {k: v for k, v in d.items() if k in keys}
    entries = d.get("runs") or [{"name": d.get("name", "run0")}]
    out = []
    names = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ValueError("each runs[] entry must be an object")
        name = str(entry.get("name", f"run{i}"))
        if name in names:
            raise ValueError(f"duplicate run name {name!r}")
        names.add(name)
        conf = dict(shared)
        conf.update({k: v for k, v in entry.items() if k in keys})
        out.append((name, RunConfig.from_dict(conf)))
    return instance, out


def replay_trial(instance: BanditInstance, config: RunConfig, trial: int,
                 expected_sha: str) -> bool:
    """Re-run one trial and compare its trace hash against a recorded value."""
    return run_trial(instance, config, trial).trace_sha == expected_sha
