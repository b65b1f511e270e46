"""Command-line interface.

Subcommands: ``simulate`` (campaign runner), ``hardness`` (sample-complexity
functionals), ``ingest`` (captions / screens data), ``verify`` (coverage-bound
oracle), ``replay`` (trace-hash reproduction check).

Exit codes: 0 success, 1 violation or failure, 2 usage error.  All commands
are deterministic given their inputs and ``--seed``; flags override campaign
file values, which override built-in defaults.  The default output root is
``$BRACKETBANDITS_OUT_DIR`` (falling back to ``./runs``).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .instance import (
    hardness_report,
    instance_to_dict,
    load_instance,
    save_instance,
    two_spike,
)

OUT_ENV = "BRACKETBANDITS_OUT_DIR"


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _fail(msg: str) -> int:
    print(f"failed: {msg}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# simulate


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="run a simulation campaign")
    p.add_argument("campaign", help="campaign JSON file")
    p.add_argument("-o", "--out", help="output directory "
                   f"(default ${OUT_ENV}/<campaign-stem>)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="worker processes (default: available cores)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--horizon", type=int, help="override the horizon")


def cmd_simulate(args) -> int:
    try:
        instance, runs = harness.load_campaign_file(args.campaign)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        return _err(f"{args.campaign}: {exc}")
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    try:
        runs = [(name, replace(cfg, **overrides)) for name, cfg in runs]
    except ValueError as exc:
        return _err(str(exc))

    # validate before any sampling
    ks0 = runs[0][1].ks
    for name, cfg in runs:
        if cfg.algorithm == "engine" and cfg.objective != "best":
            if cfg.mu0 is None and instance.mu0 is None:
                return _err(f"run {name!r}: objective {cfg.objective!r} needs mu0 "
                            "(set it on the run or the instance)")
            if cfg.objective == "fwpd" and cfg.delta >= 0.25:
                return _err(f"run {name!r}: fwpd needs delta < 1/4")
        if cfg.ks != ks0:
            return _err("all runs in one campaign must share the same ks")

    out = Path(args.out) if args.out else _out_root() / Path(args.campaign).stem
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _err(f"cannot create output directory {out}: {exc}")

    resolved = {
        "format": "campaign-resolved/1",
        "instance": instance_to_dict(instance),
        "runs": [{"name": name, **cfg.to_dict()} for name, cfg in runs],
    }
    (out / "campaign.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))

    summaries = {}
    combined_rows = []
    header = None
    for name, cfg in runs:
        results = harness.run_campaign(instance, cfg, workers=args.workers)
        rdir = out / name
        summaries[name] = harness.write_campaign_outputs(rdir, instance, cfg, results)
        with open(rdir / "metrics.csv", newline="") as f:
            rows = list(csv.reader(f))
        if header is None:
            header = ["run"] + rows[0]
        for r in rows[1:]:
            combined_rows.append([name] + r)
        print(f"{name}: {len(results)} trials, "
              f"metrics sha256 {summaries[name]['metrics_sha256'][:16]}...")
    with open(out / "all_metrics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(combined_rows)
    (out / "campaign_summary.json").write_text(
        json.dumps({"format": "campaign-summary/1", "runs": summaries},
                   indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# hardness


def _add_hardness(sub):
    p = sub.add_parser("hardness", help="evaluate sample-complexity functionals")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--instance", help="instance JSON file")
    src.add_argument("--two-spike", nargs=2, type=int, metavar=("N", "M"),
                     help="generate a two-spike instance")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--eps", type=float, help="good-arm margin")
    p.add_argument("--mu0", type=float, help="discovery threshold")
    p.add_argument("--ks", help="comma-separated k values")
    p.add_argument("--gen-seed", type=int, default=0,
                   help="spike-placement seed for --two-spike")
    p.add_argument("-o", "--out", help="report file (default: stdout)")


def cmd_hardness(args) -> int:
    try:
        if args.instance:
            instance = load_instance(args.instance)
        else:
            n, m = args.two_spike
            instance = two_spike(n, m, mu0=args.mu0 if args.mu0 is not None else 0.0,
                                 eps=args.eps if args.eps is not None else 0.5,
                                 seed=args.gen_seed)
        ks = tuple(int(s) for s in args.ks.split(",")) if args.ks else None
        report = hardness_report(instance, args.delta, eps=args.eps,
                                 mu0=args.mu0, ks=ks)
    except (OSError, ValueError) as exc:
        return _err(str(exc))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# ingest


def _add_ingest(sub):
    p = sub.add_parser("ingest", help="build instances from raw data files")
    ssub = p.add_subparsers(dest="source", required=True)

    c = ssub.add_parser("captions", help="caption votes CSV (id,positive,total)")
    c.add_argument("file")
    c.add_argument("-o", "--out", required=True, help="instance JSON to write")
    c.add_argument("--mu0", type=float)
    c.add_argument("--epsilon", type=float)

    s = ssub.add_parser("screens", help="screen Z-scores CSV (gene_id,z1,z2)")
    s.add_argument("file")
    s.add_argument("-o", "--out", required=True,
                   help="mixture JSON (or instance JSON with --synth-n)")
    s.add_argument("--grid-step", type=float, default=0.01)
    s.add_argument("--lam", type=float, default=1e-4,
                   help="entropic regularization strength")
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--synth-n", type=int,
                   help="also sample an n-arm Gaussian instance from the fit")
    s.add_argument("--synth-seed", type=int, default=0)
    s.add_argument("--mu0", type=float)
    s.add_argument("--epsilon", type=float)


def cmd_ingest(args) -> int:
    from . import ingest as ing
    try:
        if args.source == "captions":
            inst = ing.load_caption_contest(args.file, mu0=args.mu0,
                                            epsilon=args.epsilon)
            save_instance(inst, args.out)
            print(f"wrote {args.out}: {inst.n} Bernoulli arms")
            return 0
        z = ing.load_screen_zscores(args.file)
        mix = ing.fit_mixing_distribution(z, args.grid_step, args.lam,
                                          args.iterations)
        if args.synth_n:
            inst = ing.synth_from_mixture(mix, args.synth_n, args.synth_seed,
                                          mu0=args.mu0, epsilon=args.epsilon)
            save_instance(inst, args.out)
            print(f"wrote {args.out}: {inst.n} Gaussian arms "
                  f"(fit nll {mix.nll:.6f})")
        else:
            ing.save_mixture(mix, args.out)
            print(f"wrote {args.out}: {mix.grid.size}-point mixture "
                  f"(nll {mix.nll:.6f})")
        return 0
    except (OSError, ValueError) as exc:
        return _err(str(exc))


# ---------------------------------------------------------------------------
# verify


def _add_verify(sub):
    p = sub.add_parser("verify", help="run the coverage-bound oracle")
    p.add_argument("--m-max", type=int, default=12)
    p.add_argument("-o", "--out", help="write the full check table (CSV)")
    p.add_argument("--gap-instance", help="also write a hardness gap report "
                   "for this instance file")
    p.add_argument("--gap-k", type=int, default=1)
    p.add_argument("--gap-eps", type=float, default=0.5)
    p.add_argument("--gap-mu0", type=float, default=0.0)
    p.add_argument("--gap-delta", type=float, default=0.05)
    p.add_argument("--gap-out", help="gap report file (default <out-dir>/gaps.csv)")
    p.add_argument("--inject-corruption", action="store_true",
                   help=argparse.SUPPRESS)  # test hook: damage one check


def cmd_verify(args) -> int:
    from . import verify as ver
    try:
        checks = ver.coverage_grid(args.m_max)
    except ValueError as exc:
        return _err(str(exc))
    if args.inject_corruption:
        checks = ver.corrupt_one(checks)
    if args.out:
        ver.write_coverage_report(checks, args.out)
    violations = ver.grid_violations(checks, uniform=True)
    for v in violations:
        print(f"VIOLATION {v}", file=sys.stderr)
    status = 1 if violations else 0
    print(f"coverage bound: {len(checks)} checks, {len(violations)} violations")
    if args.gap_instance:
        try:
            inst = load_instance(args.gap_instance)
            report = ver.bound_gap_report(inst, args.gap_eps, args.gap_mu0,
                                          args.gap_k, args.gap_delta)
        except (OSError, ValueError) as exc:
            return _err(str(exc))
        gap_out = args.gap_out or "gaps.csv"
        report.to_csv(gap_out)
        print(f"wrote {gap_out}: {len(report.rows)} functional rows")
    return status


# ---------------------------------------------------------------------------
# replay


def _add_replay(sub):
    p = sub.add_parser("replay", help="re-run persisted trials and check hashes")
    p.add_argument("out_dir", help="campaign output directory")
    p.add_argument("--run", help="only this run name (default: all)")
    p.add_argument("--trial", type=int, help="only this trial (default: all)")


def cmd_replay(args) -> int:
    root = Path(args.out_dir)
    try:
        doc = json.loads((root / "campaign.json").read_text())
        if doc.get("format") != "campaign-resolved/1":
            return _err(f"{root}/campaign.json: not a resolved campaign file")
        from .instance import instance_from_dict
        instance = instance_from_dict(doc["instance"])
    except (OSError, ValueError, KeyError) as exc:
        return _err(f"cannot load {root}/campaign.json: {exc}")
    checked = mismatched = 0
    for entry in doc["runs"]:
        name = entry["name"]
        if args.run is not None and name != args.run:
            continue
        cfg = harness.RunConfig.from_dict(
            {k: v for k, v in entry.items() if k != "name"})
        try:
            with open(root / name / "metrics.csv", newline="") as f:
                rows = list(csv.DictReader(f))
        except OSError as exc:
            return _err(str(exc))
        for row in rows:
            trial = int(row["trial"])
            if args.trial is not None and trial != args.trial:
                continue
            ok = harness.replay_trial(instance, cfg, trial, row["trace_sha256"])
            checked += 1
            if not ok:
                mismatched += 1
                print(f"MISMATCH {name} trial {trial}", file=sys.stderr)
    if checked == 0:
        return _err("no matching trials found")
    print(f"replayed {checked} trials, {mismatched} mismatches")
    return 1 if mismatched else 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bracketbandits",
        description="Anytime multi-armed bandit identification with growing "
                    "bracket covers: simulation, hardness and verification tools.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_hardness(sub)
    _add_ingest(sub)
    _add_verify(sub)
    _add_replay(sub)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {
        "simulate": cmd_simulate,
        "hardness": cmd_hardness,
        "ingest": cmd_ingest,
        "verify": cmd_verify,
        "replay": cmd_replay,
    }[args.command]
    try:
        return handler(args)
    except OSError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
