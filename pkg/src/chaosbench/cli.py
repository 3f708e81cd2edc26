"""Command-line interface.

Exit codes: 0 on success (including runs with recorded per-task failures;
the manifest carries the failure count), 2 on malformed configuration, 3 on
adapter conformance failure. The default output directory comes from the
CHAOSBENCH_OUT environment variable, falling back to ./results.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import ChaosBenchError, ConfigError
from .experiments import (
    ic_dependence_summary,
    nonstationarity_summary,
    run_experiment,
)
from .persist import (
    RecordWriter,
    RunManifest,
    canonical_config_hash,
    load_experiment_config,
    load_records,
    registry_checksum,
    save_trajectory_csv,
    write_manifest,
)
from .report import emit_report
from .systems import Trajectory, get_system, integrate, registry, resample, sample_initial_conditions

__all__ = ["main"]


def _default_out() -> str:
    return os.environ.get("CHAOSBENCH_OUT", "results")


def _cmd_integrate(args) -> int:
    spec = get_system(args.system)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ics = sample_initial_conditions(spec, args.ics, rng_seed=args.seed)
    lam = spec.lyapunov_exponent
    duration = (args.length + 2) / (args.granularity * lam)
    for i, ic in enumerate(ics):
        raw = integrate(spec, ic, duration)
        res = resample(raw, lam, args.granularity)
        traj = Trajectory(
            res.values[: args.length], dt_lyap=res.dt_lyap, system=spec, dt_time=res.dt_time
        )
        path = out / f"{args.system}_ic{i:03d}.csv"
        save_trajectory_csv(traj, path, seed=args.seed, meta={"ic_index": i})
        print(f"wrote {path} ({len(traj)} points)")
    return 0


def _run_config(args, kind: str | None) -> int:
    try:
        cfg = load_experiment_config(args.config)
    except ConfigError as exc:
        print(f"config error ({exc.where}): {exc}", file=sys.stderr)
        return 2
    if kind is not None:
        cfg.experiment_kind = kind
    if not cfg.systems:
        cfg.systems = sorted(registry())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / "records.jsonl"
    manifest = RunManifest(
        config_hash=canonical_config_hash(cfg),
        master_seed=cfg.seed,
        registry_checksum=registry_checksum(),
    )
    n_ok = n_fail = 0
    with RecordWriter(records_path) as writer:
        for record in run_experiment(cfg):
            writer.append(record)
            if record.failed:
                n_fail += 1
            else:
                n_ok += 1
            if (n_ok + n_fail) % 200 == 0:
                print(f"... {n_ok + n_fail} records", file=sys.stderr)
    manifest.n_success, manifest.n_failed = n_ok, n_fail
    manifest.finished = datetime.now(timezone.utc).isoformat()
    write_manifest(manifest, out / "manifest.json")

    if cfg.experiment_kind in ("nonstationary", "ic_dependence"):
        records, _ = load_records(records_path)
        summary = (
            nonstationarity_summary(records)
            if cfg.experiment_kind == "nonstationary"
            else ic_dependence_summary(records, cfg)
        )
        import json

        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)

    print(f"{n_ok} records ok, {n_fail} failed -> {records_path}")
    return 0


def _cmd_report(args) -> int:
    records = []
    total_corrupt = 0
    for path in args.records:
        recs, corrupt = load_records(path)
        records.extend(recs)
        total_corrupt += corrupt
    if total_corrupt:
        print(f"warning: skipped {total_corrupt} corrupt record line(s)", file=sys.stderr)
    if not records:
        print("no records found", file=sys.stderr)
        return 1
    group_keys = [k.strip() for k in args.group_by.split(",") if k.strip()]
    artifacts = emit_report(
        records,
        group_keys or ["model_id"],
        args.out,
        fmt=args.format,
        figures=not args.no_figures,
    )
    print(f"wrote {artifacts['table']} and {artifacts['curves']}")
    for fig in artifacts["figures"]:
        print(f"wrote {fig}")
    return 0


def _cmd_ingest_pendulum(args) -> int:
    from .pendulum import ingest_pendulum, load_pendulum_csv

    raw = load_pendulum_csv(args.csv, fps=args.fps)
    traj = ingest_pendulum(raw)
    save_trajectory_csv(
        traj,
        args.out,
        seed=None,
        meta={"source": str(args.csv), "fps": args.fps, "channels": ["theta1", "theta2", "dtheta1", "dtheta2"]},
    )
    print(f"wrote {args.out} ({len(traj)} samples, 4 channels)")
    return 0


def _cmd_serve_check(args) -> int:
    from .protocol import serve_check

    results = serve_check(args.adapter_cmd, timeout=args.timeout)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name}: {res.detail}")
        failed += not res.passed
    if failed:
        print(f"{failed} conformance check(s) failed", file=sys.stderr)
        return 3
    print("all conformance checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaosbench",
        description="Benchmark harness for forecasting chaotic dynamical systems",
    )
    parser.add_argument("--version", action="version", version=f"chaosbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="integrate a registry system and export CSV trajectories")
    p.add_argument("system")
    p.add_argument("--ics", type=int, default=1, help="number of initial conditions")
    p.add_argument("--length", type=int, default=812, help="points per trajectory")
    p.add_argument("--granularity", type=int, default=30, help="points per Lyapunov time")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(fn=_cmd_integrate)

    for name, kind, help_text in (
        ("run", None, "run an experiment config"),
        ("shuffle-run", "kgram_shuffle", "run a k-gram shuffle experiment"),
        ("nonstat-run", "nonstationary", "run a nonstationarity experiment"),
        ("context-sweep", "context_sweep", "run a context-length sweep"),
        ("ic-run", "ic_dependence", "run an initial-condition dependence analysis"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--out", default=_default_out())
        p.set_defaults(fn=lambda args, _kind=kind: _run_config(args, _kind))

    p = sub.add_parser("report", help="aggregate records into tables, curves, and figures")
    p.add_argument("records", nargs="+")
    p.add_argument("--group-by", default="model_id", help="comma-separated record keys")
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--out", default=_default_out())
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("ingest-pendulum", help="convert tracked double-pendulum centroids")
    p.add_argument("csv")
    p.add_argument("--fps", type=float, default=400.0)
    p.add_argument("--out", default="pendulum_trajectory.csv")
    p.set_defaults(fn=_cmd_ingest_pendulum)

    p = sub.add_parser("serve-check", help="run the adapter protocol conformance suite")
    p.add_argument("adapter_cmd", help="adapter command line (quoted)")
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(fn=_cmd_serve_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error ({exc.where}): {exc}", file=sys.stderr)
        return 2
    except ChaosBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
