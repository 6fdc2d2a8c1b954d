"""Command-line driver.

Subcommands: ``generate``, ``characterize``, ``predict``, ``schedule``,
``simulate``, ``report`` (alias of ``run`` with characterization disabled is
not provided; ``report`` re-renders from a finished run), and ``run``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, config_from_dict, load_config
from .experiment import ExperimentError, run_experiment
from .hybrid import ScheduleError
from .predict import predict_profile, train_group_model
from .presets import PRESETS
from .resources import ResourceVector
from .scheduler import POLICY_KINDS, Policy, schedule
from .simulate import MITIGATION_TIERS, TRIGGER_MODES, ContentionConfig, run_simulation
from .synth import GeneratorError, generate_synthetic_trace
from .trace import TraceError, parse_trace, write_trace_dir

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


def _add_trace_args(parser) -> None:
    parser.add_argument("--trace-dir", type=Path, required=True,
                        help="directory containing vms.csv, util.csv, servers.csv")


def _load_trace(args):
    d = args.trace_dir
    return parse_trace(d / "vms.csv", d / "util.csv", d / "servers.csv")


def _parse_fill_shape(text: str) -> ResourceVector:
    try:
        cores, gb = text.split(":")
        return ResourceVector(float(cores), float(gb), 0, 0)
    except ValueError as exc:
        raise ConfigError(f"--fill-shape must look like 'cores:gb', got {text!r}") from exc


def cmd_generate(args) -> int:
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    overrides = {}
    if args.n_vms is not None:
        overrides["n_vms"] = args.n_vms
    if args.days is not None:
        overrides["days"] = args.days
    if args.n_servers is not None:
        overrides["n_servers"] = args.n_servers
    config = PRESETS[args.preset](**overrides)
    trace = generate_synthetic_trace(config, args.seed)
    paths = write_trace_dir(trace, args.out)
    print(f"wrote {len(trace.vms)} VMs, {len(trace.series)} series, "
          f"{len(trace.servers)} servers to {args.out}")
    for path in paths.values():
        print(f"  {path}")
    return EXIT_OK


def cmd_characterize(args) -> int:
    from .config import CharacterizeSettings
    from .experiment import _run_characterization

    trace = _load_trace(args)
    fill = _parse_fill_shape(args.fill_shape)
    settings = CharacterizeSettings(
        window_hours=args.window_hours, threshold_pct=args.threshold_pct,
        fill_cores=fill.cpu, fill_gb=fill.mem,
        oversub_mode=args.oversub_mode, stride_s=args.stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _run_characterization(trace, settings, out)
    print(f"characterization written to {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .report import write_csv
    from .resources import RESOURCE_ORDER

    trace = _load_trace(args)
    start, _ = trace.time_range()
    cutoff = start + args.train_days * 86400
    train_ids = [v for v in sorted(trace.vms) if trace.vms[v].start < cutoff]
    eval_ids = [v for v in sorted(trace.vms) if trace.vms[v].start >= cutoff]
    if not train_ids:
        raise TraceError("no VMs in the training range")
    from .experiment import _subset
    model = train_group_model(_subset(trace, train_ids), args.window_hours,
                              args.min_group_size)
    rows = []
    for vm_id in eval_ids:
        profile = predict_profile(model, trace.vms[vm_id], args.percentile)
        if profile is None:
            rows.append([vm_id, "", "", "", ""])
            continue
        for resource in RESOURCE_ORDER:
            for w in range(profile.windows):
                rows.append([vm_id, resource.value, w,
                             f"{profile.p_max[resource][w]:.0f}",
                             f"{profile.p_x[resource][w]:.0f}"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["vm_id", "resource", "window", "p_max", "p_x"], rows)
    print(f"profiles for {len(eval_ids)} VMs written to {out} "
          f"(trained on {model.n_training_vms} VMs)")
    return EXIT_OK


def _schedule_from_args(args, trace):
    from .experiment import _subset, split_train_eval

    policy = Policy.preset(args.policy, args.percentile, args.window_hours)
    train_ids, eval_ids = split_train_eval(trace, args.train_days)
    model = None
    if policy.oversubscribes:
        if not train_ids:
            raise TraceError("no VMs in the training range")
        model = train_group_model(_subset(trace, train_ids), policy.window_hours,
                                  args.min_group_size)
    return schedule(trace, model, policy, vm_ids=eval_ids), policy


def cmd_schedule(args) -> int:
    from .report import write_json

    trace = _load_trace(args)
    log, _ = _schedule_from_args(args, trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.write_csv(out / "placements.csv")
    write_json(out / "summary.json", log.summary_dict())
    print(f"hosted {log.hosted_count}, rejected {log.rejected_count}; "
          f"outputs in {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .report import write_csv, write_json

    trace = _load_trace(args)
    log, _ = _schedule_from_args(args, trace)
    contention = ContentionConfig(cold_fraction=args.cold_fraction)
    report = run_simulation(log, trace, args.mitigation, args.trigger,
                            contention, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "simreport.json", report.to_dict())
    write_csv(out / "episodes.csv",
              ["server_id", "trigger", "start", "end", "violation_seconds",
               "resolved_by", "actions"],
              [[ep.server_id, ep.trigger, ep.start, ep.end, ep.violation_seconds,
                ep.resolved_by, "|".join(a.kind for a in ep.actions)]
               for ep in report.mem_episodes])
    write_csv(out / "timelines.csv",
              ["time", "server_id", "pool_backed_gb", "extension_gb", "trimmed_gb",
               "pool_draw_gb", "available_gb", "violation"],
              [[row["time"], row["server_id"], f"{row['pool_backed_gb']:.4f}",
                f"{row['extension_gb']:.4f}", f"{row['trimmed_gb']:.4f}",
                f"{row['pool_draw_gb']:.4f}", f"{row['available_gb']:.4f}",
                int(row["violation"])] for row in report.timeline])
    print(f"violations (s): {report.violation_seconds}; "
          f"episodes: {len(report.mem_episodes)}; outputs in {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.config:
        config = load_config(args.config)
    else:
        config = config_from_dict({
            "seed": args.seed,
            "output_dir": str(args.out),
            "generator": {"preset": args.preset},
        })
    manifest = run_experiment(config)
    print(f"experiment complete; {len(manifest['outputs'])} outputs in "
          f"{config.output_dir} (manifest.json)")
    return EXIT_OK


def cmd_report(args) -> int:
    manifest_path = Path(args.run_dir) / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{args.run_dir} does not contain manifest.json; "
                          f"run the 'run' subcommand first")
    manifest = json.loads(manifest_path.read_text())
    print(json.dumps(manifest, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oversub",
        description="Trace-driven simulator for time-window VM oversubscription")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a trace to CSV files")
    p.add_argument("--preset", default="quickstart", help=f"one of {sorted(PRESETS)}")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-vms", type=int, default=None)
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--n-servers", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("characterize", help="fleet/workload analyses to CSV")
    _add_trace_args(p)
    p.add_argument("--window-hours", type=int, default=4,
                   choices=[1, 2, 4, 6, 8, 12, 24])
    p.add_argument("--threshold-pct", type=float, default=5.0)
    p.add_argument("--fill-shape", default="1:4", help="cores:gb hypothetical VM")
    p.add_argument("--oversub-mode", default="none",
                   choices=["none", "cpu_only", "cpu_mem"])
    p.add_argument("--stride", type=int, default=3600,
                   help="seconds between stranding evaluations")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("predict", help="train group model and emit profiles CSV")
    _add_trace_args(p)
    p.add_argument("--percentile", type=int, default=95)
    p.add_argument("--window-hours", type=int, default=4)
    p.add_argument("--min-group-size", type=int, default=5)
    p.add_argument("--train-days", type=int, default=2)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("schedule", help="replay admission under a policy")
    _add_trace_args(p)
    p.add_argument("--policy", default="coach", choices=list(POLICY_KINDS))
    p.add_argument("--percentile", type=int, default=None)
    p.add_argument("--window-hours", type=int, default=None)
    p.add_argument("--min-group-size", type=int, default=5)
    p.add_argument("--train-days", type=int, default=2)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", help="schedule, then replay with mitigation")
    _add_trace_args(p)
    p.add_argument("--policy", default="coach", choices=list(POLICY_KINDS))
    p.add_argument("--percentile", type=int, default=None)
    p.add_argument("--window-hours", type=int, default=None)
    p.add_argument("--min-group-size", type=int, default=5)
    p.add_argument("--train-days", type=int, default=2)
    p.add_argument("--mitigation", default="none", choices=list(MITIGATION_TIERS))
    p.add_argument("--trigger", default="reactive", choices=list(TRIGGER_MODES))
    p.add_argument("--cold-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="full experiment from a TOML config or preset")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--preset", default="quickstart")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="print a finished run's manifest")
    p.add_argument("--run-dir", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GeneratorError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScheduleError, AssertionError) as exc:
        print(f"internal invariant failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (TraceError, ExperimentError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
