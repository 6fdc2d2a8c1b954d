"""End-to-end experiment orchestration with a verifiable output manifest.

Stages: generate/parse -> characterize -> predict -> schedule (per policy)
-> simulate (per policy) -> report. Every output file is listed in
``manifest.json`` with its content hash; re-running with the same config and
seed reproduces every byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

from . import __version__
from .characterize import (compute_stranding, day_over_day_consistency,
                           peak_valley_report, resource_hours, savings_summary)
from .config import ExperimentConfig
from .predict import predict_profile, train_group_model
from .presets import PRESETS
from .report import emit_report, write_csv, write_json
from .resources import RESOURCE_ORDER, Resource, ResourceVector
from .scheduler import Policy, schedule
from .simulate import run_simulation
from .synth import generate_synthetic_trace
from .trace import TraceSet, parse_trace


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


def _config_digest(config: ExperimentConfig) -> str:
    payload = dataclasses.asdict(config)
    payload["output_dir"] = None  # runs in different directories stay comparable
    return hashlib.sha256(json.dumps(payload, sort_keys=True,
                                     default=str).encode()).hexdigest()


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_trace(config: ExperimentConfig) -> TraceSet:
    if config.trace_files is not None:
        return parse_trace(config.trace_files["vms"], config.trace_files["util"],
                           config.trace_files["servers"])
    factory = PRESETS[config.generator_preset]
    return generate_synthetic_trace(factory(**config.generator_overrides), config.seed)


def split_train_eval(trace: TraceSet, train_days: int) -> tuple[list[str], list[str]]:
    start, _ = trace.time_range()
    cutoff = start + train_days * 86400
    train = [v for v in sorted(trace.vms) if trace.vms[v].start < cutoff]
    evaluate = [v for v in sorted(trace.vms) if trace.vms[v].start >= cutoff]
    return train, evaluate


def _subset(trace: TraceSet, vm_ids: list[str]) -> TraceSet:
    keep = set(vm_ids)
    return TraceSet(
        {v: trace.vms[v] for v in sorted(keep)},
        {key: s for key, s in trace.series.items() if key[0] in keep},
        trace.servers,
    )


def run_experiment(config: ExperimentConfig) -> dict:
    """Execute the full pipeline; returns the manifest dict."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "seed": config.seed,
        "config_hash": _config_digest(config),
        "versions": {"oversub": __version__},
        "complete": False,
        "outputs": {},
    }

    def record(path: Path) -> None:
        manifest["outputs"][str(path.relative_to(out))] = _hash_file(path)

    try:
        trace = build_trace(config)
    except Exception as exc:
        raise ExperimentError("trace", str(exc)) from exc
    manifest["trace_hash"] = trace.content_hash()

    train_ids, eval_ids = split_train_eval(trace, config.train_days)
    if not eval_ids:
        raise ExperimentError("trace", "no VMs start after the training range; "
                                       "increase days or lower train_days")

    if config.characterize.enabled:
        try:
            char_dir = out / "characterize"
            char_dir.mkdir(exist_ok=True)
            _run_characterization(trace, config.characterize, char_dir)
            for path in sorted(char_dir.glob("*.csv")):
                record(path)
        except Exception as exc:
            raise ExperimentError("characterize", str(exc)) from exc

    models = {}
    try:
        train_trace = _subset(trace, train_ids)
        needed_hours = {Policy.preset(kind).window_hours
                        for kind in config.policies if kind != "none"}
        for wh in sorted(needed_hours):
            models[wh] = train_group_model(train_trace, wh, config.min_group_size)
        predict_dir = out / "predict"
        predict_dir.mkdir(exist_ok=True)
        _emit_profiles(trace, eval_ids, models, config, predict_dir)
        record(predict_dir / "profiles.csv")
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError("predict", str(exc)) from exc

    logs = {}
    reports = {}
    for kind in config.policies:
        policy = Policy.preset(kind)
        try:
            model = models.get(policy.window_hours)
            log = schedule(trace, model, policy, vm_ids=eval_ids)
            sched_dir = out / "schedule" / kind
            sched_dir.mkdir(parents=True, exist_ok=True)
            log.write_csv(sched_dir / "placements.csv")
            write_json(sched_dir / "summary.json", log.summary_dict())
            record(sched_dir / "placements.csv")
            record(sched_dir / "summary.json")
            logs[kind] = log
        except Exception as exc:
            raise ExperimentError(f"schedule[{kind}]", str(exc)) from exc
        try:
            report = run_simulation(log, trace, config.mitigation_tier,
                                    config.mitigation_trigger, config.contention,
                                    config.seed)
            sim_dir = out / "simulate" / kind
            sim_dir.mkdir(parents=True, exist_ok=True)
            write_json(sim_dir / "simreport.json", report.to_dict())
            record(sim_dir / "simreport.json")
            reports[kind] = report
        except Exception as exc:
            raise ExperimentError(f"simulate[{kind}]", str(exc)) from exc

    try:
        report_dir = out / "report"
        emit_report(reports, logs, trace, report_dir, figures=config.figures)
        for path in sorted(report_dir.rglob("*")):
            if path.is_file():
                record(path)
    except Exception as exc:
        raise ExperimentError("report", str(exc)) from exc

    manifest["complete"] = True
    write_json(out / "manifest.json", manifest)
    return manifest


def _run_characterization(trace: TraceSet, settings, out: Path) -> None:
    rows = resource_hours(trace, "duration") + resource_hours(trace, "size")
    write_csv(out / "resource_hours.csv",
              ["dimension", "threshold", "resource", "pct_resource_hours", "pct_vms"],
              [[r.dimension, r.threshold, r.resource.value,
                f"{r.pct_resource_hours:.4f}", f"{r.pct_vms:.4f}"] for r in rows])

    fill = ResourceVector(settings.fill_cores, settings.fill_gb, 0, 0)
    start, end = trace.time_range()
    timestamps = range(start, end, settings.stride_s)
    stranding = compute_stranding(trace, fill, settings.oversub_mode, timestamps)
    write_csv(out / "stranding.csv",
              ["server_id", "cluster_id", "timestamp", "fills", "bottleneck"]
              + [f"stranded_{r.value}_pct" for r in RESOURCE_ORDER],
              [[c.server_id, c.cluster_id, c.timestamp, c.fills,
                c.bottleneck.value if c.bottleneck else "none"]
               + [f"{v:.4f}" for v in c.stranded_pct] for c in stranding.cells])
    write_csv(out / "stranding_summary.csv",
              ["cluster_id", "metric", "key", "value_pct"],
              [[cluster, "mean_stranded", r.value,
                f"{stranding.mean_stranded_pct[cluster][r]:.4f}"]
               for cluster in sorted(stranding.mean_stranded_pct)
               for r in RESOURCE_ORDER]
              + [[cluster, "bottleneck_share", key,
                  f"{stranding.bottleneck_share_pct[cluster][key]:.4f}"]
                 for cluster in sorted(stranding.bottleneck_share_pct)
                 for key in stranding.bottleneck_share_pct[cluster]])

    pv_rows = []
    savings_rows = []
    consistency_rows = []
    for resource in (Resource.CPU, Resource.MEM):
        _, aggregate = peak_valley_report(trace, resource, settings.window_hours,
                                          settings.threshold_pct)
        for w in range(24 // settings.window_hours):
            pv_rows.append([resource.value, w, aggregate.raw_peak_counts[w],
                            aggregate.raw_valley_counts[w],
                            f"{aggregate.norm_peak_pct[w]:.4f}",
                            f"{aggregate.norm_valley_pct[w]:.4f}",
                            f"{aggregate.none_pct:.4f}"])
        for wh in settings.savings_window_hours:
            summary = savings_summary(trace, resource, wh)
            savings_rows.append([resource.value, wh, summary.n_vms,
                                 f"{summary.median:.4f}", f"{summary.p25:.4f}",
                                 f"{summary.p75:.4f}", f"{summary.min:.4f}",
                                 f"{summary.max:.4f}"])
        for vm_id in sorted(trace.vms):
            row = day_over_day_consistency(trace.series[(vm_id, resource)],
                                           settings.window_hours)
            if len(row.peak_diffs):
                consistency_rows.append([
                    vm_id, resource.value,
                    f"{float(row.peak_diffs.mean()):.4f}",
                    f"{float(row.valley_diffs.mean()):.4f}",
                    f"{float(row.peak_diffs.max()):.4f}"])
    write_csv(out / "peaks_valleys.csv",
              ["resource", "window", "raw_peak_days", "raw_valley_days",
               "norm_peak_pct", "norm_valley_pct", "none_pct"], pv_rows)
    write_csv(out / "savings.csv",
              ["resource", "window_hours", "n_vms", "median", "p25", "p75",
               "min", "max"], savings_rows)
    write_csv(out / "consistency.csv",
              ["vm_id", "resource", "mean_peak_diff", "mean_valley_diff",
               "max_peak_diff"], consistency_rows)


def _emit_profiles(trace: TraceSet, eval_ids: list[str], models: dict,
                   config: ExperimentConfig, out: Path) -> None:
    rows = []
    for kind in config.policies:
        if kind == "none":
            continue
        policy = Policy.preset(kind)
        model = models[policy.window_hours]
        for vm_id in eval_ids:
            profile = predict_profile(model, trace.vms[vm_id], policy.percentile_x)
            if profile is None:
                rows.append([kind, vm_id, "", "", "", ""])
                continue
            for resource in RESOURCE_ORDER:
                for w in range(profile.windows):
                    rows.append([kind, vm_id, resource.value, w,
                                 f"{profile.p_max[resource][w]:.0f}",
                                 f"{profile.p_x[resource][w]:.0f}"])
    write_csv(out / "profiles.csv",
              ["policy", "vm_id", "resource", "window", "p_max", "p_x"], rows)
