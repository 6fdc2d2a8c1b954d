"""Cross-policy report emission: summary JSON, CSV tables, and figures.

The report path is the only stage that renders figures; analysis subcommands
emit delimited output only. Figures are written as PNG next to the CSVs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .resources import RESOURCE_ORDER
from .scheduler import PlacementLog, capacity_gain
from .simulate import SimReport
from .trace import TraceSet

SCHEMA_VERSION = 1


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_json(path, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=False)
        handle.write("\n")


def _save_figure(fig, path) -> None:
    fig.savefig(path, dpi=110, metadata={"Software": "oversub"})
    plt.close(fig)


def emit_report(reports: Mapping[str, SimReport], logs: Mapping[str, PlacementLog],
                trace: TraceSet, out_dir, baseline: str = "none",
                figures: bool = True) -> dict:
    """Write the policy-comparison summary and figures; returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if set(reports) != set(logs):
        raise ValueError("reports and placement logs must cover the same policies")
    hashes = {log.trace_hash for log in logs.values()}
    if len(hashes) > 1:
        raise ValueError("refusing to compare runs over mismatched traces")

    policies = list(logs)
    gains = {row.policy: row for row in capacity_gain(logs, trace, baseline=baseline)}

    summary = {
        "schema_version": SCHEMA_VERSION,
        "baseline": baseline,
        "trace_hash": next(iter(hashes)),
        "policies": {},
    }
    for name in policies:
        report = reports[name]
        row = gains[name]
        summary["policies"][name] = {
            "hosted_vms": row.hosted_vms,
            "rejected_vms": logs[name].rejected_count,
            "capacity_gain_vms_pct": row.gain_vms_pct,
            "capacity_gain_resource_hours_pct": row.gain_resource_hours_pct,
            "hosted_resource_hours": row.resource_hours,
            "violation_share_pct": report.violation_share_pct,
            "allocation_error": {
                key: {"mean_over_error_pct": stats.mean_over_error_pct,
                      "under_vm_rate_pct": stats.under_vm_rate_pct,
                      "under_step_rate_pct": stats.under_step_rate_pct}
                for key, stats in report.allocation_error.items()
            },
            "mitigations": report.mitigation_summary(),
            "mem_episode_count": len(report.mem_episodes),
            "slowdown_max": report.slowdown_max,
        }
    write_json(out / "summary.json", summary)

    write_csv(out / "capacity.csv",
              ["policy", "hosted_vms", "gain_vms_pct"]
              + [f"gain_{r.value}_hours_pct" for r in RESOURCE_ORDER],
              [[name, gains[name].hosted_vms, f"{gains[name].gain_vms_pct:.4f}"]
               + [f"{gains[name].gain_resource_hours_pct[r.value]:.4f}"
                  for r in RESOURCE_ORDER]
               for name in policies])

    write_csv(out / "violations.csv",
              ["policy"] + [f"{r.value}_violation_share_pct" for r in RESOURCE_ORDER],
              [[name] + [f"{reports[name].violation_share_pct[r.value]:.6f}"
                         for r in RESOURCE_ORDER]
               for name in policies])

    write_csv(out / "allocation_error.csv",
              ["policy", "resource", "mean_over_error_pct", "under_vm_rate_pct",
               "under_step_rate_pct"],
              [[name, r.value,
                f"{reports[name].allocation_error[r.value].mean_over_error_pct:.4f}",
                f"{reports[name].allocation_error[r.value].under_vm_rate_pct:.4f}",
                f"{reports[name].allocation_error[r.value].under_step_rate_pct:.4f}"]
               for name in policies for r in RESOURCE_ORDER
               if r.value in reports[name].allocation_error])

    write_csv(out / "mitigations.csv",
              ["policy", "time", "server_id", "kind", "trigger", "status",
               "amount_gb", "vm_id", "completion_time", "latency_s"],
              [[name, e.time, e.server_id, e.kind, e.trigger, e.status,
                "" if e.amount_gb is None else f"{e.amount_gb:.4f}",
                e.vm_id or "", e.completion_time, f"{e.latency:.4f}"]
               for name in policies for e in reports[name].mitigation_events])

    write_csv(out / "episodes.csv",
              ["policy", "server_id", "trigger", "start", "end",
               "violation_seconds", "resolved_by", "actions"],
              [[name, ep.server_id, ep.trigger, ep.start, ep.end,
                ep.violation_seconds, ep.resolved_by,
                "|".join(a.kind for a in ep.actions)]
               for name in policies for ep in reports[name].mem_episodes])

    write_csv(out / "timelines.csv",
              ["policy", "time", "server_id", "pool_backed_gb", "extension_gb",
               "trimmed_gb", "pool_draw_gb", "available_gb", "violation"],
              [[name, row["time"], row["server_id"],
                f"{row['pool_backed_gb']:.4f}", f"{row['extension_gb']:.4f}",
                f"{row['trimmed_gb']:.4f}", f"{row['pool_draw_gb']:.4f}",
                f"{row['available_gb']:.4f}", int(row["violation"])]
               for name in policies for row in reports[name].timeline])

    if figures:
        render_figures(reports, gains, policies, out)
    return summary


def render_figures(reports, gains, policies, out: Path) -> None:
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)

    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    names = [p for p in policies]
    values = [gains[p].gain_vms_pct for p in names]
    ax.bar(names, values, color="#4878d0")
    ax.set_ylabel("Additional hosted VMs vs baseline (%)")
    ax.set_title("Capacity gain by policy")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, fig_dir / "capacity_gain.png")

    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    width = 0.35
    xs = range(len(names))
    cpu = [reports[p].violation_share_pct["cpu"] for p in names]
    mem = [reports[p].violation_share_pct["mem"] for p in names]
    ax.bar([x - width / 2 for x in xs], cpu, width, label="cpu", color="#d65f5f")
    ax.bar([x + width / 2 for x in xs], mem, width, label="mem", color="#6acc64")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylabel("Violation time share (%)")
    ax.set_title("Performance violations by policy")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, fig_dir / "violations.png")

    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    resources = [r.value for r in RESOURCE_ORDER[:2]]
    for offset, resource in enumerate(resources):
        vals = [reports[p].allocation_error[resource].under_vm_rate_pct
                if resource in reports[p].allocation_error else 0.0
                for p in names]
        ax.bar([x + (offset - 0.5) * width for x in xs], vals, width, label=resource)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylabel("VMs with under-allocation (%)")
    ax.set_title("Under-allocation rate by policy")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, fig_dir / "under_allocation.png")

    # mitigation timeline: available pool memory around episodes, per policy
    any_timeline = any(reports[p].timeline for p in names)
    if any_timeline:
        fig, ax = plt.subplots(figsize=(6.5, 3.4))
        for name in names:
            rows = reports[name].timeline
            if not rows:
                continue
            server = rows[0]["server_id"]
            xs_t = [r["time"] for r in rows if r["server_id"] == server]
            ys = [r["available_gb"] for r in rows if r["server_id"] == server]
            if not xs_t:
                continue
            t_base = xs_t[0]
            ax.plot([x - t_base for x in xs_t], ys, marker=".", label=name)
        ax.set_xlabel("Seconds since first contention sample")
        ax.set_ylabel("Available backed pool (GB)")
        ax.set_title("Oversubscribed pool during contention")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        _save_figure(fig, fig_dir / "mitigation_timeline.png")
