import numpy as np
import pytest

from oversub.characterize import (baseline_placement, compute_stranding,
                                  day_over_day_consistency, detect_peaks_valleys,
                                  peak_valley_report, resource_hours,
                                  savings_summary, window_savings)
from oversub.resources import Resource, ResourceVector
from oversub.trace import ServerSpec, TraceError

from conftest import BASE, DAY, STEP, build_trace, make_vm, make_series, window_level_series


def trace_of(vm_values, servers=None):
    return build_trace(vm_values, servers)


class TestResourceHours:
    def test_long_vm_holds_half_gb_hours(self):
        # sixty 32GB VMs at the shortest grid duration vs one 32GB VM lasting
        # sixty times that: both sides hold the same GB-hours, and the long VM
        # is 1 of 61 VMs (~1.6%)
        vms = {}
        for i in range(60):
            vm = make_vm(f"vm-s{i:02d}", BASE, BASE + STEP, mem=32.0)
            vms[vm] = {}
        long_vm = make_vm("vm-long", BASE, BASE + 60 * STEP, mem=32.0)
        vms[long_vm] = {}
        trace = trace_of(vms)
        rows = resource_hours(trace, "duration", thresholds=[600])
        mem_row = next(r for r in rows if r.resource is Resource.MEM)
        assert mem_row.pct_resource_hours == pytest.approx(50.0)
        assert mem_row.pct_vms == pytest.approx(100.0 / 61.0)

    def test_identical_vms_all_or_nothing(self):
        vms = {make_vm(f"vm-{i}", BASE, BASE + DAY): {} for i in range(4)}
        trace = trace_of(vms)
        below = resource_hours(trace, "duration", thresholds=[3600])
        above = resource_hours(trace, "duration", thresholds=[2 * DAY])
        assert all(r.pct_resource_hours == 100.0 and r.pct_vms == 100.0 for r in below)
        assert all(r.pct_resource_hours == 0.0 and r.pct_vms == 0.0 for r in above)

    def test_three_durations_hand_sum(self):
        # equal sizes, durations 1d/2d/3d: VMs > 1d hold 5/6 of resource-hours
        vms = {make_vm("vm-1", BASE, BASE + DAY): {},
               make_vm("vm-2", BASE, BASE + 2 * DAY): {},
               make_vm("vm-3", BASE, BASE + 3 * DAY): {}}
        trace = trace_of(vms)
        rows = resource_hours(trace, "duration", thresholds=[DAY])
        assert rows[0].pct_resource_hours == pytest.approx(100.0 * 5.0 / 6.0)
        assert rows[0].pct_vms == pytest.approx(100.0 * 2.0 / 3.0)

    def test_size_dimension(self):
        vms = {make_vm("vm-big", BASE, BASE + DAY, mem=64.0): {},
               make_vm("vm-small", BASE, BASE + DAY, mem=16.0): {}}
        trace = trace_of(vms)
        rows = resource_hours(trace, "size", thresholds=[32.0])
        mem_row = next(r for r in rows if r.resource is Resource.MEM)
        assert mem_row.pct_resource_hours == pytest.approx(80.0)
        assert mem_row.pct_vms == pytest.approx(50.0)

    def test_empty_trace_rejected(self):
        from oversub.trace import TraceSet
        with pytest.raises(TraceError):
            resource_hours(TraceSet({}, {}, []), "duration")


class TestStranding:
    def server(self, cpu, mem, sid="srv-0", net=0.0, ssd=0.0):
        return ServerSpec(sid, "cl-0", ResourceVector(cpu, mem, net, ssd))

    def test_empty_aligned_server_no_stranding(self):
        vm = make_vm("vm-1", BASE, BASE + DAY, cpu=1, mem=4)
        trace = trace_of({vm: {}}, servers=[self.server(16, 64),
                                            self.server(16, 64, "srv-1")])
        report = compute_stranding(trace, ResourceVector(1, 4, 0, 0),
                                   timestamps=[BASE], placement={})
        cell = next(c for c in report.cells if c.server_id == "srv-0")
        assert cell.fills == 16
        assert cell.stranded_pct[0] == 0.0 and cell.stranded_pct[1] == 0.0
        assert cell.bottleneck is None

    def test_memory_bound_strands_cpu(self):
        vm = make_vm("vm-1", BASE, BASE + DAY, cpu=1, mem=4)
        trace = trace_of({vm: {}}, servers=[self.server(16, 48)])
        report = compute_stranding(trace, ResourceVector(1, 4, 0, 0),
                                   timestamps=[BASE], placement={})
        cell = report.cells[0]
        assert cell.fills == 12
        assert cell.stranded_pct[0] == pytest.approx(25.0)  # 4 of 16 cores
        assert cell.bottleneck is Resource.MEM

    def test_cpu_only_oversub_shifts_bottleneck_to_memory(self):
        # server fully CPU-allocated by idle VMs: with no oversub, CPU blocks;
        # harvesting unused CPU makes memory the blocker
        vms = {make_vm(f"vm-{i}", BASE, BASE + DAY, cpu=8, mem=8):
               {Resource.CPU: 5.0} for i in range(2)}
        trace = trace_of(vms, servers=[self.server(16, 64)])
        placement = {f"vm-{i}": "srv-0" for i in range(2)}
        fill = ResourceVector(1, 4, 0, 0)
        base_report = compute_stranding(trace, fill, "none", [BASE], placement)
        over_report = compute_stranding(trace, fill, "cpu_only", [BASE], placement)
        assert base_report.cells[0].bottleneck is Resource.CPU
        assert over_report.cells[0].bottleneck is Resource.MEM
        share = over_report.bottleneck_share_pct["cl-0"]
        base_share = base_report.bottleneck_share_pct["cl-0"]
        assert share["cpu"] < base_share["cpu"]
        assert share["mem"] > base_share["mem"]

    def test_identity_stranded_plus_alloc_plus_fill(self):
        vm = make_vm("vm-1", BASE, BASE + DAY, cpu=3, mem=20)
        trace = trace_of({vm: {}}, servers=[self.server(16, 48, net=10, ssd=500)])
        report = compute_stranding(trace, ResourceVector(1, 4, 0, 0),
                                   timestamps=[BASE, BASE + 3600],
                                   placement={"vm-1": "srv-0"})
        for cell in report.cells:
            for i in range(4):
                total = (cell.stranded_pct[i] + cell.allocated_pct[i]
                         + cell.fill_pct[i])
                assert total == pytest.approx(100.0)

    def test_timestamp_outside_range_rejected(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        trace = trace_of({vm: {}}, servers=[self.server(16, 64)])
        with pytest.raises(TraceError, match="outside trace range"):
            compute_stranding(trace, ResourceVector(1, 4, 0, 0),
                              timestamps=[BASE + 2 * DAY], placement={})

    def test_baseline_placement_first_fit(self):
        vms = {make_vm(f"vm-{i}", BASE, BASE + DAY, cpu=8, mem=32): {}
               for i in range(3)}
        trace = trace_of(vms, servers=[self.server(16, 64, net=10, ssd=500),
                                       self.server(16, 64, "srv-1", net=10, ssd=500)])
        placement = baseline_placement(trace)
        assert placement["vm-0"] == "srv-0"
        assert placement["vm-1"] == "srv-0"
        assert placement["vm-2"] == "srv-1"


class TestPeaksValleys:
    def test_flat_series_flags_none(self):
        vm = make_vm("vm-1", BASE, BASE + 2 * DAY)
        series = build_trace({vm: {Resource.CPU: 40.0}}).get_series("vm-1", Resource.CPU)
        rows, skipped = detect_peaks_valleys(series, window_hours=8)
        assert skipped == 0
        assert len(rows) == 2
        assert all(r.none_flag and not r.peaks and not r.valleys for r in rows)

    def test_three_window_example(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        series = window_level_series(vm, Resource.CPU, [30, 75, 55], 8)
        rows, _ = detect_peaks_valleys(series, window_hours=8)
        (row,) = rows
        assert row.peaks == frozenset({1})
        assert row.valleys == frozenset({0})
        assert not row.none_flag

    def test_tied_maxima_produce_multiple_peaks(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        series = window_level_series(vm, Resource.CPU, [50, 50, 10], 8)
        rows, _ = detect_peaks_valleys(series, window_hours=8)
        (row,) = rows
        assert row.peaks == frozenset({0, 1})
        assert row.valleys == frozenset({2})

    def test_below_threshold_is_none(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        series = window_level_series(vm, Resource.CPU, [40, 44, 42], 8)
        rows, _ = detect_peaks_valleys(series, window_hours=8, threshold_pct=5.0)
        assert rows[0].none_flag
        rows, _ = detect_peaks_valleys(series, window_hours=8, threshold_pct=4.0)
        assert not rows[0].none_flag

    def test_partial_days_skipped_and_counted(self):
        vm = make_vm("vm-1", BASE + 6 * 3600, BASE + 2 * DAY + 12 * 3600)
        series = window_level_series(vm, Resource.CPU, [30, 75, 55], 8)
        rows, skipped = detect_peaks_valleys(series, window_hours=8)
        assert len(rows) == 1
        assert skipped == 2

    def test_indices_invariant_under_increasing_transform(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        series = window_level_series(vm, Resource.CPU, [30, 75, 55], 8)
        transformed = make_series(vm, Resource.CPU, series.values * 0.5 + 10.0)
        base_rows, _ = detect_peaks_valleys(series, 8)
        new_rows, _ = detect_peaks_valleys(transformed, 8)
        assert base_rows[0].peaks == new_rows[0].peaks
        assert base_rows[0].valleys == new_rows[0].valleys

    def test_report_emits_raw_and_normalized(self):
        vm_a = make_vm("vm-a", BASE, BASE + DAY)
        vm_b = make_vm("vm-b", BASE, BASE + DAY)
        trace = build_trace({
            vm_a: {Resource.CPU: window_level_series(vm_a, Resource.CPU, [80, 10, 10], 8).values},
            vm_b: {Resource.CPU: window_level_series(vm_b, Resource.CPU, [10, 80, 10], 8).values},
        })
        _, aggregate = peak_valley_report(trace, Resource.CPU, 8)
        assert aggregate.raw_peak_counts == [1, 1, 0]
        assert aggregate.norm_peak_pct[0] == pytest.approx(50.0)
        assert aggregate.none_pct == 0.0


class TestConsistency:
    def test_identical_days_zero_diffs(self):
        vm = make_vm("vm-1", BASE, BASE + 3 * DAY)
        series = window_level_series(vm, Resource.CPU, [30, 75, 55], 8)
        row = day_over_day_consistency(series, 8)
        assert np.all(row.peak_diffs == 0)
        assert np.all(row.valley_diffs == 0)

    def test_hand_diffed_days(self):
        vm = make_vm("vm-1", BASE, BASE + 2 * DAY)
        day1 = np.repeat([30.0, 75.0, 55.0], 96)
        day2 = np.repeat([35.0, 70.0, 55.0], 96)
        series = make_series(vm, Resource.CPU, np.concatenate([day1, day2]))
        row = day_over_day_consistency(series, 8)
        assert sorted(row.peak_diffs.tolist()) == [0.0, 5.0, 5.0]

    def test_under_two_days_empty(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        series = window_level_series(vm, Resource.CPU, [30, 75, 55], 8)
        row = day_over_day_consistency(series, 8)
        assert len(row.peak_diffs) == 0


class TestSavings:
    def test_known_three_window_savings(self):
        # lifetime max 75, window maxima {30, 75, 55} -> savings {45, 0, 20}
        vm = make_vm("vm-1", BASE, BASE + DAY)
        series = window_level_series(vm, Resource.MEM, [30, 75, 55], 8)
        row = window_savings(series, 8)
        assert row.savings.tolist() == [45.0, 0.0, 20.0]
        assert row.mean_saving == pytest.approx(65.0 / 3.0)

    def test_constant_series_zero_savings(self):
        vm = make_vm("vm-1", BASE, BASE + 2 * DAY)
        series = build_trace({vm: {Resource.MEM: 40.0}}).get_series("vm-1", Resource.MEM)
        row = window_savings(series, 6)
        assert np.all(row.savings == 0.0)

    def test_single_24h_window_vs_bruteforce(self):
        rng = np.random.default_rng(7)
        vm = make_vm("vm-1", BASE, BASE + 3 * DAY)
        values = rng.uniform(0, 90, vm.n_samples).astype(np.float32)
        series = make_series(vm, Resource.MEM, values)
        row = window_savings(series, 24)
        lifetime = values.max()
        expected = [float(lifetime - values[d * 288:(d + 1) * 288].max())
                    for d in range(3)]
        assert row.savings.tolist() == pytest.approx(expected)
        assert np.all(row.savings >= 0)

    def test_monotone_in_window_length(self):
        rng = np.random.default_rng(21)
        vm = make_vm("vm-1", BASE, BASE + 2 * DAY)
        values = rng.uniform(0, 100, vm.n_samples).astype(np.float32)
        series = make_series(vm, Resource.MEM, values)
        lengths = [1, 2, 3, 4, 6, 8, 12, 24]
        means = {wh: window_savings(series, wh).mean_saving for wh in lengths}
        for w1 in lengths:
            for w2 in lengths:
                if w2 % w1 == 0 and w1 < w2:
                    assert means[w1] >= means[w2] - 1e-9

    def test_summary_distribution(self):
        vm_a = make_vm("vm-a", BASE, BASE + DAY)
        vm_b = make_vm("vm-b", BASE, BASE + DAY)
        trace = build_trace({
            vm_a: {Resource.MEM: window_level_series(vm_a, Resource.MEM, [30, 75, 55], 8).values},
            vm_b: {Resource.MEM: 50.0},
        })
        summary = savings_summary(trace, Resource.MEM, 8)
        assert summary.n_vms == 2
        assert summary.min == 0.0
        assert summary.max == pytest.approx(65.0 / 3.0)
