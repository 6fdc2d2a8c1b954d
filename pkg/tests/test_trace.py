import numpy as np
import pytest

from oversub.resources import RESOURCE_ORDER, Resource, ResourceVector
from oversub.synth import (FleetSpec, GeneratorConfig, GeneratorError, GroupSpec,
                           SizeSpec, TemplateSpec, generate_synthetic_trace,
                           peak_template)
from oversub.trace import (TraceError, TraceSet, parse_trace, write_trace_dir)

from conftest import BASE, DAY, STEP, build_trace, make_vm, make_series


def write_minimal(tmp_path, util_rows=None, vm_rows=None, server_rows=None):
    vm_rows = vm_rows if vm_rows is not None else [
        "vm-1,sub-a,std,4,32,1,50,%d,%d,iaas" % (BASE, BASE + 2 * STEP)]
    if util_rows is None:
        util_rows = []
        for resource in ("cpu", "mem", "net", "ssd"):
            util_rows.append(f"vm-1,{resource},{BASE},40")
            util_rows.append(f"vm-1,{resource},{BASE + STEP},50")
    server_rows = server_rows or ["srv-1,cl-0,16,64,10,500"]
    vms = tmp_path / "vms.csv"
    util = tmp_path / "util.csv"
    servers = tmp_path / "servers.csv"
    vms.write_text("vm_id,subscription_id,vm_config,cpu_cores,mem_gb,net_gbps,"
                   "ssd_gb,start_unix,end_unix,offering\n"
                   + "\n".join(vm_rows) + "\n")
    util.write_text("vm_id,resource,timestamp_unix,max_util_pct\n"
                    + "\n".join(util_rows) + "\n")
    servers.write_text("server_id,cluster_id,cpu_cores,mem_gb,net_gbps,ssd_gb\n"
                       + "\n".join(server_rows) + "\n")
    return vms, util, servers


class TestParse:
    def test_minimal_well_formed(self, tmp_path):
        trace = parse_trace(*write_minimal(tmp_path))
        assert len(trace.vms) == 1
        assert len(trace.series) == 4
        assert len(trace.servers) == 1
        s = trace.get_series("vm-1", Resource.CPU)
        assert list(s.values) == [40.0, 50.0]
        assert trace.vms["vm-1"].weekday_of_allocation in range(7)

    def test_out_of_range_utilization_rejected(self, tmp_path):
        rows = [f"vm-1,cpu,{BASE},135"]
        files = write_minimal(tmp_path, util_rows=rows)
        with pytest.raises(TraceError, match=r"utilization out of \[0,100\]"):
            parse_trace(*files)

    def test_end_before_start_rejected(self, tmp_path):
        vm_rows = ["vm-1,sub-a,std,4,32,1,50,%d,%d,iaas" % (BASE + STEP, BASE)]
        files = write_minimal(tmp_path, vm_rows=vm_rows, util_rows=[])
        with pytest.raises(TraceError, match="end"):
            parse_trace(*files)

    def test_series_gap_names_vm_and_timestamp(self, tmp_path):
        util_rows = []
        for resource in ("cpu", "mem", "net", "ssd"):
            util_rows.append(f"vm-1,{resource},{BASE},40")
            if resource != "mem":
                util_rows.append(f"vm-1,{resource},{BASE + STEP},50")
        files = write_minimal(tmp_path, util_rows=util_rows)
        with pytest.raises(TraceError, match=f"vm-1 mem: missing sample at timestamp {BASE + STEP}"):
            parse_trace(*files)

    def test_malformed_row_names_file_line_field(self, tmp_path):
        vm_rows = ["vm-1,sub-a,std,notanumber,32,1,50,%d,%d,iaas" % (BASE, BASE + STEP)]
        files = write_minimal(tmp_path, vm_rows=vm_rows, util_rows=[])
        with pytest.raises(TraceError, match=r"vms.csv:2: field 'cpu_cores'"):
            parse_trace(*files)

    def test_unaligned_timestamp_rejected(self, tmp_path):
        files = write_minimal(tmp_path, util_rows=[f"vm-1,cpu,{BASE + 13},40"])
        with pytest.raises(TraceError, match="multiple of 300"):
            parse_trace(*files)

    def test_round_trip(self, tmp_path):
        vm = make_vm("vm-rt", BASE, BASE + DAY, mem=24.5)
        rng = np.random.default_rng(3)
        values = {r: rng.uniform(0, 100, vm.n_samples).astype(np.float32)
                  for r in RESOURCE_ORDER}
        trace = build_trace({vm: values})
        paths = write_trace_dir(trace, tmp_path / "trace")
        reparsed = parse_trace(paths["vms"], paths["util"], paths["servers"])
        assert reparsed == trace


class TestGenerator:
    def small_config(self, **kwargs):
        defaults = dict(
            start_unix=BASE, days=2,
            fleet=FleetSpec(2, ResourceVector(32, 128, 10, 500)),
            sizes={"s": SizeSpec("s", 4, 16, 1, 50)},
            n_vms=30, n_subscriptions=5,
            template_library=[peak_template(8, 16, 70, 20, jitter=3.0)],
        )
        defaults.update(kwargs)
        return GeneratorConfig(**defaults)

    def test_determinism(self):
        config = self.small_config()
        a = generate_synthetic_trace(config, seed=11)
        b = generate_synthetic_trace(config, seed=11)
        assert a == b
        c = generate_synthetic_trace(config, seed=12)
        assert a != c

    def test_three_window_template_levels(self):
        template = TemplateSpec(segments=((0, 8, 30.0), (8, 16, 75.0), (16, 24, 55.0)))
        config = self.small_config(
            days=1, n_vms=0, n_subscriptions=0, template_library=[],
            groups=[GroupSpec("sub-x", "s", 1,
                              templates={r: template for r in RESOURCE_ORDER})])
        trace = generate_synthetic_trace(config, seed=5)
        (vm_id,) = trace.vms
        values = trace.get_series(vm_id, Resource.MEM).values
        window_maxima = values.reshape(3, 96).max(axis=1)
        assert list(window_maxima) == [30.0, 75.0, 55.0]

    def test_complementary_groups_have_disjoint_peaks(self):
        early = peak_template(8, 16, 80, 20)
        late = peak_template(16, 24, 80, 20)
        config = self.small_config(
            days=1, n_vms=0, n_subscriptions=0, template_library=[],
            groups=[
                GroupSpec("sub-early", "s", 1, templates={Resource.MEM: early}),
                GroupSpec("sub-late", "s", 1, templates={Resource.MEM: late}),
            ])
        trace = generate_synthetic_trace(config, seed=5)
        maxima = {}
        for vm_id, vm in trace.vms.items():
            values = trace.get_series(vm_id, Resource.MEM).values
            maxima[vm.subscription_id] = values.reshape(3, 96).max(axis=1)
        assert np.argmax(maxima["sub-early"]) == 1
        assert np.argmax(maxima["sub-late"]) == 2

    def test_sample_is_max_of_minute_template(self):
        # zero jitter: each 5-min sample must equal the max of the five
        # 1-minute template evaluations inside the interval
        template = TemplateSpec(segments=((0, 1, 10.0), (1, 24, 90.0)))
        config = self.small_config(
            days=1, n_vms=0, n_subscriptions=0, template_library=[],
            groups=[GroupSpec("sub-x", "s", 1, templates={Resource.MEM: template})])
        trace = generate_synthetic_trace(config, seed=5)
        (vm_id,) = trace.vms
        values = trace.get_series(vm_id, Resource.MEM).values
        minute_levels = template.minute_levels()
        expected = minute_levels.reshape(-1, 5).max(axis=1)
        assert np.array_equal(values[:len(expected)], expected.astype(np.float32))

    def test_bounds_and_grid(self):
        config = self.small_config()
        trace = generate_synthetic_trace(config, seed=2)
        trace.validate()
        for series in trace.series.values():
            assert series.start % STEP == 0
            assert series.values.min() >= 0.0
            assert series.values.max() <= 100.0

    def test_zipf_subscription_sizes_spread(self):
        config = self.small_config(n_vms=200, n_subscriptions=12)
        trace = generate_synthetic_trace(config, seed=9)
        counts = {}
        for vm in trace.vms.values():
            counts[vm.subscription_id] = counts.get(vm.subscription_id, 0) + 1
        sizes = sorted(counts.values(), reverse=True)
        assert sizes[0] >= 3 * sizes[-1]  # heavy head, thin tail
        assert min(sizes) < 5             # small groups exist to hit fallbacks

    def test_invalid_template_rejected(self):
        with pytest.raises(GeneratorError):
            TemplateSpec(segments=((0, 8, 30.0), (9, 24, 50.0))).validate()
        with pytest.raises(GeneratorError):
            TemplateSpec(segments=((0, 24, 120.0),)).validate()

    def test_requires_positive_vm_count(self):
        with pytest.raises(GeneratorError):
            generate_synthetic_trace(self.small_config(n_vms=0), seed=1)


class TestTraceSetInvariants:
    def test_missing_series_rejected(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        trace = build_trace({vm: {}})
        del trace.series[("vm-1", Resource.SSD)]
        with pytest.raises(TraceError, match="missing ssd series"):
            trace.validate()

    def test_series_for_unknown_vm_rejected(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        ghost = make_vm("vm-2", BASE, BASE + DAY)
        trace = build_trace({vm: {}})
        trace.series[("vm-2", Resource.CPU)] = make_series(
            ghost, Resource.CPU, np.zeros(ghost.n_samples))
        with pytest.raises(TraceError, match="unknown vm"):
            trace.validate()

    def test_content_hash_changes_with_data(self):
        vm = make_vm("vm-1", BASE, BASE + DAY)
        t1 = build_trace({vm: {Resource.CPU: 10.0}})
        t2 = build_trace({vm: {Resource.CPU: 11.0}})
        assert t1.content_hash() != t2.content_hash()
