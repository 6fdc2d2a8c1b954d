import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oversub.hybrid import (ScheduleError, ServerState, allocation_from_absolute,
                            build_allocation, pa_demand, server_pools, va_demand,
                            va_from_peaks)
from oversub.predict import TimeWindowProfile
from oversub.resources import RESOURCE_ORDER, Resource, ResourceVector

from oracles import (oracle_fungible_fit, oracle_mem_fit, oracle_pa,
                     oracle_pools, oracle_va, oracle_va_from_abs)


def profile_of(px_by_window, pmax_by_window, window_hours=8, percentile=95):
    windows = 24 // window_hours
    assert len(px_by_window) == windows
    p_x = {r: np.asarray(px_by_window, dtype=np.float64) for r in RESOURCE_ORDER}
    p_max = {r: np.asarray(pmax_by_window, dtype=np.float64) for r in RESOURCE_ORDER}
    return TimeWindowProfile(window_hours, percentile, p_max, p_x)


def mem_alloc(pa, peaks, requested_mem=32.0, windows=None):
    """Allocation with the given absolute memory guaranteed amount and peaks."""
    windows = windows if windows is not None else len(peaks)
    return allocation_from_absolute(
        ResourceVector(4, requested_mem, 1, 50), windows,
        guaranteed={Resource.MEM: pa, Resource.CPU: 0.25},
        peaks={Resource.MEM: np.asarray(peaks, dtype=np.float64),
               Resource.CPU: np.full(windows, 0.25)})


class TestPaDemand:
    def test_max_over_windows(self):
        profile = profile_of([50, 25, 40], [55, 30, 45])
        assert pa_demand(profile, Resource.MEM, 32.0) == 16.0

    def test_flat_full_percentile_degenerates(self):
        profile = profile_of([100, 100, 100], [100, 100, 100])
        assert pa_demand(profile, Resource.MEM, 32.0) == 32.0

    def test_rounds_up_to_granularity(self):
        profile = profile_of([55, 25, 40], [55, 30, 45])
        # 55% of 31GB = 17.05 -> 18GB at 1GB grain
        assert pa_demand(profile, Resource.MEM, 31.0) == 18.0
        # cpu grain 0.25: 55% of 6 cores = 3.3 -> 3.5
        assert pa_demand(profile, Resource.CPU, 6.0) == 3.5


class TestVaDemand:
    def test_worked_vm1(self):
        # peaks {28, 8, 22} GB with 16GB guaranteed -> {12, 0, 6}
        assert va_from_peaks(np.array([28.0, 8.0, 22.0]), 16.0, 1.0).tolist() == [12.0, 0.0, 6.0]

    def test_worked_vm2(self):
        assert va_from_peaks(np.array([10.0, 18.0, 24.0]), 12.0, 1.0).tolist() == [0.0, 6.0, 12.0]

    def test_peaks_below_guaranteed_clamp_to_zero(self):
        profile = profile_of([50, 50, 50], [50, 50, 50])
        pa = pa_demand(profile, Resource.MEM, 32.0)
        va = va_demand(profile, pa, Resource.MEM, 32.0)
        assert va.tolist() == [0.0, 0.0, 0.0]

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=8),
           st.integers(0, 20), st.integers(1, 16))
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, pmax_buckets, px_bucket, mem_units):
        pmax = [5.0 * b for b in pmax_buckets]
        px = [min(5.0 * px_bucket, p) for p in pmax]
        requested = float(mem_units * 4)
        windows = len(pmax)
        profile = TimeWindowProfile(
            24 // windows if 24 % windows == 0 else 24, 95,
            {r: np.asarray(pmax) for r in RESOURCE_ORDER},
            {r: np.asarray(px) for r in RESOURCE_ORDER})
        pa = pa_demand(profile, Resource.MEM, requested)
        assert pa == oracle_pa(px, requested, 1.0)
        va = va_demand(profile, pa, Resource.MEM, requested)
        assert va.tolist() == oracle_va(pmax, pa, requested, 1.0)


class TestServerPools:
    def test_worked_two_vm_example(self):
        vm1 = mem_alloc(16.0, [28, 8, 22])
        vm2 = mem_alloc(12.0, [10, 18, 24])
        guaranteed, pool = server_pools([vm1, vm2])
        mem = RESOURCE_ORDER.index(Resource.MEM)
        assert guaranteed[mem] == 28.0
        assert pool[mem] == 18.0                 # max(12, 6, 18): multiplexed
        assert guaranteed[mem] + pool[mem] == 46.0

    def test_single_vm_no_multiplexing_benefit(self):
        vm = mem_alloc(10.0, [20, 14, 12])
        _, pool = server_pools([vm])
        assert pool[RESOURCE_ORDER.index(Resource.MEM)] == 10.0  # max_t va

    def test_coincident_peaks_do_not_multiplex(self):
        a = mem_alloc(10.0, [20, 10, 10])
        b = mem_alloc(10.0, [20, 10, 10])
        _, pool = server_pools([a, b])
        assert pool[RESOURCE_ORDER.index(Resource.MEM)] == 20.0

    def test_empty_set(self):
        guaranteed, pool = server_pools([])
        assert guaranteed.tolist() == [0.0] * 4
        assert pool.tolist() == [0.0] * 4

    @given(st.lists(st.tuples(st.integers(0, 12), st.lists(st.integers(0, 28),
                                                           min_size=4, max_size=4)),
                    min_size=1, max_size=10))
    @settings(max_examples=200, deadline=None)
    def test_multiplexing_bounds(self, raw):
        allocs = [mem_alloc(float(pa), [float(p) for p in peaks]) for pa, peaks in raw]
        mem = RESOURCE_ORDER.index(Resource.MEM)
        _, pool = server_pools(allocs)
        va_lists = [a.va[mem] for a in allocs]
        sum_of_max = sum(v.max() for v in va_lists)
        max_of_sum = np.sum(va_lists, axis=0).max()
        max_single = max(v.max() for v in va_lists)
        assert pool[mem] == max_of_sum
        assert max_single - 1e-9 <= pool[mem] <= sum_of_max + 1e-9


class TestFitCheck:
    def server(self, mem=48.0, cpu=64.0, windows=3):
        return ServerState("srv-0", ResourceVector(cpu, mem, 10, 500), windows)

    def test_cpu_window_vector_example(self):
        # predicted cpu windows {2, 6, 4} into free {4, 6, 8} fits with
        # slack {2, 0, 4}; cpu is fungible so only window slots bind
        state = ServerState("srv-0", ResourceVector(8, 512, 10, 500), 3)
        pre = allocation_from_absolute(
            ResourceVector(8, 8, 1, 50), 3,
            guaranteed={Resource.CPU: 0.0, Resource.MEM: 8.0},
            peaks={Resource.CPU: np.array([4.0, 2.0, 0.0]),
                   Resource.MEM: np.array([8.0, 8.0, 8.0])})
        state.place("vm-pre", pre)
        cand = allocation_from_absolute(
            ResourceVector(8, 8, 1, 50), 3,
            guaranteed={Resource.CPU: 0.0, Resource.MEM: 8.0},
            peaks={Resource.CPU: np.array([2.0, 6.0, 4.0]),
                   Resource.MEM: np.array([8.0, 8.0, 8.0])})
        result = state.fit_check(cand)
        assert result.fits
        cpu = RESOURCE_ORDER.index(Resource.CPU)
        assert result.slack[cpu, :3].tolist() == [2.0, 0.0, 4.0]

    def test_worked_memory_example_fits_48gb(self):
        state = self.server()
        vm1 = mem_alloc(16.0, [28, 8, 22])
        result = state.fit_check(vm1)
        assert result.fits
        state.place("vm-1", vm1)
        vm2 = mem_alloc(12.0, [10, 18, 24])
        assert state.fit_check(vm2).fits
        state.place("vm-2", vm2)
        state.check_invariants()

    def test_third_vm_overflows_window(self):
        state = self.server()
        state.place("vm-1", mem_alloc(16.0, [28, 8, 22]))
        state.place("vm-2", mem_alloc(12.0, [10, 18, 24]))
        assert not state.fit_check(mem_alloc(12.0, [10, 18, 24])).fits

    def test_schema_mismatch_rejected(self):
        state = self.server(windows=3)
        with pytest.raises(ScheduleError, match="window schema"):
            state.fit_check(mem_alloc(4.0, [10, 10, 10, 10]))

    def test_monotone_smaller_fits(self):
        state = self.server()
        state.place("vm-1", mem_alloc(16.0, [28, 8, 22]))
        big = mem_alloc(12.0, [18, 24, 26])
        small = mem_alloc(10.0, [12, 20, 22])
        assert np.all(small.demand_matrix() <= big.demand_matrix())
        if state.fit_check(big).fits:
            assert state.fit_check(small).fits

    def test_reversibility(self):
        state = self.server()
        state.place("vm-1", mem_alloc(16.0, [28, 8, 22]))
        before_demand = state.demand.copy()
        before_pool = state.oversub_pool.copy()
        vm2 = mem_alloc(12.0, [10, 18, 24])
        state.place("vm-2", vm2)
        state.remove("vm-2")
        assert np.array_equal(state.demand, before_demand)
        assert np.array_equal(state.oversub_pool, before_pool)
        state.place("vm-2", vm2)
        state.remove("vm-2")
        assert np.array_equal(state.demand, before_demand)

    def test_no_prediction_equals_full_reservation(self):
        state = self.server(mem=64.0)
        req = ResourceVector(4, 32, 1, 50)
        alloc = build_allocation(None, req, windows=3)
        assert not alloc.predicted
        mem = RESOURCE_ORDER.index(Resource.MEM)
        assert alloc.demand_matrix()[mem].tolist() == [32.0] * 4
        state.place("vm-1", alloc)
        assert state.fit_check(alloc).fits           # 64 = 32 + 32
        state.place("vm-2", build_allocation(None, req, windows=3))
        assert not state.fit_check(alloc).fits       # a third does not fit
        state.check_invariants()


class TestPolicyDominance:
    @given(st.lists(st.integers(0, 20), min_size=3, max_size=3),
           st.integers(0, 20))
    @settings(max_examples=100, deadline=None)
    def test_predicted_demand_never_exceeds_full_reservation(self, pmax_b, px_b):
        pmax = [5.0 * b for b in pmax_b]
        px = [min(5.0 * px_b, p) for p in pmax]
        profile = TimeWindowProfile(
            8, 95,
            {r: np.asarray(pmax) for r in RESOURCE_ORDER},
            {r: np.asarray(px) for r in RESOURCE_ORDER})
        requested = ResourceVector(4, 32, 1, 50)
        predicted = build_allocation(profile, requested, 3)
        full = build_allocation(None, requested, 3)
        assert np.all(predicted.demand_matrix() <= full.demand_matrix() + 1e-9)


class TestBuildAllocation:
    def test_profile_to_allocation_end_to_end(self):
        profile = profile_of([50, 25, 40], [85, 25, 70])
        alloc = build_allocation(profile, ResourceVector(4, 32, 1, 50), windows=3)
        mem = RESOURCE_ORDER.index(Resource.MEM)
        assert alloc.guaranteed[mem] == 16.0
        assert alloc.va[mem].tolist() == [12.0, 0.0, 7.0]  # ceil(0.7*32 - 16) = 7
        alloc.validate()

    def test_guaranteed_capped_by_request(self):
        profile = profile_of([100, 100, 100], [100, 100, 100])
        alloc = build_allocation(profile, ResourceVector(4, 32, 1, 50), windows=3)
        mem = RESOURCE_ORDER.index(Resource.MEM)
        assert alloc.guaranteed[mem] == 32.0
        assert np.all(alloc.va[mem] == 0.0)


@st.composite
def random_instance(draw):
    windows = draw(st.integers(1, 8))
    n_vms = draw(st.integers(1, 10))
    vms = []
    for _ in range(n_vms):
        requested = float(draw(st.integers(1, 16)) * 4)
        pmax_buckets = draw(st.lists(st.integers(0, 20), min_size=windows,
                                     max_size=windows))
        px_cap = draw(st.integers(0, 20))
        pmax = [5.0 * b for b in pmax_buckets]
        px = [min(5.0 * px_cap, p) for p in pmax]
        vms.append((requested, px, pmax))
    capacity = float(draw(st.integers(8, 200)))
    return windows, vms, capacity


class TestEquationOracle:
    @given(random_instance())
    @settings(max_examples=300, deadline=None)
    def test_pa_va_pools_fit_match_bruteforce(self, instance):
        windows, vms, capacity = instance
        allocs = []
        pa_list, va_lists, peak_lists = [], [], []
        mem = RESOURCE_ORDER.index(Resource.MEM)
        for requested, px, pmax in vms:
            pa = oracle_pa(px, requested, 1.0)
            peaks_abs = [p / 100.0 * requested for p in pmax]
            alloc = allocation_from_absolute(
                ResourceVector(1, requested, 0, 0), windows,
                guaranteed={Resource.MEM: pa},
                peaks={Resource.MEM: np.asarray(peaks_abs)})
            assert alloc.va[mem].tolist() == oracle_va_from_abs(peaks_abs, pa, 1.0)
            allocs.append(alloc)
            pa_list.append(pa)
            va_lists.append(alloc.va[mem].tolist())
            peak_lists.append(alloc.peak[mem].tolist())
        guaranteed, pool = server_pools(allocs)
        o_g, o_pool = oracle_pools(pa_list, va_lists)
        assert guaranteed[mem] == pytest.approx(o_g, abs=1e-9)
        assert pool[mem] == pytest.approx(o_pool, abs=1e-9)

        state = ServerState("srv-0", ResourceVector(1000, capacity, 1000, 1000),
                            windows)
        state.place_all((f"vm-{i}", a) for i, a in enumerate(allocs[:-1]))
        cand = allocs[-1]
        expected = oracle_mem_fit(pa_list[:-1], va_lists[:-1], pa_list[-1],
                                  va_lists[-1], capacity)
        assert state.fit_check(cand).fits == expected

    @given(random_instance())
    @settings(max_examples=100, deadline=None)
    def test_fungible_fit_matches_bruteforce(self, instance):
        windows, vms, capacity = instance
        cpu = RESOURCE_ORDER.index(Resource.CPU)
        allocs = []
        peak_lists = []
        for requested, px, pmax in vms:
            cores = requested / 4.0
            peaks_abs = [p / 100.0 * cores for p in pmax]
            alloc = allocation_from_absolute(
                ResourceVector(cores, 1, 0, 0), windows,
                guaranteed={Resource.CPU: oracle_pa(px, cores, 0.25),
                            Resource.MEM: 1.0},
                peaks={Resource.CPU: np.asarray(peaks_abs),
                       Resource.MEM: np.ones(windows)})
            allocs.append(alloc)
            peak_lists.append(alloc.peak[cpu].tolist())
        state = ServerState("srv-0", ResourceVector(capacity, 10000, 1000, 1000),
                            windows)
        state.place_all((f"vm-{i}", a) for i, a in enumerate(allocs[:-1]))
        expected = oracle_fungible_fit(peak_lists[:-1], peak_lists[-1], capacity)
        assert state.fit_check(allocs[-1]).fits == expected
