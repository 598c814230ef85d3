import json

import pytest
from hypothesis import given, settings, strategies as st

from socfault import FaultSpec, L1IParams, L2Params, MmuParams, Simulator
from socfault.faults import F_L1I_FILL, F_L2_BEAT, F_MMU, FaultEngine, FaultError, Mutation
from socfault.memory import L1I, L2, MemorySystem


def spec(**kw):
    base = dict(model=F_L1I_FILL, window=(0, 100), params=L1IParams(0x48A08))
    base.update(kw)
    return FaultSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(model="F_BOGUS")
    with pytest.raises(ValueError):
        spec(window=(10, 5))
    with pytest.raises(ValueError):
        spec(success_ratio=1.5)
    with pytest.raises(TypeError):
        spec(params=L2Params((0, 16)))
    with pytest.raises(ValueError):
        L1IParams(0x48A09)
    with pytest.raises(ValueError):
        L2Params((0, 16), beat_delta=8)
    with pytest.raises(ValueError):
        MmuParams(table_shift_bytes=0x3A0, shift_delta=0x10000)


def test_spec_json_round_trip():
    s = FaultSpec(F_L2_BEAT, (1, 2), L2Params(("0x48a00", "0x48a10"), variant="F2"), 3.0, 0.5, 9)
    back = FaultSpec.from_json(s.to_json())
    assert back == s
    assert json.loads(s.to_json())["params"]["beat_paddr_range"] == [0x48A00, 0x48A10]


def test_delayed_shifts_window_and_reseeds():
    s = spec(window=(0, 0), seed=4).delayed(30, seed=77)
    assert s.window == (30, 30) and s.seed == 77


def test_engine_draws_are_seeded():
    a = FaultEngine(spec(jitter_sigma=10, success_ratio=0.5, seed=11))
    b = FaultEngine(spec(jitter_sigma=10, success_ratio=0.5, seed=11))
    assert (a.jitter, a.succeeds) == (b.jitter, b.succeeds)


@given(st.integers(0, 10_000), st.floats(0, 50))
def test_jitter_bounded(seed, sigma):
    e = FaultEngine(spec(jitter_sigma=sigma, seed=seed))
    assert abs(e.jitter) <= round(2 * sigma)


def test_success_ratio_extremes():
    assert not any(FaultEngine(spec(success_ratio=0.0, seed=s)).succeeds for s in range(50))
    assert all(FaultEngine(spec(success_ratio=1.0, seed=s)).succeeds for s in range(50))


def test_success_ratio_rate():
    hits = sum(FaultEngine(spec(success_ratio=0.8, seed=s)).succeeds for s in range(4000))
    assert 0.77 < hits / 4000 < 0.83


def test_armed_at_honors_min_offset_and_window():
    e = FaultEngine(spec(window=(0, 2000), min_offset=700))
    assert not e.armed_at(800)  # no trigger yet
    e.trigger_cycle = 100
    assert not e.armed_at(100 + 699)
    assert e.armed_at(100 + 700)
    assert not e.armed_at(100 + 2001)


def test_l1i_mutation_flips_only_installed_copy():
    mem = MemorySystem()
    mem.dram[0x48A08:0x48A0C] = (0x11000001).to_bytes(4, "little")
    e = FaultEngine(spec(window=(0, 10_000), min_offset=0))
    e.trigger_cycle = 0
    mem.faults = e
    t = mem.line_fill(L1I, 0x48A00, 5)
    assert t.intended != t.applied
    assert mem.ifetch_view(0x48A08, 4) == (0x11000000).to_bytes(4, "little")
    assert mem.dram[0x48A08:0x48A0C] == (0x11000001).to_bytes(4, "little")
    assert mem.l2.lookup(0x48A00).data[8:12] == (0x11000001).to_bytes(4, "little")
    assert [x for x in mem.log if isinstance(x, Mutation)] == [e.mutation]
    assert e.mutation.before == 0x11000001 and e.mutation.after == 0x11000000


def test_fires_once():
    mem = MemorySystem()
    e = FaultEngine(spec(window=(0, 10_000), min_offset=0))
    e.trigger_cycle = 0
    mem.faults = e
    mem.line_fill(L1I, 0x48A00, 5)
    first = mem.l1i.lookup(0x48A00).data[8:12]
    mem.ic_iallu()
    mem.line_fill(L1I, 0x48A00, 50)
    assert mem.l1i.lookup(0x48A00).data[8:12] != first
    assert sum(isinstance(x, Mutation) for x in mem.log) == 1


def test_l2_beat_displaced_by_exactly_16_bytes():
    mem = MemorySystem()
    mem.dram[0x48A00:0x48A40] = bytes(range(1, 65))
    mem.dram[0x489C0:0x48A00] = b"\xaa" * 64
    mem.line_fill(L2, 0x489C0, 0)
    e = FaultEngine(FaultSpec(F_L2_BEAT, (0, 10_000), L2Params((0x48A00, 0x48A10)), min_offset=0))
    e.trigger_cycle = 0
    mem.faults = e
    before = bytes(mem.l2.lookup(0x489C0).data)
    mem.line_fill(L2, 0x48A00, 10)
    after_dst = bytes(mem.l2.lookup(0x489C0).data)
    changed = [i for i in range(64) if before[i] != after_dst[i]]
    assert changed == list(range(48, 64))
    assert after_dst[48:64] == bytes(range(1, 17))
    assert bytes(mem.l2.lookup(0x48A00).data[:16]) == bytes(16)
    assert mem.l2.lookup(0x489C0).dirty


def test_l2_beat_lost_when_destination_not_resident():
    mem = MemorySystem()
    e = FaultEngine(FaultSpec(F_L2_BEAT, (0, 10_000), L2Params((0x48A00, 0x48A10)), min_offset=0))
    e.trigger_cycle = 0
    mem.faults = e
    mem.line_fill(L2, 0x48A00, 10)
    assert any(isinstance(x, tuple) and x[0] == "beat-lost" for x in mem.log)


def test_f2_plants_partially_stale_l1d_copy():
    mem = MemorySystem()
    mem.dram[0x48A00:0x48A10] = b"\x11" * 16
    mem.dram[0x489F0:0x48A00] = b"\x22" * 16
    mem.line_fill(L2, 0x489C0, 0)
    e = FaultEngine(FaultSpec(F_L2_BEAT, (0, 10_000), L2Params((0x48A00, 0x48A10), variant="F2"),
                              min_offset=0))
    e.trigger_cycle = 0
    mem.faults = e
    mem.line_fill(L2, 0x48A00, 10)
    assert mem.probe_read(0x489F0, 16) == b"\x22" * 8 + b"\x11" * 8
    assert bytes(mem.l2.lookup(0x489C0).data[48:64]) == b"\x11" * 16
    mem.dc_civac(0x489F8)
    assert mem.probe_read(0x489F0, 16) == b"\x11" * 16
    assert mem.l1d.lookup(0x489C0) is None


def test_double_arm_rejected():
    sim = Simulator()
    sim.arm(spec())
    with pytest.raises(FaultError):
        sim.arm(spec())
    sim.disarm()
    sim.arm(spec())


def test_mmu_params_defaults():
    p = MmuParams()
    assert (p.table_shift_bytes, p.zero_range, p.shift_delta) == (0x3A0, (8, 12), 0x740000)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_mutation_summary_stable(cycle):
    m = Mutation(F_MMU, 0x100038, 0x100000, 0x1003A0, cycle)
    assert m.summary() == f"F_MMU@0x100038:0x100000->0x1003a0@{cycle}"
