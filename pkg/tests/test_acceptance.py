"""End-to-end acceptance checks, one test per criterion.

Run alone with ``pytest tests/test_acceptance.py``; the summary at the end
prints one PASS/FAIL line per criterion.
"""
import random
import time

import pytest

from socfault import FaultSpec, L1IParams, MacConfig, mac_tag
from socfault.campaign import (
    CORRECT, DETECTED, TIMEOUT, WRONG_OUTPUT, Scenario, baseline, bundled_scenario, classify,
    fill_interval, render_heatmap, run_scenario, sweep,
)
from socfault.core import StepEvent
from socfault.faults import F_L1I_FILL
from socfault.isa import DecodedInstruction, Op, encode
from socfault.memory import DRAM, L2, BeatTransfer
from socfault.mmu import WalkEvent, classify_mapping, mapping_report, PTE_OA_MASK, PTE_VALID
from socfault.probe import ProbeSession, golden_trace

from mac_oracle import oracle_tag

criterion = pytest.mark.criterion
SCENARIO_BUDGET_S = 5.0


def load(name):
    return Scenario.load(bundled_scenario(name))


def timed_run(sc, fault=None):
    t0 = time.perf_counter()
    rec = run_scenario(sc, fault)
    assert time.perf_counter() - t0 < SCENARIO_BUDGET_S
    return rec


def l2_matches_dram(sim, dram):
    """Every resident L2 line holds exactly the given DRAM image's bytes."""
    l2 = sim.mem.l2
    for s, _, line in l2.resident():
        pa = l2.line_paddr(s, line.tag)
        if bytes(line.data) != bytes(dram[pa:pa + 64]):
            return False
    return True


@criterion(1, "S0 baseline: CORRECT, output 2500, bit-identical over 10 runs")
def test_criterion_1_baseline():
    sc = load("loop")
    recs = [timed_run(sc) for _ in range(10)]
    assert recs[0].outcome.kind == CORRECT
    assert recs[0].result.output == 2500
    assert all(r.result == recs[0].result for r in recs[1:])


@criterion(2, "S1 sticky instruction skip, pinpointed, cured by ic_iallu")
def test_criterion_2_sticky_skip():
    sc = load("loop_l1i")
    ref_sim = sc.with_fault(None).build()
    ref = ref_sim.run(sc.cycle_limit)
    ref_dram = bytes(ref_sim.mem.dram)

    rec = timed_run(sc)
    sim = rec.sim
    assert rec.outcome.kind == WRONG_OUTPUT
    assert rec.result.mutation.location == 0x48A08
    assert sim.mem.digest((L2, DRAM)) == ref_sim.mem.digest((L2, DRAM))

    probe = ProbeSession(sim)
    report = probe.replay_diagnose((0x48A00, 0x48A1C), golden_trace(ref))
    assert report.first_divergent_pc == 0x48A08

    loops = 0x4800C  # x0/x1 setup, then the nested loop
    probe.set_pc(loops)
    again = probe.resume(sc.cycle_limit)
    probe.halt()
    assert again.mutation is rec.result.mutation  # no second shot was taken
    assert classify(again, sc.expected_output).kind == WRONG_OUTPUT
    assert bytes(sim.mem.dram) == ref_dram and l2_matches_dram(sim, ref_dram)

    probe.exec_at([encode(DecodedInstruction(Op.IC_IALLU))])
    probe.set_pc(loops)
    cured = probe.resume(sc.cycle_limit)
    probe.halt()
    assert classify(cured, sc.expected_output).kind == CORRECT and cured.output == 2500
    assert bytes(sim.mem.dram) == ref_dram and l2_matches_dram(sim, ref_dram)


@criterion(3, "S2 MMU fault: Identity / Zero / Shifted mapping, stable under tlbi_all")
def test_criterion_3_mmu_mapping():
    sc = load("mmu_loop")
    rec = timed_run(sc)
    sim = rec.sim
    assert rec.result.mutation is not None
    classes = classify_mapping(sim.mmu, 0, 0x200000)
    assert {c.kind for c in classes} == {"Identity", "Zero", "Shifted"}
    for c in classes:
        if c.vpage <= 0x70000:
            assert c.kind == "Identity"
    zero = [c.vpage for c in classes if c.kind == "Zero"]
    assert zero[0] == 0x80000 and zero == list(range(0x80000, zero[-1] + 1, 0x10000))
    shifted = [c for c in classes if c.kind == "Shifted"]
    assert shifted[0].vpage == 0xC0000 and shifted[0].ppage == 0x800000
    assert all(c.vpage > zero[-1] for c in shifted)
    assert len({c.delta for c in shifted}) == 1

    report = mapping_report(classes)
    sim.mmu.tlbi_all()
    assert mapping_report(classify_mapping(sim.mmu, 0, 0x200000)) == report
    # the same picture through the probe's injected AT instructions
    assert [(c.vpage, c.kind) for c in ProbeSession(sim).map(0, 0x200000)] == \
        [(c.vpage, c.kind) for c in classes]

    # the table region as the walker now reads it: PTEs for 0x80000.. have no output address
    probe = ProbeSession(sim)
    base = sim.mmu.walk_base
    assert base != sim.mmu.tables.base_paddr
    words = probe.read_phys(base, 16 * 8)
    ptes = [int.from_bytes(words[i:i + 8], "little") for i in range(0, len(words), 8)]
    for vpage in range(8, 12):
        assert ptes[vpage] & PTE_VALID and ptes[vpage] & PTE_OA_MASK == 0
    assert ptes[12] & PTE_OA_MASK == 0x800000
    ref_words = ProbeSession(sc.with_fault(None).build()).read_phys(base, 16 * 8)
    assert words != ref_words


def _trace(result):
    return [(e.pc, e.word, e.reg_write, e.mem_writes) for e in result.steps()]


@criterion(4, "S3 L2 beat shift: F1 TIMEOUT, 16-byte displacement, F2 stale view until civac")
def test_criterion_4_l2_shift():
    f1 = timed_run(load("register_transfer_f1"))
    f2 = timed_run(load("register_transfer_f2"))
    assert f1.outcome.kind == TIMEOUT and f2.outcome.kind == TIMEOUT
    mut = f1.result.mutation
    assert mut.before - mut.after == 16

    lo, n = 0x489C0, 0x80
    p1 = ProbeSession(f1.sim)
    dump1 = p1.read_mem(lo, n)
    assert dump1 == f1.sim.mem.ifetch_view(lo, n)
    last = {}
    for e in f1.result.steps():
        if lo <= e.pc < lo + n and e.cycle >= mut.cycle:
            last[e.pc] = e.word
    assert last and all(int.from_bytes(dump1[pc - lo:pc - lo + 4], "little") == w for pc, w in last.items())

    # exactly one 16-byte unit moved: the destination now holds the source's fault-free bytes
    ref_sim = load("register_transfer_f1").with_fault(None).build()
    ref_sim.run(20_000)
    ref = ProbeSession(ref_sim).read_mem(lo, n)
    dst = mut.after - lo
    diff = [i for i in range(n) if dump1[i] != ref[i] and dst <= i < dst + 16]
    assert dump1[dst:dst + 16] == ref[mut.before - lo:mut.before - lo + 16]
    assert diff and all(dst <= i < dst + 16 for i in diff)

    assert _trace(f2.result) == _trace(f1.result)
    p2 = ProbeSession(f2.sim)
    dump2 = p2.read_mem(lo, n)
    assert dump2 != dump1
    assert {i // 4 * 4 + lo for i in range(n) if dump1[i] != dump2[i]} <= set(range(mut.after, mut.after + 16, 4))
    p2.civac(mut.after + 8)
    assert p2.read_mem(lo, n) == dump1


def _seeded(sc, policy, trials=100):
    sc = sc.with_mac(MacConfig(policy=policy))
    out = []
    for seed in range(trials):
        res = sc.build(sc.fault.delayed(0, seed)).run(sc.cycle_limit)
        assert res.mutation is not None
        out.append(classify(res, sc.expected_output))
    return out


@criterion(5, "countermeasures: 100% DETECTED, JIT recovers without alarm, overhead ordering")
def test_criterion_5_countermeasures():
    for name in ("loop_l1i", "register_transfer_f1"):
        sc = load(name)
        for policy in ("Proactive", "JIT"):
            outcomes = _seeded(sc, policy)
            assert len(outcomes) >= 100
            assert all(o.kind == DETECTED for o in outcomes), (name, policy, set(map(str, outcomes)))
            if policy == "JIT":
                assert all(o.level != "Alarm" for o in outcomes)
    for name in ("loop", "register_transfer_f1"):
        sc = load(name).with_fault(None)
        checks = {}
        for policy in ("Proactive", "JIT"):
            checks[policy] = baseline(sc.with_mac(MacConfig(policy=policy))).mac["checks"]
        assert checks["Proactive"] >= checks["JIT"] > 0


@criterion(6, "MAC vectors: oracle agreement and address dependence")
def test_criterion_6_mac_vectors():
    rng = random.Random(20240601)
    for _ in range(1000):
        key, paddr, block = rng.getrandbits(64), rng.getrandbits(44) << 4, rng.randbytes(16)
        assert mac_tag(key, paddr, block) == oracle_tag(key, paddr, block)
    distinct = 0
    pairs = 10_000
    for _ in range(pairs):
        key, block = rng.getrandbits(64), rng.randbytes(16)
        paddr = rng.randrange(1 << 20, 1 << 40, 16)
        shift = rng.choice((-1, 1)) * 16 * rng.randint(1, 64)
        distinct += mac_tag(key, paddr, block) != mac_tag(key, paddr + shift, block)
    assert distinct / pairs >= 0.999


def _event_cycles(result, trig):
    return sorted(e.cycle - trig for e in result.event_log
                  if isinstance(e, (BeatTransfer, WalkEvent)) and e.cycle >= trig)


@criterion(7, "negative result: windows without fill/walk events leave runs bit-identical")
def test_criterion_7_quiet_windows():
    rng = random.Random(7)
    bases = []
    loop = load("loop")
    loop = loop.with_fault(FaultSpec(F_L1I_FILL, (0, 0), L1IParams(0x48A08)))
    for sc in (loop, load("register_transfer_f1"), load("mmu_loop")):
        ref = baseline(sc)
        trig = next(e.cycle for e in ref.steps() if e.word >> 24 == Op.TRIG)
        bases.append((sc, ref, _event_cycles(ref, trig), ref.cycles - trig))
    placed = 0
    while placed < 100:
        sc, ref, events, span = bases[placed % len(bases)]
        sigma = rng.uniform(0, 4)
        j = round(2 * sigma)
        a = rng.randrange(0, span + 200)
        b = a + rng.randrange(0, 400)
        if any(a - j <= c <= b + j for c in events):
            continue
        spec = FaultSpec(sc.fault.model, (a, b), sc.fault.params, sigma, 1.0, rng.getrandbits(32),
                         min_offset=0)
        res = sc.build(spec).run(sc.cycle_limit)
        assert res.mutation is None
        assert res == ref, (sc.name, spec)
        placed += 1


@criterion(8, "sweep localization inside the fill interval; CSV and SVG byte-stable")
def test_criterion_8_sweep(tmp_path):
    sc = load("loop_sweep")
    ref = baseline(sc)
    lo, hi = fill_interval(ref, "L1I", sc.fault.params.target_paddr_word)
    delays = range(lo - 80, hi + 80)
    t1 = sweep(sc, delays, trials=27)
    t2 = sweep(sc, delays, trials=27)
    assert t1.trials() == 27
    hot = sorted({r.delay for r in t1.rows if r.outcome != CORRECT})
    assert hot and all(lo <= d <= hi for d in hot)
    text1, svg1 = render_heatmap(t1)
    text2, svg2 = render_heatmap(t2)
    assert t1.to_csv() == t2.to_csv()
    assert (text1, svg1) == (text2, svg2)
    t1.save(tmp_path / "a.csv")
    t2.save(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
