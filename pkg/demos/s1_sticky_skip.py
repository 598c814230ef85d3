"""Instruction-cache fault that sticks until the cache is invalidated."""
from socfault.campaign import Scenario, bundled_scenario, baseline, run_scenario
from socfault.isa import DecodedInstruction, Op, encode
from socfault.probe import ProbeSession, golden_trace

sc = Scenario.load(bundled_scenario("loop_l1i"))
ref = baseline(sc)
print("fault-free:", ref.output, "in", ref.cycles, "cycles")

rec = run_scenario(sc)
print(rec.summary())

probe = ProbeSession(rec.sim)
print(probe.replay_diagnose((0x48A00, 0x48A1C), golden_trace(ref)).render())

# data view still holds the good word; the fetch side does not
print("data view :", probe.dump(0x48A08, 4), end="")
print("fetch view:", probe.ifetch_listing(0x48A08, 0x48A0C)[0])

LOOPS = 0x4800C
probe.set_pc(LOOPS)
r = probe.resume(sc.cycle_limit)
probe.halt()
print("rerun without a new fault ->", r.output)

probe.exec_at([encode(DecodedInstruction(Op.IC_IALLU))])
probe.set_pc(LOOPS)
r = probe.resume(sc.cycle_limit)
probe.halt()
print("after ic_iallu ->", r.output)
