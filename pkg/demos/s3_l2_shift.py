"""L2 beat landing 16 bytes early; F2 also leaves a stale data-side copy."""
from socfault import MacConfig
from socfault.campaign import Scenario, bundled_scenario, run_scenario
from socfault.probe import ProbeSession

LO, N = 0x489C0, 0x80

f1 = run_scenario(Scenario.load(bundled_scenario("register_transfer_f1")), forensics=False)
f2 = run_scenario(Scenario.load(bundled_scenario("register_transfer_f2")), forensics=False)
print(f1.summary())
print(f2.summary())

p1, p2 = ProbeSession(f1.sim), ProbeSession(f2.sim)
print("F1 data view:")
print(p1.dump(LO, N), end="")
print("F2 data view:")
print(p2.dump(LO, N), end="")

same = [(e.pc, e.word) for e in f1.result.steps()] == [(e.pc, e.word) for e in f2.result.steps()]
print("same instruction stream:", same)

p2.civac(0x489F8)
print("F2 after civac equals F1:", p2.read_mem(LO, N) == p1.read_mem(LO, N))

for policy in ("JIT", "Proactive"):
    sc = Scenario.load(bundled_scenario("register_transfer_f1")).with_mac(MacConfig(policy=policy))
    rec = run_scenario(sc, forensics=False)
    print(f"{policy:>9}: {rec.outcome}  checks={rec.result.mac['checks']}")
