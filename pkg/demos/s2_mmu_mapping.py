"""Walk-time fault: the table base moves and the mapping splits into three classes."""
from socfault.campaign import Scenario, bundled_scenario, run_scenario
from socfault.mmu import mapping_report
from socfault.probe import ProbeSession

sc = Scenario.load(bundled_scenario("mmu_loop"))
rec = run_scenario(sc, forensics=False)
print(rec.summary())

probe = ProbeSession(rec.sim)
classes = probe.map(0, 0x140000)
print(mapping_report(classes), end="")

probe.tlbi()
again = mapping_report(probe.map(0, 0x140000))
print("identical after tlbi:", again == mapping_report(classes))

sim = rec.sim
print(f"walker reads PTEs at 0x{sim.mmu.walk_base:x} instead of 0x{sim.mmu.tables.base_paddr:x}")
print(probe.dump(sim.mmu.walk_base + 8 * 8, 8 * 8, physical=True), end="")
