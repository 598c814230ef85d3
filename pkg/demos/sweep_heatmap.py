"""Delay sweep over the loop; the non-CORRECT band sits on the L1I fill."""
import sys
from pathlib import Path

from socfault.campaign import Scenario, baseline, bundled_scenario, fill_interval, render_heatmap, sweep

out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
sc = Scenario.load(bundled_scenario("loop_sweep"))
lo, hi = fill_interval(baseline(sc), "L1I", 0x48A08)
print(f"fill of 0x48a00 into L1I at trigger+{lo}..{hi}")

table = sweep(sc, range(2150, 2301), trials=27)
table.save(out / "loop_sweep.csv")
text, svg = render_heatmap(table)
(out / "loop_sweep.svg").write_text(svg)
print(text, end="")
for d, cell in sorted(table.counts().items()):
    if set(cell) != {"CORRECT"}:
        print(d, cell)
