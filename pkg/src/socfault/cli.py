"""``socfault`` command line: run, sweep, heatmap, debug, asm."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .campaign import CampaignTable, Scenario, bundled_scenario, render_heatmap, run_scenario, sweep
from .integrity import POLICIES, MacConfig
from .isa import AssemblyError, assemble_file, disassemble
from .probe import ProbeSession, ProbeShell


def _scenario(args) -> Scenario:
    path = Path(args.scenario)
    if not path.exists() and path.suffix == "" and bundled_scenario(path.name).exists():
        path = bundled_scenario(path.name)  # a bare name picks a bundled scenario
    sc = Scenario.load(path)
    if getattr(args, "mac", None):
        sc = sc.with_mac(MacConfig(policy=args.mac))
    return sc


def cmd_run(args) -> int:
    sc = _scenario(args)
    rec = run_scenario(sc, forensics="always" if args.forensics else not args.no_forensics)
    print(rec.summary())
    if rec.result.mac is not None:
        print("mac:", rec.result.mac)
    for name, text in rec.artifacts.items():
        print(f"--- {name}")
        sys.stdout.write(text)
        if args.artifacts:
            out = Path(args.artifacts)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{sc.name}.{name}.txt").write_text(text)
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    delays = range(args.delay_start, args.delay_end + 1, args.step)
    table = sweep(sc, delays, args.trials, args.seed_base, workers=args.workers)
    if args.out:
        table.save(args.out)
    else:
        sys.stdout.write(table.to_csv())
    text, _ = render_heatmap(table)
    sys.stderr.write(text)
    return 0


def cmd_heatmap(args) -> int:
    table = CampaignTable.load(args.table)
    text, svg = render_heatmap(table)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(svg)
    return 0


def cmd_debug(args) -> int:
    sc = _scenario(args)
    sim = sc.build()
    if not args.no_run:
        res = sim.run(sc.cycle_limit)
        print(f"ran to {res.termination} at cycle {res.cycles}; core halted for inspection")
    shell = ProbeShell(ProbeSession(sim))
    if args.script:
        shell.run_script(Path(args.script).read_text().splitlines())
    else:
        shell.cmdloop()
    return 0


def cmd_asm(args) -> int:
    img = assemble_file(args.source)
    if args.out:
        img.save(args.out)
    for i, (w, text) in enumerate(zip(img.words, disassemble(img.words))):
        print(f"0x{img.base + 4 * i:08x}: {w:08x}  {text}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socfault", description="SoC fault-injection simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and classify the outcome")
    r.add_argument("scenario")
    r.add_argument("--mac", choices=POLICIES, help="override the countermeasure policy")
    r.add_argument("--no-forensics", action="store_true")
    r.add_argument("--forensics", action="store_true", help="collect forensics even for CORRECT runs")
    r.add_argument("--artifacts", metavar="DIR", help="also write forensic reports to DIR")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="delay x trials campaign, CSV output")
    s.add_argument("scenario")
    s.add_argument("--delay-start", type=int, required=True)
    s.add_argument("--delay-end", type=int, required=True)
    s.add_argument("--step", type=int, default=1)
    s.add_argument("--trials", type=int, default=27)
    s.add_argument("--seed-base", type=int, default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--mac", choices=POLICIES)
    s.add_argument("--out", metavar="CSV")
    s.set_defaults(func=cmd_sweep)

    h = sub.add_parser("heatmap", help="render a sweep CSV as text grid and SVG")
    h.add_argument("table")
    h.add_argument("--out", metavar="SVG")
    h.set_defaults(func=cmd_heatmap)

    d = sub.add_parser("debug", help="probe REPL on a scenario")
    d.add_argument("scenario")
    d.add_argument("--script", help="read probe commands from a file")
    d.add_argument("--no-run", action="store_true", help="attach before the program runs")
    d.add_argument("--mac", choices=POLICIES)
    d.set_defaults(func=cmd_debug)

    a = sub.add_parser("asm", help="assemble a source file and print the listing")
    a.add_argument("source")
    a.add_argument("--out", help="write <out>.bin and its .json sidecar")
    a.set_defaults(func=cmd_asm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AssemblyError, ValueError, OSError) as exc:
        print(f"socfault: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
