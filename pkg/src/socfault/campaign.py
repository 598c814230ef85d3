"""Scenario files, outcome classification, delay sweeps and sensitivity maps."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .core import RUNNING, T_CYCLE_LIMIT, T_HALTED, T_TRAP, RunResult, Simulator, SocConfig
from .faults import FaultSpec
from .integrity import MacConfig
from .isa import Op, ProgramImage, assemble_file
from .memory import BeatTransfer
from .mmu import classify_mapping, mapping_report
from .probe import ProbeError, ProbeSession, golden_trace

CORRECT = "CORRECT"
WRONG_OUTPUT = "WRONG_OUTPUT"
TIMEOUT = "TIMEOUT"
TRAP = "TRAP"
DETECTED = "DETECTED"
KINDS = (CORRECT, WRONG_OUTPUT, TIMEOUT, TRAP, DETECTED)

CSV_COLUMNS = ("delay", "trial", "seed", "outcome", "mutation")


@dataclass(frozen=True)
class OutcomeClass:
    kind: str
    level: str | None = None

    def __str__(self) -> str:
        return f"{self.kind}({self.level})" if self.kind == DETECTED else self.kind

    @classmethod
    def parse(cls, text: str) -> OutcomeClass:
        if text.startswith(DETECTED + "("):
            return cls(DETECTED, text[len(DETECTED) + 1:-1])
        if text not in KINDS:
            raise ValueError(f"unknown outcome {text!r}")
        return cls(text)


def classify(result: RunResult, expected: int) -> OutcomeClass:
    """Map a run to exactly one outcome class.

    A countermeasure only counts as DETECTED when it changed the ending: an
    alarm trap, or a recovery after which the output is correct.
    """
    if result.termination == T_TRAP:
        if result.trap_reason == "integrity alarm":
            return OutcomeClass(DETECTED, "Alarm")
        return OutcomeClass(TRAP)
    if result.termination == T_CYCLE_LIMIT:
        return OutcomeClass(TIMEOUT)
    if result.termination != T_HALTED:
        raise ValueError(f"unknown termination {result.termination!r}")
    if result.output != expected:
        return OutcomeClass(WRONG_OUTPUT)
    if result.detections:
        first = result.detections[0][0]
        level = first[first.index("(") + 1:-1] if "(" in first else first
        return OutcomeClass(DETECTED, level)
    return OutcomeClass(CORRECT)


@dataclass
class Scenario:
    name: str
    image: ProgramImage
    config: SocConfig = field(default_factory=SocConfig)
    fault: FaultSpec | None = None
    mac: MacConfig | None = None
    expected_output: int = 0
    cycle_limit: int = 1_000_000
    forensics: dict = field(default_factory=dict)
    path: Path | None = None

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | str = ".", name: str | None = None) -> Scenario:
        d = dict(d)
        if "program" not in d or "expected_output" not in d:
            raise ValueError("scenario needs 'program' and 'expected_output'")
        prog = Path(base_dir) / d.pop("program")
        fault = d.pop("fault", None)
        mac = d.pop("mac", None)
        sc = cls(
            name=d.pop("name", name or prog.stem),
            image=assemble_file(prog),
            config=SocConfig.from_dict(d.pop("config", None)),
            fault=FaultSpec.from_dict(fault) if fault else None,
            mac=MacConfig(**mac) if mac else None,
            expected_output=int(d.pop("expected_output")),
            cycle_limit=int(d.pop("cycle_limit", 1_000_000)),
            forensics=d.pop("forensics", {}),
        )
        d.pop("description", None)
        if d:
            raise ValueError(f"unknown scenario keys: {sorted(d)}")
        return sc

    @classmethod
    def load(cls, path) -> Scenario:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{exc.lineno}: {exc.msg}") from None
        sc = cls.from_dict(data, path.parent, path.stem)
        sc.path = path
        return sc

    def with_mac(self, mac: MacConfig | None) -> Scenario:
        return replace(self, mac=mac)

    def with_fault(self, fault: FaultSpec | None) -> Scenario:
        return replace(self, fault=fault)

    def build(self, fault: FaultSpec | None = None) -> Simulator:
        sim = Simulator(self.config, self.mac)
        sim.load(self.image)
        spec = fault if fault is not None else self.fault
        if spec is not None:
            sim.arm(spec)
        return sim


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"loop_l1i"``."""
    p = resources.files("socfault") / "scenarios" / f"{name}.json"
    return Path(str(p))


def bundled_program(name: str) -> Path:
    return Path(str(resources.files("socfault") / "programs" / name))


@dataclass
class OutcomeRecord:
    scenario: str
    outcome: OutcomeClass
    result: RunResult
    artifacts: dict[str, str] = field(default_factory=dict)
    sim: Simulator | None = None

    def summary(self) -> str:
        r = self.result
        out = "-" if r.output is None else str(r.output)
        mut = r.mutation.summary() if r.mutation is not None else "-"
        return f"{self.scenario}: {self.outcome} termination={r.termination} output={out} " \
               f"cycles={r.cycles} mutation={mut}"


def baseline(scenario: Scenario) -> RunResult:
    """Fault-free reference run with the scenario's countermeasure setting."""
    return scenario.with_fault(None).build().run(scenario.cycle_limit)


def forensic_artifacts(scenario: Scenario, sim: Simulator, golden=None) -> dict[str, str]:
    """Mapping report, data-view dumps and divergence report for a finished run."""
    fx = scenario.forensics
    art: dict[str, str] = {}
    probe = ProbeSession(sim)
    if "map_range" in fx:
        lo, hi = (int(str(v), 0) for v in fx["map_range"])
        art["mapping"] = mapping_report(classify_mapping(sim.mmu, lo, hi))
    dumps = []
    for key, physical in (("dump", False), ("dump_phys", True)):
        for addr, n in fx.get(key, []):
            addr, n = int(str(addr), 0), int(str(n), 0)
            try:
                dumps.append(probe.dump(addr, n, physical))
            except ProbeError as exc:
                dumps.append(f"0x{addr:08x}: {exc}\n")
    if dumps:
        art["dump"] = "".join(dumps)
    if "replay" in fx:
        # replay steps the core, so it comes after the read-only artifacts
        lo, hi = (int(str(v), 0) for v in fx["replay"])
        if golden is None:
            golden = golden_trace(baseline(scenario))
        try:
            art["divergence"] = probe.replay_diagnose((lo, hi), golden).render()
        except ProbeError as exc:
            art["divergence"] = f"replay failed: {exc}\n"
    return art


def run_scenario(scenario: Scenario | str | Path, fault: FaultSpec | None = None,
                 forensics: bool | str = True) -> OutcomeRecord:
    """Run, classify and, unless CORRECT (or ``forensics="always"``), collect forensics."""
    if not isinstance(scenario, Scenario):
        scenario = Scenario.load(scenario)
    sim = scenario.build(fault)
    result = sim.run(scenario.cycle_limit)
    outcome = classify(result, scenario.expected_output)
    rec = OutcomeRecord(scenario.name, outcome, result, sim=sim)
    if forensics == "always" or (forensics and outcome.kind != CORRECT):
        rec.artifacts = forensic_artifacts(scenario, sim)
    return rec


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignRow:
    delay: int
    trial: int
    seed: int
    outcome: str
    mutation: str


@dataclass
class CampaignTable:
    rows: list[CampaignRow]

    def delays(self) -> list[int]:
        return sorted({r.delay for r in self.rows})

    def trials(self) -> int:
        return max(r.trial for r in self.rows) + 1 if self.rows else 0

    def counts(self) -> dict[int, dict[str, int]]:
        out: dict[int, dict[str, int]] = {}
        for r in self.rows:
            cell = out.setdefault(r.delay, {})
            cell[r.outcome] = cell.get(r.outcome, 0) + 1
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow((r.delay, r.trial, r.seed, r.outcome, r.mutation))
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> CampaignTable:
        rd = csv.DictReader(io.StringIO(text))
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"expected columns {','.join(CSV_COLUMNS)}")
        return cls([CampaignRow(int(r["delay"]), int(r["trial"]), int(r["seed"]), r["outcome"], r["mutation"])
                    for r in rd])

    @classmethod
    def load(cls, path) -> CampaignTable:
        return cls.from_csv(Path(path).read_text())


def _single_trig(result: RunResult) -> bool:
    return sum(1 for e in result.steps() if e.word >> 24 == Op.TRIG) <= 1


def run_trial(scenario: Scenario, spec: FaultSpec, ref: RunResult | None = None) -> tuple[OutcomeClass, str]:
    """One sweep cell. With ``ref`` given, a trial whose window has passed
    without a mutation is finished from the reference run: every later event
    is out of reach of the engine, so the rest of the run is fault-free."""
    sim = scenario.build(spec)
    eng = sim.faults
    st = sim.state
    if ref is not None and not eng.succeeds:
        return classify(ref, scenario.expected_output), ""
    limit = st.cycles + scenario.cycle_limit
    step = sim.step
    while st.status == RUNNING and st.cycles < limit:
        step()
        if ref is not None and eng.mutation is None and eng.trigger_cycle is not None \
                and st.cycles - eng.trigger_cycle > eng.window[1]:
            return classify(ref, scenario.expected_output), ""
    result = sim.run(0)
    mut = eng.mutation.summary() if eng.mutation is not None else ""
    return classify(result, scenario.expected_output), mut


def _cell(args):
    scenario, spec, ref = args
    outcome, mut = run_trial(scenario, spec, ref)
    return str(outcome), mut


def sweep(scenario: Scenario, delays, trials: int = 27, seed_base: int | None = None,
          workers: int = 1, shortcut: bool = True) -> CampaignTable:
    """Offset the fault window by each delay; ``trials`` fresh seeds per delay.

    Row ``i`` (in (delay, trial) order) uses seed ``seed_base + i``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if scenario.fault is None:
        raise ValueError("sweep needs a scenario with a fault")
    delays = list(delays)
    base = scenario.fault.seed if seed_base is None else seed_base
    ref = baseline(scenario)
    if not shortcut or not _single_trig(ref):
        ref = None
    jobs = []
    keys = []
    for d in delays:
        for t in range(trials):
            seed = base + len(keys)
            keys.append((d, t, seed))
            jobs.append((scenario, scenario.fault.delayed(d, seed), ref))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_cell, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_cell(j) for j in jobs]
    return CampaignTable([CampaignRow(d, t, s, o, m) for (d, t, s), (o, m) in zip(keys, results)])


def fill_interval(result: RunResult, level: str, paddr: int) -> tuple[int, int] | None:
    """Cycle span, relative to TRIG, of the fills that carried ``paddr`` into ``level``."""
    trig = next((e.cycle for e in result.steps() if e.word >> 24 == Op.TRIG), None)
    if trig is None:
        return None
    line = paddr - paddr % 64
    cycles = [e.cycle - trig for e in result.event_log
              if isinstance(e, BeatTransfer) and e.dst == level and e.direction == "fill"
              and line <= e.beat_paddr < line + 64 and e.cycle >= trig]
    return (min(cycles), max(cycles)) if cycles else None


# -- sensitivity map ------------------------------------------------------------

_SHADES = " .:-=+*#%@"
_ROW_ORDER = (WRONG_OUTPUT, TIMEOUT, TRAP, DETECTED)


def _rows(table: CampaignTable) -> list[str]:
    present = {OutcomeClass.parse(r.outcome) for r in table.rows}
    names = sorted({str(o) for o in present if o.kind != CORRECT},
                   key=lambda s: (_ROW_ORDER.index(OutcomeClass.parse(s).kind), s))
    return ["non-CORRECT"] + names


def _cell_fraction(cell: dict[str, int], row: str, trials: int) -> float:
    if row == "non-CORRECT":
        n = sum(v for k, v in cell.items() if k != CORRECT)
    else:
        n = cell.get(row, 0)
    return n / trials


def render_text(table: CampaignTable) -> str:
    if not table.rows:
        raise ValueError("empty table")
    delays = table.delays()
    trials = table.trials()
    counts = table.counts()
    rows = _rows(table)
    width = max(len(r) for r in rows)
    out = [f"delays {delays[0]}..{delays[-1]} ({len(delays)} points), {trials} trials per point",
           f"shade scale '{_SHADES}' = 0..100% of trials"]
    for row in rows:
        cells = "".join(_SHADES[round(_cell_fraction(counts[d], row, trials) * (len(_SHADES) - 1))]
                        for d in delays)
        out.append(f"{row:>{width}} |{cells}|")
    hot = [d for d in delays if _cell_fraction(counts[d], "non-CORRECT", trials) > 0]
    out.append("non-CORRECT delays: " + (f"{hot[0]}..{hot[-1]} ({len(hot)} points)" if hot else "none"))
    return "\n".join(out) + "\n"


def render_svg(table: CampaignTable, cell_w: int = 8, cell_h: int = 24) -> str:
    if not table.rows:
        raise ValueError("empty table")
    delays = table.delays()
    trials = table.trials()
    counts = table.counts()
    rows = _rows(table)
    left, top = 150, 30
    w = left + cell_w * len(delays) + 20
    h = top + cell_h * len(rows) + 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'font-family="monospace" font-size="11">',
             f'<text x="{left}" y="18">fault outcome frequency vs delay ({trials} trials per point)</text>']
    for j, row in enumerate(rows):
        y = top + j * cell_h
        parts.append(f'<text x="{left - 6}" y="{y + cell_h // 2 + 4}" text-anchor="end">{row}</text>')
        for i, d in enumerate(delays):
            frac = _cell_fraction(counts[d], row, trials)
            shade = 255 - round(frac * 255)
            parts.append(f'<rect x="{left + i * cell_w}" y="{y}" width="{cell_w}" height="{cell_h}" '
                         f'fill="rgb(255,{shade},{shade})"><title>delay {d}: {frac:.3f}</title></rect>')
    yb = top + cell_h * len(rows) + 16
    parts.append(f'<text x="{left}" y="{yb}">{delays[0]}</text>')
    parts.append(f'<text x="{left + cell_w * len(delays)}" y="{yb}" text-anchor="end">{delays[-1]}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_heatmap(table: CampaignTable) -> tuple[str, str]:
    """Plain-text grid and SVG; identical tables give identical bytes."""
    return render_text(table), render_svg(table)
