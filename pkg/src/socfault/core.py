"""Single in-order core executing the minimal ISA against the memory model."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

from .faults import FaultEngine, FaultError, FaultSpec, Mutation
from .integrity import IntegrityEngine, MacConfig
from .isa import NUM_REGS, Op, ProgramImage, UndefinedInstruction, decode
from .memory import BusError, MemoryConfig, MemorySystem
from .mmu import Mmu, MmuConfig

MASK64 = (1 << 64) - 1

RUNNING = "Running"
HALTED = "Halted"
TRAPPED = "Trapped"

# RunResult.termination
T_HALTED = "Halted"
T_CYCLE_LIMIT = "CycleLimit"
T_TRAP = "Trap"


class SimulationError(RuntimeError):
    pass


@dataclass
class SocConfig:
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    mmu: MmuConfig = field(default_factory=MmuConfig)
    # debugger scratch: same 64 KiB page as the bundled programs, outside their code
    scratch_base: int = 0x4F000

    @classmethod
    def from_dict(cls, d: dict | None) -> SocConfig:
        d = dict(d or {})
        mem = MemoryConfig.from_dict(d.pop("memory", {}))
        mmu_d = {k: (int(v, 0) if isinstance(v, str) else v) for k, v in d.pop("mmu", {}).items()}
        scratch = d.pop("scratch_base", 0x4F000)
        if d:
            raise ValueError(f"unknown config keys: {sorted(d)}")
        return cls(mem, MmuConfig(**mmu_d), int(scratch, 0) if isinstance(scratch, str) else scratch)


@dataclass
class MachineState:
    x: list[int] = field(default_factory=lambda: [0] * NUM_REGS)
    pc: int = 0
    par: int = 0
    cycles: int = 0
    status: str = RUNNING
    trap_reason: str | None = None
    trigger_cycle: int | None = None

    def snapshot(self) -> tuple:
        return (tuple(self.x), self.pc, self.par, self.status, self.trap_reason)


@dataclass(frozen=True, slots=True)
class StepEvent:
    cycle: int
    pc: int
    word: int
    charge: int
    reg_write: tuple[int, int] | None = None
    mem_writes: tuple = ()


@dataclass(frozen=True, slots=True)
class TrapEvent:
    cycle: int
    pc: int
    reason: str
    charge: int


@dataclass
class RunResult:
    termination: str
    output_words: list[int]
    cycles: int
    event_log: list
    trap_reason: str | None = None
    mutation: Mutation | None = None
    mac: dict | None = None
    detections: list = field(default_factory=list)

    @property
    def output(self) -> int | None:
        return self.output_words[0] if self.output_words else None

    def steps(self) -> list[StepEvent]:
        return [e for e in self.event_log if isinstance(e, StepEvent)]


class Simulator:
    """One isolated simulation instance: core + memory + MMU (+ faults, MACs)."""

    def __init__(self, config: SocConfig | None = None, mac: MacConfig | None = None):
        self.config = config or SocConfig()
        self.mem = MemorySystem(self.config.memory)
        self.integrity = None
        if mac is not None:
            self.integrity = IntegrityEngine(mac)
            self.mem.integrity = self.integrity
        self.mmu = Mmu(self.mem, self.config.mmu)
        self.state = MachineState()
        self.faults: FaultEngine | None = None
        self.image: ProgramImage | None = None

    @property
    def event_log(self) -> list:
        return self.mem.log

    # -- setup ----------------------------------------------------------------

    def load(self, image: ProgramImage):
        end = image.end
        tb = self.mmu.tables
        if image.base < tb.base_paddr + tb.size_bytes and tb.base_paddr < end:
            raise ValueError("program image overlaps the page tables")
        self.mem.dram[image.base:end] = image.to_bytes()
        if self.integrity is not None and self.integrity.active:
            self.integrity.generate_on_load_image(self.mem, image.base, end - image.base)
        self.image = image
        self.state.pc = image.entry

    def arm(self, spec: FaultSpec) -> FaultEngine:
        if self.faults is not None:
            raise FaultError("a fault is already armed for this run")
        engine = FaultEngine(spec)
        engine.trigger_cycle = self.state.trigger_cycle
        self.faults = engine
        self.mem.faults = engine
        self.mmu.faults = engine
        return engine

    def disarm(self):
        self.faults = None
        self.mem.faults = None
        self.mmu.faults = None

    @contextmanager
    def faults_suspended(self):
        engine = self.faults
        if engine is None:
            yield
            return
        self.mem.faults = None
        self.mmu.faults = None
        try:
            yield
        finally:
            self.mem.faults = engine
            self.mmu.faults = engine

    # -- execution ------------------------------------------------------------

    def _trap(self, c0: int, pc: int, charge: int, reason: str) -> TrapEvent:
        st = self.state
        st.cycles = c0 + charge
        st.status = TRAPPED
        st.trap_reason = reason
        ev = TrapEvent(c0, pc, reason, charge)
        self.mem.log.append(ev)
        return ev

    def _alarm(self) -> bool:
        integ = self.integrity
        if integ is not None and integ.alarm:
            integ.alarm = False
            return True
        return False

    def step(self) -> StepEvent | TrapEvent:
        st = self.state
        if st.status != RUNNING:
            raise SimulationError(f"core is {st.status}")
        c0 = st.cycles
        pc = st.pc
        charge = 1
        if pc & 3:
            return self._trap(c0, pc, charge, f"misaligned pc 0x{pc:x}")
        mmu, mem = self.mmu, self.mem
        try:
            tr = mmu.translate(pc, "ifetch", c0)
            charge += tr.latency
            if tr.fault:
                return self._trap(c0, pc, charge, f"{tr.fault} on ifetch 0x{pc:x}")
            acc = mem.access("ifetch", tr.paddr, 4, c0 + charge)
        except BusError as exc:
            return self._trap(c0, pc, charge, f"bus error: {exc}")
        charge += acc.latency
        if self._alarm():
            return self._trap(c0, pc, charge, "integrity alarm")
        word = acc.data
        ins = decode(word)
        if isinstance(ins, UndefinedInstruction):
            return self._trap(c0, pc, charge, f"undefined instruction 0x{word:08x}: {ins.reason}")
        op = ins.opcode
        x = st.x
        next_pc = pc + 4
        reg_write = None
        mem_writes = ()
        if op is Op.ADDI:
            v = (x[ins.rn] + ins.imm) & MASK64
            x[ins.rd] = v
            reg_write = (ins.rd, v)
        elif op is Op.SUBI:
            v = (x[ins.rn] - ins.imm) & MASK64
            x[ins.rd] = v
            reg_write = (ins.rd, v)
        elif op is Op.CBNZ:
            if x[ins.rd]:
                next_pc = pc + 4 * ins.imm
        elif op is Op.MOVI:
            x[ins.rd] = ins.imm
            reg_write = (ins.rd, ins.imm)
        elif op is Op.ADD:
            v = (x[ins.rn] + x[ins.rm]) & MASK64
            x[ins.rd] = v
            reg_write = (ins.rd, v)
        elif op is Op.B:
            next_pc = pc + 4 * ins.imm
        elif op is Op.LDR or op is Op.STR or op is Op.DC_CIVAC:
            va = (x[ins.rn] + ins.imm) & MASK64
            store = op is Op.STR
            try:
                tr = mmu.translate(va, "data", c0 + charge, "w" if store else "r")
                charge += tr.latency
                if tr.fault:
                    return self._trap(c0, pc, charge, f"{tr.fault} on data 0x{va:x}")
                if op is Op.DC_CIVAC:
                    mem.dc_civac(tr.paddr, c0 + charge)
                elif store:
                    acc = mem.access("store", tr.paddr, 8, c0 + charge, x[ins.rd])
                    charge += acc.latency
                    mem_writes = ((va, x[ins.rd]),)
                else:
                    acc = mem.access("load", tr.paddr, 8, c0 + charge)
                    charge += acc.latency
                    if self._alarm():
                        return self._trap(c0, pc, charge, "integrity alarm")
                    x[ins.rd] = acc.data
                    reg_write = (ins.rd, acc.data)
            except BusError as exc:
                return self._trap(c0, pc, charge, f"bus error: {exc}")
        elif op is Op.NOP:
            pass
        elif op is Op.HALT:
            st.status = HALTED
            next_pc = pc
        elif op is Op.TRIG:
            st.trigger_cycle = c0
            if self.faults is not None:
                self.faults.trigger_cycle = c0
        elif op is Op.WAIT:
            charge += ins.imm
        elif op is Op.IC_IALLU:
            mem.ic_iallu()
        elif op is Op.TLBI_ALL:
            mmu.tlbi_all()
        elif op is Op.AT:
            par = mmu.at_query(x[ins.rn])
            st.par = par
            x[ins.rd] = par
            reg_write = (ins.rd, par)
        st.cycles = c0 + charge
        st.pc = next_pc & MASK64
        ev = StepEvent(c0, pc, word, charge, reg_write, mem_writes)
        mem.log.append(ev)
        return ev

    def run(self, cycle_limit: int = 1_000_000) -> RunResult:
        st = self.state
        start_log = len(self.mem.log)
        limit = st.cycles + cycle_limit
        step = self.step
        while st.status == RUNNING and st.cycles < limit:
            step()
        if st.status == HALTED:
            term, out = T_HALTED, [st.x[0]]
        elif st.status == TRAPPED:
            term, out = T_TRAP, []
        else:
            term, out = T_CYCLE_LIMIT, []
        return RunResult(term, out, st.cycles, self.mem.log[start_log:], st.trap_reason,
                         self.faults.mutation if self.faults is not None else None,
                         self.integrity.metrics.to_dict() if self.integrity is not None else None,
                         list(self.integrity.metrics.detections) if self.integrity is not None else [])


def run_image(image: ProgramImage, cycle_limit: int = 1_000_000, config: SocConfig | None = None,
              fault: FaultSpec | None = None, mac: MacConfig | None = None) -> RunResult:
    """Fresh instance, load, optionally arm, run."""
    sim = Simulator(config, mac)
    sim.load(image)
    if fault is not None:
        sim.arm(fault)
    return sim.run(cycle_limit)
