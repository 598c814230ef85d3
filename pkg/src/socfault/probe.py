"""JTAG-style probe: halt/step/resume, register access, data-view dumps,
injected instruction execution and replay against a golden trace."""
from __future__ import annotations

import cmd
import hashlib
import shlex
from dataclasses import dataclass, field

from .core import HALTED, RUNNING, RunResult, Simulator, StepEvent, TrapEvent
from .isa import NUM_REGS, AssemblyError, DecodedInstruction, Op, assemble, decode, disassemble_one, encode
from .mmu import PAGE_BYTES, PageClass, mapping_report, par_paddr

MASK64 = (1 << 64) - 1


class ProbeError(Exception):
    pass


@dataclass(frozen=True)
class GoldenRecord:
    pc: int
    reg_write: tuple[int, int] | None
    mem_writes: tuple

    def effect(self) -> str:
        parts = []
        if self.reg_write is not None:
            parts.append(f"x{self.reg_write[0]}=0x{self.reg_write[1]:x}")
        parts.extend(f"[0x{a:x}]=0x{v:x}" for a, v in self.mem_writes)
        return " ".join(parts) or "-"


def golden_trace(events) -> list[GoldenRecord]:
    """Side effects of every retired instruction, from a run's event log."""
    if isinstance(events, RunResult):
        events = events.event_log
    return [GoldenRecord(e.pc, e.reg_write, e.mem_writes) for e in events if isinstance(e, StepEvent)]


@dataclass
class DivergenceReport:
    first_divergent_pc: int | None = None
    expected_effect: str | None = None
    observed_effect: str | None = None
    trace: list[str] = field(default_factory=list)
    listing: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.first_divergent_pc is None

    def __bool__(self) -> bool:
        return not self.empty

    def render(self) -> str:
        if self.empty:
            return "no divergence\n"
        out = [f"first divergent pc: 0x{self.first_divergent_pc:08x}",
               f"  expected: {self.expected_effect}",
               f"  observed: {self.observed_effect}", "trace:"]
        out += ["  " + t for t in self.trace]
        if self.listing:
            out.append("instruction view of region:")
            out += ["  " + t for t in self.listing]
        return "\n".join(out) + "\n"


def hexdump(base: int, data: bytes) -> str:
    """Little-endian 32-bit words, 16 bytes per row."""
    lines = []
    for off in range(0, len(data), 16):
        row = data[off:off + 16]
        words = " ".join(f"{int.from_bytes(row[i:i + 4], 'little'):08x}" for i in range(0, len(row) - 3, 4))
        lines.append(f"0x{base + off:08x}: {words}")
    return "\n".join(lines) + "\n"


class ProbeSession:
    def __init__(self, sim: Simulator, scratch: int | None = None):
        self.sim = sim
        self.scratch = sim.config.scratch_base if scratch is None else scratch
        if self.scratch % 64:
            raise ValueError("scratch region must be line aligned")
        self.halted = True

    # -- run control ----------------------------------------------------------

    def _need_halted(self):
        if not self.halted:
            raise ProbeError("core is running; halt first")

    def halt(self):
        self.halted = True

    def resume(self, cycle_limit: int = 1_000_000) -> RunResult:
        self._need_halted()
        self.halted = False
        return self.sim.run(cycle_limit)

    def step_n(self, n: int = 1) -> list[StepEvent | TrapEvent]:
        self._need_halted()
        st = self.sim.state
        if st.status == HALTED:
            st.status = RUNNING
        out = []
        with self.sim.faults_suspended():
            for _ in range(n):
                if st.status != RUNNING:
                    break
                ev = self.sim.step()
                out.append(ev)
                if isinstance(ev, TrapEvent):
                    break
        return out

    # -- architectural state --------------------------------------------------

    def read_reg(self, i: int) -> int:
        self._need_halted()
        if not 0 <= i < NUM_REGS:
            raise ProbeError(f"no register x{i}")
        return self.sim.state.x[i]

    def write_reg(self, i: int, v: int):
        self._need_halted()
        if not 0 <= i < NUM_REGS:
            raise ProbeError(f"no register x{i}")
        self.sim.state.x[i] = v & MASK64

    def read_pc(self) -> int:
        return self.sim.state.pc

    def set_pc(self, addr: int):
        self._need_halted()
        st = self.sim.state
        st.pc = addr & MASK64
        # repositioning the pc restarts a stopped core
        st.status = RUNNING
        st.trap_reason = None

    # -- memory ---------------------------------------------------------------

    def _paddr(self, vaddr: int, intent: str = "data") -> int:
        res = self.sim.mmu.lookup_nofill(vaddr, intent)
        if res.fault:
            raise ProbeError(f"{res.fault} at 0x{vaddr:x}")
        return res.paddr

    def read_mem(self, vaddr: int, n: int) -> bytes:
        """Data viewpoint (L1D, then L2, then DRAM); never the instruction view."""
        self._need_halted()
        out = bytearray()
        a = vaddr
        while a < vaddr + n:
            chunk = min(vaddr + n, (a | (PAGE_BYTES - 1)) + 1) - a
            out += self.sim.mem.probe_read(self._paddr(a), chunk)
            a += chunk
        return bytes(out)

    def read_phys(self, paddr: int, n: int) -> bytes:
        """Data viewpoint by physical address, bypassing translation."""
        self._need_halted()
        return self.sim.mem.probe_read(paddr, n)

    def dump(self, addr: int, n: int, physical: bool = False) -> str:
        return hexdump(addr, self.read_phys(addr, n) if physical else self.read_mem(addr, n))

    def ifetch_listing(self, lo: int, hi: int) -> list[str]:
        """What an instruction fetch would see, disassembled."""
        raw = self.sim.mem.ifetch_view(self._paddr(lo, "ifetch"), hi - lo)
        lines = []
        for off in range(0, len(raw), 4):
            w = int.from_bytes(raw[off:off + 4], "little")
            lines.append(f"0x{lo + off:08x}: {w:08x}  {disassemble_one(decode(w))}")
        return lines

    # -- injected execution ---------------------------------------------------

    def exec_at(self, words, inputs: dict[int, int] | None = None, outputs=(0,)) -> dict[int, int]:
        """Run ``words`` from the scratch region and return the ``outputs`` registers."""
        self._need_halted()
        sim = self.sim
        st = sim.state
        words = list(words)
        if not words:
            raise ProbeError("nothing to execute")
        n = 4 * len(words)
        pa = self._paddr(self.scratch, "ifetch")
        saved_bytes = sim.mem.probe_read(pa, n)
        saved = (list(st.x), st.pc, st.par, st.cycles, st.status, st.trap_reason)
        sim.mem.probe_write(pa, b"".join(w.to_bytes(4, "little") for w in words))
        self._drop_l1i(pa, n)
        try:
            for r, v in (inputs or {}).items():
                self.write_reg(r, v)
            st.pc = self.scratch
            st.status = RUNNING
            events = self.step_n(len(words))
            trap = next((e for e in events if isinstance(e, TrapEvent)), None)
            if trap is not None:
                raise ProbeError(f"injected code trapped: {trap.reason}")
            return {r: st.x[r] for r in outputs}
        finally:
            st.x[:], st.pc, st.par, st.cycles, st.status, st.trap_reason = saved
            sim.mem.probe_write(pa, saved_bytes)
            self._drop_l1i(pa, n)

    def _drop_l1i(self, pa: int, n: int):
        for lp in range(pa - pa % 64, pa + n, 64):
            self.sim.mem.invalidate_l1i_line(lp)

    def at(self, vaddr: int) -> int:
        """PAR for ``vaddr`` via an injected AT instruction."""
        at = encode(DecodedInstruction(Op.AT, 0, 0))
        return self.exec_at([at, encode(DecodedInstruction(Op.NOP))], {0: vaddr}, (0,))[0]

    def map(self, lo: int, hi: int, stride: int = PAGE_BYTES) -> list[PageClass]:
        out = []
        for v in range(lo, hi, stride):
            pa = par_paddr(self.at(v))
            if pa is None:
                out.append(PageClass(v, None, "Fault"))
            elif pa == v:
                out.append(PageClass(v, pa, "Identity"))
            elif pa == 0:
                out.append(PageClass(v, pa, "Zero"))
            else:
                out.append(PageClass(v, pa, "Shifted", pa - v))
        return out

    def iciallu(self):
        self._need_halted()
        self.sim.mem.ic_iallu()

    def civac(self, vaddr: int):
        self._need_halted()
        self.sim.mem.dc_civac(self._paddr(vaddr), self.sim.state.cycles)

    def tlbi(self):
        self._need_halted()
        self.sim.mmu.tlbi_all()

    # -- forensics ------------------------------------------------------------

    def state_hash(self) -> str:
        sim = self.sim
        h = hashlib.sha256()
        h.update(sim.mem.digest().encode())
        h.update(sim.mmu.tlb.digest().encode())
        h.update(repr(sim.state.snapshot()).encode())
        h.update(repr((sim.mmu.walk_base, len(sim.mem.log))).encode())
        f = sim.faults
        if f is not None:
            h.update(repr((f.mutation, f.trigger_cycle, f.suspended)).encode())
        return h.hexdigest()

    def replay_diagnose(self, region: tuple[int, int], golden: list[GoldenRecord],
                        max_steps: int = 100_000) -> DivergenceReport:
        """Single-step the region, comparing side effects with ``golden``."""
        self._need_halted()
        lo, hi = region
        start = next((i for i, g in enumerate(golden) if g.pc == lo), None)
        if start is None:
            raise ProbeError(f"golden trace never executes 0x{lo:x}")
        res = self.sim.mmu.lookup_nofill(lo, "ifetch")
        if res.fault:
            raise ProbeError(f"region not executable: {res.fault}")
        # architectural registers as the golden run had them on region entry
        regs = [0] * NUM_REGS
        for g in golden[:start]:
            if g.reg_write is not None:
                regs[g.reg_write[0]] = g.reg_write[1]
        for r, v in enumerate(regs):
            self.write_reg(r, v)
        self.set_pc(lo)
        report = DivergenceReport()
        i = start
        while i < len(golden) and lo <= golden[i].pc < hi and i - start < max_steps:
            exp = golden[i]
            events = self.step_n(1)
            ev = events[0] if events else None
            if isinstance(ev, StepEvent):
                obs = GoldenRecord(ev.pc, ev.reg_write, ev.mem_writes)
                report.trace.append(f"0x{ev.pc:08x}: {disassemble_one(decode(ev.word)):<24} {obs.effect()}")
                if obs == exp:
                    i += 1
                    continue
                report.observed_effect = f"pc=0x{obs.pc:x} {obs.effect()}"
            else:
                reason = ev.reason if ev is not None else self.sim.state.status
                report.trace.append(f"0x{exp.pc:08x}: <{reason}>")
                report.observed_effect = f"stopped: {reason}"
            report.first_divergent_pc = exp.pc
            report.expected_effect = f"pc=0x{exp.pc:x} {exp.effect()}"
            report.listing = self.ifetch_listing(lo, hi)
            break
        return report


class ProbeShell(cmd.Cmd):
    """Interactive front end; every command also works from a script file."""

    prompt = "(probe) "
    intro = "socfault probe; 'help' lists commands"

    def __init__(self, session: ProbeSession, stdout=None):
        super().__init__(stdout=stdout)
        self.session = session

    def _out(self, text: str):
        self.stdout.write(text if text.endswith("\n") else text + "\n")

    def onecmd(self, line):
        try:
            return super().onecmd(line)
        except (ProbeError, AssemblyError, ValueError, IndexError) as exc:
            self._out(f"error: {exc}")
            return False

    def emptyline(self):
        return False

    def default(self, line):
        self._out(f"error: unknown command {line.split()[0]!r}")

    @staticmethod
    def _ints(arg: str) -> list[int]:
        return [int(a, 0) for a in shlex.split(arg)]

    def do_halt(self, arg):
        """halt: stop the core"""
        self.session.halt()
        st = self.session.sim.state
        self._out(f"halted pc=0x{st.pc:08x} cycles={st.cycles} status={st.status}")

    def do_go(self, arg):
        """go [cycle_limit]: resume until halt, trap or limit"""
        args = self._ints(arg)
        r = self.session.resume(*args[:1])
        out = "" if r.output is None else f" output={r.output}"
        self._out(f"{r.termination}{out} cycles={r.cycles}")

    def do_s(self, arg):
        """s [n]: single-step n instructions (faults not injected)"""
        n = (self._ints(arg) or [1])[0]
        for ev in self.session.step_n(n):
            if isinstance(ev, TrapEvent):
                self._out(f"0x{ev.pc:08x}: trap {ev.reason}")
            else:
                eff = GoldenRecord(ev.pc, ev.reg_write, ev.mem_writes).effect()
                self._out(f"0x{ev.pc:08x}: {disassemble_one(decode(ev.word)):<24} {eff}")

    def do_rr(self, arg):
        """rr [i]: read register i (all when omitted)"""
        regs = self._ints(arg) or range(NUM_REGS)
        for i in regs:
            self._out(f"x{i} = 0x{self.session.read_reg(i):016x}")
        if not arg.strip():
            self._out(f"pc = 0x{self.session.read_pc():016x}")

    def do_wr(self, arg):
        """wr i v: write register"""
        i, v = self._ints(arg)
        self.session.write_reg(i, v)

    def do_pc(self, arg):
        """pc [addr]: show or set the program counter"""
        args = self._ints(arg)
        if args:
            self.session.set_pc(args[0])
        self._out(f"pc = 0x{self.session.read_pc():08x}")

    def do_md(self, arg):
        """md addr len: dump memory as seen by the data side"""
        a, n = self._ints(arg)
        self._out(self.session.dump(a, n))

    def do_mdp(self, arg):
        """mdp paddr len: dump physical memory (data side, no translation)"""
        a, n = self._ints(arg)
        self._out(self.session.dump(a, n, physical=True))

    def do_exec(self, arg):
        """exec hex...: execute instruction words from scratch, print x0"""
        words = [int(w, 16) for w in shlex.split(arg)]
        res = self.session.exec_at(words)
        self._out(f"x0 = 0x{res[0]:016x}")

    def do_asm(self, arg):
        """asm text[; text...]: assemble, execute from scratch, print x0"""
        img = assemble(arg.replace(";", "\n"), name="<probe>")
        res = self.session.exec_at(img.words)
        self._out(f"x0 = 0x{res[0]:016x}")

    def do_map(self, arg):
        """map lo hi: classify page translations with injected AT"""
        lo, hi = self._ints(arg)
        self._out(mapping_report(self.session.map(lo, hi)))

    def do_iciallu(self, arg):
        """iciallu: invalidate the instruction cache"""
        self.session.iciallu()

    def do_civac(self, arg):
        """civac addr: clean and invalidate a data line to DRAM"""
        self.session.civac(self._ints(arg)[0])

    def do_tlbi(self, arg):
        """tlbi: invalidate all TLBs"""
        self.session.tlbi()

    def do_quit(self, arg):
        """quit: leave the probe"""
        return True

    do_EOF = do_quit

    def run_script(self, lines) -> None:
        for line in lines:
            line = line.strip()
            if line and not line.startswith("#"):
                self._out(self.prompt + line)
                if self.onecmd(line):
                    break


__all__ = ["DivergenceReport", "GoldenRecord", "ProbeError", "ProbeSession", "ProbeShell",
           "golden_trace", "hexdump"]
