import io

import pytest

from socfault import Simulator
from socfault.campaign import bundled_program
from socfault.isa import DecodedInstruction, Op, assemble, assemble_file, encode
from socfault.mmu import par_paddr
from socfault.probe import DivergenceReport, ProbeError, ProbeSession, ProbeShell, golden_trace, hexdump

NOP = encode(DecodedInstruction(Op.NOP))
CORPUS = ["loop.s", "register_transfer.s", "mmu_loop.s"]


def session(src=".org 0x48000\nnop\nnop\nmovi x0, #3\nhalt\n"):
    sim = Simulator()
    sim.load(assemble(src))
    return ProbeSession(sim)


def test_step_nop_advances_pc():
    s = session()
    before = [s.read_reg(i) for i in range(31)]
    s.step_n(1)
    assert s.read_pc() == 0x48004
    assert [s.read_reg(i) for i in range(31)] == before


def test_write_then_read_reg():
    s = session()
    s.write_reg(7, 0x1234)
    assert s.read_reg(7) == 0x1234
    with pytest.raises(ProbeError):
        s.read_reg(31)


def test_reads_have_no_side_effects():
    s = session()
    s.step_n(2)
    h = s.state_hash()
    s.read_mem(0x48000, 64)
    s.dump(0x48000, 32)
    [s.read_reg(i) for i in range(31)]
    s.read_pc()
    s.ifetch_listing(0x48000, 0x48010)
    assert s.state_hash() == h


def test_exec_at_restores_state():
    s = session()
    s.step_n(1)
    regs = [s.read_reg(i) for i in range(31)]
    pc, cycles = s.read_pc(), s.sim.state.cycles
    scratch = s.read_mem(s.scratch, 8)
    addi = encode(DecodedInstruction(Op.ADDI, rd=0, rn=1, imm=5))
    assert s.exec_at([addi], {1: 10}) == {0: 15}
    assert [s.read_reg(i) for i in range(31)] == regs
    assert (s.read_pc(), s.sim.state.cycles) == (pc, cycles)
    assert s.read_mem(s.scratch, 8) == scratch


def test_exec_at_trap_reported():
    s = session()
    with pytest.raises(ProbeError):
        s.exec_at([0xFF000000])
    assert s.read_pc() == 0x48000


def test_at_fault_free_identity():
    s = session()
    assert par_paddr(s.at(0x48A08)) == 0x40000  # page granular
    assert par_paddr(s.at(0x3000000)) is None


def test_step_while_running_rejected():
    s = session()
    s.halted = False
    with pytest.raises(ProbeError):
        s.step_n(1)
    with pytest.raises(ProbeError):
        s.read_reg(0)


def test_resume_runs_to_halt():
    s = session()
    r = s.resume()
    assert r.output == 3
    s.halt()
    assert s.read_reg(0) == 3


def test_hexdump_format():
    assert hexdump(0x100, bytes(range(8))) == "0x00000100: 03020100 07060504\n"


@pytest.mark.parametrize("name", CORPUS)
def test_fault_free_replay_is_empty(name):
    img = assemble_file(bundled_program(name))
    ref = Simulator()
    ref.load(img)
    golden = golden_trace(ref.run(100_000))
    sim = Simulator()
    sim.load(img)
    sim.run(100_000)
    s = ProbeSession(sim)
    lo = img.entry
    report = s.replay_diagnose((lo, img.end), golden)
    assert report.empty and not report
    assert report.render() == "no divergence\n"


def test_divergence_found_after_patch():
    img = assemble(".org 0x48000\nmovi x0, #1\naddi x0, x0, #2\nhalt\n")
    ref = Simulator()
    ref.load(img)
    golden = golden_trace(ref.run())
    sim = Simulator()
    sim.load(img)
    sim.mem.probe_write(0x48004, encode(DecodedInstruction(Op.ADDI, rd=0, rn=0, imm=3)).to_bytes(4, "little"))
    report = ProbeSession(sim).replay_diagnose((0x48000, 0x4800C), golden)
    assert isinstance(report, DivergenceReport)
    assert report.first_divergent_pc == 0x48004
    assert "0x3" in report.expected_effect and "0x4" in report.observed_effect


def test_shell_script():
    sim = Simulator()
    sim.load(assemble(".org 0x48000\nmovi x0, #9\nhalt\n"))
    out = io.StringIO()
    shell = ProbeShell(ProbeSession(sim), stdout=out)
    shell.run_script([
        "# comment line",
        "s 1",
        "rr 0",
        "wr 1 0x44",
        "rr 1",
        "md 0x48000 8",
        "bogus",
        "map 0x0 0x20000",
        "asm movi x0, #5; addi x0, x0, #2",
        "asm frob",
        "pc 0x48000",
        "quit",
        "rr 0",
    ])
    text = out.getvalue()
    assert "x0 = 0x0000000000000009" in text
    assert "x1 = 0x0000000000000044" in text
    assert "0x00048000: 10000009 01000000" in text
    assert "error: unknown command 'bogus'" in text
    assert text.count("Identity") == 2
    assert "x0 = 0x0000000000000007" in text
    assert "error: <probe>:1: unknown mnemonic 'frob'" in text
    assert text.rstrip().endswith("(probe) quit")
