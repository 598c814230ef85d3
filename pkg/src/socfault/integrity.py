"""Address-bound MAC tags over 16-byte blocks and their verification policies.

The tag function is a keyed SplitMix64-style chain over (address, low half,
high half) of the block. It is a deterministic test vehicle, not a
cryptographic MAC.

Tags travel with data between levels (a parallel lookup, not in-band
storage): a fill copies the source level's tags, a store retags the
written block, a write-back carries tags down to DRAM.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .memory import BEAT_BYTES, DRAM, L1D, L1I, L2

MASK64 = (1 << 64) - 1

JIT = "JIT"
PROACTIVE = "Proactive"
OFF = "Off"
POLICIES = (JIT, PROACTIVE, OFF)

OK = "Ok"
RECOVERED = "RecoveredFrom"
ALARM = "Alarm"

# which MacConfig level switch governs each hierarchy level
_GROUP = {L1I: "L1", L1D: "L1", L2: "L2", DRAM: "DRAM"}
_BELOW = {L1I: [L2, DRAM], L1D: [L2, DRAM], L2: [DRAM], DRAM: []}


def mix(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mac_tag(key: int, paddr: int, block: bytes) -> int:
    if paddr % BEAT_BYTES:
        raise ValueError(f"paddr 0x{paddr:x} is not 16-byte aligned")
    if len(block) != BEAT_BYTES:
        raise ValueError("block must be 16 bytes")
    s = key & MASK64
    for w in (paddr, int.from_bytes(block[:8], "little"), int.from_bytes(block[8:], "little")):
        s = mix(s ^ w)
    return s


_ZERO_BLOCK = bytes(BEAT_BYTES)


@dataclass
class MacConfig:
    key: int = 0x5EC0_FA17_C0DE_B10C
    block_bytes: int = BEAT_BYTES
    enabled_levels: tuple[str, ...] = ("L1", "L2", "DRAM")
    policy: str = PROACTIVE
    check_cost: int = 3

    def __post_init__(self):
        if isinstance(self.key, str):
            self.key = int(self.key, 0)
        self.enabled_levels = tuple(self.enabled_levels)
        if self.policy not in POLICIES:
            raise ValueError(f"policy {self.policy!r} not in {POLICIES}")
        if self.block_bytes != BEAT_BYTES:
            raise ValueError("block_bytes is fixed at 16 (one bus beat)")
        if not set(self.enabled_levels) <= {"L1", "L2", "DRAM"}:
            raise ValueError(f"bad enabled_levels {self.enabled_levels}")


@dataclass
class VerifyOutcome:
    status: str
    level: str | None = None
    checks_performed: int = 0
    cycles_added: int = 0

    def __str__(self) -> str:
        return f"{self.status}({self.level})" if self.status == RECOVERED else self.status


@dataclass
class MacMetrics:
    policy: str
    checks: int = 0
    mismatches: int = 0
    recoveries: int = 0
    alarms: int = 0
    cycles_added: int = 0
    retags: int = 0
    detections: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"policy": self.policy, "checks": self.checks, "mismatches": self.mismatches,
                "recoveries": self.recoveries, "alarms": self.alarms, "cycles_added": self.cycles_added}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class IntegrityEngine:
    def __init__(self, config: MacConfig | None = None):
        self.config = config or MacConfig()
        self.dram_tags: dict[int, int] = {}
        self.metrics = MacMetrics(self.config.policy)
        self.alarm = False
        self._zero_tags: dict[int, int] = {}

    @property
    def active(self) -> bool:
        return self.config.policy != OFF

    @property
    def proactive(self) -> bool:
        return self.config.policy == PROACTIVE

    def enabled(self, level: str) -> bool:
        return _GROUP[level] in self.config.enabled_levels

    def tag(self, paddr: int, block: bytes) -> int:
        return mac_tag(self.config.key, paddr, block)

    # -- tag store ------------------------------------------------------------

    def dram_tag(self, paddr: int) -> int:
        t = self.dram_tags.get(paddr)
        if t is None:
            # reset DRAM is zero and tagged as such
            t = self._zero_tags.get(paddr)
            if t is None:
                t = self._zero_tags[paddr] = self.tag(paddr, _ZERO_BLOCK)
        return t

    def store_dram_tags(self, line_paddr: int, tags):
        for i, t in enumerate(tags):
            # -1: block written back without a valid tag
            self.dram_tags[line_paddr + i * BEAT_BYTES] = -1 if t is None else t

    def generate_on_load_image(self, mem, paddr: int, nbytes: int):
        self.retag_range(mem, paddr, nbytes)

    def retag_range(self, mem, paddr: int, n: int):
        """Recompute tags of every copy of the blocks covering ``[paddr, paddr+n)``."""
        start = paddr - paddr % BEAT_BYTES
        for bp in range(start, paddr + n, BEAT_BYTES):
            self.dram_tags[bp] = self.tag(bp, bytes(mem.dram[bp:bp + BEAT_BYTES]))
            for cache in (mem.l1i, mem.l1d, mem.l2):
                line = cache.lookup(bp)
                if line is not None and line.tags is not None:
                    o = bp % mem.line_bytes
                    line.tags[o // BEAT_BYTES] = self.tag(bp, bytes(line.data[o:o + BEAT_BYTES]))

    def on_store(self, mem, level: str, line_paddr: int, line, off: int, n: int):
        """Retag every block a store touched."""
        if line.tags is None:
            line.tags = [None] * (mem.line_bytes // BEAT_BYTES)
        first = off // BEAT_BYTES
        last = (off + n - 1) // BEAT_BYTES
        for b in range(first, last + 1):
            o = b * BEAT_BYTES
            line.tags[b] = self.tag(line_paddr + o, bytes(line.data[o:o + BEAT_BYTES]))
            self.metrics.retags += 1

    def store_tags(self, mem) -> dict[str, dict[int, int]]:
        """Snapshot of the per-level tag store."""
        out: dict[str, dict[int, int]] = {}
        for cache in (mem.l1i, mem.l1d, mem.l2):
            m = {}
            for s, _, line in cache.resident():
                if line.tags is None:
                    continue
                lp = cache.line_paddr(s, line.tag)
                for i, t in enumerate(line.tags):
                    if t is not None:
                        m[lp + i * BEAT_BYTES] = t
            out[cache.name] = m
        out[DRAM] = {k: v for k, v in self.dram_tags.items() if v >= 0}
        return out

    # -- verification ---------------------------------------------------------

    def _copy(self, mem, level: str, bp: int):
        if level == DRAM:
            if bp + BEAT_BYTES > len(mem.dram):
                return None
            return bytes(mem.dram[bp:bp + BEAT_BYTES]), self.dram_tag(bp)
        line = mem.cache(level).lookup(bp)
        if line is None:
            return None
        o = bp % mem.line_bytes
        tag = line.tags[o // BEAT_BYTES] if line.tags is not None else None
        return bytes(line.data[o:o + BEAT_BYTES]), tag

    def _check(self, bp: int, data: bytes, tag) -> bool:
        self.metrics.checks += 1
        self.metrics.cycles_added += self.config.check_cost
        ok = tag is not None and tag >= 0 and self.tag(bp, data) == tag
        if not ok:
            self.metrics.mismatches += 1
        return ok

    def _escalate(self, mem, levels, bp: int, first_checked: bool, checks0: int):
        """Try each level in order; returns (outcome, data, tag)."""
        for lv in levels:
            if not self.enabled(lv):
                continue
            copy = self._copy(mem, lv, bp)
            if copy is None:
                continue
            data, tag = copy
            if self._check(bp, data, tag):
                checks = self.metrics.checks - checks0
                if not first_checked:
                    return VerifyOutcome(OK, None, checks, checks * self.config.check_cost), data, tag
                self.metrics.recoveries += 1
                out = VerifyOutcome(RECOVERED, lv, checks, checks * self.config.check_cost)
                self._detected(mem, out, bp)
                return out, data, tag
            first_checked = True
        checks = self.metrics.checks - checks0
        self.metrics.alarms += 1
        self.alarm = True
        out = VerifyOutcome(ALARM, None, checks, checks * self.config.check_cost)
        self._detected(mem, out, bp)
        return out, None, None

    def _detected(self, mem, outcome: VerifyOutcome, bp: int):
        self.metrics.detections.append((str(outcome), bp))
        mem.log.append(("mac", str(outcome), bp))

    def verify_jit(self, mem, level: str, bp: int) -> tuple[VerifyOutcome, bytes | None]:
        """Check the block as delivered from ``level``; escalate downwards on mismatch."""
        c0 = self.metrics.checks
        out, data, _ = self._escalate(mem, [level] + _BELOW[level], bp, False, c0)
        return out, data

    def on_consume(self, mem, kind: str, level: str, addr: int, chunk: bytes) -> bytes:
        start = addr - addr % BEAT_BYTES
        buf = bytearray(chunk)
        for bp in range(start, addr + len(chunk), BEAT_BYTES):
            out, data = self.verify_jit(mem, level, bp)
            if out.status == RECOVERED:
                lo = max(bp, addr)
                hi = min(bp + BEAT_BYTES, addr + len(chunk))
                buf[lo - addr:hi - addr] = data[lo - bp:hi - bp]
        return bytes(buf)

    def _verify_line(self, mem, level, line_paddr, buf, tags, src):
        tags = list(tags) if tags is not None else [None] * (len(buf) // BEAT_BYTES)
        chain = [src] + _BELOW[src] if src != level else _BELOW[level]
        chain = [lv for lv in chain if lv != level]
        c0 = self.metrics.checks
        worst = VerifyOutcome(OK)
        for i in range(len(buf) // BEAT_BYTES):
            bp = line_paddr + i * BEAT_BYTES
            o = i * BEAT_BYTES
            b0 = self.metrics.checks
            if self._check(bp, bytes(buf[o:o + BEAT_BYTES]), tags[i]):
                continue
            out, data, tag = self._escalate(mem, chain, bp, True, b0)
            if worst.status != ALARM:
                worst = out
            if data is not None:
                buf[o:o + BEAT_BYTES] = data
                tags[i] = tag
        checks = self.metrics.checks - c0
        worst.checks_performed = checks
        worst.cycles_added = checks * self.config.check_cost
        return buf, tags, worst

    def verify_install(self, mem, level: str, line_paddr: int, buf: bytearray, tags, src: str):
        """Check all blocks of a line about to become valid at ``level``."""
        if not self.enabled(level):
            return buf, tags
        buf, tags, _ = self._verify_line(mem, level, line_paddr, buf, tags, src)
        return buf, tags

    def verify_displaced(self, mem, level: str, bp: int, data: bytes, tag):
        """Check a beat written at a rewritten address inside a resident line."""
        if not self.enabled(level):
            return data, tag
        c0 = self.metrics.checks
        if self._check(bp, data, tag):
            return data, tag
        out, good, good_tag = self._escalate(mem, _BELOW[level], bp, True, c0)
        if good is None:
            return data, tag
        return good, good_tag

    def verify_proactive(self, mem, level: str, line_paddr: int) -> VerifyOutcome:
        """Re-verify a resident line in place, repairing it from lower levels."""
        line = mem.cache(level).lookup(line_paddr)
        if line is None or not self.enabled(level):
            return VerifyOutcome(OK)
        buf, tags, out = self._verify_line(mem, level, line_paddr, bytearray(line.data), line.tags, level)
        line.data, line.tags = buf, tags
        return out
