"""DRAM plus L1I / L1D / unified L2 caches with a 16-byte beat transfer model.

Every line transfer is split into beats. Fills into a cache pass each beat
through the attached fault engine (``faults.intercept``) before it is written,
which is the hook all transfer-level fault models use.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

BEAT_BYTES = 16

L1I, L1D, L2, DRAM = "L1I", "L1D", "L2", "DRAM"


class BusError(Exception):
    """Physical address outside DRAM."""


@dataclass
class CacheConfig:
    size_bytes: int
    ways: int
    latency_cycles: int
    line_bytes: int = 64

    def __post_init__(self):
        if self.line_bytes % BEAT_BYTES:
            raise ValueError(f"line_bytes {self.line_bytes} not a multiple of {BEAT_BYTES}")
        if self.size_bytes % (self.line_bytes * self.ways):
            raise ValueError("size_bytes must be divisible by line_bytes * ways")

    @property
    def sets(self) -> int:
        return self.size_bytes // (self.line_bytes * self.ways)


@dataclass
class MemoryConfig:
    # associativity and latencies are not published for the target; A53-like defaults
    dram_bytes: int = 16 << 20
    dram_latency: int = 100
    l1i: CacheConfig = field(default_factory=lambda: CacheConfig(16 << 10, 2, 1))
    l1d: CacheConfig = field(default_factory=lambda: CacheConfig(16 << 10, 4, 1))
    l2: CacheConfig = field(default_factory=lambda: CacheConfig(512 << 10, 16, 10))

    def __post_init__(self):
        lines = {self.l1i.line_bytes, self.l1d.line_bytes, self.l2.line_bytes}
        if len(lines) != 1:
            raise ValueError("all cache levels must share one line size")

    @classmethod
    def from_dict(cls, d: dict) -> MemoryConfig:
        kw = dict(d)
        for name in ("l1i", "l1d", "l2"):
            if name in kw and isinstance(kw[name], dict):
                kw[name] = CacheConfig(**kw[name])
        return cls(**kw)


@dataclass(slots=True)
class CacheLine:
    tag: int = 0
    valid: bool = False
    dirty: bool = False
    data: bytearray = field(default_factory=lambda: bytearray(64))
    last_fill_cycle: int = -1
    tags: list | None = None  # per-16-byte-block MAC tags when integrity is on


@dataclass(frozen=True, slots=True)
class BeatTransfer:
    direction: str  # "fill" | "evict"
    src: str
    dst: str
    beat_paddr: int
    data: bytes
    cycle: int


@dataclass
class FillTrace:
    level: str
    line_paddr: int
    source: str
    intended: list[BeatTransfer]
    applied: list[BeatTransfer]


@dataclass
class AccessResult:
    data: int
    hit_level: str
    latency: int
    beat_trace: list[BeatTransfer]


class Cache:
    def __init__(self, name: str, config: CacheConfig):
        self.name = name
        self.config = config
        self.line_bytes = config.line_bytes
        self.n_sets = config.sets
        self.ways = config.ways
        # sets are materialized on first touch; most of L2 never is
        self.sets: dict[int, list[CacheLine]] = {}
        self._rr = [0] * self.n_sets

    def _set(self, s: int) -> list[CacheLine]:
        ways = self.sets.get(s)
        if ways is None:
            ways = self.sets[s] = [CacheLine(data=bytearray(self.line_bytes)) for _ in range(self.ways)]
        return ways

    def index(self, paddr: int) -> tuple[int, int]:
        line = paddr // self.line_bytes
        return line % self.n_sets, line // self.n_sets

    def line_paddr(self, set_idx: int, tag: int) -> int:
        return (tag * self.n_sets + set_idx) * self.line_bytes

    def lookup(self, paddr: int) -> CacheLine | None:
        s, t = self.index(paddr)
        for line in self.sets.get(s, ()):
            if line.valid and line.tag == t:
                return line
        return None

    def victim(self, paddr: int) -> CacheLine:
        """Next way for ``paddr``'s set: first invalid way, else round-robin."""
        s, _ = self.index(paddr)
        ways = self._set(s)
        for line in ways:
            if not line.valid:
                return line
        way = self._rr[s]
        self._rr[s] = (way + 1) % len(ways)
        return ways[way]

    def resident(self):
        for s, ways in sorted(self.sets.items()):
            for w, line in enumerate(ways):
                if line.valid:
                    yield s, w, line

    def invalidate_all(self):
        for ways in self.sets.values():
            for line in ways:
                line.valid = False
                line.dirty = False

    def dump(self) -> list[str]:
        """``LEVEL set way tag V D hex64bytes`` per valid line."""
        return [f"{self.name} {s} {w} {line.tag:x} {int(line.valid)} {int(line.dirty)} {line.data.hex()}"
                for s, w, line in self.resident()]


class MemorySystem:
    """Owns DRAM and the three caches.

    ``faults`` and ``integrity`` are optional collaborators; when ``None`` no
    hook code runs at all.
    """

    def __init__(self, config: MemoryConfig | None = None):
        self.config = config or MemoryConfig()
        self.dram = bytearray(self.config.dram_bytes)
        self.l1i = Cache(L1I, self.config.l1i)
        self.l1d = Cache(L1D, self.config.l1d)
        self.l2 = Cache(L2, self.config.l2)
        self.line_bytes = self.config.l2.line_bytes
        self.faults = None
        self.integrity = None
        self.log: list = []
        self.l2_bytes_written = 0
        self._beat_cycle = 0

    # -- helpers --------------------------------------------------------------

    def cache(self, level: str) -> Cache:
        return {L1I: self.l1i, L1D: self.l1d, L2: self.l2}[level]

    def latency(self, level: str) -> int:
        if level == DRAM:
            return self.config.dram_latency
        return self.cache(level).config.latency_cycles

    def _check_range(self, paddr: int, n: int):
        if paddr < 0 or paddr + n > len(self.dram):
            raise BusError(f"physical address 0x{paddr:x}+{n} outside DRAM")

    def _line(self, paddr: int) -> int:
        return paddr - paddr % self.line_bytes

    def _next_cycle(self) -> int:
        self._beat_cycle += 1
        return self._beat_cycle

    @property
    def _tagging(self) -> bool:
        return self.integrity is not None and self.integrity.active

    def _dram_tags(self, line_paddr: int):
        if not self._tagging:
            return None
        return [self.integrity.dram_tag(line_paddr + i) for i in range(0, self.line_bytes, BEAT_BYTES)]

    # -- transfers ------------------------------------------------------------

    def _transfer(self, dst: Cache, line_paddr: int, src: str, src_data, src_tags,
                  direction: str, dirty: bool, trace: list) -> tuple[CacheLine, list, list]:
        """Move one line into ``dst`` beat by beat.

        Returns the installed line plus the intended and applied beats.
        """
        target = dst.lookup(line_paddr)
        if target is None:
            target = dst.victim(line_paddr)
            if target.valid:
                s, _ = dst.index(line_paddr)
                self._evict(dst, dst.line_paddr(s, target.tag), target, trace)
        n_beats = self.line_bytes // BEAT_BYTES
        buf = bytearray(self.line_bytes)
        tags = [None] * n_beats if src_tags is not None else None
        intended, applied = [], []
        for i in range(n_beats):
            off = i * BEAT_BYTES
            beat = BeatTransfer(direction, src, dst.name, line_paddr + off,
                                bytes(src_data[off:off + BEAT_BYTES]), self._next_cycle())
            intended.append(beat)
            out = beat
            if self.faults is not None:
                out = self.faults.intercept(beat, self)
            applied.append(out)
            tag = src_tags[i] if src_tags is not None else None
            if self._line(out.beat_paddr) == line_paddr:
                o = out.beat_paddr - line_paddr
                buf[o:o + BEAT_BYTES] = out.data
                if tags is not None:
                    tags[o // BEAT_BYTES] = tag
            else:
                self._displaced_write(dst, out, tag)
            if dst is self.l2:
                self.l2_bytes_written += BEAT_BYTES
        if self._tagging and self.integrity.proactive:
            buf, tags = self.integrity.verify_install(self, dst.name, line_paddr, buf, tags, src)
        s, t = dst.index(line_paddr)
        target.tag = t
        target.data = buf
        target.tags = tags
        target.dirty = dirty
        target.last_fill_cycle = intended[0].cycle
        target.valid = True  # only after every beat is applied
        self.log.extend(applied)
        trace.extend(applied)
        return target, intended, applied

    def _displaced_write(self, dst: Cache, beat: BeatTransfer, tag):
        """A beat whose address was rewritten outside the line being filled."""
        line = dst.lookup(beat.beat_paddr)
        if line is None:
            self.log.append(("beat-lost", dst.name, beat.beat_paddr, beat.cycle))
            return
        o = beat.beat_paddr % self.line_bytes
        if self._tagging and self.integrity.proactive:
            data, tag = self.integrity.verify_displaced(self, dst.name, beat.beat_paddr, beat.data, tag)
        else:
            data = beat.data
        line.data[o:o + BEAT_BYTES] = data
        if line.tags is not None:
            line.tags[o // BEAT_BYTES] = tag
        line.dirty = True

    def _evict(self, cache: Cache, paddr: int, line: CacheLine, trace: list):
        if line.dirty:
            self._writeback(cache, paddr, line, trace)
        line.valid = False
        line.dirty = False

    def _writeback(self, cache: Cache, paddr: int, line: CacheLine, trace: list):
        if cache is self.l1d:
            self._transfer(self.l2, paddr, L1D, line.data, line.tags, "evict", True, trace)
        elif cache is self.l2:
            n_beats = self.line_bytes // BEAT_BYTES
            for i in range(n_beats):
                off = i * BEAT_BYTES
                beat = BeatTransfer("evict", L2, DRAM, paddr + off,
                                    bytes(line.data[off:off + BEAT_BYTES]), self._next_cycle())
                self.log.append(beat)
                trace.append(beat)
            self.dram[paddr:paddr + self.line_bytes] = line.data
            if self._tagging and line.tags is not None:
                self.integrity.store_dram_tags(paddr, line.tags)
        line.dirty = False

    def _ensure(self, cache: Cache, line_paddr: int, trace: list) -> tuple[CacheLine, str]:
        """Make ``line_paddr`` resident in ``cache``; returns (line, hit_level)."""
        line = cache.lookup(line_paddr)
        if line is not None:
            return line, cache.name
        if cache is self.l2:
            src_data = self.dram[line_paddr:line_paddr + self.line_bytes]
            line, _, _ = self._transfer(self.l2, line_paddr, DRAM, src_data,
                                        self._dram_tags(line_paddr), "fill", False, trace)
            return line, DRAM
        l2line, hit = self._ensure(self.l2, line_paddr, trace)
        line, _, _ = self._transfer(cache, line_paddr, L2, l2line.data, l2line.tags, "fill", False, trace)
        return line, hit

    def line_fill(self, level: str, paddr_line: int, cycle: int) -> FillTrace:
        """Fill ``level`` with the line at ``paddr_line`` from the next level down."""
        if paddr_line % self.line_bytes:
            raise ValueError(f"0x{paddr_line:x} is not line aligned")
        self._check_range(paddr_line, self.line_bytes)
        self._beat_cycle = cycle
        cache = self.cache(level)
        trace: list = []
        if level == L2:
            src, src_data, src_tags = DRAM, self.dram[paddr_line:paddr_line + self.line_bytes], \
                self._dram_tags(paddr_line)
        else:
            l2line, _ = self._ensure(self.l2, paddr_line, trace)
            src, src_data, src_tags = L2, l2line.data, l2line.tags
        existing = cache.lookup(paddr_line)
        if existing is not None:
            existing.valid = False
        _, intended, applied = self._transfer(cache, paddr_line, src, bytes(src_data), src_tags,
                                              "fill", False, trace)
        return FillTrace(level, paddr_line, src, intended, applied)

    # -- core accesses --------------------------------------------------------

    def access(self, kind: str, paddr: int, width: int, cycle: int, value: int | None = None) -> AccessResult:
        """``kind`` is ifetch, load, store or walk (table walk: L2 + DRAM only)."""
        if width not in (4, 8):
            raise ValueError(f"width {width} not in (4, 8)")
        self._check_range(paddr, width)
        self._beat_cycle = cycle
        trace: list = []
        first = self._line(paddr)
        last = self._line(paddr + width - 1)
        if kind == "ifetch":
            cache = self.l1i
        elif kind == "walk":
            cache = self.l2
        else:
            cache = self.l1d
        deepest = cache.name
        chunks = [(paddr, min(width, first + self.line_bytes - paddr))]
        if last != first:
            chunks.append((last, paddr + width - last))
        out = bytearray()
        order = {L1I: 0, L1D: 0, L2: 1, DRAM: 2}
        for addr, n in chunks:
            line, hit = self._ensure(cache, self._line(addr), trace)
            if order[hit] > order[deepest]:
                deepest = hit
            o = addr % self.line_bytes
            if kind == "store":
                raw = value.to_bytes(width, "little")
                start = addr - paddr
                line.data[o:o + n] = raw[start:start + n]
                line.dirty = True
                if self._tagging:
                    self.integrity.on_store(self, cache.name, self._line(addr), line, o, n)
            else:
                chunk = bytes(line.data[o:o + n])
                if self._tagging:
                    chunk = self.integrity.on_consume(self, kind, cache.name, addr, chunk)
                out += chunk
        data = int.from_bytes(out, "little") if kind != "store" else 0
        return AccessResult(data, deepest, self.latency(deepest), trace)

    # -- maintenance ----------------------------------------------------------

    def ic_iallu(self):
        self.l1i.invalidate_all()

    def invalidate_l1i_line(self, paddr: int):
        line = self.l1i.lookup(paddr)
        if line is not None:
            line.valid = False

    def dc_civac(self, paddr: int, cycle: int = 0) -> list[BeatTransfer]:
        """Clean and invalidate the line covering ``paddr`` down to DRAM."""
        self._check_range(paddr, 1)
        self._beat_cycle = cycle
        trace: list = []
        lp = self._line(paddr)
        line = self.l1d.lookup(lp)
        if line is not None:
            if line.dirty:
                self._writeback(self.l1d, lp, line, trace)
            line.valid = False
        line = self.l2.lookup(lp)
        if line is not None:
            if line.dirty:
                self._writeback(self.l2, lp, line, trace)
            line.valid = False
            line.dirty = False
        return trace

    def clean_invalidate_all(self) -> list[BeatTransfer]:
        trace: list = []
        for cache in (self.l1d, self.l2):
            for s, _, line in list(cache.resident()):
                if line.dirty:
                    self._writeback(cache, cache.line_paddr(s, line.tag), line, trace)
                line.valid = False
        return trace

    # -- non-allocating views -------------------------------------------------

    def _view(self, paddr: int, n: int, caches) -> bytes:
        self._check_range(paddr, n)
        out = bytearray()
        addr, end = paddr, paddr + n
        while addr < end:
            lp = self._line(addr)
            take = min(end, lp + self.line_bytes) - addr
            o = addr - lp
            for cache in caches:
                line = cache.lookup(lp)
                if line is not None:
                    out += line.data[o:o + take]
                    break
            else:
                out += self.dram[addr:addr + take]
            addr += take
        return bytes(out)

    def probe_read(self, paddr: int, n: int) -> bytes:
        """Data viewpoint: L1D over L2 over DRAM. Never allocates."""
        return self._view(paddr, n, (self.l1d, self.l2))

    def ifetch_view(self, paddr: int, n: int) -> bytes:
        """What the instruction side would fetch: L1I over L2 over DRAM."""
        return self._view(paddr, n, (self.l1i, self.l2))

    def probe_write(self, paddr: int, data: bytes, retag: bool = True):
        """Coherent write to DRAM and every resident data-side copy.

        ``retag=False`` models corruption: MAC tags are left as they were.
        """
        self._check_range(paddr, len(data))
        self.dram[paddr:paddr + len(data)] = data
        addr, end = paddr, paddr + len(data)
        while addr < end:
            lp = self._line(addr)
            take = min(end, lp + self.line_bytes) - addr
            o = addr - lp
            for cache in (self.l1d, self.l2):
                line = cache.lookup(lp)
                if line is not None:
                    line.data[o:o + take] = data[addr - paddr:addr - paddr + take]
            addr += take
        if retag and self._tagging:
            self.integrity.retag_range(self, paddr, len(data))

    def plant_stale_line(self, level: str, paddr: int, overlay: tuple[int, bytes] | None = None):
        """Install a clean, valid copy of the current (pre-fault) content of ``paddr``'s line.

        ``overlay`` = (paddr, bytes) is written over the copy, tags untouched.
        """
        lp = self._line(paddr)
        cache = self.cache(level)
        src = self.l2.lookup(lp)
        if src is not None:
            data, tags = bytearray(src.data), (list(src.tags) if src.tags is not None else None)
        else:
            data, tags = bytearray(self.dram[lp:lp + self.line_bytes]), self._dram_tags(lp)
        line = cache.lookup(lp)
        if line is None:
            line = cache.victim(lp)
            if line.valid:
                s, _ = cache.index(lp)
                self._evict(cache, cache.line_paddr(s, line.tag), line, [])
        if overlay is not None:
            o = overlay[0] - lp
            data[o:o + len(overlay[1])] = overlay[1]
        line.tag = cache.index(lp)[1]
        line.data = data
        line.tags = tags
        line.dirty = False
        line.valid = True

    # -- inspection -----------------------------------------------------------

    def dump_caches(self) -> str:
        lines = self.l1i.dump() + self.l1d.dump() + self.l2.dump()
        return "\n".join(lines) + ("\n" if lines else "")

    def digest(self, levels=(L1I, L1D, L2, DRAM)) -> str:
        h = hashlib.sha256()
        for level in levels:
            if level == DRAM:
                h.update(self.dram)
            else:
                for s, w, line in self.cache(level).resident():
                    h.update(f"{level}{s},{w},{line.tag},{line.dirty},{line.tags}".encode())
                    h.update(line.data)
        return h.hexdigest()
