"""Virtual-to-physical translation: single-level page table, micro-TLBs, L2 TLB.

PTE word layout (64 bit)::

    bit 0      valid
    bit 6      writable
    bit 10     access flag
    bits 4:2   memory attribute index (1 = normal cacheable)
    bits 47:16 output page frame address
    bit 54     execute-never

PAR word layout returned by :meth:`Mmu.at_query`::

    bit 0      fault
    bits 47:16 output page frame address
    bits 63:56 attributes (R=1, W=2, X=4, C=8)
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

from .memory import BusError, MemorySystem

PAGE_BYTES = 1 << 16
PAGE_SHIFT = 16
PTE_BYTES = 8

PTE_VALID = 1 << 0
PTE_ATTR_CACHEABLE = 1 << 2
PTE_WRITE = 1 << 6
PTE_AF = 1 << 10
PTE_XN = 1 << 54
PTE_OA_MASK = ((1 << 48) - 1) & ~(PAGE_BYTES - 1)

ATTR_R, ATTR_W, ATTR_X, ATTR_C = 1, 2, 4, 8
PAR_FAULT = 1
PAR_PA_MASK = PTE_OA_MASK

IDENTITY_PTE_FLAGS = PTE_VALID | PTE_ATTR_CACHEABLE | PTE_WRITE | PTE_AF


def make_pte(ppage: int, flags: int = IDENTITY_PTE_FLAGS) -> int:
    return ((ppage << PAGE_SHIFT) & PTE_OA_MASK) | flags


def pte_attrs(pte: int) -> int:
    attrs = ATTR_R
    if pte & PTE_WRITE:
        attrs |= ATTR_W
    if not pte & PTE_XN:
        attrs |= ATTR_X
    if pte & PTE_ATTR_CACHEABLE:
        attrs |= ATTR_C
    return attrs


@dataclass
class PageTables:
    base_paddr: int
    entries: int
    page_bytes: int = PAGE_BYTES

    @property
    def size_bytes(self) -> int:
        return self.entries * PTE_BYTES

    def pte_paddr(self, vpage: int, walk_base: int | None = None) -> int:
        return (self.base_paddr if walk_base is None else walk_base) + vpage * PTE_BYTES


def entries_per_table(region_bytes: int = 512 << 20) -> int:
    """PTE count for one directory covering ``region_bytes`` with 64 KiB pages."""
    return region_bytes // PAGE_BYTES


def build_identity_map(mem: MemorySystem, mem_size: int | None = None, base_paddr: int = 0x100000) -> PageTables:
    """Write an identity table (RWX, cacheable) for ``mem_size`` bytes into DRAM."""
    mem_size = len(mem.dram) if mem_size is None else mem_size
    if mem_size % PAGE_BYTES:
        raise ValueError(f"mem_size 0x{mem_size:x} is not a multiple of 64 KiB")
    n = mem_size // PAGE_BYTES
    tables = PageTables(base_paddr, n)
    if base_paddr < 0 or base_paddr + tables.size_bytes > len(mem.dram):
        raise ValueError("page-table region exceeds DRAM")
    raw = b"".join(make_pte(v).to_bytes(PTE_BYTES, "little") for v in range(n))
    mem.dram[base_paddr:base_paddr + len(raw)] = raw
    if mem.integrity is not None and mem.integrity.active:
        mem.integrity.retag_range(mem, base_paddr, len(raw))
    return tables


@dataclass(frozen=True, slots=True)
class TranslationResult:
    paddr: int | None
    attrs: int
    source: str  # "uTLB" | "L2TLB" | "Walk"
    fault: str | None = None
    latency: int = 0


@dataclass(frozen=True, slots=True)
class WalkEvent:
    vaddr: int
    vpage: int
    pte_paddr: int
    intent: str
    cycle: int


class Tlb:
    """Fully associative, FIFO replacement."""

    def __init__(self, name: str, size: int):
        self.name = name
        self.size = size
        self.entries: OrderedDict[int, tuple[int, int]] = OrderedDict()

    def get(self, vpage: int):
        return self.entries.get(vpage)

    def put(self, vpage: int, ppage: int, attrs: int):
        if vpage in self.entries:
            self.entries[vpage] = (ppage, attrs)
            return
        if len(self.entries) >= self.size:
            self.entries.popitem(last=False)
        self.entries[vpage] = (ppage, attrs)

    def clear(self):
        self.entries.clear()


@dataclass
class TlbState:
    utlb_i: Tlb = field(default_factory=lambda: Tlb("uTLB-I", 8))
    utlb_d: Tlb = field(default_factory=lambda: Tlb("uTLB-D", 8))
    l2tlb: Tlb = field(default_factory=lambda: Tlb("L2TLB", 64))
    sw_invalidate_effective: bool = True

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in (self.utlb_i, self.utlb_d, self.l2tlb):
            h.update(repr(list(t.entries.items())).encode())
        h.update(str(self.sw_invalidate_effective).encode())
        return h.hexdigest()


@dataclass
class MmuConfig:
    page_table_base: int = 0x100000
    utlb_i_entries: int = 8
    utlb_d_entries: int = 8
    l2tlb_entries: int = 64
    l2tlb_latency: int = 2


class Mmu:
    def __init__(self, mem: MemorySystem, config: MmuConfig | None = None):
        self.mem = mem
        self.config = config or MmuConfig()
        self.tables = build_identity_map(mem, base_paddr=self.config.page_table_base)
        self.walk_base = self.tables.base_paddr
        self.tlb = TlbState(Tlb("uTLB-I", self.config.utlb_i_entries),
                            Tlb("uTLB-D", self.config.utlb_d_entries),
                            Tlb("L2TLB", self.config.l2tlb_entries))
        self.faults = None
        self.walks = 0

    def retable(self):
        """Rebuild the identity table (after DRAM was reloaded)."""
        self.tables = build_identity_map(self.mem, base_paddr=self.config.page_table_base)
        self.walk_base = self.tables.base_paddr

    # -- walks ----------------------------------------------------------------

    def _walk(self, vaddr: int, intent: str, cycle: int, query: bool) -> tuple[int | None, int, int, str | None]:
        vpage = vaddr >> PAGE_SHIFT
        pte_paddr = self.walk_base + vpage * PTE_BYTES
        if not query:
            event = WalkEvent(vaddr, vpage, pte_paddr, intent, cycle)
            self.mem.log.append(event)
            self.walks += 1
        latency = 0
        try:
            if query:
                pte = int.from_bytes(self.mem.probe_read(pte_paddr, PTE_BYTES), "little")
            else:
                res = self.mem.access("walk", pte_paddr, PTE_BYTES, cycle)
                pte, latency = res.data, res.latency
        except BusError:
            pte = 0
        if not query and self.faults is not None:
            # the walk's own read already completed; the pulse corrupts state for later walks
            self.faults.intercept(event, self)
        if not pte & PTE_VALID:
            return None, 0, latency, "translation fault"
        return (pte & PTE_OA_MASK) >> PAGE_SHIFT, pte_attrs(pte), latency, None

    def translate(self, vaddr: int, intent: str = "data", cycle: int = 0, access: str = "r") -> TranslationResult:
        """Lookup order: micro-TLB for ``intent``, L2 TLB, then a table walk."""
        vpage = vaddr >> PAGE_SHIFT
        offset = vaddr & (PAGE_BYTES - 1)
        utlb = self.tlb.utlb_i if intent == "ifetch" else self.tlb.utlb_d
        hit = utlb.get(vpage)
        source, latency = "uTLB", 0
        if hit is None:
            hit = self.tlb.l2tlb.get(vpage)
            if hit is not None:
                source, latency = "L2TLB", self.config.l2tlb_latency
                utlb.put(vpage, *hit)
            else:
                ppage, attrs, latency, fault = self._walk(vaddr, intent, cycle, query=False)
                if fault:
                    return TranslationResult(None, 0, "Walk", fault, latency)
                hit = (ppage, attrs)
                source = "Walk"
                self.tlb.l2tlb.put(vpage, ppage, attrs)
                utlb.put(vpage, ppage, attrs)
        ppage, attrs = hit
        need = ATTR_X if intent == "ifetch" else (ATTR_W if access == "w" else ATTR_R)
        if not attrs & need:
            return TranslationResult(None, attrs, source, "permission fault", latency)
        return TranslationResult((ppage << PAGE_SHIFT) | offset, attrs, source, None, latency)

    def lookup_nofill(self, vaddr: int, intent: str = "data") -> TranslationResult:
        """Same answer as :meth:`translate` without touching any TLB or cache."""
        vpage = vaddr >> PAGE_SHIFT
        offset = vaddr & (PAGE_BYTES - 1)
        utlb = self.tlb.utlb_i if intent == "ifetch" else self.tlb.utlb_d
        hit = utlb.get(vpage)
        source = "uTLB"
        if hit is None:
            hit = self.tlb.l2tlb.get(vpage)
            source = "L2TLB"
        if hit is None:
            ppage, attrs, _, fault = self._walk(vaddr, intent, 0, query=True)
            if fault:
                return TranslationResult(None, 0, "Walk", fault)
            hit, source = (ppage, attrs), "Walk"
        ppage, attrs = hit
        return TranslationResult((ppage << PAGE_SHIFT) | offset, attrs, source)

    def at_query(self, vaddr: int) -> int:
        """PAR word for a stage-1 data read translation of ``vaddr``."""
        res = self.lookup_nofill(vaddr, "data")
        if res.fault:
            return PAR_FAULT
        return (res.paddr & PAR_PA_MASK) | (res.attrs << 56)

    def tlbi_all(self):
        self.tlb.l2tlb.clear()
        if self.tlb.sw_invalidate_effective:
            self.tlb.utlb_i.clear()
            self.tlb.utlb_d.clear()


def par_paddr(par: int) -> int | None:
    return None if par & PAR_FAULT else par & PAR_PA_MASK


@dataclass(frozen=True)
class PageClass:
    vpage: int
    ppage: int | None
    kind: str  # Identity | Zero | Shifted | Fault
    delta: int = 0

    def __str__(self) -> str:
        if self.kind == "Shifted":
            sign = "+" if self.delta >= 0 else "-"
            return f"Shifted({sign}0x{abs(self.delta):x})"
        return self.kind


def classify_mapping(mmu: Mmu, lo: int, hi: int, page_stride: int = PAGE_BYTES) -> list[PageClass]:
    """Classify every page in ``[lo, hi)`` from AT queries."""
    if lo % PAGE_BYTES or hi % PAGE_BYTES or page_stride % PAGE_BYTES:
        raise ValueError("range and stride must be page aligned")
    out = []
    for vaddr in range(lo, hi, page_stride):
        pa = par_paddr(mmu.at_query(vaddr))
        if pa is None:
            out.append(PageClass(vaddr, None, "Fault"))
        elif pa == vaddr:
            out.append(PageClass(vaddr, pa, "Identity"))
        elif pa == 0:
            out.append(PageClass(vaddr, pa, "Zero"))
        else:
            out.append(PageClass(vaddr, pa, "Shifted", pa - vaddr))
    return out


def mapping_report(classes: list[PageClass]) -> str:
    """``VPAGE -> PPAGE CLASS`` lines."""
    lines = []
    for c in classes:
        pp = "----------" if c.ppage is None else f"0x{c.ppage:08x}"
        lines.append(f"0x{c.vpage:08x} -> {pp} {c}")
    return "\n".join(lines) + "\n"
