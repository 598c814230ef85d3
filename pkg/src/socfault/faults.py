"""Parameterized fault models armed on a cycle window relative to TRIG.

A model only acts on transfer-level events (cache line beats, table walks);
nothing here can touch instruction execution directly.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, replace

from .memory import BEAT_BYTES, L1D, L1I, L2, BeatTransfer
from .mmu import PAGE_BYTES, PTE_BYTES, PTE_OA_MASK, WalkEvent

F_L1I_FILL = "F_L1I_FILL"
F_MMU = "F_MMU"
F_L2_BEAT = "F_L2_BEAT"
MODELS = (F_L1I_FILL, F_MMU, F_L2_BEAT)

# bench trigger latency, at 1 cycle ~ 1 ns
DEFAULT_MIN_OFFSET = 700


def _int(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)


@dataclass
class L1IParams:
    target_paddr_word: int
    xor_mask: int = 0x1

    def __post_init__(self):
        self.target_paddr_word = _int(self.target_paddr_word)
        self.xor_mask = _int(self.xor_mask) & 0xFFFFFFFF
        if self.target_paddr_word % 4:
            raise ValueError("target_paddr_word must be word aligned")


@dataclass
class MmuParams:
    # defaults reproduce the reference mapping: 0x80000-0xb0000 -> 0, 0xc0000 -> 0x800000
    table_shift_bytes: int = 116 * PTE_BYTES
    zero_range: tuple[int, int] = (8, 12)  # vpages [lo, hi)
    shift_delta: int | None = 116 * PAGE_BYTES
    pte_corrupt_mask: int = PTE_OA_MASK

    def __post_init__(self):
        self.table_shift_bytes = _int(self.table_shift_bytes)
        self.zero_range = tuple(_int(v) for v in self.zero_range)
        self.pte_corrupt_mask = _int(self.pte_corrupt_mask)
        if self.shift_delta is not None:
            self.shift_delta = _int(self.shift_delta)
            if self.table_shift_bytes % PTE_BYTES or \
                    self.table_shift_bytes // PTE_BYTES * PAGE_BYTES != self.shift_delta:
                raise ValueError("shift_delta must equal table_shift_bytes / 8 pages")
        if self.zero_range[0] > self.zero_range[1]:
            raise ValueError("zero_range must be [lo, hi) with lo <= hi")


@dataclass
class L2Params:
    beat_paddr_range: tuple[int, int]
    beat_delta: int = -BEAT_BYTES
    variant: str = "F1"
    # F2 only: leading bytes of the displaced beat whose L1D copy keeps the old value
    stale_bytes: int = 8

    def __post_init__(self):
        self.beat_paddr_range = tuple(_int(v) for v in self.beat_paddr_range)
        self.beat_delta = _int(self.beat_delta)
        if self.beat_delta % BEAT_BYTES or self.beat_delta == 0:
            raise ValueError("beat_delta must be a non-zero multiple of 16")
        if self.variant not in ("F1", "F2"):
            raise ValueError(f"variant {self.variant!r} not in F1/F2")
        self.stale_bytes = _int(self.stale_bytes)
        if not 0 <= self.stale_bytes <= BEAT_BYTES or self.stale_bytes % 4:
            raise ValueError("stale_bytes must be a multiple of 4 in [0, 16]")


PARAMS = {F_L1I_FILL: L1IParams, F_MMU: MmuParams, F_L2_BEAT: L2Params}


@dataclass
class FaultSpec:
    model: str
    window: tuple[int, int]
    params: L1IParams | MmuParams | L2Params
    jitter_sigma: float = 0.0
    success_ratio: float = 1.0
    seed: int = 0
    min_offset: int = DEFAULT_MIN_OFFSET

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown fault model {self.model!r}")
        self.window = tuple(_int(v) for v in self.window)
        if self.window[0] > self.window[1]:
            raise ValueError("window start must not exceed end")
        if not 0.0 <= self.success_ratio <= 1.0:
            raise ValueError("success_ratio must lie in [0, 1]")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")
        if isinstance(self.params, dict):
            self.params = PARAMS[self.model](**self.params)
        elif not isinstance(self.params, PARAMS[self.model]):
            raise TypeError(f"{self.model} needs {PARAMS[self.model].__name__}")
        self.seed = _int(self.seed) & 0xFFFFFFFFFFFFFFFF

    def delayed(self, delay: int, seed: int | None = None) -> FaultSpec:
        return replace(self, window=(self.window[0] + delay, self.window[1] + delay),
                       seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        for k, v in d["params"].items():
            if isinstance(v, tuple):
                d["params"][k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> FaultSpec:
        d = dict(d)
        d["params"] = PARAMS[d["model"]](**d.get("params", {}))
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> FaultSpec:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Mutation:
    kind: str
    location: int
    before: int
    after: int
    cycle: int
    detail: str = ""

    def summary(self) -> str:
        text = f"{self.kind}@0x{self.location:x}:0x{self.before:x}->0x{self.after:x}@{self.cycle}"
        return f"{text} {self.detail}" if self.detail else text


class FaultError(Exception):
    pass


class FaultEngine:
    """One armed fault; fires at most once per run."""

    def __init__(self, spec: FaultSpec):
        self.spec = spec
        rng = random.Random(spec.seed)
        bound = int(round(2 * spec.jitter_sigma))
        self.jitter = rng.randint(-bound, bound) if bound else 0
        self.succeeds = rng.random() < spec.success_ratio
        self.window = (spec.window[0] + self.jitter, spec.window[1] + self.jitter)
        self.trigger_cycle: int | None = None
        self.mutation: Mutation | None = None
        self.suspended = False

    @property
    def effective_window(self) -> tuple[int, int]:
        return self.window

    def armed_at(self, cycle: int) -> bool:
        """Whether an event at absolute ``cycle`` could be hit."""
        if self.suspended or self.mutation is not None or not self.succeeds or self.trigger_cycle is None:
            return False
        rel = cycle - self.trigger_cycle
        return rel >= self.spec.min_offset and self.window[0] <= rel <= self.window[1]

    def _record(self, m: Mutation, sink: list):
        self.mutation = m
        sink.append(m)

    def intercept(self, event, ctx):
        """Return the (possibly rewritten) beat; walks are handled in place."""
        model = self.spec.model
        if isinstance(event, BeatTransfer):
            if model == F_L1I_FILL:
                return self._l1i(event, ctx)
            if model == F_L2_BEAT:
                return self._l2(event, ctx)
            return event
        if isinstance(event, WalkEvent) and model == F_MMU:
            self._mmu(event, ctx)
        return event

    def _l1i(self, beat: BeatTransfer, mem) -> BeatTransfer:
        p = self.spec.params
        if beat.dst != L1I or beat.direction != "fill":
            return beat
        if not beat.beat_paddr <= p.target_paddr_word < beat.beat_paddr + BEAT_BYTES:
            return beat
        if not self.armed_at(beat.cycle):
            return beat
        o = p.target_paddr_word - beat.beat_paddr
        before = int.from_bytes(beat.data[o:o + 4], "little")
        after = before ^ p.xor_mask
        data = beat.data[:o] + after.to_bytes(4, "little") + beat.data[o + 4:]
        self._record(Mutation(F_L1I_FILL, p.target_paddr_word, before, after, beat.cycle), mem.log)
        return replace(beat, data=data)

    def _l2(self, beat: BeatTransfer, mem) -> BeatTransfer:
        p = self.spec.params
        if beat.dst != L2:
            return beat
        lo, hi = p.beat_paddr_range
        if not lo <= beat.beat_paddr < hi or not self.armed_at(beat.cycle):
            return beat
        new = beat.beat_paddr + p.beat_delta
        if p.variant == "F2":
            k = p.stale_bytes
            mem.plant_stale_line(L1D, new, overlay=(new + k, beat.data[k:]))
        self._record(Mutation(F_L2_BEAT, beat.beat_paddr, beat.beat_paddr, new, beat.cycle, p.variant),
                     mem.log)
        return replace(beat, beat_paddr=new)

    def _mmu(self, walk: WalkEvent, mmu):
        if not self.armed_at(walk.cycle):
            return
        p = self.spec.params
        old = mmu.walk_base
        mmu.walk_base = old + p.table_shift_bytes
        mem = mmu.mem
        for vpage in range(*p.zero_range):
            addr = mmu.walk_base + vpage * PTE_BYTES
            if addr + PTE_BYTES > len(mem.dram):
                continue
            pte = int.from_bytes(mem.probe_read(addr, PTE_BYTES), "little")
            mem.probe_write(addr, (pte & ~p.pte_corrupt_mask).to_bytes(PTE_BYTES, "little"), retag=False)
        mmu.tlb.sw_invalidate_effective = False
        self._record(Mutation(F_MMU, walk.pte_paddr, old, mmu.walk_base, walk.cycle), mem.log)
