"""Configurable in-order pipeline model with a retirement-timing attacker.

Timing is computed with a scoreboard over a linear array of stages: every
instruction enters each stage at the earliest cycle allowed by

* its own progress (one cycle per stage, multi-cycle execute/memory),
* structural occupancy (the older instruction must have left the stage),
* operand availability (bypass network or register file, per config),
* front-end redirects after taken branches and jumps.

The datapath keeps its own register file and memory; only decoding and the
pure operation semantics are shared with :mod:`rvleak.isa`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

from .isa import (BRANCHES, DEFAULT_MAP, DIVS, HALT_FAULT, HALT_SENTINEL, HALT_WORD, JUMPS, LOADS, MASK32, MULS,
                  STORES, WIDTH, IllegalInstruction, MemoryFault, MemoryMap, Program, RetiredEvent, alu, branch_taken, decode,
                  load_extend, signed)

FORWARDING_MODES = ("full", "alu-only", "none")
INST_CLASSES = ("alu", "mul", "div", "load", "store", "branch", "jump")
DATA_DEPENDENT = "data-dependent"
PRESETS = ("ibex-like", "cva6-like", "baseline")


class UnknownPreset(KeyError):
    pass


class HazardViolation(RuntimeError):
    """An operand was consumed before the pipeline could deliver it."""


@dataclass(frozen=True)
class CacheConfig:
    lines: int = 64
    line_size: int = 16
    hit_cycles: int = 1
    miss_cycles: int = 10

    def __post_init__(self):
        for name in ("lines", "line_size"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                raise ValueError(f"cache {name} must be a power of two")
        if self.hit_cycles < 1 or self.miss_cycles < 1:
            raise ValueError("cache latencies must be >= 1")


@dataclass(frozen=True)
class UarchConfig:
    preset_name: str = "custom"
    pipeline_depth: int = 5
    div_latency: Union[int, str] = DATA_DEPENDENT
    mul_latency: int = 1
    mem_latency: int = 1
    alignment_splitting: bool = False
    split_stores: bool = False
    data_cache: Optional[CacheConfig] = None
    branch_taken_penalty: int = 0
    forwarding: str = "full"
    # instruction classes whose operands bypass nothing: read from the register file in decode
    unforwarded: tuple[str, ...] = ()

    def __post_init__(self):
        if not 3 <= self.pipeline_depth <= 12:
            raise ValueError("pipeline_depth must lie in [3, 12]")
        if self.div_latency != DATA_DEPENDENT and (not isinstance(self.div_latency, int) or self.div_latency < 1):
            raise ValueError("div_latency must be a positive int or 'data-dependent'")
        if self.mul_latency < 1 or self.mem_latency < 1:
            raise ValueError("latencies must be >= 1")
        if self.branch_taken_penalty < 0:
            raise ValueError("branch_taken_penalty must be >= 0")
        if self.forwarding not in FORWARDING_MODES:
            raise ValueError(f"forwarding must be one of {FORWARDING_MODES}")
        object.__setattr__(self, "unforwarded", tuple(self.unforwarded))
        bad = set(self.unforwarded) - set(INST_CLASSES)
        if bad:
            raise ValueError(f"unknown instruction classes {sorted(bad)}")
        if isinstance(self.data_cache, dict):
            object.__setattr__(self, "data_cache", CacheConfig(**self.data_cache))

    # stage roles
    @property
    def execute_stage(self) -> int:
        d = self.pipeline_depth
        return 1 if d == 3 else 2 if d == 4 else d - 3

    @property
    def memory_stage(self) -> int:
        d = self.pipeline_depth
        return self.execute_stage if d <= 4 else d - 2

    @property
    def regread_stage(self) -> int:
        return 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unforwarded"] = list(self.unforwarded)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "UarchConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        data = dict(data)
        if data.get("data_cache") is not None:
            data["data_cache"] = CacheConfig(**data["data_cache"])
        if "unforwarded" in data:
            data["unforwarded"] = tuple(data["unforwarded"])
        return cls(**data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def load_config(path: Union[str, Path]) -> UarchConfig:
    return UarchConfig.from_dict(json.loads(Path(path).read_text()))


def preset(name: str) -> UarchConfig:
    if name not in PRESETS:
        raise UnknownPreset(name)
    text = resources.files("rvleak").joinpath(f"presets/{name}.json").read_text()
    return UarchConfig.from_dict(json.loads(text))


def resolve_config(spec: str) -> UarchConfig:
    """A preset name or a path to a config file."""
    if spec in PRESETS:
        return preset(spec)
    return load_config(spec)


def inst_class(mnemonic: str) -> str:
    if mnemonic in LOADS:
        return "load"
    if mnemonic in STORES:
        return "store"
    if mnemonic in BRANCHES:
        return "branch"
    if mnemonic in JUMPS:
        return "jump"
    if mnemonic in MULS:
        return "mul"
    if mnemonic in DIVS:
        return "div"
    return "alu"


def _bitlen_magnitude(value: int, is_signed: bool) -> int:
    return abs(signed(value) if is_signed else value).bit_length()


def div_cycles(mnemonic: str, dividend: int, divisor: int, config: UarchConfig) -> int:
    if config.div_latency != DATA_DEPENDENT:
        return config.div_latency
    is_signed = mnemonic in ("DIV", "REM")
    diff = _bitlen_magnitude(dividend, is_signed) - _bitlen_magnitude(divisor, is_signed)
    return 2 + max(1, diff)


@dataclass(frozen=True)
class UarchTrace:
    events: tuple[RetiredEvent, ...]
    retire_cycles: tuple[int, ...]
    total_cycles: int
    truncated: bool
    halted: str = HALT_SENTINEL
    fault: Optional[str] = None

    def __len__(self) -> int:
        return len(self.events)

    def pairs(self) -> list[tuple[RetiredEvent, int]]:
        return list(zip(self.events, self.retire_cycles))


def attacker_trace(trace: UarchTrace) -> tuple[int, ...]:
    """What a retirement-timing attacker sees: the cycle of every retirement."""
    return tuple(trace.retire_cycles)


class _DataCache:
    def __init__(self, cfg: CacheConfig):
        self.cfg = cfg
        self.tags: list[Optional[int]] = [None] * cfg.lines

    def access(self, address: int) -> int:
        line = address // self.cfg.line_size
        idx = line % self.cfg.lines
        if self.tags[idx] == line:
            return self.cfg.hit_cycles
        self.tags[idx] = line
        return self.cfg.miss_cycles


@dataclass
class _Producer:
    value: int
    fwd_ready: int  # first cycle a consumer may enter execute with this value bypassed
    rf_ready: int  # first cycle the value can be read from the register file


@dataclass
class _Pipeline:
    config: UarchConfig
    memory_map: MemoryMap
    regs: list[int] = field(default_factory=lambda: [0] * 32)
    mem: dict[int, int] = field(default_factory=dict)

    def read(self, address: int, width: int) -> int:
        v = 0
        for i in range(width):
            v |= self.mem.get((address + i) & MASK32, 0) << (8 * i)
        return v

    def write(self, address: int, width: int, value: int) -> None:
        for i in range(width):
            self.mem[(address + i) & MASK32] = (value >> (8 * i)) & 0xFF


def _bus_words(address: int, width: int) -> list[int]:
    first = address & ~3
    last = (address + width - 1) & ~3
    return [first] if first == last else [first, last]


def simulate(program: Program, init_regs: Optional[Iterable[int]], config: UarchConfig,
             max_cycles: int = 100_000, memory_map: MemoryMap = DEFAULT_MAP) -> UarchTrace:
    """Run ``program`` through the pipeline from reset microarchitectural state."""
    if max_cycles <= 0:
        raise ValueError("max_cycles must be positive")
    cfg = config
    depth = cfg.pipeline_depth
    E, M, W, R = cfg.execute_stage, cfg.memory_stage, depth - 1, cfg.regread_stage
    merged = E == M
    p = _Pipeline(cfg, memory_map)
    if init_regs is not None:
        p.regs = [v & MASK32 for v in init_regs]
        p.regs[0] = 0
    for address, word in program.image():
        p.write(address, 4, word)
    cache = _DataCache(cfg.data_cache) if cfg.data_cache else None

    scoreboard: dict[int, _Producer] = {}
    free_at = [1] * depth  # earliest cycle each stage can accept a new instruction
    fetch_ready = 1
    pc = program.base
    events: list[RetiredEvent] = []
    cycles: list[int] = []
    halted, fault, truncated = HALT_SENTINEL, None, False

    while True:
        if pc & 3 or not memory_map.in_code(pc):
            halted, fault = HALT_FAULT, f"fetch fault at 0x{pc:08x}"
            break
        word = p.read(pc, 4)
        if word == HALT_WORD:
            break
        try:
            inst = decode(word)
        except IllegalInstruction as exc:
            halted, fault = HALT_FAULT, str(exc)
            break
        m = inst.mnemonic
        cls = inst_class(m)

        # operand values come from the newest producer; availability is checked below
        srcs = []
        a = b = None
        if inst.rs1 is not None:
            a = p.regs[inst.rs1]
            srcs.append(inst.rs1)
        if inst.rs2 is not None:
            b = p.regs[inst.rs2]
            srcs.append(inst.rs2)

        # functional execution
        next_pc = (pc + 4) & MASK32
        rd_value = None
        mem_read = mem_write = None
        taken = None
        ex_cycles = 1
        mem_cycles = 1
        try:
            if cls in ("alu", "mul", "div"):
                if m == "LUI":
                    rd_value = inst.imm & MASK32
                elif m == "AUIPC":
                    rd_value = (pc + inst.imm) & MASK32
                else:
                    rd_value = alu(m, a, b if b is not None else inst.imm & MASK32)
                if cls == "mul":
                    ex_cycles = cfg.mul_latency
                elif cls == "div":
                    ex_cycles = div_cycles(m, a, b, cfg)
            elif cls == "branch":
                taken = branch_taken(m, a, b)
                if taken:
                    next_pc = (pc + inst.imm) & MASK32
            elif cls == "jump":
                rd_value = next_pc
                next_pc = ((pc + inst.imm) if m == "JAL" else (a + inst.imm) & ~1) & MASK32
            else:
                width = WIDTH[m]
                address = (a + inst.imm) & MASK32
                if not memory_map.in_data(address, width):
                    raise MemoryFault(address, cls)
                split = cfg.alignment_splitting and (cls == "load" or cfg.split_stores)
                words = _bus_words(address, width) if split else [address & ~3]
                if cache is not None:
                    mem_cycles = sum(cache.access(w) for w in words)
                else:
                    mem_cycles = cfg.mem_latency * len(words)
                if cls == "load":
                    data = p.read(address, width)
                    mem_read = (address, width, data)
                    rd_value = load_extend(m, data)
                else:
                    data = b & ((1 << (8 * width)) - 1)
                    p.write(address, width, data)
                    mem_write = (address, width, data)
        except MemoryFault as exc:
            halted, fault = HALT_FAULT, str(exc)
            break
        if rd_value is not None and inst.rd == 0:
            rd_value = 0

        # timing
        dur = [1] * depth
        if merged:
            dur[E] = mem_cycles if cls in ("load", "store") else ex_cycles
        else:
            dur[E] = ex_cycles
            dur[M] = mem_cycles if cls in ("load", "store") else 1
        bypass = cfg.forwarding != "none" and cls not in cfg.unforwarded
        need_exec = 0
        need_after_read = 0
        for r in srcs:
            prod = scoreboard.get(r) if r else None
            if prod is None:
                continue
            if bypass:
                need_exec = max(need_exec, min(prod.fwd_ready, prod.rf_ready))
            else:
                need_after_read = max(need_after_read, prod.rf_ready + 1)
        enter = [0] * depth
        enter[0] = max(free_at[0], fetch_ready)
        for s in range(1, depth):
            t = max(enter[s - 1] + dur[s - 1], free_at[s])
            if s == E:
                t = max(t, need_exec)
            if s == R + 1:
                t = max(t, need_after_read)
            enter[s] = t
        retire = enter[W]
        if retire > max_cycles:
            truncated = True
            break

        # the values used must have been deliverable at the cycles they were consumed
        for r in srcs:
            prod = scoreboard.get(r) if r else None
            if prod is None:
                continue
            if bypass:
                ok = enter[E] >= prod.fwd_ready or enter[E] >= prod.rf_ready
            else:
                ok = enter[R + 1] - 1 >= prod.rf_ready
            if not ok:
                raise HazardViolation(f"{inst} at 0x{pc:08x} consumed x{r} too early")

        for s in range(depth - 1):
            free_at[s] = enter[s + 1]
        free_at[W] = retire + 1
        if taken or cls == "jump":
            fetch_ready = enter[E] + dur[E] - E + cfg.branch_taken_penalty
        if rd_value is not None and inst.rd:
            p.regs[inst.rd] = rd_value
            if cls == "load":
                ready = enter[M] + dur[M] - (1 if cfg.forwarding == "full" else 0)
            else:
                ready = enter[E] + dur[E]
            scoreboard[inst.rd] = _Producer(rd_value, ready, retire + 1)

        events.append(RetiredEvent(len(events), inst, pc, next_pc, a, b, rd_value, mem_read, mem_write, taken))
        cycles.append(retire)
        pc = next_pc

    total = max_cycles if truncated else (cycles[-1] if cycles else 0)
    return UarchTrace(tuple(events), tuple(cycles), total, truncated, halted, fault)
