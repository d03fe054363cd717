"""Contract atoms, the RV32IM contract template, and atom observations.

An atom pairs an instruction type (one per mnemonic) with a leakage source.
It applies to a retired instruction of that type and observes one
architectural fact about it. A contract is a subset of the template's atoms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .isa import (BRANCHES, JUMPS, LOADS, MNEMONICS, STORES, ArchTrace, RetiredEvent, has_field)

IL = ("OP", "RD", "RS1", "RS2", "IMM")
RL = ("REG_RS1", "REG_RS2", "REG_RD")
ML = ("MEM_R_ADDR", "MEM_W_ADDR", "MEM_R_DATA", "MEM_W_DATA")
AL = ("IS_WORD_ALIGNED", "IS_HALF_ALIGNED")
BL = ("BRANCH_TAKEN", "NEW_PC")
DL_KINDS = ("RAW_RS1", "RAW_RS2", "RAW_RD", "WAW")
FAMILIES = ("IL", "RL", "ML", "AL", "BL", "DL")
MAX_DISTANCE = 8


class NotApplicableError(ValueError):
    pass


class _NotApplicable:
    __slots__ = ()

    def __repr__(self) -> str:
        return "NA"

    def __reduce__(self):
        return "NA"


NA = _NotApplicable()


def family_of(source: str) -> str:
    if source in IL:
        return "IL"
    if source in RL:
        return "RL"
    if source in ML:
        return "ML"
    if source in AL:
        return "AL"
    if source in BL:
        return "BL"
    if source.rsplit("_", 1)[0] in DL_KINDS:
        return "DL"
    raise KeyError(source)


def distance_of(source: str) -> Optional[int]:
    """Dependency distance carried by a DL source, None for every other source."""
    if family_of(source) != "DL":
        return None
    return int(source.rsplit("_", 1)[1])


def dl_sources(kind: str, n_max: int) -> list[str]:
    return [f"{kind}_{n}" for n in range(1, n_max + 1)]


def applicable_sources(mnemonic: str, n_max: int = 4) -> dict[str, tuple[str, ...]]:
    """Applicability matrix row: leakage family -> sources defined for ``mnemonic``."""
    rd, rs1, rs2, imm = (has_field(mnemonic, f) for f in ("rd", "rs1", "rs2", "imm"))
    row = {
        "IL": tuple(s for s, ok in zip(IL, (True, rd, rs1, rs2, imm)) if ok),
        "RL": tuple(s for s, ok in zip(RL, (rs1, rs2, rd)) if ok),
        "ML": ("MEM_R_ADDR", "MEM_R_DATA") if mnemonic in LOADS
        else ("MEM_W_ADDR", "MEM_W_DATA") if mnemonic in STORES else (),
        "AL": AL if mnemonic in LOADS or mnemonic in STORES else (),
        "BL": BL if mnemonic in BRANCHES else ("NEW_PC",) if mnemonic in JUMPS else (),
    }
    dl: list[str] = []
    if rs1:
        dl += dl_sources("RAW_RS1", n_max)
    if rs2:
        dl += dl_sources("RAW_RS2", n_max)
    if rd:
        dl += dl_sources("RAW_RD", n_max) + dl_sources("WAW", n_max)
    row["DL"] = tuple(dl)
    return row


def applicability_matrix(n_max: int = 4) -> dict[str, dict[str, tuple[str, ...]]]:
    return {m: applicable_sources(m, n_max) for m in MNEMONICS}


@dataclass(frozen=True, order=True)
class ContractAtom:
    inst_type: str
    source: str

    @property
    def id(self) -> str:
        return f"{self.inst_type}:{self.source}"

    @property
    def family(self) -> str:
        return family_of(self.source)

    @property
    def distance(self) -> Optional[int]:
        return distance_of(self.source)

    @classmethod
    def parse(cls, atom_id: str) -> "ContractAtom":
        inst_type, source = atom_id.split(":", 1)
        return cls(inst_type, source)


@dataclass(frozen=True)
class Template:
    atoms: tuple[ContractAtom, ...]
    max_dependency_distance: int = 4

    def __post_init__(self):
        ids = [a.id for a in self.atoms]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate atoms in template")
        by_m: dict[str, list[str]] = {}
        for a in self.atoms:
            by_m.setdefault(a.inst_type, []).append(a.source)
        object.__setattr__(self, "_ids", frozenset(ids))
        object.__setattr__(self, "_by_mnemonic", {m: tuple(s) for m, s in by_m.items()})

    def __len__(self) -> int:
        return len(self.atoms)

    def __contains__(self, atom_id: str) -> bool:
        return atom_id in self._ids

    @property
    def ids(self) -> frozenset[str]:
        return self._ids

    def sources(self, mnemonic: str) -> tuple[str, ...]:
        return self._by_mnemonic.get(mnemonic, ())

    def without(self, *families: str) -> "Template":
        return Template(tuple(a for a in self.atoms if a.family not in families), self.max_dependency_distance)

    def catalog(self) -> str:
        """One line per atom: id, inst_type, source, distance ('-' if none)."""
        lines = ["# id inst_type source distance"]
        for a in self.atoms:
            d = a.distance
            lines.append(f"{a.id} {a.inst_type} {a.source} {'-' if d is None else d}")
        return "\n".join(lines) + "\n"


def build_template(n_max: int = 4, families: Iterable[str] = FAMILIES) -> Template:
    """All applicable (mnemonic, source) atoms, in mnemonic then family order."""
    if not 1 <= n_max <= MAX_DISTANCE:
        raise ValueError(f"n_max must lie in [1, {MAX_DISTANCE}]")
    families = tuple(families)
    unknown = set(families) - set(FAMILIES)
    if unknown:
        raise ValueError(f"unknown leakage families: {sorted(unknown)}")
    atoms = []
    for m in MNEMONICS:
        row = applicable_sources(m, n_max)
        for fam in FAMILIES:
            if fam in families:
                atoms.extend(ContractAtom(m, s) for s in row[fam])
    return Template(tuple(atoms), n_max)


@dataclass(frozen=True)
class Contract:
    template: Template
    selected: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "selected", frozenset(self.selected))
        missing = self.selected - self.template.ids
        if missing:
            raise ValueError(f"atoms not in template: {sorted(missing)[:5]}")


# ---------------------------------------------------------------------------
# observations

TraceLike = Union[ArchTrace, Sequence[RetiredEvent]]


def _events(trace: TraceLike) -> Sequence[RetiredEvent]:
    return trace.events if isinstance(trace, ArchTrace) else trace


def _writes(ev: RetiredEvent) -> int:
    rd = ev.inst.rd
    return rd if rd else -1


def _observe(source: str, ev: RetiredEvent, history: Sequence[RetiredEvent]):
    inst = ev.inst
    if source == "OP":
        return inst.mnemonic
    if source == "RD":
        return inst.rd
    if source == "RS1":
        return inst.rs1
    if source == "RS2":
        return inst.rs2
    if source == "IMM":
        return inst.imm
    if source == "REG_RS1":
        return ev.rs1_value
    if source == "REG_RS2":
        return ev.rs2_value
    if source == "REG_RD":
        return ev.rd_value
    if source == "MEM_R_ADDR":
        return ev.mem_read[0]
    if source == "MEM_R_DATA":
        return ev.mem_read[2]
    if source == "MEM_W_ADDR":
        return ev.mem_write[0]
    if source == "MEM_W_DATA":
        return ev.mem_write[2]
    if source in AL:
        access = ev.mem_read or ev.mem_write
        low = access[0] & 3
        return low == 0 if source == "IS_WORD_ALIGNED" else low != 3
    if source == "BRANCH_TAKEN":
        return ev.branch_taken
    if source == "NEW_PC":
        return ev.pc_after
    kind, n = source.rsplit("_", 1)
    n = int(n)
    if len(history) < n:
        return False
    prev = history[-n].inst
    if kind == "RAW_RS1":
        return bool(inst.rs1) and prev.rd == inst.rs1
    if kind == "RAW_RS2":
        return bool(inst.rs2) and prev.rd == inst.rs2
    if kind == "WAW":
        return bool(inst.rd) and prev.rd == inst.rd
    # RAW_RD: the n-th previous instruction read the register this one writes
    return bool(inst.rd) and (prev.rs1 == inst.rd or prev.rs2 == inst.rd)


def applicable(atom: ContractAtom, event: RetiredEvent) -> bool:
    if event.inst.mnemonic != atom.inst_type:
        return False
    fam = family_of(atom.source)
    if atom.source in ("MEM_R_ADDR", "MEM_R_DATA"):
        return event.mem_read is not None
    if atom.source in ("MEM_W_ADDR", "MEM_W_DATA"):
        return event.mem_write is not None
    if fam == "AL":
        return event.mem_read is not None or event.mem_write is not None
    sources = applicable_sources(atom.inst_type, MAX_DISTANCE)[fam]
    return atom.source in sources


def observe(atom: ContractAtom, event: RetiredEvent, history: Sequence[RetiredEvent] = ()):
    """Observation of ``atom`` on ``event``; ``history`` ends with the previous retirement."""
    if not applicable(atom, event):
        raise NotApplicableError(f"{atom.id} does not apply to {event.inst.mnemonic}")
    return _observe(atom.source, event, history)


def atom_trace(atom: ContractAtom, trace: TraceLike, n_max: int = MAX_DISTANCE) -> list:
    events = _events(trace)
    out = []
    for i, ev in enumerate(events):
        if applicable(atom, ev):
            out.append(_observe(atom.source, ev, events[max(0, i - n_max):i]))
        else:
            out.append(NA)
    return out


def observation_table(trace: TraceLike, template: Template) -> list[tuple[str, tuple]]:
    """Per event: (mnemonic, observations of the template's sources for it)."""
    events = _events(trace)
    n_max = template.max_dependency_distance
    table = []
    for i, ev in enumerate(events):
        m = ev.inst.mnemonic
        history = events[max(0, i - n_max):i]
        table.append((m, tuple(_observe(s, ev, history) for s in template.sources(m))))
    return table


def distinguishing_from_tables(ta: list, tb: list, template: Template) -> set[str]:
    if len(ta) != len(tb):
        return set(template.ids)
    out: set[str] = set()
    for (ma, va), (mb, vb) in zip(ta, tb):
        if ma != mb:
            out.update(f"{ma}:{s}" for s in template.sources(ma))
            out.update(f"{mb}:{s}" for s in template.sources(mb))
        elif va != vb:
            for s, x, y in zip(template.sources(ma), va, vb):
                if x != y:
                    out.add(f"{ma}:{s}")
    return out


def distinguishing_atoms(t1: TraceLike, t2: TraceLike, template: Template) -> set[str]:
    """Ids of template atoms whose observation traces differ between the two runs."""
    return distinguishing_from_tables(observation_table(t1, template), observation_table(t2, template), template)


def contract_observations(contract: Contract, trace: TraceLike) -> list[frozenset]:
    """Per state, the set of (source, observation) exposed by the selected atoms."""
    events = _events(trace)
    n_max = contract.template.max_dependency_distance
    by_m: dict[str, list[str]] = {}
    for atom_id in contract.selected:
        m, s = atom_id.split(":", 1)
        by_m.setdefault(m, []).append(s)
    out = []
    for i, ev in enumerate(events):
        history = events[max(0, i - n_max):i]
        out.append(frozenset((s, _observe(s, ev, history)) for s in by_m.get(ev.inst.mnemonic, ())))
    return out


def contract_distinguishes(contract: Contract, distinguishing: Iterable[str]) -> bool:
    """Contract distinguishability via its atoms: some selected atom distinguishes."""
    return not contract.selected.isdisjoint(distinguishing)
