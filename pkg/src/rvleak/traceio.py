"""Serialization: RVFI-style retirement traces and versioned JSON documents.

RVFI trace files hold one record per line as ``key=0x...`` pairs; see
docs/schemas.md. Lines starting with ``#`` are comments, except ``#!`` lines,
which carry trace metadata (total cycles, truncation, halt reason).

Suite, results and contract documents are canonical JSON (sorted keys, no
whitespace, integers as lowercase 0x-prefixed hex) with a sha256 digest over
the document minus its digest field.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .evaluator import EvalResult, compare_traces
from .isa import (LOADS, STORES, WIDTH, Program, RetiredEvent, branch_taken, decode, BRANCHES)
from .synth import InfeasibleCase, SynthesisResult
from .template import ContractAtom, Template
from .testgen import GenConfig, Suite, TestCase
from .uarch import UarchConfig, UarchTrace

PathLike = Union[str, Path]
FORMAT_VERSION = 1

RVFI_FIELDS = ("order", "insn", "pc_rdata", "pc_wdata", "rs1_addr", "rs1_rdata", "rs2_addr", "rs2_rdata",
               "rd_addr", "rd_wdata", "mem_addr", "mem_rmask", "mem_rdata", "mem_wmask", "mem_wdata",
               "retire_cycle")


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class DigestMismatch(ValueError):
    pass


def hx(value: int) -> str:
    return f"{value:#x}"


def unhex(text, field: str = "value", line: Optional[int] = None) -> int:
    if not isinstance(text, str) or not text.lower().startswith("0x"):
        raise ParseError(f"expected 0x-prefixed hex, got {text!r}", line, field)
    try:
        return int(text, 16)
    except ValueError:
        raise ParseError(f"bad hex {text!r}", line, field) from None


# ---------------------------------------------------------------------------
# RVFI traces


def byte_mask(address: int, width: int) -> int:
    """Byte lanes touched within the word containing ``address`` (4-bit)."""
    return (((1 << width) - 1) << (address & 3)) & 0xF


def event_record(ev: RetiredEvent, retire_cycle: int) -> dict[str, int]:
    inst = ev.inst
    rec = dict.fromkeys(RVFI_FIELDS, 0)
    rec.update(order=ev.order, insn=inst.raw, pc_rdata=ev.pc_before, pc_wdata=ev.pc_after,
               retire_cycle=retire_cycle)
    if inst.rs1 is not None:
        rec.update(rs1_addr=inst.rs1, rs1_rdata=ev.rs1_value)
    if inst.rs2 is not None:
        rec.update(rs2_addr=inst.rs2, rs2_rdata=ev.rs2_value)
    if inst.rd is not None:
        rec.update(rd_addr=inst.rd, rd_wdata=ev.rd_value if inst.rd else 0)
    if ev.mem_read is not None:
        addr, width, data = ev.mem_read
        rec.update(mem_addr=addr, mem_rmask=byte_mask(addr, width), mem_rdata=data)
    if ev.mem_write is not None:
        addr, width, data = ev.mem_write
        rec.update(mem_addr=addr, mem_wmask=byte_mask(addr, width), mem_wdata=data)
    return rec


def record_event(rec: dict[str, int], line: Optional[int] = None) -> RetiredEvent:
    """Rebuild a RetiredEvent; access widths come from the decoded mnemonic."""
    inst = decode(rec["insn"])
    m = inst.mnemonic

    def expect(field: str, want: int) -> None:
        if rec[field] != want:
            raise ParseError(f"expected {hx(want)}, got {hx(rec[field])}", line, field)

    rs1 = rec["rs1_rdata"] if inst.rs1 is not None else None
    rs2 = rec["rs2_rdata"] if inst.rs2 is not None else None
    expect("rs1_addr", inst.rs1 or 0)
    expect("rs2_addr", inst.rs2 or 0)
    expect("rd_addr", inst.rd or 0)
    rd_value = rec["rd_wdata"] if inst.rd is not None else None
    mem_read = mem_write = None
    if m in LOADS:
        width = WIDTH[m]
        expect("mem_rmask", byte_mask(rec["mem_addr"], width))
        mem_read = (rec["mem_addr"], width, rec["mem_rdata"])
    elif m in STORES:
        width = WIDTH[m]
        expect("mem_wmask", byte_mask(rec["mem_addr"], width))
        mem_write = (rec["mem_addr"], width, rec["mem_wdata"])
    taken = branch_taken(m, rs1, rs2) if m in BRANCHES else None
    return RetiredEvent(rec["order"], inst, rec["pc_rdata"], rec["pc_wdata"], rs1, rs2, rd_value,
                        mem_read, mem_write, taken)


def format_rvfi(trace: UarchTrace) -> str:
    lines = [f"#! total_cycles={hx(trace.total_cycles)} truncated={hx(int(trace.truncated))} halted={trace.halted}"]
    if trace.fault is not None:
        lines.append(f"#! fault={trace.fault}")
    for ev, cycle in zip(trace.events, trace.retire_cycles):
        rec = event_record(ev, cycle)
        lines.append(" ".join(f"{k}={hx(rec[k])}" for k in RVFI_FIELDS))
    return "\n".join(lines) + "\n"


def parse_rvfi(text: str) -> UarchTrace:
    events, cycles = [], []
    meta = {"total_cycles": None, "truncated": False, "halted": "halt", "fault": None}
    last_order = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#!"):
            body = line[2:].strip()
            if body.startswith("fault="):
                meta["fault"] = body[len("fault="):]
                continue
            for tok in body.split():
                key, _, value = tok.partition("=")
                if key == "total_cycles":
                    meta["total_cycles"] = unhex(value, key, n)
                elif key == "truncated":
                    meta["truncated"] = bool(unhex(value, key, n))
                elif key == "halted":
                    meta["halted"] = value
            continue
        if line.startswith("#"):
            continue
        rec: dict[str, int] = {}
        for tok in line.split():
            key, sep, value = tok.partition("=")
            if not sep:
                raise ParseError(f"token {tok!r} is not key=value", n)
            if key in RVFI_FIELDS:
                rec[key] = unhex(value, key, n)
            # other RVFI signals (trap, halt, intr, ...) are accepted and ignored
        for key in RVFI_FIELDS:
            if key not in rec:
                raise ParseError("missing", n, key)
        if last_order is not None and rec["order"] <= last_order:
            raise ParseError("order must increase strictly", n, "order")
        last_order = rec["order"]
        events.append(record_event(rec, n))
        cycles.append(rec["retire_cycle"])
    total = meta["total_cycles"]
    if total is None:
        total = cycles[-1] if cycles else 0
    return UarchTrace(tuple(events), tuple(cycles), total, meta["truncated"], meta["halted"], meta["fault"])


def write_rvfi(trace: UarchTrace, path: PathLike) -> None:
    Path(path).write_text(format_rvfi(trace))


def read_rvfi(path: PathLike) -> UarchTrace:
    return parse_rvfi(Path(path).read_text())


def ingest_pair(path_a: PathLike, path_b: PathLike, template: Template,
                testcase_id: Optional[str] = None) -> EvalResult:
    """Evaluate a pair of externally produced traces exactly as the in-memory evaluator would."""
    ua, ub = read_rvfi(path_a), read_rvfi(path_b)
    return compare_traces(testcase_id or f"{Path(path_a).name}|{Path(path_b).name}", ua, ub, template)


# ---------------------------------------------------------------------------
# documents


def canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_of(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "digest"}
    return "sha256:" + hashlib.sha256(canonical(body).encode()).hexdigest()


def seal(doc: dict) -> dict:
    return {**doc, "digest": digest_of(doc)}


def dumps_document(doc: dict) -> str:
    return canonical(seal(doc)) + "\n"


def loads_document(text: str, kind: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if doc.get("format") != kind:
        raise ParseError(f"expected a {kind} document, got {doc.get('format')!r}", field="format")
    if doc.get("version") != hx(FORMAT_VERSION):
        raise ParseError(f"unsupported version {doc.get('version')!r}", field="version")
    if doc.get("digest") != digest_of(doc):
        raise DigestMismatch(f"{kind} digest does not match its content")
    return doc


def _hex_dict(d: dict) -> dict:
    return {k: (hx(v) if isinstance(v, int) and not isinstance(v, bool) else v) for k, v in d.items()}


def _unhex_dict(d: dict, int_keys) -> dict:
    return {k: (unhex(v, k) if k in int_keys else v) for k, v in d.items()}


def template_to_doc(template: Template) -> dict:
    return {"max_dependency_distance": hx(template.max_dependency_distance), "atoms": [a.id for a in template.atoms]}


def template_from_doc(doc: dict) -> Template:
    return Template(tuple(ContractAtom.parse(a) for a in doc["atoms"]), unhex(doc["max_dependency_distance"]))


def _program_doc(p: Program) -> dict:
    return {"base": hx(p.base), "code": [hx(w) for w in p.code]}


def _program_from(doc: dict) -> Program:
    return Program(tuple(unhex(w, "code") for w in doc["code"]), unhex(doc["base"], "base"))


GEN_INT_KEYS = ("suffix_length", "fuel", "data_base", "data_size")


def suite_to_doc(suite: Suite, template: Template) -> dict:
    return {
        "format": "rvleak-suite",
        "version": hx(FORMAT_VERSION),
        "seed": hx(suite.seed),
        "config": _hex_dict(suite.config.to_dict()),
        "template": template_to_doc(template),
        "ungeneratable": {k: hx(v) for k, v in sorted(suite.ungeneratable.items())},
        "testcases": [
            {"id": tc.id, "target_atom": tc.target_atom, "seed": hx(tc.seed), "init_regs": [hx(v) for v in tc.init_regs],
             "program_a": _program_doc(tc.program_a), "program_b": _program_doc(tc.program_b)}
            for tc in suite.testcases
        ],
    }


def suite_from_doc(doc: dict) -> tuple[Suite, Template]:
    cfg = GenConfig.from_dict(_unhex_dict(doc["config"], GEN_INT_KEYS))
    cases = [TestCase(t["id"], t["target_atom"], _program_from(t["program_a"]), _program_from(t["program_b"]),
                      tuple(unhex(v, "init_regs") for v in t["init_regs"]), unhex(t["seed"], "seed"))
             for t in doc["testcases"]]
    ungen = {k: unhex(v, "ungeneratable") for k, v in doc["ungeneratable"].items()}
    return Suite(unhex(doc["seed"], "seed"), cfg, cases, ungen), template_from_doc(doc["template"])


def write_suite(suite: Suite, template: Template, path: PathLike) -> str:
    doc = seal(suite_to_doc(suite, template))
    Path(path).write_text(canonical(doc) + "\n")
    return doc["digest"]


def read_suite(path: PathLike) -> tuple[Suite, Template, str]:
    doc = loads_document(Path(path).read_text(), "rvleak-suite")
    suite, template = suite_from_doc(doc)
    return suite, template, doc["digest"]


@dataclass(frozen=True)
class ResultsFile:
    results: tuple[EvalResult, ...]
    config: UarchConfig
    template: Template
    suite_digest: str


def _uarch_doc(cfg: UarchConfig) -> dict:
    d = cfg.to_dict()
    out = _hex_dict(d)
    if d.get("data_cache") is not None:
        out["data_cache"] = _hex_dict(d["data_cache"])
    return out


def _uarch_from(doc: dict) -> UarchConfig:
    d = {k: (unhex(v, k) if isinstance(v, str) and v.startswith("0x") else v) for k, v in doc.items()}
    if d.get("data_cache") is not None:
        d["data_cache"] = {k: unhex(v, k) for k, v in d["data_cache"].items()}
    return UarchConfig.from_dict(d)


def results_to_doc(rf: ResultsFile) -> dict:
    return {
        "format": "rvleak-results",
        "version": hx(FORMAT_VERSION),
        "suite_digest": rf.suite_digest,
        "uarch": _uarch_doc(rf.config),
        "template": template_to_doc(rf.template),
        "results": [
            {"id": r.testcase_id, "attacker_distinguishable": r.attacker_distinguishable,
             "atoms": sorted(r.distinguishing_atoms), "truncated": r.truncated, "target_atom": r.target_atom}
            for r in rf.results
        ],
    }


def results_from_doc(doc: dict) -> ResultsFile:
    results = tuple(EvalResult(r["id"], r["attacker_distinguishable"], frozenset(r["atoms"]), r["truncated"],
                               r["target_atom"]) for r in doc["results"])
    return ResultsFile(results, _uarch_from(doc["uarch"]), template_from_doc(doc["template"]), doc["suite_digest"])


def write_results(rf: ResultsFile, path: PathLike) -> str:
    doc = seal(results_to_doc(rf))
    Path(path).write_text(canonical(doc) + "\n")
    return doc["digest"]


def read_results(path: PathLike) -> tuple[ResultsFile, str]:
    doc = loads_document(Path(path).read_text(), "rvleak-results")
    return results_from_doc(doc), doc["digest"]


@dataclass(frozen=True)
class ContractFile:
    result: SynthesisResult
    template: Template
    results_digest: str
    infeasible: tuple[InfeasibleCase, ...] = ()


def contract_to_doc(cf: ContractFile) -> dict:
    r = cf.result
    return {
        "format": "rvleak-contract",
        "version": hx(FORMAT_VERSION),
        "results_digest": cf.results_digest,
        "solver": {"name": r.solver, "optimal": r.optimal, "nodes": hx(r.nodes),
                   "node_budget": None if r.node_budget is None else hx(r.node_budget)},
        "selected": sorted(r.selected),
        "fp_count": hx(r.fp_count),
        "false_positive_tests": sorted(r.false_positive_tests),
        "atom_ranking": [{"atom": a, "fp_tests": list(ts)} for a, ts in r.atom_ranking],
        "infeasible": [{"id": c.testcase_id, "reason": c.reason} for c in cf.infeasible],
        "template": template_to_doc(cf.template),
    }


def contract_from_doc(doc: dict) -> ContractFile:
    s = doc["solver"]
    result = SynthesisResult(
        frozenset(doc["selected"]), frozenset(doc["false_positive_tests"]), unhex(doc["fp_count"], "fp_count"),
        s["optimal"], s["name"], unhex(s["nodes"], "nodes"),
        None if s["node_budget"] is None else unhex(s["node_budget"], "node_budget"),
        tuple((e["atom"], tuple(e["fp_tests"])) for e in doc["atom_ranking"]))
    infeasible = tuple(InfeasibleCase(c["id"], c["reason"]) for c in doc["infeasible"])
    return ContractFile(result, template_from_doc(doc["template"]), doc["results_digest"], infeasible)


def write_contract(cf: ContractFile, path: PathLike) -> str:
    doc = seal(contract_to_doc(cf))
    Path(path).write_text(canonical(doc) + "\n")
    return doc["digest"]


def read_contract(path: PathLike) -> tuple[ContractFile, str]:
    doc = loads_document(Path(path).read_text(), "rvleak-contract")
    return contract_from_doc(doc), doc["digest"]
