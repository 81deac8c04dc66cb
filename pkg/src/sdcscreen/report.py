"""Report records, JSONL persistence, and the collector aggregation.

Records are one JSON object per line.  Files written by this module are
canonically formatted (compact separators, insertion key order), which
makes parse -> emit the identity on any file this package produced, with
unknown fields carried through untouched.  The collector folds scan
results into a per-host pass/fail view: FAIL is sticky until an explicit
reset, and replayed records are deduplicated by (host, plan hash,
quantum id), so the final state does not depend on delivery order.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .detector import FaultReport, ScanPlan, ShrinkResult, StreamSpec
from .kernels import OperandDomain, KernelKind, TestKernel, TestVector, bits_to_float, float_to_bits
from .oracle import Verdict

SCHEMA_VERSION = 1
RECORD_KINDS = ("SCAN_RESULT", "SIM_EVENT", "METRICS")


class ReportParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__("line %d: %s" % (line, message))


@dataclass(frozen=True)
class ReportRecord:
    kind: str
    timestamp: Optional[float]
    payload: dict
    raw: dict = field(compare=False, default=None)

    def __post_init__(self):
        if self.kind not in RECORD_KINDS:
            raise ValueError("unknown record kind %r" % (self.kind,))
        if self.raw is None:
            raw = {"schema_version": SCHEMA_VERSION, "kind": self.kind,
                   "timestamp": self.timestamp, "payload": self.payload}
            object.__setattr__(self, "raw", raw)


def make_record(kind: str, payload: dict, timestamp: Optional[float] = None) -> ReportRecord:
    return ReportRecord(kind=kind, timestamp=timestamp, payload=payload)


def parse_report(data: Union[bytes, str]) -> list[ReportRecord]:
    """Parse JSONL report bytes; malformed lines fail with their number."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    records = []
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReportParseError(lineno, "invalid JSON: %s" % exc)
        if not isinstance(obj, dict):
            raise ReportParseError(lineno, "record must be a JSON object")
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ReportParseError(
                lineno, "unsupported schema_version %r (expected %d)"
                % (obj.get("schema_version"), SCHEMA_VERSION)
            )
        kind = obj.get("kind")
        if kind not in RECORD_KINDS:
            raise ReportParseError(lineno, "unknown record kind %r" % (kind,))
        payload = obj.get("payload")
        if not isinstance(payload, dict):
            raise ReportParseError(lineno, "payload must be a JSON object")
        records.append(
            ReportRecord(kind=kind, timestamp=obj.get("timestamp"), payload=payload, raw=obj)
        )
    return records


def emit_report(records: Iterable[ReportRecord]) -> bytes:
    """Serialize records to canonical JSONL (UTF-8, one object per line)."""
    lines = [json.dumps(r.raw, separators=(",", ":"), ensure_ascii=False) for r in records]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def parse_report_file(path) -> list[ReportRecord]:
    with open(path, "rb") as fh:
        return parse_report(fh.read())


def write_report_file(path, records: Iterable[ReportRecord]) -> None:
    with open(path, "wb") as fh:
        fh.write(emit_report(records))


# ---------------------------------------------------------------------------
# Value / vector / plan serialization


def value_to_payload(value: object) -> dict:
    if isinstance(value, bool):
        return {"type": "bool", "value": value}
    if isinstance(value, float):
        return {"type": "binary64", "value": value, "bits": "0x%016x" % float_to_bits(value)}
    if isinstance(value, int):
        return {"type": "int", "value": value}
    if value is None:
        return {"type": "none", "value": None}
    raise ValueError("unserializable kernel value %r" % (value,))


def value_from_payload(payload: dict) -> object:
    if payload["type"] == "binary64":
        return bits_to_float(int(payload["bits"], 16))
    return payload["value"]


def vector_to_payload(vector: TestVector) -> dict:
    out = {
        "base": vector.base,
        "base_bits": "0x%016x" % float_to_bits(vector.base),
        "exponent": vector.exponent,
        "exponent_bits": "0x%016x" % float_to_bits(vector.exponent),
        "id": "0x%016x" % vector.id,
    }
    if vector.payload is not None:
        out["payload_b64"] = base64.b64encode(vector.payload).decode("ascii")
    return out


def vector_from_payload(payload: dict) -> TestVector:
    raw = None
    if "payload_b64" in payload:
        raw = base64.b64decode(payload["payload_b64"])
    vector = TestVector(
        base=bits_to_float(int(payload["base_bits"], 16)),
        exponent=bits_to_float(int(payload["exponent_bits"], 16)),
        payload=raw,
    )
    if "id" in payload and int(payload["id"], 16) != vector.id:
        raise ValueError("vector id %s does not match its fields" % payload["id"])
    return vector


def plan_to_payload(plan: ScanPlan) -> dict:
    stream = None
    if plan.stream is not None:
        d = plan.stream.domain
        stream = {
            "seed": plan.stream.seed,
            "count": plan.stream.count,
            "domain": {
                "base_lo": d.base_lo,
                "base_hi": d.base_hi,
                "exponent_lo": d.exponent_lo,
                "exponent_hi": d.exponent_hi,
                "integer_exponents": d.integer_exponents,
            },
        }
    return {
        "kernels": [k.kind.value for k in plan.kernels],
        "stream": stream,
        "targeted": [vector_to_payload(v) for v in plan.targeted],
        "cores": list(plan.cores),
        "budget": plan.budget,
    }


def plan_from_payload(payload: dict) -> ScanPlan:
    stream = None
    if payload.get("stream"):
        s = payload["stream"]
        d = s.get("domain", {})
        stream = StreamSpec(
            seed=s["seed"],
            count=s["count"],
            domain=OperandDomain(
                base_lo=d["base_lo"],
                base_hi=d["base_hi"],
                exponent_lo=d["exponent_lo"],
                exponent_hi=d["exponent_hi"],
                integer_exponents=d["integer_exponents"],
            ),
        )
    return ScanPlan(
        kernels=tuple(TestKernel(KernelKind(k)) for k in payload["kernels"]),
        stream=stream,
        targeted=tuple(vector_from_payload(v) for v in payload.get("targeted", [])),
        cores=tuple(payload["cores"]),
        budget=payload.get("budget"),
    )


def _verdict_to_payload(verdict: Verdict) -> dict:
    return {
        "core": verdict.core.core if verdict.core is not None else None,
        "vector": vector_to_payload(verdict.vector) if verdict.vector is not None else None,
        "observed": value_to_payload(verdict.observed),
        "expected": value_to_payload(verdict.expected),
    }


def fault_report_to_record(
    report: FaultReport,
    specs_path: Optional[str] = None,
    quantum_id: str = "scan-0",
    canonical: bool = False,
) -> ReportRecord:
    """One SCAN_RESULT record carrying the scan outcome and everything
    needed to replay it: the full plan, seed, and exact mismatch vectors."""
    payload = {
        "host": report.host,
        "status": report.status,
        "plan_hash": report.plan_hash,
        "quantum_id": quantum_id,
        "seed": report.seed,
        "specs_path": specs_path,
        "duration_s": 0.0 if canonical else report.duration_s,
        "plan": plan_to_payload(report.plan),
        "flagged_cores": sorted(report.per_core_mismatches),
        "mismatches": [
            _verdict_to_payload(v)
            for core in sorted(report.per_core_mismatches)
            for v in report.per_core_mismatches[core]
        ],
        "reproducers": {
            str(core): [vector_to_payload(v) for v in vectors]
            for core, vectors in sorted(report.minimal_reproducers.items())
        },
    }
    return make_record("SCAN_RESULT", payload, timestamp=0.0 if canonical else report.timestamp)


def vectors_from_records(records: Sequence[ReportRecord]) -> list[TestVector]:
    """Every distinct test vector mentioned by SCAN_RESULT records, in
    first-seen order: reproducers first, then raw mismatch vectors."""
    out: list[TestVector] = []
    seen: set[int] = set()

    def add(payload: Optional[dict]):
        if not payload:
            return
        vector = vector_from_payload(payload)
        if vector.id not in seen:
            seen.add(vector.id)
            out.append(vector)

    for record in records:
        if record.kind != "SCAN_RESULT":
            continue
        for vectors in record.payload.get("reproducers", {}).values():
            for v in vectors:
                add(v)
        for m in record.payload.get("mismatches", []):
            add(m.get("vector"))
    return out


# ---------------------------------------------------------------------------
# Key-value configuration files (simulate configs; grammar in docs)


class ConfigParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__("line %d: %s" % (line, message))


def parse_kv_config(text: str) -> dict:
    """Parse a flat ``key = value`` configuration document."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(lineno, "expected key = value, got %r" % raw.strip())
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigParseError(lineno, "empty key")
        if key in out:
            raise ConfigParseError(lineno, "duplicate key %r" % key)
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# Collector


PASS = "PASS"
FAIL = "FAIL"
UNTESTED = "UNTESTED"


@dataclass
class CollectorState:
    """Per-host latest pass/fail knowledge with at-least-once dedup."""

    statuses: dict = field(default_factory=dict)
    seen: set = field(default_factory=set)

    def status(self, host: str) -> str:
        return self.statuses.get(host, UNTESTED)

    def reset(self, host: str) -> None:
        """Explicit operator reset: the only way out of a sticky FAIL."""
        self.statuses.pop(host, None)
        self.seen = {key for key in self.seen if key[0] != host}


def collector_ingest(state: CollectorState, record: ReportRecord) -> CollectorState:
    """Fold one scan result into the collector.

    Duplicate (host, plan hash, quantum id) deliveries are no-ops, and a
    host that ever reported FAIL stays FAIL regardless of later passes; a
    machine observed corrupting once is quarantine-worthy.  Malformed
    records are rejected without touching the state.
    """
    if record.kind != "SCAN_RESULT":
        raise ValueError("collector ingests SCAN_RESULT records, got %r" % (record.kind,))
    payload = record.payload
    host = payload.get("host")
    plan_hash = payload.get("plan_hash")
    quantum_id = payload.get("quantum_id")
    status = payload.get("status")
    if not isinstance(host, str) or not host:
        raise ValueError("scan record missing host")
    if not isinstance(plan_hash, str) or not isinstance(quantum_id, str):
        raise ValueError("scan record missing plan_hash/quantum_id")
    if status not in (PASS, FAIL):
        raise ValueError("scan record status must be PASS or FAIL, got %r" % (status,))
    key = (host, plan_hash, quantum_id)
    if key in state.seen:
        return state
    state.seen.add(key)
    if state.statuses.get(host) != FAIL:
        state.statuses[host] = status
    return state
