"""Deterministic faulty backends built from declarative fault specifications.

A fault spec pins down *where* (host pattern + core index), *what* (which
primitive op kind and which exact operand bit patterns), *how* (a value
transform) and *when* (an onset schedule per defect class) a corruption
happens.  Faulty backends are silent by contract: they never raise, never
log, never touch status fields - a corruption is observable only by
comparing values against a reference.
"""

from __future__ import annotations

import fnmatch
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Optional, Sequence, Union

from .kernels import (
    MASK64,
    ArithmeticBackend,
    CoreId,
    OpKind,
    PrimOp,
    bits_to_float,
    float_to_bits,
    fnv1a64,
    splitmix64,
    truncate_to_int32,
)
from .oracle import ReferenceBackend


class DefectClass(Enum):
    DEVICE_ERROR = "DEVICE_ERROR"
    EARLY_LIFE = "EARLY_LIFE"
    DEGRADATION = "DEGRADATION"
    WEAROUT = "WEAROUT"


class TransformKind(Enum):
    BITFLIP = "BITFLIP"
    SET_CONSTANT = "SET_CONSTANT"
    EXPONENT_FLIP = "EXPONENT_FLIP"
    LUT_ENTRY_OVERRIDE = "LUT_ENTRY_OVERRIDE"


@dataclass(frozen=True)
class CorruptionTransform:
    """Pure value transform applied to a primitive op's result.

    BITFLIP is an involution on the raw binary64 bits; SET_CONSTANT is
    idempotent; EXPONENT_FLIP flips one bit inside the 11-bit exponent
    field; LUT_ENTRY_OVERRIDE only ever fires on LUT_SQUARE ops whose
    index operand equals its table_index.
    """

    kind: TransformKind
    bit: Optional[int] = None
    constant: Optional[float] = None
    table_index: Optional[int] = None
    table_value: Optional[float] = None

    def __post_init__(self):
        if self.kind is TransformKind.BITFLIP:
            if self.bit is None or not 0 <= self.bit <= 63:
                raise ValueError("BITFLIP bit index must be in [0, 63], got %r" % (self.bit,))
        elif self.kind is TransformKind.EXPONENT_FLIP:
            if self.bit is None or not 0 <= self.bit <= 10:
                raise ValueError("EXPONENT_FLIP bit index must be in [0, 10], got %r" % (self.bit,))
        elif self.kind is TransformKind.SET_CONSTANT:
            if self.constant is None:
                raise ValueError("SET_CONSTANT requires a constant value")
        elif self.kind is TransformKind.LUT_ENTRY_OVERRIDE:
            if self.table_index is None or self.table_value is None:
                raise ValueError("LUT_ENTRY_OVERRIDE requires table_index and table_value")
            if not 0 <= self.table_index <= 255:
                raise ValueError("table_index must be in [0, 255], got %r" % (self.table_index,))

    def apply(self, value: float, op: Optional[PrimOp] = None) -> float:
        if self.kind is TransformKind.BITFLIP:
            return bits_to_float(float_to_bits(value) ^ (1 << self.bit))
        if self.kind is TransformKind.SET_CONSTANT:
            return self.constant
        if self.kind is TransformKind.EXPONENT_FLIP:
            return bits_to_float(float_to_bits(value) ^ (1 << (52 + self.bit)))
        # LUT_ENTRY_OVERRIDE: inert outside its exact table slot.
        if (
            op is not None
            and op.kind is OpKind.LUT_SQUARE
            and truncate_to_int32(op.operands[0]) == self.table_index
        ):
            return self.table_value
        return value


def corrupt(value: float, transform: CorruptionTransform, op: Optional[PrimOp] = None) -> float:
    """Apply a corruption transform to a single binary64 value."""
    return transform.apply(value, op)


# ---------------------------------------------------------------------------
# Operand matching


class AnyOperand:
    """Wildcard: matches every operand value."""

    def matches(self, value: float) -> bool:
        return True

    def __repr__(self):
        return "AnyOperand()"

    def __eq__(self, other):
        return isinstance(other, AnyOperand)

    def __hash__(self):
        return hash("AnyOperand")


@dataclass(frozen=True)
class ExactBits:
    """Bit-exact binary64 operand match (the default: defects observed in
    the field repeat on exact input patterns, not neighborhoods)."""

    bits: int

    def matches(self, value: float) -> bool:
        return float_to_bits(value) == self.bits


@dataclass(frozen=True)
class Interval:
    """Closed-interval operand match, for broad degradation-style specs."""

    lo: float
    hi: float

    def matches(self, value: float) -> bool:
        return self.lo <= value <= self.hi


OperandMatch = Union[AnyOperand, ExactBits, Interval]
# One position in the operand list: a tuple of alternatives (OR).
OperandPattern = tuple


@dataclass(frozen=True)
class OnsetSchedule:
    """When a defect is active, parameterized by defect class.

    DEVICE_ERROR is active from t=0.  EARLY_LIFE activates permanently at
    activation_hours.  WEAROUT activates permanently after
    rated_life_hours.  DEGRADATION fires with probability
    p(t) = min(1, t / ramp_hours), sampled deterministically per
    (spec id, one-hour time bucket).
    """

    defect_class: DefectClass
    activation_hours: float = 0.0
    ramp_hours: float = 0.0
    rated_life_hours: float = 0.0

    def __post_init__(self):
        if self.defect_class is DefectClass.DEGRADATION and self.ramp_hours <= 0:
            raise ValueError("DEGRADATION onset requires ramp_hours > 0")
        if self.defect_class is DefectClass.WEAROUT and self.rated_life_hours <= 0:
            raise ValueError("WEAROUT onset requires rated_life_hours > 0")


DEGRADATION_BUCKET_HOURS = 1.0


def onset_active(spec: "FaultSpec", t: float) -> bool:
    """Whether the spec's defect is active at simulated time t (hours)."""
    sched = spec.onset
    cls = sched.defect_class
    if cls is DefectClass.DEVICE_ERROR:
        return True
    if cls is DefectClass.EARLY_LIFE:
        return t >= sched.activation_hours
    if cls is DefectClass.WEAROUT:
        return t > sched.rated_life_hours
    # DEGRADATION: deterministic draw per (spec id, time bucket).
    p = min(1.0, t / sched.ramp_hours)
    bucket = int(t // DEGRADATION_BUCKET_HOURS)
    _, z = splitmix64((fnv1a64(spec.id.encode("utf-8")) ^ bucket) & MASK64)
    return (z >> 11) * 2.0**-53 < p


@dataclass(frozen=True)
class FaultSpec:
    """One deterministic, core-scoped, data-dependent corruption rule."""

    id: str
    defect_class: DefectClass
    host_pattern: str
    core: Optional[int]  # None = every core on matching hosts
    op_kind: OpKind
    operands: tuple  # per-position tuples of OperandMatch alternatives
    transform: CorruptionTransform
    onset: OnsetSchedule = field(default=None)
    broad: bool = False

    def __post_init__(self):
        if self.onset is None:
            object.__setattr__(self, "onset", OnsetSchedule(self.defect_class))
        if self.onset.defect_class is not self.defect_class:
            raise ValueError("onset schedule class %s does not match spec class %s"
                             % (self.onset.defect_class.value, self.defect_class.value))
        if not self.operands and not self.broad:
            raise ValueError(
                "spec %r has an empty operand match list; set broad=true to "
                "confirm it should fire on every %s op" % (self.id, self.op_kind.value)
            )

    def scope_matches(self, core: CoreId) -> bool:
        if not fnmatch.fnmatchcase(core.host, self.host_pattern):
            return False
        return self.core is None or core.core == self.core

    def trigger_matches(self, op: PrimOp) -> bool:
        if op.kind is not self.op_kind:
            return False
        if not self.operands:  # broad spec
            return True
        if len(self.operands) != len(op.operands):
            return False
        for alternatives, value in zip(self.operands, op.operands):
            if not any(alt.matches(value) for alt in alternatives):
                return False
        return True


def trigger_eval(spec: FaultSpec, op: PrimOp, t: float) -> bool:
    """True iff the spec corrupts this op at simulated time t."""
    return spec.scope_matches(op.core) and onset_active(spec, t) and spec.trigger_matches(op)


# ---------------------------------------------------------------------------
# Faulty backend


class FaultyBackend:
    """Delegates every op to the reference semantics, then applies every
    matching spec's transform to the result, in spec list order.

    Same session contract as the reference backend.  ``time_hours`` is the
    simulated age used for onset evaluation; scans and simulations set it
    before issuing ops.
    """

    def __init__(self, reference: ReferenceBackend, specs: Sequence[FaultSpec], time_hours: float = 0.0):
        ids = [s.id for s in specs]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ValueError("duplicate fault spec ids: %s" % ", ".join(sorted(dupes)))
        self.reference = reference
        self.specs = tuple(specs)
        self.time_hours = time_hours
        self._seq = 0

    def execute(self, kind: OpKind, operands: Sequence[float], core: CoreId) -> tuple[PrimOp, float]:
        self._seq += 1
        op = PrimOp(kind=kind, operands=tuple(operands), core=core, seq=self._seq)
        value = self.reference.compute(op)
        for spec in self.specs:
            if trigger_eval(spec, op, self.time_hours):
                value = spec.transform.apply(value, op)
        return op, value


def inject(reference_backend: ReferenceBackend, specs: Sequence[FaultSpec],
           time_hours: float = 0.0) -> FaultyBackend:
    """Wrap a reference backend with the given fault specs."""
    return FaultyBackend(reference_backend, specs, time_hours)


# ---------------------------------------------------------------------------
# Fault-spec file format (grammar in docs/file_formats.md)


class FaultSpecError(ValueError):
    """Schema violation in a fault-spec document, with line/field context."""

    def __init__(self, line: int, fieldname: str, message: str):
        self.line = line
        self.field = fieldname
        super().__init__("line %d, field %r: %s" % (line, fieldname, message))


_REQUIRED_KEYS = ("class", "op_kind", "transform")
_KNOWN_KEYS = {
    "class", "host_pattern", "core", "op_kind", "operands", "broad",
    "transform", "transform_params",
    "activation_hours", "ramp_hours", "rated_life_hours",
}


def _parse_float_literal(text: str, line: int, fieldname: str) -> float:
    if text.lower().startswith("0x"):
        try:
            bits = int(text, 16)
        except ValueError:
            raise FaultSpecError(line, fieldname, "bad hex bit pattern %r" % text)
        if bits > MASK64:
            raise FaultSpecError(line, fieldname, "bit pattern wider than 64 bits: %r" % text)
        return bits_to_float(bits)
    try:
        return float(text)
    except ValueError:
        raise FaultSpecError(line, fieldname, "bad numeric literal %r" % text)


def _parse_operand_position(token: str, line: int) -> tuple:
    alts = []
    for alt in token.split("|"):
        alt = alt.strip()
        if alt == "*":
            alts.append(AnyOperand())
        elif alt.startswith("[") and alt.endswith("]"):
            parts = alt[1:-1].split(",")
            if len(parts) != 2:
                raise FaultSpecError(line, "operands", "interval needs two bounds: %r" % alt)
            lo = _parse_float_literal(parts[0].strip(), line, "operands")
            hi = _parse_float_literal(parts[1].strip(), line, "operands")
            if not lo <= hi:
                raise FaultSpecError(line, "operands", "empty interval %r" % alt)
            alts.append(Interval(lo, hi))
        elif alt.lower().startswith("0x"):
            try:
                bits = int(alt, 16)
            except ValueError:
                raise FaultSpecError(line, "operands", "bad hex bit pattern %r" % alt)
            alts.append(ExactBits(bits & MASK64))
        else:
            raise FaultSpecError(
                line, "operands",
                "operand alternative must be 0x<bits>, [lo,hi] or *: %r" % alt,
            )
    return tuple(alts)


def _parse_transform(kind_text: str, params_text: str, line: int) -> CorruptionTransform:
    try:
        kind = TransformKind(kind_text)
    except ValueError:
        raise FaultSpecError(line, "transform", "unknown transform %r" % kind_text)
    params = {}
    for item in params_text.split():
        if ":" not in item:
            raise FaultSpecError(line, "transform_params", "expected key:value, got %r" % item)
        k, v = item.split(":", 1)
        params[k] = v
    try:
        if kind is TransformKind.BITFLIP or kind is TransformKind.EXPONENT_FLIP:
            return CorruptionTransform(kind, bit=int(params.pop("bit")))
        if kind is TransformKind.SET_CONSTANT:
            return CorruptionTransform(
                kind, constant=_parse_float_literal(params.pop("constant"), line, "transform_params")
            )
        return CorruptionTransform(
            kind,
            table_index=int(params.pop("index")),
            table_value=_parse_float_literal(params.pop("value"), line, "transform_params"),
        )
    except KeyError as exc:
        raise FaultSpecError(line, "transform_params", "missing parameter %s for %s" % (exc, kind.value))
    except ValueError as exc:
        raise FaultSpecError(line, "transform_params", str(exc))


def load_fault_specs(text: str) -> list[FaultSpec]:
    """Parse a fault-spec document.  Total: any violation raises
    :class:`FaultSpecError` and nothing is returned partially."""
    sections: list[tuple[int, str, dict]] = []
    current: Optional[dict] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            header = line[1:-1].strip()
            if not header.startswith("spec ") or not header[5:].strip():
                raise FaultSpecError(lineno, "section", "section header must be [spec <id>]: %r" % raw.strip())
            current = {}
            sections.append((lineno, header[5:].strip(), current))
            continue
        if "=" not in line:
            raise FaultSpecError(lineno, "line", "expected key = value, got %r" % raw.strip())
        if current is None:
            raise FaultSpecError(lineno, "section", "key outside any [spec ...] section")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise FaultSpecError(lineno, key, "unknown key")
        if key in current:
            raise FaultSpecError(lineno, key, "duplicate key in section")
        current[key] = (lineno, value)

    specs = []
    for header_line, spec_id, fields in sections:
        for required in _REQUIRED_KEYS:
            if required not in fields:
                raise FaultSpecError(header_line, required, "missing required key in [spec %s]" % spec_id)

        def get(key: str, default: Optional[str] = None) -> tuple[int, Optional[str]]:
            return fields.get(key, (header_line, default))

        line, cls_text = get("class")
        try:
            defect_class = DefectClass(cls_text)
        except ValueError:
            raise FaultSpecError(line, "class", "unknown defect class %r" % cls_text)

        line, core_text = get("core", "*")
        if core_text == "*":
            core = None
        else:
            try:
                core = int(core_text)
            except ValueError:
                raise FaultSpecError(line, "core", "core must be an integer or *: %r" % core_text)
            if core < 0:
                raise FaultSpecError(line, "core", "core index must be non-negative")

        line, op_text = get("op_kind")
        try:
            op_kind = OpKind(op_text)
        except ValueError:
            raise FaultSpecError(line, "op_kind", "unknown op kind %r" % op_text)

        line, operands_text = get("operands", "")
        operands = tuple(
            _parse_operand_position(token, line) for token in operands_text.split()
        )

        line, broad_text = get("broad", "false")
        if broad_text.lower() not in ("true", "false"):
            raise FaultSpecError(line, "broad", "broad must be true or false")
        broad = broad_text.lower() == "true"

        t_line, transform_text = get("transform")
        p_line, params_text = get("transform_params", "")
        transform = _parse_transform(transform_text, params_text, p_line if params_text else t_line)

        def get_float(key: str) -> float:
            line, text = get(key, "0")
            return _parse_float_literal(text, line, key)

        onset = None
        try:
            onset = OnsetSchedule(
                defect_class,
                activation_hours=get_float("activation_hours"),
                ramp_hours=get_float("ramp_hours"),
                rated_life_hours=get_float("rated_life_hours"),
            )
            spec = FaultSpec(
                id=spec_id,
                defect_class=defect_class,
                host_pattern=get("host_pattern", "*")[1],
                core=core,
                op_kind=op_kind,
                operands=operands,
                transform=transform,
                onset=onset,
                broad=broad,
            )
        except ValueError as exc:
            if isinstance(exc, FaultSpecError):
                raise
            raise FaultSpecError(header_line, "spec", str(exc))
        specs.append(spec)

    seen = {}
    for (header_line, spec_id, _), spec in zip(sections, specs):
        if spec_id in seen:
            raise FaultSpecError(header_line, "id", "duplicate spec id %r" % spec_id)
        seen[spec_id] = spec
    return specs


def load_fault_spec_file(path) -> list[FaultSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        return load_fault_specs(fh.read())


BUNDLED_SPECS = ("core59.spec", "errors_table.spec")


def load_bundled_specs(name: str) -> list[FaultSpec]:
    """Load one of the spec files shipped with the package."""
    if name not in BUNDLED_SPECS:
        raise ValueError("no bundled spec file %r (have: %s)" % (name, ", ".join(BUNDLED_SPECS)))
    text = resources.files("sdcscreen").joinpath("specs").joinpath(name).read_text(encoding="utf-8")
    return load_fault_specs(text)
