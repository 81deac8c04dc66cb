"""Computation test kernels and the primitive arithmetic backend abstraction.

Every kernel decomposes into a fixed, documented sequence of primitive
operations (see docs/kernel_reference.md for the bit-exact contract) and
routes each primitive through an arithmetic backend.  That indirection is
the whole point: a backend can be the pristine reference implementation or
a deterministic faulty one, and a fault can target any individual step of
a computation without the kernel code knowing.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Protocol, Sequence

MASK64 = 0xFFFFFFFFFFFFFFFF

INT32_MAX = 2**31 - 1
INT32_MIN = -(2**31)


def float_to_bits(x: float) -> int:
    """Raw binary64 representation of ``x`` as an unsigned 64-bit integer."""
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def bits_to_float(b: int) -> float:
    """Inverse of :func:`float_to_bits`."""
    return struct.unpack("<d", struct.pack("<Q", b & MASK64))[0]


def truncate_to_int32(x: float) -> int:
    """Truncate toward zero with JVM double-to-int narrowing semantics.

    NaN maps to 0 and out-of-range values saturate at the int32 bounds, so
    the conversion is total: a corrupted upstream value degrades into a
    wrong number, never into an exception.
    """
    if math.isnan(x):
        return 0
    if x >= INT32_MAX:
        return INT32_MAX
    if x <= INT32_MIN:
        return INT32_MIN
    return math.trunc(x)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output).

    The recurrence is pinned in docs/kernel_reference.md; operand streams
    must be reproducible across implementations, so no library RNG is used.
    """
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z = z ^ (z >> 31)
    return state, z


class SplitMix64:
    """Stateful wrapper around :func:`splitmix64`."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state, z = splitmix64(self._state)
        return z

    def next_unit(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_int(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], inclusive."""
        return lo + self.next_u64() % (hi - lo + 1)


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, order=True)
class CoreId:
    """One logical CPU core: a host identifier plus a core index."""

    host: str
    core: int

    def __post_init__(self):
        if self.core < 0:
            raise ValueError("core index must be non-negative, got %d" % self.core)

    def __str__(self) -> str:
        return f"{self.host}/core{self.core}"


class OpKind(Enum):
    LOG2 = "LOG2"
    EXP2 = "EXP2"
    MUL = "MUL"
    ADD = "ADD"
    TRUNC_TO_INT = "TRUNC_TO_INT"
    LUT_SQUARE = "LUT_SQUARE"
    CHECKSUM = "CHECKSUM"


# Fixed arity per op kind; CHECKSUM is variadic (None).
OP_ARITY: dict[OpKind, Optional[int]] = {
    OpKind.LOG2: 1,
    OpKind.EXP2: 1,
    OpKind.MUL: 2,
    OpKind.ADD: 2,
    OpKind.TRUNC_TO_INT: 1,
    OpKind.LUT_SQUARE: 1,
    OpKind.CHECKSUM: None,
}


@dataclass(frozen=True)
class PrimOp:
    """One primitive arithmetic event, the unit faults can intercept."""

    kind: OpKind
    operands: tuple[float, ...]
    core: CoreId
    seq: int

    def __post_init__(self):
        arity = OP_ARITY[self.kind]
        if arity is not None and len(self.operands) != arity:
            raise ValueError(
                "%s takes %d operand(s), got %d" % (self.kind.value, arity, len(self.operands))
            )


class ArithmeticBackend(Protocol):
    """Executes primitive operations on behalf of a kernel.

    A backend instance is one session: its event counter is unsynchronized,
    so an instance must not be shared between threads running concurrently.
    """

    def execute(self, kind: OpKind, operands: Sequence[float], core: CoreId) -> tuple[PrimOp, float]:
        """Stamp a PrimOp with this session's next seq and compute it."""
        ...


class KernelKind(Enum):
    INT_POW = "INT_POW"
    POW_CHAIN = "POW_CHAIN"
    SQUARE_LUT = "SQUARE_LUT"
    DECOMPRESS_SIZE = "DECOMPRESS_SIZE"
    ROUNDTRIP = "ROUNDTRIP"


# Primitive ops issued per test vector, used for scan budget accounting.
KERNEL_OP_COST: dict[KernelKind, int] = {
    KernelKind.POW_CHAIN: 3,
    KernelKind.INT_POW: 4,
    KernelKind.SQUARE_LUT: 1,
    KernelKind.DECOMPRESS_SIZE: 4,
    KernelKind.ROUNDTRIP: 2,
}


@dataclass(frozen=True)
class TestKernel:
    """A computation test: the kind pins the exact primitive-op sequence."""

    kind: KernelKind
    params: tuple = ()


@dataclass(frozen=True)
class TestVector:
    """Operands for one kernel evaluation.

    The id is always derived from the field values (never supplied), so
    equal operands give equal ids across processes and implementations.
    """

    base: float
    exponent: float
    payload: Optional[bytes] = None
    id: int = field(init=False)

    def __post_init__(self):
        blob = struct.pack("<QQ", float_to_bits(self.base), float_to_bits(self.exponent))
        if self.payload is None:
            blob += b"\x00"
        else:
            blob += b"\x01" + self.payload
        object.__setattr__(self, "id", fnv1a64(blob))


class Status(Enum):
    OK = "OK"
    DOMAIN_ERROR = "DOMAIN_ERROR"


@dataclass(frozen=True)
class KernelOutput:
    """Result of one kernel evaluation plus its primitive-step trace."""

    value: object  # float for POW_CHAIN, int for truncating kernels, bool for ROUNDTRIP
    trace: tuple[tuple[PrimOp, float], ...]
    status: Status = Status.OK


def _domain_error() -> KernelOutput:
    return KernelOutput(value=None, trace=(), status=Status.DOMAIN_ERROR)


# ---------------------------------------------------------------------------
# Kernels


def pow_via_log2(x: float, y: float, backend: ArithmeticBackend, core: CoreId) -> KernelOutput:
    """Power chain: 2^(y * log2(x)), rounded to binary64 after every step.

    Evaluation order is fixed as LOG2 -> MUL -> EXP2; the value is the
    binary64 produced by the final EXP2 step, not a correctly rounded
    power of x.
    """
    if math.isnan(x) or math.isnan(y) or x <= 0.0 or math.isinf(y):
        return _domain_error()
    op1, r1 = backend.execute(OpKind.LOG2, (x,), core)
    op2, r2 = backend.execute(OpKind.MUL, (y, r1), core)
    op3, r3 = backend.execute(OpKind.EXP2, (r2,), core)
    return KernelOutput(value=r3, trace=((op1, r1), (op2, r2), (op3, r3)))


def int_pow_trunc(x: float, y: float, backend: ArithmeticBackend, core: CoreId) -> KernelOutput:
    """pow_via_log2 followed by a TRUNC_TO_INT step routed through the backend."""
    chain = pow_via_log2(x, y, backend, core)
    if chain.status is not Status.OK:
        return chain
    op4, r4 = backend.execute(OpKind.TRUNC_TO_INT, (chain.value,), core)
    # r4 is an exact integer-valued binary64 unless a fault corrupted it;
    # the final narrowing stays total either way.
    return KernelOutput(value=truncate_to_int32(r4), trace=chain.trace + ((op4, r4),))


SQUARE_TABLE: tuple[int, ...] = tuple(i * i for i in range(256))


def square_lut(x: int, backend: ArithmeticBackend, core: CoreId) -> KernelOutput:
    """Table-lookup squaring over [0, 255]; the read is one LUT_SQUARE op."""
    if not isinstance(x, int) or not 0 <= x <= 255:
        raise ValueError("square_lut input must be an integer in [0, 255], got %r" % (x,))
    op, r = backend.execute(OpKind.LUT_SQUARE, (float(x),), core)
    return KernelOutput(value=truncate_to_int32(r), trace=((op, r),))


def decompress_size(
    base: float, level: float, backend: ArithmeticBackend, core: CoreId
) -> KernelOutput:
    """Decompressed-size computation of the storage pipeline model.

    The size of an expanded file is the truncated power of the header
    fields, so a corrupted power silently yields a zero-sized "file".
    """
    return int_pow_trunc(base, level, backend, core)


def roundtrip_check(payload: bytes, backend: ArithmeticBackend, core: CoreId) -> KernelOutput:
    """Compress + decompress the payload, then compare checksums.

    Both CHECKSUM computations are routed through the backend, so a fault
    on the checksum path makes a lossless round trip look corrupt (or a
    corrupt one look clean).  Passes iff the two checksums are bit-equal.
    """
    if len(payload) == 0:
        raise ValueError("roundtrip_check requires a non-empty payload")
    restored = rle_decompress(rle_compress(payload))
    op1, c_in = backend.execute(OpKind.CHECKSUM, tuple(float(b) for b in payload), core)
    op2, c_out = backend.execute(OpKind.CHECKSUM, tuple(float(b) for b in restored), core)
    passed = float_to_bits(c_in) == float_to_bits(c_out)
    return KernelOutput(value=passed, trace=((op1, c_in), (op2, c_out)))


def evaluate(
    kernel: TestKernel, vector: TestVector, backend: ArithmeticBackend, core: CoreId
) -> KernelOutput:
    """Run one kernel on one test vector. Dispatch table for scan plans."""
    kind = kernel.kind
    if kind is KernelKind.POW_CHAIN:
        return pow_via_log2(vector.base, vector.exponent, backend, core)
    if kind is KernelKind.INT_POW:
        return int_pow_trunc(vector.base, vector.exponent, backend, core)
    if kind is KernelKind.DECOMPRESS_SIZE:
        return decompress_size(vector.base, vector.exponent, backend, core)
    if kind is KernelKind.SQUARE_LUT:
        x = vector.base
        if not (x.is_integer() and 0.0 <= x <= 255.0):
            return _domain_error()
        return square_lut(int(x), backend, core)
    if kind is KernelKind.ROUNDTRIP:
        payload = vector.payload if vector.payload is not None else derive_payload(vector.id)
        return roundtrip_check(payload, backend, core)
    raise ValueError("unknown kernel kind %r" % (kind,))


# ---------------------------------------------------------------------------
# Deterministic operand streams


@dataclass(frozen=True)
class OperandDomain:
    """Value ranges for generated test vectors."""

    base_lo: float = 1.0
    base_hi: float = 2.0
    exponent_lo: float = -128.0
    exponent_hi: float = 128.0
    integer_exponents: bool = True

    def __post_init__(self):
        if not (self.base_lo <= self.base_hi) or not (self.exponent_lo <= self.exponent_hi):
            raise ValueError("empty operand domain: %r" % (self,))
        if self.integer_exponents and math.ceil(self.exponent_lo) > math.floor(self.exponent_hi):
            raise ValueError("no integers in exponent range [%r, %r]" % (self.exponent_lo, self.exponent_hi))


DEFAULT_DOMAIN = OperandDomain()


def gen_operand_stream(seed: int, count: int, domain: OperandDomain = DEFAULT_DOMAIN) -> list[TestVector]:
    """Deterministic pseudo-random vector stream.

    Identical (seed, count, domain) always yields an identical list; the
    draw order is base then exponent, one splitmix64 output each.
    """
    if count < 1:
        raise ValueError("count must be >= 1, got %d" % count)
    rng = SplitMix64(seed)
    out = []
    for _ in range(count):
        base = domain.base_lo + rng.next_unit() * (domain.base_hi - domain.base_lo)
        if domain.integer_exponents:
            lo = math.ceil(domain.exponent_lo)
            hi = math.floor(domain.exponent_hi)
            exponent = float(rng.next_int(lo, hi))
        else:
            exponent = domain.exponent_lo + rng.next_unit() * (domain.exponent_hi - domain.exponent_lo)
        out.append(TestVector(base=base, exponent=exponent))
    return out


def derive_payload(vector_id: int, max_len: int = 64) -> bytes:
    """Deterministic payload for ROUNDTRIP vectors that carry none."""
    rng = SplitMix64(vector_id)
    length = 1 + rng.next_u64() % max_len
    return bytes(rng.next_u64() & 0xFF for _ in range(length))


# ---------------------------------------------------------------------------
# Bundled run-length codec (order-0) with FNV-1a checksums


def rle_compress(data: bytes) -> bytes:
    """Run-length encode as (count, byte) pairs, runs capped at 255."""
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        run = 1
        while i + run < n and data[i + run] == b and run < 255:
            run += 1
        out.append(run)
        out.append(b)
        i += run
    return bytes(out)


def rle_decompress(data: bytes) -> bytes:
    if len(data) % 2 != 0:
        raise ValueError("truncated run-length stream (odd length %d)" % len(data))
    out = bytearray()
    for i in range(0, len(data), 2):
        run, b = data[i], data[i + 1]
        if run == 0:
            raise ValueError("zero-length run at offset %d" % i)
        out.extend(bytes([b]) * run)
    return bytes(out)
