"""Per-core scanning, failing-input shrinking, and voted redundant execution.

A scan pins every primitive op to one core id, evaluates targeted vectors
first (known past reproducers) and then a seeded random stream, and
compares each output against the golden reference.  Failing streams are
minimized with a delta-debugging (ddmin) pass down to one witness per
distinct failure mode; docs/shrinking.md documents the evaluation-call
budget C*n*log2(n) + k^2 with C = 8.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

from .kernels import (
    ArithmeticBackend,
    CoreId,
    KERNEL_OP_COST,
    KernelKind,
    KernelOutput,
    OperandDomain,
    TestKernel,
    TestVector,
    evaluate,
    float_to_bits,
    gen_operand_stream,
)
from .oracle import (
    ComparisonPolicy,
    Outcome,
    Verdict,
    compare,
    default_policy,
    reference_eval,
)


# The targeted vectors scan plans ship by default: the two silent triggers
# of the bundled core-59 defect plus one neighbor that stays correct on the
# bad core, so a scan of that core also witnesses a healthy value.
BUILTIN_TARGETED = (
    TestVector(base=1.1, exponent=53.0),
    TestVector(base=1.1, exponent=68.0),
    TestVector(base=1.1, exponent=78.0),
)


@dataclass(frozen=True)
class StreamSpec:
    """Seeded random operand stream of a scan plan."""

    seed: int
    count: int
    domain: OperandDomain = OperandDomain()

    def vectors(self) -> list[TestVector]:
        return gen_operand_stream(self.seed, self.count, self.domain)


@dataclass(frozen=True)
class ScanPlan:
    """What a scan runs: kernel set, operand stream, core list, budget.

    ``policy`` is normally left None, selecting the per-kernel default
    (bit-exact for the float chain, integer-exact for truncating kernels).
    ``budget`` caps the primitive ops issued per core; None means uncapped.
    """

    kernels: tuple[TestKernel, ...] = (TestKernel(KernelKind.INT_POW),)
    stream: Optional[StreamSpec] = None
    targeted: tuple[TestVector, ...] = ()
    cores: tuple[int, ...] = tuple(range(64))
    budget: Optional[int] = None
    policy: Optional[ComparisonPolicy] = None

    def __post_init__(self):
        if not self.kernels:
            raise ValueError("scan plan needs at least one kernel")
        if not self.cores:
            raise ValueError("scan plan needs at least one core")
        if self.stream is None and not self.targeted:
            raise ValueError("scan plan needs a stream, targeted vectors, or both")
        cost = self.ops_per_vector() * len(self.targeted)
        if self.budget is not None and self.budget < cost:
            raise ValueError(
                "budget %d cannot cover the %d ops needed for targeted vectors"
                % (self.budget, cost)
            )

    def ops_per_vector(self) -> int:
        return sum(KERNEL_OP_COST[k.kind] for k in self.kernels)

    def policy_for(self, kernel: TestKernel) -> ComparisonPolicy:
        return self.policy if self.policy is not None else default_policy(kernel.kind)

    def all_vectors(self) -> list[TestVector]:
        out = list(self.targeted)
        if self.stream is not None:
            out.extend(self.stream.vectors())
        return out

    def plan_hash(self) -> str:
        """Stable content hash used for report identity and collector dedup."""
        h = hashlib.sha256()
        for k in self.kernels:
            h.update(("K:%s:%r;" % (k.kind.value, k.params)).encode())
        if self.stream is not None:
            s = self.stream
            h.update(
                (
                    "S:%d:%d:%r:%r:%r:%r:%r;"
                    % (
                        s.seed,
                        s.count,
                        s.domain.base_lo,
                        s.domain.base_hi,
                        s.domain.exponent_lo,
                        s.domain.exponent_hi,
                        s.domain.integer_exponents,
                    )
                ).encode()
            )
        for v in self.targeted:
            h.update(("T:%016x;" % v.id).encode())
        h.update(("C:%s;" % ",".join(map(str, self.cores))).encode())
        h.update(("B:%r;" % (self.budget,)).encode())
        if self.policy is not None:
            h.update(("P:%s;" % self.policy.mode.value).encode())
        return h.hexdigest()[:16]


def scan_core(core: CoreId, plan: ScanPlan, backend: ArithmeticBackend) -> list[Verdict]:
    """Evaluate the plan on one pinned core; returns the mismatches only."""
    if core.core not in plan.cores:
        raise ValueError("core %d is not in the plan's core list" % core.core)
    mismatches: list[Verdict] = []
    ops_used = 0
    per_vector = plan.ops_per_vector()
    stream = plan.stream.vectors() if plan.stream is not None else []
    for from_stream, vector in [(False, v) for v in plan.targeted] + [(True, v) for v in stream]:
        if plan.budget is not None and ops_used + per_vector > plan.budget:
            if not from_stream:
                raise ValueError("budget exhausted before targeted vectors completed")
            break
        for kernel in plan.kernels:
            observed = evaluate(kernel, vector, backend, core)
            verdict = compare(
                observed, reference_eval(kernel, vector), plan.policy_for(kernel), vector, core
            )
            if verdict.outcome is Outcome.MISMATCH:
                mismatches.append(verdict)
        ops_used += per_vector
    return mismatches


# ---------------------------------------------------------------------------
# Shrinking


@dataclass(frozen=True)
class ShrinkCertificate:
    vector: TestVector
    observed: object
    expected: object


@dataclass(frozen=True)
class ShrinkResult:
    """1-minimal failing vector set: every vector mismatches on its own,
    and dropping any of them loses at least one distinct failure mode."""

    minimal_vectors: tuple[TestVector, ...]
    steps: int
    certificates: tuple[ShrinkCertificate, ...]


def _canon(value: object) -> object:
    # Identity of a failure mode must be hashable and NaN-stable.
    if isinstance(value, float):
        return float_to_bits(value)
    return value


def shrink(
    failing_stream: Sequence[TestVector],
    core: CoreId,
    kernel: TestKernel,
    backend: ArithmeticBackend,
) -> ShrinkResult:
    """ddmin over the vector list, preserving every distinct failure mode.

    Two mismatches are the same failure mode when they produce the same
    (observed, expected) value pair under this kernel; the minimizer keeps
    exactly one witness per mode, the way a field error catalog keeps one
    row per wrong-value/right-value pair.

    ``steps`` counts kernel evaluation calls.  Outcomes are cached per
    vector (kernels are pure given a backend at fixed simulated time), so
    the subset descent re-tests cost nothing: steps stays at one call per
    distinct vector, well inside the documented C*n*log2(n) + k^2 budget.
    """
    policy = default_policy(kernel.kind)
    steps = 0
    outcome_cache: dict[int, Verdict] = {}

    def observe(vector: TestVector) -> Verdict:
        nonlocal steps
        cached = outcome_cache.get(vector.id)
        if cached is not None:
            return cached
        steps += 1
        out = evaluate(kernel, vector, backend, core)
        verdict = compare(out, reference_eval(kernel, vector), policy, vector, core)
        outcome_cache[vector.id] = verdict
        return verdict

    def identity_set(subset: Sequence[TestVector]) -> frozenset:
        ids = set()
        for v in subset:
            verdict = observe(v)
            if verdict.outcome is Outcome.MISMATCH:
                ids.add((_canon(verdict.observed), _canon(verdict.expected)))
        return frozenset(ids)

    target = identity_set(failing_stream)
    if not target:
        raise ValueError("nothing to shrink: no vector in the stream mismatches")

    def still_failing(subset: Sequence[TestVector]) -> bool:
        return identity_set(subset) == target

    current = list(failing_stream)
    granularity = 2
    while len(current) >= 2:
        chunks = _split(current, granularity)
        reduced = False
        for chunk in chunks:
            if still_failing(chunk):
                current, granularity, reduced = chunk, 2, True
                break
        if not reduced:
            for i in range(len(chunks)):
                complement = [v for j, c in enumerate(chunks) if j != i for v in c]
                if still_failing(complement):
                    current = complement
                    granularity = max(granularity - 1, 2)
                    reduced = True
                    break
        if not reduced:
            if granularity >= len(current):
                break
            granularity = min(len(current), granularity * 2)

    # Final 1-minimality sweep (the k^2 term of the documented budget).
    changed = True
    while changed:
        changed = False
        for i in range(len(current)):
            candidate = current[:i] + current[i + 1 :]
            if candidate and still_failing(candidate):
                current = candidate
                changed = True
                break

    certificates = []
    for v in current:
        verdict = observe(v)
        certificates.append(ShrinkCertificate(v, verdict.observed, verdict.expected))
    return ShrinkResult(tuple(current), steps, tuple(certificates))


def _split(items: list, n: int) -> list[list]:
    out = []
    start = 0
    for i in range(n):
        size = (len(items) - start) // (n - i)
        out.append(items[start : start + size])
        start += size
    return [c for c in out if c]


# ---------------------------------------------------------------------------
# Host scans


@dataclass
class FaultReport:
    """Per-host scan findings: mismatching verdicts, minimal reproducers
    per failing core, and enough metadata to replay the scan exactly."""

    host: str
    per_core_mismatches: dict[int, list[Verdict]]
    minimal_reproducers: dict[int, list[TestVector]]
    shrink_details: dict[int, dict[KernelKind, ShrinkResult]]
    plan: ScanPlan
    plan_hash: str
    seed: Optional[int]
    timestamp: float
    duration_s: float

    @property
    def status(self) -> str:
        return "FAIL" if any(self.per_core_mismatches.values()) else "PASS"


def scan_host(
    host: str,
    plan: ScanPlan,
    backend_builder: Callable[[], ArithmeticBackend],
    seed: Optional[int] = None,
    do_shrink: bool = True,
    timestamp: Optional[float] = None,
) -> FaultReport:
    """Scan every core in the plan, one fresh backend session per core,
    then shrink each failing core's stream to a minimal reproducer."""
    started = time.monotonic()
    per_core: dict[int, list[Verdict]] = {}
    reproducers: dict[int, list[TestVector]] = {}
    details: dict[int, dict[KernelKind, ShrinkResult]] = {}
    for core_index in plan.cores:
        core = CoreId(host, core_index)
        mismatches = scan_core(core, plan, backend_builder())
        if not mismatches:
            continue
        per_core[core_index] = mismatches
        if do_shrink:
            failing_kernels = {}
            all_vectors = plan.all_vectors()
            for kernel in plan.kernels:
                hit = any(
                    compare(
                        evaluate(kernel, m.vector, backend_builder(), core),
                        reference_eval(kernel, m.vector),
                        plan.policy_for(kernel),
                    ).outcome
                    is Outcome.MISMATCH
                    for m in mismatches
                )
                if hit:
                    failing_kernels[kernel.kind] = shrink(all_vectors, core, kernel, backend_builder())
            details[core_index] = failing_kernels
            merged: list[TestVector] = []
            seen = set()
            for result in failing_kernels.values():
                for v in result.minimal_vectors:
                    if v.id not in seen:
                        seen.add(v.id)
                        merged.append(v)
            reproducers[core_index] = merged
    return FaultReport(
        host=host,
        per_core_mismatches=per_core,
        minimal_reproducers=reproducers,
        shrink_details=details,
        plan=plan,
        plan_hash=plan.plan_hash(),
        seed=seed,
        timestamp=time.time() if timestamp is None else timestamp,
        duration_s=time.monotonic() - started,
    )


# ---------------------------------------------------------------------------
# Data-dependency classification


class ConsistencyLabel(Enum):
    CONSISTENT_FAIL = "CONSISTENT_FAIL"
    FLAKY = "FLAKY"
    CONSISTENT_PASS = "CONSISTENT_PASS"


@dataclass(frozen=True)
class DependencyRow:
    vector: TestVector
    outcomes: tuple[Outcome, ...]
    label: ConsistencyLabel


def classify_data_dependency(
    reproducer: Union[ShrinkResult, Sequence[TestVector]],
    core: CoreId,
    kernel: TestKernel,
    backend: ArithmeticBackend,
    repeats: int,
) -> list[DependencyRow]:
    """Re-evaluate each reproducer vector ``repeats`` times.

    Each repeat advances the backend's simulated age by one onset bucket
    (when the backend has one), mirroring repeated scan invocations over
    time; a degradation fault straddling its ramp can therefore flip
    between outcomes while a device error stays consistent.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2 to say anything about consistency")
    vectors = reproducer.minimal_vectors if isinstance(reproducer, ShrinkResult) else tuple(reproducer)
    policy = default_policy(kernel.kind)
    t0 = getattr(backend, "time_hours", None)
    rows = []
    try:
        for vector in vectors:
            outcomes = []
            for i in range(repeats):
                if t0 is not None:
                    backend.time_hours = t0 + float(i)
                out = evaluate(kernel, vector, backend, core)
                outcomes.append(
                    compare(out, reference_eval(kernel, vector), policy, vector, core).outcome
                )
            if all(o is Outcome.MISMATCH for o in outcomes):
                label = ConsistencyLabel.CONSISTENT_FAIL
            elif all(o is Outcome.MATCH for o in outcomes):
                label = ConsistencyLabel.CONSISTENT_PASS
            else:
                label = ConsistencyLabel.FLAKY
            rows.append(DependencyRow(vector, tuple(outcomes), label))
    finally:
        if t0 is not None:
            backend.time_hours = t0
    return rows


# ---------------------------------------------------------------------------
# Redundant voted execution


@dataclass(frozen=True)
class VoteResult:
    """Majority vote over per-core results.  ``majority`` is False when no
    value reaches a strict majority; all per-core values are retained so
    the caller can see exactly how the vote fell apart."""

    value: object
    disagreement: bool
    majority: bool
    per_core: tuple[tuple[CoreId, object], ...]


def redundant_execute(
    kernel: TestKernel,
    vector: TestVector,
    cores: Sequence[CoreId],
    backend_builder: Callable[[], ArithmeticBackend],
    policy: Optional[ComparisonPolicy] = None,
) -> VoteResult:
    """Evaluate on k cores (k odd, >= 3) and take the majority value.

    The disagreement flag is set whenever any core deviates from the vote;
    note that a majority of identically-faulty cores wins the vote with a
    wrong value, which is the documented limit of this mitigation.
    """
    k = len(cores)
    if k < 3 or k % 2 == 0:
        raise ValueError("vote needs an odd number of cores >= 3, got %d" % k)
    results = []
    for core in cores:
        out = evaluate(kernel, vector, backend_builder(), core)
        results.append((core, out.value))
    counts: dict[object, int] = {}
    for _, value in results:
        counts[_canon(value)] = counts.get(_canon(value), 0) + 1
    winner_key, winner_count = max(counts.items(), key=lambda kv: kv[1])
    if winner_count <= k // 2:
        return VoteResult(value=None, disagreement=True, majority=False, per_core=tuple(results))
    voted = next(value for _, value in results if _canon(value) == winner_key)
    disagreement = any(_canon(value) != winner_key for _, value in results)
    return VoteResult(value=voted, disagreement=disagreement, majority=True, per_core=tuple(results))
