"""Discrete-event simulation of a host fleet with a defective subpopulation.

Three detection scheduling strategies are modeled over a simulated-hours
clock: scanning hosts opportunistically while they sit in maintenance or
provisioning states, pulling every host out of production on a fixed
period, and interleaving small test quanta with production work under a
compute overhead budget.  The simulator also runs the silent
decompression workload that made this class of defect visible in the
first place: a corrupted size computation quietly drops files without a
single error event.

Everything is driven by splitmix64 draws from the config seed; identical
configs replay to identical event logs and metrics.
"""

from __future__ import annotations

import dataclasses
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

from .detector import BUILTIN_TARGETED, FaultReport, ScanPlan, scan_host
from .faultsim import DefectClass, FaultSpec, inject
from .kernels import (
    CoreId,
    KernelKind,
    SplitMix64,
    TestKernel,
    TestVector,
    evaluate,
    fnv1a64,
)
from .oracle import ReferenceBackend


class SchedulingMode(Enum):
    OPPORTUNISTIC = "OPPORTUNISTIC"
    PERIODIC = "PERIODIC"
    PRODUCTION_FRIENDLY = "PRODUCTION_FRIENDLY"


class HostPhase(Enum):
    PRODUCTION = "PRODUCTION"
    MAINTENANCE = "MAINTENANCE"
    PROVISIONING = "PROVISIONING"
    OUT_FOR_TEST = "OUT_FOR_TEST"


@dataclass
class HostState:
    id: str
    index: int
    phase: HostPhase = HostPhase.PRODUCTION
    specs: tuple[FaultSpec, ...] = ()
    age_hours: float = 0.0
    scan_history: list[float] = field(default_factory=list)
    detected_at: Optional[float] = None

    @property
    def defective(self) -> bool:
        return bool(self.specs)


@dataclass(frozen=True)
class FleetConfig:
    hosts: int = 1000
    cores_per_host: int = 64
    defect_rate: float = 0.001
    fault_library: tuple[FaultSpec, ...] = ()
    maintenance_rate: float = 0.1  # mean maintenance events per host per day
    workload_overhead_budget: float = 0.01  # fraction of compute, PRODUCTION_FRIENDLY
    mode: SchedulingMode = SchedulingMode.PERIODIC
    period_days: int = 15
    horizon_days: int = 30
    seed: int = 0
    scan_plan: Optional[ScanPlan] = None
    scan_duration_hours: float = 1.0
    maintenance_duration_hours: float = 2.0
    files_per_host_per_day: int = 0
    header_pool_size: int = 32

    def __post_init__(self):
        if not 0.0 <= self.defect_rate <= 1.0:
            raise ValueError("defect_rate must be in [0, 1], got %r" % (self.defect_rate,))
        if self.mode is SchedulingMode.PERIODIC and self.period_days < 1:
            raise ValueError("PERIODIC mode needs period_days >= 1")
        if self.mode is SchedulingMode.PRODUCTION_FRIENDLY and not 0.0 < self.workload_overhead_budget <= 1.0:
            raise ValueError("PRODUCTION_FRIENDLY budget must be in (0, 1]")
        if self.hosts < 1 or self.cores_per_host < 1:
            raise ValueError("fleet needs at least one host and one core per host")

    def effective_plan(self) -> ScanPlan:
        if self.scan_plan is not None:
            return self.scan_plan
        return ScanPlan(
            kernels=(TestKernel(KernelKind.INT_POW),),
            stream=None,
            targeted=BUILTIN_TARGETED,
            cores=tuple(range(self.cores_per_host)),
        )


@dataclass(frozen=True)
class AppWorkloadResult:
    """Outcome of one decompression batch.  Dropping a file emits nothing:
    the zero-size check simply skips the write, so error_events_emitted
    stays 0 for the modeled fault by construction."""

    files_submitted: int
    files_written: int
    files_silently_dropped: int
    error_events_emitted: int = 0

    def __post_init__(self):
        if self.files_submitted != self.files_written + self.files_silently_dropped:
            raise ValueError("file accounting broken: %r" % (self,))


@dataclass(frozen=True)
class CoverageMetrics:
    hosts: int
    defective: int
    detected: int
    scanned_fraction: float
    time_to_detect: dict  # host id -> hours since defect onset; inf if never
    production_time_lost_hours: float
    overhead_fraction: float
    silent_loss: int
    files_submitted: int
    files_written: int
    error_events: int

    def to_payload(self) -> dict:
        ttd = {h: ("inf" if math.isinf(v) else v) for h, v in sorted(self.time_to_detect.items())}
        return {
            "hosts": self.hosts,
            "defective": self.defective,
            "detected": self.detected,
            "scanned_fraction": self.scanned_fraction,
            "time_to_detect": ttd,
            "production_time_lost_hours": self.production_time_lost_hours,
            "overhead_fraction": self.overhead_fraction,
            "silent_loss": self.silent_loss,
            "files_submitted": self.files_submitted,
            "files_written": self.files_written,
            "error_events": self.error_events,
        }


@dataclass(frozen=True)
class SimEvent:
    t_hours: float
    kind: str
    host: str
    payload: dict

    def to_payload(self) -> dict:
        return {"t_hours": self.t_hours, "event": self.kind, "host": self.host, **self.payload}


@dataclass
class Fleet:
    config: FleetConfig
    hosts: list[HostState]

    @property
    def defective_hosts(self) -> list[HostState]:
        return [h for h in self.hosts if h.defective]


def _host_rng(seed: int, host_id: str, stream: str) -> SplitMix64:
    return SplitMix64(seed ^ fnv1a64(("%s:%s" % (stream, host_id)).encode("utf-8")))


def build_fleet(config: FleetConfig) -> Fleet:
    """Deterministic fleet: the defective subpopulation is an exact-count
    seeded draw (ceil(hosts * defect_rate)), and each defective host gets
    one library spec rebound to a seeded core index."""
    width = max(4, len(str(config.hosts - 1)))
    hosts = [HostState(id="host-%0*d" % (width, i), index=i) for i in range(config.hosts)]
    n_defective = 0 if config.defect_rate == 0 else math.ceil(config.hosts * config.defect_rate)
    n_defective = min(n_defective, config.hosts)
    if n_defective and not config.fault_library:
        raise ValueError("defect_rate > 0 requires a non-empty fault_library")
    if n_defective:
        rng = SplitMix64(config.seed ^ fnv1a64(b"defect-draw"))
        order = list(range(config.hosts))
        for i in range(config.hosts - 1, 0, -1):  # Fisher-Yates
            j = rng.next_int(0, i)
            order[i], order[j] = order[j], order[i]
        for k, host_index in enumerate(sorted(order[:n_defective])):
            host = hosts[host_index]
            template = config.fault_library[k % len(config.fault_library)]
            core = rng.next_int(0, config.cores_per_host - 1)
            host.specs = (
                dataclasses.replace(template, id="%s/%s" % (template.id, host.id), core=core),
            )
    return Fleet(config=config, hosts=hosts)


def _defect_onset_hours(spec: FaultSpec) -> float:
    if spec.defect_class is DefectClass.EARLY_LIFE:
        return spec.onset.activation_hours
    if spec.defect_class is DefectClass.WEAROUT:
        return spec.onset.rated_life_hours
    return 0.0


def app_workload_decompression(
    host: str,
    files: Sequence[TestVector],
    backend,
    cores_per_host: int = 64,
    seed: int = 0,
) -> AppWorkloadResult:
    """Run the decompression pipeline model over a file batch.

    Every file's size computation lands on a seeded pseudo-random core of
    the host (the workload is not pinned), so a single-core defect shows
    up only when the draw happens to land on the bad core: the sporadic
    behavior is emergent, not scripted.  Files whose computed size is zero
    are skipped silently; nothing in this pipeline can fail loudly.
    """
    if not files:
        raise ValueError("file batch must be non-empty")
    rng = _host_rng(seed, host, "app-core")
    kernel = TestKernel(KernelKind.DECOMPRESS_SIZE)
    written = 0
    dropped = 0
    for header in files:
        core = CoreId(host, rng.next_int(0, cores_per_host - 1))
        size = evaluate(kernel, header, backend, core).value
        if size is not None and size > 0:
            written += 1
        else:
            dropped += 1
    return AppWorkloadResult(
        files_submitted=len(files),
        files_written=written,
        files_silently_dropped=dropped,
        error_events_emitted=0,
    )


def _build_header_pool(config: FleetConfig) -> list[TestVector]:
    """Fixed header pool for the application workload: seeded in-domain
    headers (positive exponents, so a healthy size is always >= 1) plus
    the builtin trigger headers so the defect is actually reachable."""
    rng = SplitMix64(config.seed ^ fnv1a64(b"header-pool"))
    pool = [TestVector(base=1.1, exponent=53.0), TestVector(base=1.1, exponent=68.0)]
    while len(pool) < config.header_pool_size:
        base = 1.0 + rng.next_unit() * 0.5
        exponent = float(rng.next_int(0, 60))
        pool.append(TestVector(base=base, exponent=exponent))
    return pool


# Event priorities: deterministic tiebreak when several land on one hour.
_PRIO_MAINT_START = 0
_PRIO_SCAN = 1
_PRIO_QUANTUM = 2
_PRIO_MAINT_END = 3
_PRIO_APP = 4


def run_simulation(fleet: Fleet, config: Optional[FleetConfig] = None) -> tuple[CoverageMetrics, list[SimEvent]]:
    """Advance the fleet over the horizon and measure detection outcomes.

    The event queue is a deterministic heap keyed by (time, priority,
    sequence); scans execute per the configured mode, detected hosts are
    quarantined (no further scans or app batches), and every observation
    lands in the returned event log.
    """
    cfg = config if config is not None else fleet.config
    horizon_h = cfg.horizon_days * 24.0
    plan = cfg.effective_plan()
    plan_hash = plan.plan_hash()
    events: list[SimEvent] = []
    queue: list[tuple[float, int, int, str, int, dict]] = []
    counter = 0

    def push(t: float, prio: int, action: str, host_index: int, payload: dict):
        nonlocal counter
        heapq.heappush(queue, (t, prio, counter, action, host_index, payload))
        counter += 1

    # --- schedule per mode
    period_h = cfg.period_days * 24.0
    if cfg.mode is SchedulingMode.PERIODIC:
        for host in fleet.hosts:
            stagger = host.index % max(1, int(period_h))
            t = float(stagger)
            while t < horizon_h:
                push(t, _PRIO_SCAN, "scan", host.index, {})
                t += period_h
    elif cfg.mode is SchedulingMode.OPPORTUNISTIC:
        rate_per_hour = cfg.maintenance_rate / 24.0
        for host in fleet.hosts:
            if rate_per_hour <= 0:
                continue
            rng = _host_rng(cfg.seed, host.id, "maintenance")
            t = 0.0
            while True:
                u = rng.next_unit()
                t += -math.log(1.0 - u) / rate_per_hour
                if t >= horizon_h:
                    break
                push(t, _PRIO_MAINT_START, "maintenance_start", host.index, {})
    else:  # PRODUCTION_FRIENDLY
        # A full plan completes in ceil(plan_hours / (budget * 24h)) days.
        quanta_days = max(1, math.ceil(cfg.scan_duration_hours / (cfg.workload_overhead_budget * 24.0)))
        for host in fleet.hosts:
            start_h = float(host.index % 24)
            t = start_h
            quantum = 0
            while t < horizon_h:
                push(t, _PRIO_QUANTUM, "quantum", host.index, {"quantum": quantum, "of": quanta_days})
                quantum += 1
                t += 24.0

    # --- app workload batches
    pool = _build_header_pool(cfg) if cfg.files_per_host_per_day > 0 else []
    if cfg.files_per_host_per_day > 0:
        for host in fleet.hosts:
            for day in range(cfg.horizon_days):
                push(day * 24.0 + 6.0, _PRIO_APP, "app_batch", host.index, {"day": day})

    # --- accumulators
    production_time_lost = 0.0
    test_compute_hours: dict[str, float] = {}
    scanned_hosts: set[str] = set()
    files_submitted = files_written = silent_loss = 0
    error_events = 0

    def backend_builder_for(host: HostState, t: float) -> Callable[[], object]:
        if host.specs:
            return lambda: inject(ReferenceBackend(), host.specs, time_hours=t)
        return ReferenceBackend

    def record(t, kind, host, **payload):
        events.append(SimEvent(t_hours=t, kind=kind, host=host, payload=payload))

    def run_scan(host: HostState, t: float, quantum_id: str, scan_plan: ScanPlan) -> FaultReport:
        report = scan_host(
            host.id, scan_plan, backend_builder_for(host, t), seed=cfg.seed,
            do_shrink=False, timestamp=t,
        )
        host.scan_history.append(t)
        scanned_hosts.add(host.id)
        flagged = sorted(report.per_core_mismatches)
        record(
            t, "scan_result", host.id,
            status=report.status, plan_hash=plan_hash, quantum_id=quantum_id,
            flagged_cores=flagged,
        )
        if flagged and host.detected_at is None:
            host.detected_at = t
            record(t, "detected", host.id, cores=flagged)
        return report

    while queue:
        t, prio, _, action, host_index, payload = heapq.heappop(queue)
        host = fleet.hosts[host_index]
        host.age_hours = t
        if host.detected_at is not None:
            continue  # quarantined after detection

        if action == "scan":
            host.phase = HostPhase.OUT_FOR_TEST
            record(t, "state_change", host.id, phase=host.phase.value)
            run_scan(host, t, quantum_id="periodic-%d" % len(host.scan_history), scan_plan=plan)
            production_time_lost += cfg.scan_duration_hours
            host.phase = HostPhase.PRODUCTION
            record(t + cfg.scan_duration_hours, "state_change", host.id, phase=host.phase.value)

        elif action == "maintenance_start":
            host.phase = HostPhase.MAINTENANCE
            record(t, "state_change", host.id, phase=host.phase.value)
            # Opportunistic scan inside the maintenance window: the host was
            # already out of production, so no production time is charged.
            run_scan(host, t, quantum_id="maint-%d" % len(host.scan_history), scan_plan=plan)
            end = t + cfg.maintenance_duration_hours
            push(end, _PRIO_MAINT_END, "maintenance_end", host.index, {})

        elif action == "maintenance_end":
            host.phase = HostPhase.PRODUCTION
            record(t, "state_change", host.id, phase=host.phase.value)

        elif action == "quantum":
            quanta_days = payload["of"]
            idx = payload["quantum"] % quanta_days
            vectors = plan.all_vectors()
            lo = (idx * len(vectors)) // quanta_days
            hi = ((idx + 1) * len(vectors)) // quanta_days
            slice_vectors = vectors[lo:hi]
            compute_h = cfg.scan_duration_hours / quanta_days
            test_compute_hours[host.id] = test_compute_hours.get(host.id, 0.0) + compute_h
            if slice_vectors:
                quantum_plan = ScanPlan(
                    kernels=plan.kernels, stream=None, targeted=tuple(slice_vectors),
                    cores=plan.cores, policy=plan.policy,
                )
                run_scan(host, t, quantum_id="q-%s" % payload["quantum"], scan_plan=quantum_plan)
            record(t, "quantum_result", host.id, quantum=payload["quantum"], compute_hours=compute_h)

        elif action == "app_batch":
            rng = _host_rng(cfg.seed, host.id, "app-day-%d" % payload["day"])
            files = [pool[rng.next_int(0, len(pool) - 1)] for _ in range(cfg.files_per_host_per_day)]
            backend = backend_builder_for(host, t)()
            result = app_workload_decompression(
                host.id, files, backend, cfg.cores_per_host,
                seed=cfg.seed ^ payload["day"],
            )
            files_submitted += result.files_submitted
            files_written += result.files_written
            silent_loss += result.files_silently_dropped
            error_events += result.error_events_emitted
            record(
                t, "app_batch", host.id, day=payload["day"],
                submitted=result.files_submitted, written=result.files_written,
                dropped=result.files_silently_dropped,
            )

    ttd: dict[str, float] = {}
    detected = 0
    for host in fleet.defective_hosts:
        onset = _defect_onset_hours(host.specs[0])
        if host.detected_at is None:
            ttd[host.id] = math.inf
        else:
            detected += 1
            ttd[host.id] = max(0.0, host.detected_at - onset)

    total_compute = cfg.hosts * horizon_h
    overhead = sum(test_compute_hours.values()) / total_compute if total_compute else 0.0
    metrics = CoverageMetrics(
        hosts=cfg.hosts,
        defective=len(fleet.defective_hosts),
        detected=detected,
        scanned_fraction=len(scanned_hosts) / cfg.hosts if cfg.hosts else 0.0,
        time_to_detect=ttd,
        production_time_lost_hours=production_time_lost,
        overhead_fraction=overhead,
        silent_loss=silent_loss,
        files_submitted=files_submitted,
        files_written=files_written,
        error_events=error_events,
    )
    return metrics, events


def schedule_opportunistic(fleet: Fleet) -> list[tuple[float, str]]:
    """Maintenance-window scan assignments (t_hours, host id) the
    opportunistic mode would execute; a host that never leaves production
    is never assigned."""
    cfg = fleet.config
    out = []
    rate_per_hour = cfg.maintenance_rate / 24.0
    horizon_h = cfg.horizon_days * 24.0
    if rate_per_hour <= 0:
        return out
    for host in fleet.hosts:
        rng = _host_rng(cfg.seed, host.id, "maintenance")
        t = 0.0
        while True:
            t += -math.log(1.0 - rng.next_unit()) / rate_per_hour
            if t >= horizon_h:
                break
            out.append((t, host.id))
    return sorted(out)


def schedule_periodic(fleet: Fleet) -> list[tuple[float, str]]:
    """Fixed-period scan assignments, staggered deterministically by host
    index so pull-outs spread evenly across the period."""
    cfg = fleet.config
    period_h = cfg.period_days * 24.0
    horizon_h = cfg.horizon_days * 24.0
    out = []
    for host in fleet.hosts:
        t = float(host.index % max(1, int(period_h)))
        while t < horizon_h:
            out.append((t, host.id))
            t += period_h
    return sorted(out)


def schedule_production_friendly(fleet: Fleet) -> list[tuple[float, str, int]]:
    """Daily quantum assignments (t_hours, host id, quantum index); a full
    plan completes in ceil(plan_hours / (budget * 24h)) quanta."""
    cfg = fleet.config
    horizon_h = cfg.horizon_days * 24.0
    out = []
    for host in fleet.hosts:
        t = float(host.index % 24)
        quantum = 0
        while t < horizon_h:
            out.append((t, host.id, quantum))
            quantum += 1
            t += 24.0
    return sorted(out)
