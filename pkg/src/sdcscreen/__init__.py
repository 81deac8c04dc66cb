"""sdcscreen: silent-data-corruption screening toolkit.

Data-dependent per-core computation kernels checked against golden
references, a deterministic fault-injection backend emulating defective
cores, a failing-input shrinker, and a discrete-event fleet simulator
comparing detection scheduling strategies.
"""

from .kernels import (
    CoreId,
    KernelKind,
    KernelOutput,
    OperandDomain,
    OpKind,
    PrimOp,
    Status,
    TestKernel,
    TestVector,
    decompress_size,
    evaluate,
    gen_operand_stream,
    int_pow_trunc,
    pow_via_log2,
    roundtrip_check,
    square_lut,
)
from .oracle import (
    ComparisonMode,
    ComparisonPolicy,
    Outcome,
    ReferenceBackend,
    Verdict,
    compare,
    default_policy,
    highprec_chain_eval,
    reference_eval,
)
from .faultsim import (
    CorruptionTransform,
    DefectClass,
    FaultSpec,
    FaultSpecError,
    FaultyBackend,
    OnsetSchedule,
    TransformKind,
    corrupt,
    inject,
    load_bundled_specs,
    load_fault_spec_file,
    load_fault_specs,
    onset_active,
    trigger_eval,
)
from .detector import (
    BUILTIN_TARGETED,
    ConsistencyLabel,
    FaultReport,
    ScanPlan,
    ShrinkResult,
    StreamSpec,
    VoteResult,
    classify_data_dependency,
    redundant_execute,
    scan_core,
    scan_host,
    shrink,
)
from .fleetsim import (
    AppWorkloadResult,
    CoverageMetrics,
    Fleet,
    FleetConfig,
    HostPhase,
    HostState,
    SchedulingMode,
    SimEvent,
    app_workload_decompression,
    build_fleet,
    run_simulation,
    schedule_opportunistic,
    schedule_periodic,
    schedule_production_friendly,
)
from .report import (
    CollectorState,
    ReportRecord,
    collector_ingest,
    emit_report,
    fault_report_to_record,
    parse_kv_config,
    parse_report,
)

__version__ = "0.1.0"
