"""Command-line entry points: scan, simulate, shrink, report.

Exit codes follow one contract everywhere: 0 means everything passed,
1 means a usage or configuration error, 2 means corruption was detected
(or re-confirmed, for shrink).  Pass ``--canonical`` to zero wall-clock
fields so reruns with the same seed produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
from typing import Optional, Sequence

from . import faultsim, report as reportmod
from .detector import BUILTIN_TARGETED, ScanPlan, ShrinkResult, StreamSpec, scan_host, shrink
from .faultsim import FaultSpecError, load_bundled_specs, load_fault_spec_file
from .fleetsim import FleetConfig, SchedulingMode, build_fleet, run_simulation
from .kernels import CoreId, KernelKind, TestKernel, TestVector
from .oracle import ReferenceBackend
from .report import (
    ConfigParseError,
    CollectorState,
    ReportParseError,
    collector_ingest,
    fault_report_to_record,
    make_record,
    parse_kv_config,
    parse_report_file,
    plan_from_payload,
    vector_to_payload,
    vectors_from_records,
    write_report_file,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors, which collides with
    # "2 = corruption detected"; route usage problems to exit code 1.
    def error(self, message):
        raise _UsageError(message)


def _add_shared_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                   help="64-bit seed (default: $SDC_SEED or 0)")
    p.add_argument("--specs", default=None,
                   help="fault-spec file path or bundled name (core59.spec, errors_table.spec)")
    p.add_argument("--config", default=None, help="key-value configuration file")
    p.add_argument("--out", default=None, help="output file path")
    p.add_argument("--canonical", action="store_true",
                   help="zero timestamp/duration fields for byte-identical reruns")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SDC_SEED")
    return int(env, 0) if env else 0


def _load_specs(spec_arg: Optional[str]):
    if not spec_arg:
        return []
    if os.path.exists(spec_arg):
        return load_fault_spec_file(spec_arg)
    if spec_arg in faultsim.BUNDLED_SPECS:
        return load_bundled_specs(spec_arg)
    raise _UsageError("spec file %r not found (and not a bundled name)" % spec_arg)


def _parse_core_ranges(text: str) -> tuple[int, ...]:
    cores = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            cores.update(range(int(lo), int(hi) + 1))
        else:
            cores.add(int(part))
    if not cores:
        raise _UsageError("empty core list %r" % text)
    return tuple(sorted(cores))


_KERNEL_NAMES = {k.value.lower(): k for k in KernelKind}


def _parse_kernels(text: str) -> tuple[TestKernel, ...]:
    kernels = []
    for name in text.split(","):
        name = name.strip().lower()
        if name not in _KERNEL_NAMES:
            raise _UsageError(
                "unknown kernel %r (choose from %s)" % (name, ", ".join(sorted(_KERNEL_NAMES)))
            )
        kernels.append(TestKernel(_KERNEL_NAMES[name]))
    return tuple(kernels)


def _backend_builder(specs):
    if specs:
        return lambda: faultsim.inject(ReferenceBackend(), list(specs))
    return ReferenceBackend


def _kernel_label(kind: KernelKind) -> str:
    return kind.value.lower()


# ---------------------------------------------------------------------------
# scan


def cmd_scan(args) -> int:
    seed = _resolve_seed(args)
    specs = _load_specs(args.specs)
    cores = _parse_core_ranges(args.cores)
    kernels = _parse_kernels(args.kernels)

    if args.targeted == "builtin":
        targeted = BUILTIN_TARGETED
    elif args.targeted == "none":
        targeted = ()
    else:
        targeted = tuple(vectors_from_records(parse_report_file(args.targeted)))
        if not targeted:
            raise _UsageError("targeted file %r contains no vectors" % args.targeted)

    stream = StreamSpec(seed=seed, count=args.count) if args.count > 0 else None
    plan = ScanPlan(kernels=kernels, stream=stream, targeted=targeted, cores=cores)
    result = scan_host(args.host, plan, _backend_builder(specs), seed=seed)

    record = fault_report_to_record(
        result, specs_path=args.specs, quantum_id="scan-0", canonical=args.canonical
    )
    out_path = args.out or "scan_report.jsonl"
    write_report_file(out_path, [record])

    print("scanned %s: %d cores, %d vectors/core, plan %s, seed %d"
          % (args.host, len(cores), len(plan.all_vectors()), result.plan_hash, seed))
    for core in sorted(result.per_core_mismatches):
        for v in result.per_core_mismatches[core]:
            print("  core %d: (%r ^ %r) -> observed %r, expected %r"
                  % (core, v.vector.base, v.vector.exponent, v.observed, v.expected))
    flagged = sorted(result.per_core_mismatches)
    if flagged:
        print("FAIL: flagged core(s) %s; report written to %s" % (flagged, out_path))
        return 2
    print("PASS: no mismatches; report written to %s" % out_path)
    return 0


# ---------------------------------------------------------------------------
# simulate


_CONFIG_KEYS = {
    "hosts": int,
    "cores_per_host": int,
    "defect_rate": float,
    "fault_specs": str,
    "maintenance_rate": float,
    "workload_overhead_budget": float,
    "mode": str,
    "period_days": int,
    "horizon_days": int,
    "seed": lambda s: int(s, 0),
    "scan_count": int,
    "scan_seed": lambda s: int(s, 0),
    "scan_duration_hours": float,
    "maintenance_duration_hours": float,
    "files_per_host_per_day": int,
    "header_pool_size": int,
}


def _fleet_config_from_file(path: str, args) -> FleetConfig:
    with open(path, "r", encoding="utf-8") as fh:
        kv = parse_kv_config(fh.read())
    parsed = {}
    for key, raw in kv.items():
        if key not in _CONFIG_KEYS:
            raise ConfigParseError(0, "unknown configuration key %r" % key)
        parsed[key] = _CONFIG_KEYS[key](raw)

    mode_text = (args.mode or parsed.get("mode", "periodic")).strip().lower()
    if mode_text == "production":
        mode_text = "production_friendly"
    try:
        mode = SchedulingMode(mode_text.upper())
    except ValueError:
        raise _UsageError("unknown mode %r" % mode_text)

    seed = args.seed if args.seed is not None else parsed.get("seed", _resolve_seed(args))
    horizon = args.horizon_days if args.horizon_days is not None else parsed.get("horizon_days", 30)

    specs = _load_specs(args.specs or parsed.get("fault_specs"))
    cores_per_host = parsed.get("cores_per_host", 64)

    scan_count = parsed.get("scan_count", 0)
    stream = None
    if scan_count > 0:
        stream = StreamSpec(seed=parsed.get("scan_seed", seed), count=scan_count)
    plan = ScanPlan(
        kernels=(TestKernel(KernelKind.INT_POW),),
        stream=stream,
        targeted=BUILTIN_TARGETED,
        cores=tuple(range(cores_per_host)),
    )

    return FleetConfig(
        hosts=parsed.get("hosts", 1000),
        cores_per_host=cores_per_host,
        defect_rate=parsed.get("defect_rate", 0.001),
        fault_library=tuple(specs),
        maintenance_rate=parsed.get("maintenance_rate", 0.1),
        workload_overhead_budget=parsed.get("workload_overhead_budget", 0.01),
        mode=mode,
        period_days=parsed.get("period_days", 15),
        horizon_days=horizon,
        seed=seed,
        scan_plan=plan,
        scan_duration_hours=parsed.get("scan_duration_hours", 1.0),
        maintenance_duration_hours=parsed.get("maintenance_duration_hours", 2.0),
        files_per_host_per_day=parsed.get("files_per_host_per_day", 0),
        header_pool_size=parsed.get("header_pool_size", 32),
    )


def cmd_simulate(args) -> int:
    if not args.config:
        raise _UsageError("simulate requires --config <file>")
    config = _fleet_config_from_file(args.config, args)
    fleet = build_fleet(config)
    metrics, events = run_simulation(fleet)

    ts = 0.0 if args.canonical else None
    records = [make_record("SIM_EVENT", e.to_payload(), timestamp=ts) for e in events]
    records.append(make_record("METRICS", metrics.to_payload(), timestamp=ts))
    out_path = args.out or "sim_metrics.jsonl"
    write_report_file(out_path, records)

    finite_ttd = [v for v in metrics.time_to_detect.values() if v != float("inf")]
    median_ttd = statistics.median(finite_ttd) if finite_ttd else float("nan")
    print("mode %-20s hosts %-6d horizon %dd seed %d"
          % (config.mode.value, config.hosts, config.horizon_days, config.seed))
    print("  scanned:          %5.1f%%" % (100.0 * metrics.scanned_fraction))
    print("  detected:         %d / %d defective" % (metrics.detected, metrics.defective))
    print("  median detect:    %.1f h" % median_ttd)
    print("  production lost:  %.1f host-hours" % metrics.production_time_lost_hours)
    print("  test overhead:    %.4f of fleet compute" % metrics.overhead_fraction)
    print("  silent file loss: %d of %d submitted (error events: %d)"
          % (metrics.silent_loss, metrics.files_submitted, metrics.error_events))
    print("  metrics + event log written to %s" % out_path)
    return 0


# ---------------------------------------------------------------------------
# shrink


def cmd_shrink(args) -> int:
    records = parse_report_file(args.report)
    failing = [r for r in records if r.kind == "SCAN_RESULT" and r.payload.get("status") == "FAIL"]
    if not failing:
        print("input report contains no mismatches; nothing to shrink", file=sys.stderr)
        return 1

    out_records = []
    for record in failing:
        payload = record.payload
        plan = plan_from_payload(payload["plan"])
        specs = _load_specs(args.specs or payload.get("specs_path"))
        builder = _backend_builder(specs)
        host = payload["host"]
        vectors = plan.all_vectors()
        reproducers = {}
        print("shrinking %s (plan %s, %d vectors/core)" % (host, payload["plan_hash"], len(vectors)))
        for core_index in payload["flagged_cores"]:
            core = CoreId(host, core_index)
            per_kernel: dict[str, ShrinkResult] = {}
            for kernel in plan.kernels:
                try:
                    per_kernel[kernel.kind.value] = shrink(vectors, core, kernel, builder())
                except ValueError:
                    continue  # this kernel has nothing to shrink on this core
            merged = []
            seen = set()
            print("  core %d:" % core_index)
            for kind_name, result in per_kernel.items():
                for cert in result.certificates:
                    print("    %s (%r ^ %r): observed %r, expected %r"
                          % (kind_name.lower(), cert.vector.base, cert.vector.exponent,
                             cert.observed, cert.expected))
                    if cert.vector.id not in seen:
                        seen.add(cert.vector.id)
                        merged.append((cert.vector, cert))
            reproducers[str(core_index)] = {
                "vectors": [vector_to_payload(v) for v, _ in merged],
                "certificates": [
                    {
                        "vector": vector_to_payload(v),
                        "observed": reportmod.value_to_payload(c.observed),
                        "expected": reportmod.value_to_payload(c.expected),
                    }
                    for v, c in merged
                ],
                "steps": sum(r.steps for r in per_kernel.values()),
            }
        out_payload = {
            "host": host,
            "status": "FAIL",
            "plan_hash": payload["plan_hash"],
            "quantum_id": "shrink-0",
            "specs_path": args.specs or payload.get("specs_path"),
            "plan": payload["plan"],
            "flagged_cores": payload["flagged_cores"],
            "reproducers": {
                core: data["vectors"] for core, data in reproducers.items()
            },
            "certificates": {
                core: data["certificates"] for core, data in reproducers.items()
            },
            "shrink_steps": {core: data["steps"] for core, data in reproducers.items()},
        }
        out_records.append(
            make_record("SCAN_RESULT", out_payload, timestamp=0.0 if args.canonical else record.timestamp)
        )

    out_path = args.out or "reproducer.jsonl"
    write_report_file(out_path, out_records)
    total = sum(len(r.payload["reproducers"].get(c, []))
                for r in out_records for c in r.payload["reproducers"])
    print("minimal reproducer (%d vector(s)) written to %s" % (total, out_path))
    return 2


# ---------------------------------------------------------------------------
# report (collector view)


def cmd_report(args) -> int:
    state = CollectorState()
    ingested = 0
    for path in args.paths:
        for record in parse_report_file(path):
            if record.kind != "SCAN_RESULT":
                continue
            collector_ingest(state, record)
            ingested += 1
    print("collector: %d scan record(s) ingested, %d host(s) known" % (ingested, len(state.statuses)))
    failing = []
    for host in sorted(state.statuses):
        status = state.status(host)
        print("  %-24s %s" % (host, status))
        if status == reportmod.FAIL:
            failing.append(host)
    if failing:
        print("FAIL: %d host(s) with confirmed corruption" % len(failing))
        return 2
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="sdcscreen", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_scan = sub.add_parser("scan", help="scan a host's cores for silent miscomputation")
    _add_shared_flags(p_scan)
    p_scan.add_argument("--host", default="localhost", help="host name to report under")
    p_scan.add_argument("--cores", default="0-63", help="core range list, e.g. 0-63 or 0-3,59")
    p_scan.add_argument("--kernels", default="int_pow",
                        help="comma list: int_pow,pow_chain,square_lut,decompress_size,roundtrip")
    p_scan.add_argument("--count", type=int, default=256, help="random stream vectors per core")
    p_scan.add_argument("--targeted", default="builtin",
                        help="'builtin', 'none', or a reproducer/report file with vectors")
    p_scan.set_defaults(func=cmd_scan)

    p_sim = sub.add_parser("simulate", help="run the fleet detection-scheduling simulation")
    _add_shared_flags(p_sim)
    p_sim.add_argument("--mode", default=None,
                       choices=["opportunistic", "periodic", "production"],
                       help="override the config's scheduling mode")
    p_sim.add_argument("--horizon-days", type=int, default=None, help="override horizon")
    p_sim.set_defaults(func=cmd_simulate)

    p_shrink = sub.add_parser("shrink", help="minimize a failing scan report to a reproducer")
    _add_shared_flags(p_shrink)
    p_shrink.add_argument("report", help="scan report JSONL with mismatches")
    p_shrink.set_defaults(func=cmd_shrink)

    p_report = sub.add_parser("report", help="fold scan reports into collector pass/fail state")
    _add_shared_flags(p_report)
    p_report.add_argument("paths", nargs="+", help="report JSONL files")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (FaultSpecError, ReportParseError, ConfigParseError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
