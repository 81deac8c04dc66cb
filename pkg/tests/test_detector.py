import math

import pytest
from hypothesis import given, settings, strategies as st

from sdcscreen.detector import (
    BUILTIN_TARGETED,
    ConsistencyLabel,
    ScanPlan,
    StreamSpec,
    classify_data_dependency,
    redundant_execute,
    scan_core,
    scan_host,
    shrink,
)
from sdcscreen.faultsim import (
    CorruptionTransform,
    DefectClass,
    ExactBits,
    FaultSpec,
    OnsetSchedule,
    TransformKind,
    inject,
    load_bundled_specs,
)
from sdcscreen.kernels import (
    CoreId,
    KernelKind,
    OpKind,
    TestKernel,
    TestVector,
    evaluate,
    float_to_bits,
    gen_operand_stream,
)
from sdcscreen.oracle import Outcome, ReferenceBackend, compare, default_policy, reference_eval

INT_POW = TestKernel(KernelKind.INT_POW)
CORE59_SPECS = load_bundled_specs("core59.spec")
TRIGGERS = (TestVector(1.1, 53.0), TestVector(1.1, 68.0))


def faulty_builder(specs=CORE59_SPECS, t=0.0):
    return lambda: inject(ReferenceBackend(), list(specs), time_hours=t)


def chain_exp2_bits(x: float, y: float) -> int:
    # the EXP2 operand this (x, y) pair produces on the reference chain
    backend = ReferenceBackend()
    out = evaluate(TestKernel(KernelKind.POW_CHAIN), TestVector(x, y), backend, CoreId("probe", 0))
    return float_to_bits(out.trace[1][1])


def spec_zeroing(x: float, y: float, core: int, spec_id: str) -> FaultSpec:
    return FaultSpec(
        id=spec_id,
        defect_class=DefectClass.DEVICE_ERROR,
        host_pattern="*",
        core=core,
        op_kind=OpKind.EXP2,
        operands=((ExactBits(chain_exp2_bits(x, y)),),),
        transform=CorruptionTransform(TransformKind.SET_CONSTANT, constant=0.0),
    )


class TestScanPlan:
    def test_needs_vectors(self):
        with pytest.raises(ValueError):
            ScanPlan(stream=None, targeted=())

    def test_budget_must_cover_targeted(self):
        with pytest.raises(ValueError):
            ScanPlan(targeted=BUILTIN_TARGETED, budget=8)  # 3 vectors x 4 ops = 12
        ScanPlan(targeted=BUILTIN_TARGETED, budget=12)

    def test_plan_hash_stable_and_sensitive(self):
        a = ScanPlan(stream=StreamSpec(7, 100), targeted=TRIGGERS)
        b = ScanPlan(stream=StreamSpec(7, 100), targeted=TRIGGERS)
        c = ScanPlan(stream=StreamSpec(8, 100), targeted=TRIGGERS)
        assert a.plan_hash() == b.plan_hash()
        assert a.plan_hash() != c.plan_hash()


class TestScanCore:
    def test_fault_free_backend_gives_empty_list(self):
        plan = ScanPlan(stream=StreamSpec(11, 200), cores=(0,))
        assert scan_core(CoreId("h", 0), plan, ReferenceBackend()) == []

    def test_core59_plan_gives_exactly_two_mismatches(self):
        plan = ScanPlan(targeted=BUILTIN_TARGETED, cores=(59,))
        mismatches = scan_core(CoreId("h", 59), plan, faulty_builder()())
        assert len(mismatches) == 2
        assert {(v.observed, v.expected) for v in mismatches} == {(0, 156), (0, 652)}

    def test_same_plan_on_core_58_is_clean(self):
        plan = ScanPlan(targeted=BUILTIN_TARGETED, cores=(58,))
        assert scan_core(CoreId("h", 58), plan, faulty_builder()()) == []

    def test_core_must_be_in_plan(self):
        plan = ScanPlan(targeted=BUILTIN_TARGETED, cores=(0, 1))
        with pytest.raises(ValueError):
            scan_core(CoreId("h", 5), plan, ReferenceBackend())

    def test_budget_truncates_stream_not_targeted(self):
        # budget for targeted (3 x 4 ops) plus 5 stream vectors
        plan = ScanPlan(
            targeted=BUILTIN_TARGETED, stream=StreamSpec(3, 100), cores=(59,), budget=12 + 5 * 4
        )
        spec = spec_zeroing(1.1, 53.0, 59, "z53")
        mismatches = scan_core(CoreId("h", 59), plan, inject(ReferenceBackend(), [spec]))
        assert len(mismatches) == 1  # targeted trigger seen before budget ran out

    def test_targeted_evaluated_first(self):
        stream = StreamSpec(3, 50)
        plan = ScanPlan(targeted=TRIGGERS, stream=stream, cores=(59,), budget=2 * 4)
        mismatches = scan_core(CoreId("h", 59), plan, faulty_builder()())
        assert len(mismatches) == 2  # both targeted fit exactly in budget


class TestScanHost:
    def test_flags_exactly_core_59(self):
        plan = ScanPlan(targeted=BUILTIN_TARGETED, stream=StreamSpec(5, 50), cores=tuple(range(64)))
        report = scan_host("prod-01", plan, faulty_builder())
        assert report.status == "FAIL"
        assert sorted(report.per_core_mismatches) == [59]
        assert {v.id for v in report.minimal_reproducers[59]} == {t.id for t in TRIGGERS}

    def test_fault_free_host_passes(self):
        plan = ScanPlan(stream=StreamSpec(5, 64), cores=tuple(range(8)))
        report = scan_host("prod-02", plan, ReferenceBackend)
        assert report.status == "PASS"
        assert report.per_core_mismatches == {}
        assert report.minimal_reproducers == {}

    def test_two_independent_faulty_cores_both_flagged(self):
        specs = [spec_zeroing(1.1, 53.0, 3, "core3"), spec_zeroing(1.1, 68.0, 59, "core59b")]
        plan = ScanPlan(targeted=TRIGGERS, cores=tuple(range(64)))
        report = scan_host("prod-03", plan, faulty_builder(specs))
        assert sorted(report.per_core_mismatches) == [3, 59]

    def test_mismatches_replay(self):
        plan = ScanPlan(targeted=BUILTIN_TARGETED, cores=(59,))
        report = scan_host("prod-04", plan, faulty_builder())
        for core_index, verdicts in report.per_core_mismatches.items():
            core = CoreId(report.host, core_index)
            for v in verdicts:
                again = evaluate(INT_POW, v.vector, faulty_builder()(), core)
                assert again.value == v.observed
                assert reference_eval(INT_POW, v.vector).value == v.expected


class TestShrink:
    def test_two_triggers_out_of_stream(self):
        stream = list(gen_operand_stream(404, 498))
        stream[100:100] = [TRIGGERS[0]]
        stream[400:400] = [TRIGGERS[1]]
        result = shrink(stream, CoreId("h", 59), INT_POW, faulty_builder()())
        assert {v.id for v in result.minimal_vectors} == {t.id for t in TRIGGERS}
        n, k = len(stream), len(result.minimal_vectors)
        assert result.steps <= 8 * n * math.log2(n) + k * k

    def test_single_failing_vector(self):
        stream = list(gen_operand_stream(7, 99)) + [TRIGGERS[0]]
        result = shrink(stream, CoreId("h", 59), INT_POW, faulty_builder()())
        assert [v.id for v in result.minimal_vectors] == [TRIGGERS[0].id]
        assert result.steps <= len(stream)

    def test_every_vector_failing_keeps_single_witness(self):
        # negative exponents all truncate to 0, so a broad constant fault
        # makes every vector fail with the identical (observed, expected)
        # pair: any single witness suffices for that one failure mode
        from sdcscreen.kernels import OperandDomain

        broad = FaultSpec(
            id="stuck7",
            defect_class=DefectClass.DEVICE_ERROR,
            host_pattern="*",
            core=59,
            op_kind=OpKind.EXP2,
            operands=(),
            broad=True,
            transform=CorruptionTransform(TransformKind.SET_CONSTANT, constant=7.0),
        )
        domain = OperandDomain(base_lo=1.05, base_hi=1.9, exponent_lo=-60.0, exponent_hi=-1.0)
        stream = gen_operand_stream(15, 200, domain)
        result = shrink(stream, CoreId("h", 59), INT_POW, inject(ReferenceBackend(), [broad]))
        assert len(result.minimal_vectors) == 1
        assert result.certificates[0].observed == 7
        assert result.certificates[0].expected == 0

    def test_nothing_to_shrink_is_an_error(self):
        stream = gen_operand_stream(7, 50)
        with pytest.raises(ValueError):
            shrink(stream, CoreId("h", 59), INT_POW, ReferenceBackend())

    def test_certificates_carry_observed_and_expected(self):
        stream = list(TRIGGERS)
        result = shrink(stream, CoreId("h", 59), INT_POW, faulty_builder()())
        certs = {(c.observed, c.expected) for c in result.certificates}
        assert certs == {(0, 156), (0, 652)}

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**32),
        n=st.integers(min_value=10, max_value=60),
        trigger_picks=st.lists(st.integers(min_value=0, max_value=59), min_size=1, max_size=3, unique=True),
        constants=st.lists(st.sampled_from([0.0, 1.5, 1e9]), min_size=3, max_size=3),
    )
    def test_soundness_and_one_minimality(self, seed, n, trigger_picks, constants):
        stream = gen_operand_stream(seed, n)
        specs = []
        seen_bits = set()
        for i, pick in enumerate(t % n for t in trigger_picks):
            bits = chain_exp2_bits(stream[pick].base, stream[pick].exponent)
            if bits in seen_bits:
                continue
            seen_bits.add(bits)
            specs.append(
                FaultSpec(
                    id="rand%d" % i,
                    defect_class=DefectClass.DEVICE_ERROR,
                    host_pattern="*",
                    core=59,
                    op_kind=OpKind.EXP2,
                    operands=((ExactBits(bits),),),
                    transform=CorruptionTransform(TransformKind.SET_CONSTANT, constant=constants[i]),
                )
            )
        core = CoreId("h", 59)
        backend = inject(ReferenceBackend(), specs)

        def verdict_of(v):
            out = evaluate(INT_POW, v, backend, core)
            return compare(out, reference_eval(INT_POW, v), default_policy(KernelKind.INT_POW), v, core)

        failing = {v.id for v in stream if verdict_of(v).outcome is Outcome.MISMATCH}
        if not failing:
            with pytest.raises(ValueError):
                shrink(stream, core, INT_POW, backend)
            return
        result = shrink(stream, core, INT_POW, backend)

        def identities(vs):
            out = set()
            for v in vs:
                verdict = verdict_of(v)
                if verdict.outcome is Outcome.MISMATCH:
                    out.add((repr(verdict.observed), repr(verdict.expected)))
            return out

        full = identities(stream)
        # soundness: every minimal vector individually mismatches
        for v in result.minimal_vectors:
            assert verdict_of(v).outcome is Outcome.MISMATCH
        # all failure modes are preserved
        assert identities(result.minimal_vectors) == full
        # 1-minimality: removing any vector loses a distinct mismatch
        kept = list(result.minimal_vectors)
        for i in range(len(kept)):
            assert identities(kept[:i] + kept[i + 1 :]) != full


class TestClassify:
    def test_consistent_fail_on_triggers(self):
        rows = classify_data_dependency(list(TRIGGERS), CoreId("h", 59), INT_POW, faulty_builder()(), repeats=3)
        assert all(r.label is ConsistencyLabel.CONSISTENT_FAIL for r in rows)
        assert all(len(r.outcomes) == 3 for r in rows)

    def test_consistent_pass_on_non_trigger(self):
        rows = classify_data_dependency(
            [TestVector(1.1, 78.0)], CoreId("h", 59), INT_POW, faulty_builder()(), repeats=3
        )
        assert rows[0].label is ConsistencyLabel.CONSISTENT_PASS

    def test_flaky_on_degradation_mid_ramp(self):
        spec = FaultSpec(
            id="ramp-flaky",
            defect_class=DefectClass.DEGRADATION,
            host_pattern="*",
            core=59,
            op_kind=OpKind.EXP2,
            operands=((ExactBits(chain_exp2_bits(1.1, 53.0)),),),
            transform=CorruptionTransform(TransformKind.SET_CONSTANT, constant=0.0),
            onset=OnsetSchedule(DefectClass.DEGRADATION, ramp_hours=2000.0),
        )
        backend = inject(ReferenceBackend(), [spec], time_hours=1000.0)  # p ~ 0.5
        rows = classify_data_dependency(
            [TestVector(1.1, 53.0)], CoreId("h", 59), INT_POW, backend, repeats=100
        )
        assert rows[0].label is ConsistencyLabel.FLAKY
        outcomes = set(rows[0].outcomes)
        assert Outcome.MATCH in outcomes and Outcome.MISMATCH in outcomes
        assert backend.time_hours == 1000.0  # restored afterwards

    def test_repeats_lower_bound(self):
        with pytest.raises(ValueError):
            classify_data_dependency(list(TRIGGERS), CoreId("h", 59), INT_POW, ReferenceBackend(), repeats=1)


class TestRedundantExecute:
    CORES = (CoreId("h", 58), CoreId("h", 59), CoreId("h", 60))

    def test_masks_single_faulty_core(self):
        result = redundant_execute(INT_POW, TestVector(1.1, 53.0), self.CORES, faulty_builder())
        assert result.value == 156
        assert result.disagreement is True
        assert result.majority is True

    def test_all_healthy_clear_flag(self):
        result = redundant_execute(INT_POW, TestVector(1.1, 53.0), self.CORES, ReferenceBackend)
        assert result.value == 156
        assert result.disagreement is False

    def test_two_identically_faulty_cores_outvote_the_truth(self):
        specs = [spec_zeroing(1.1, 53.0, 58, "f58"), spec_zeroing(1.1, 53.0, 59, "f59")]
        result = redundant_execute(INT_POW, TestVector(1.1, 53.0), self.CORES, faulty_builder(specs))
        assert result.value == 0  # the vote is wrong: redundancy has limits
        assert result.disagreement is True

    def test_no_majority_carries_all_values(self):
        specs = [
            FaultSpec(
                id="c%d" % c,
                defect_class=DefectClass.DEVICE_ERROR,
                host_pattern="*",
                core=c,
                op_kind=OpKind.EXP2,
                operands=((ExactBits(chain_exp2_bits(1.1, 53.0)),),),
                transform=CorruptionTransform(TransformKind.SET_CONSTANT, constant=float(v)),
            )
            for c, v in ((58, 1000.0), (59, 2000.0))
        ]
        result = redundant_execute(INT_POW, TestVector(1.1, 53.0), self.CORES, faulty_builder(specs))
        assert result.majority is False
        assert result.value is None
        assert sorted(v for _, v in result.per_core) == [156, 1000, 2000]

    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_core_count_must_be_odd_and_at_least_three(self, k):
        cores = tuple(CoreId("h", i) for i in range(k))
        with pytest.raises(ValueError):
            redundant_execute(INT_POW, TestVector(1.1, 53.0), cores, ReferenceBackend)
