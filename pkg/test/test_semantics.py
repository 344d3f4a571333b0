import json
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from hypothesis.stateful import RuleBasedStateMachine, initialize, rule

sys.path.insert(0, str(Path(__file__).parent.parent))

from helper.errors import MalformedOperationError, ReplayError
from models.policy import ControllerCategory, DataTypeCode, Policy, Purpose, Recipient
from models.state import EMPTY_ENTRY, DeviceId, Position, Range, SubjectDeviceId, SystemState
from strategies import OperationFactory, reachable_state
from utils.semantics import (
    APPLIED, FORCED, REJECTED, Collect, Declare, Define, Install, Move, Mutation, Outcome, Pair,
    Property, Purge, Require, SemanticsEngine, TraceEntry, apply, check_postcondition, load_trace, purge_expired,
    run_step, write_trace, verify_trace,
)

SAMPLES = 1000
TRACES = 10000
TAGS = ("install", "declare", "move", "define", "pair", "collect", "require")
DRAWN = settings(derandomize=True, deadline=None, suppress_health_check=[HealthCheck.too_slow])

CAMERA = DeviceId.from_label("gate-camera-north")
PLATE = SubjectDeviceId.plate("AB-123-CD")
OTHER_PLATE = SubjectDeviceId.plate("EF-456-GH")
PHONE = SubjectDeviceId.label("my-phone")
CONTROLLER = Policy("acme", ControllerCategory.ROAD_OPERATOR, {Purpose.BILLING}, 3600, {Recipient.CONTROLLER_ONLY})
BOUND = Policy(purposes={Purpose.BILLING}, retention=86400, recipients={Recipient.CONTROLLER_ONLY})
STRICT = BOUND.with_retention(60)
CAMERA_DECLARATION = Declare(CAMERA, Position(0, 0), Range.from_meters(15), DataTypeCode.PLATE_NUMBER, CONTROLLER)
CAMERA_INSTALL = Install(CAMERA, Position(0, 0), Range.from_meters(15), DataTypeCode.PLATE_NUMBER, CONTROLLER)


def run(steps, start=0):
    """Apply steps through run_step and record the trace."""
    state, trace = SystemState(), []
    for offset, op in enumerate(steps):
        state, outcome = run_step(state, op, start + offset * 100)
        trace.append(TraceEntry(start + offset * 100, op, outcome))
    return state, trace


def camera_ready():
    return [CAMERA_DECLARATION, CAMERA_INSTALL, Move(PLATE, Position.from_meters(3, 0))]


@pytest.mark.parametrize("tag", TAGS)
def test_applied_results_satisfy_postcondition(tag):
    applied = []

    @settings(DRAWN, max_examples=SAMPLES)
    @given(data=st.data())
    def check(data):
        factory = OperationFactory(data.draw)
        before = reachable_state(factory)
        op = factory.by_tag(tag)(before)
        after, outcome = apply(before, op)
        if outcome.is_applied:
            applied.append(op)
            assert check_postcondition(before, op, after), op
        else:
            assert outcome.status == REJECTED
            assert after is before

    check()
    assert applied


class ConsentTraceMachine(RuleBasedStateMachine):
    """Drawn operations applied one at a time; the finished trace must verify."""

    def __init__(self):
        super().__init__()
        self.state = SystemState()
        self.trace = []
        self.factory = None

    @initialize(data=st.data())
    def draw_devices(self, data):
        self.factory = OperationFactory(data.draw)

    @rule(data=st.data(), tag=st.sampled_from(TAGS))
    def apply_operation(self, data, tag):
        self.factory.draw = data.draw
        before = self.state
        op = self.factory.by_tag(tag)(before)
        timestamp = len(self.trace)
        self.state, outcome = apply(before, op, timestamp)
        self.trace.append(TraceEntry(timestamp, op, outcome))
        if outcome.is_applied:
            assert check_postcondition(before, op, self.state), op
        else:
            assert self.state is before

    def teardown(self):
        if self.trace:
            assert verify_trace(self.trace) == []


ConsentTraceMachine.TestCase.settings = settings(DRAWN, max_examples=TRACES, stateful_step_count=12)
TestConsentTraces = ConsentTraceMachine.TestCase


def test_collect_stores_under_subject_policy():
    state, _ = run(camera_ready() + [Define(PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD")])
    after, outcome = apply(state, Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"), 500)
    assert outcome.is_applied
    assert after.store_c[(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)] == (BOUND, b"AB-123-CD")
    assert after.collected_at[(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)] == 500


def test_collect_refused_by_strict_policy_stores_nothing():
    state, _ = run(camera_ready() + [Define(PLATE, DataTypeCode.PLATE_NUMBER, STRICT, b"AB-123-CD")])
    after, outcome = apply(state, Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, STRICT, b"AB-123-CD"))
    assert outcome.is_applied
    assert (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER) not in after.store_c


@pytest.mark.parametrize("op, reason", [
    (Collect(CAMERA, OTHER_PLATE, DataTypeCode.PLATE_NUMBER, BOUND, None), "subject has no position"),
    (Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, STRICT, b"AB-123-CD"), "subject store mismatch"),
    (Collect(CAMERA, PLATE, DataTypeCode.MAC_ADDRESS, None, None), "data type mismatch"),
    (Collect(DeviceId.from_label("elsewhere"), PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"),
     "device not installed"),
    (Install(CAMERA, Position(0, 0), Range.from_meters(20), DataTypeCode.PLATE_NUMBER, CONTROLLER),
     "declared with a different tuple"),
])
def test_rejections_keep_the_state(op, reason):
    state, _ = run(camera_ready() + [Define(PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD")])
    after, outcome = apply(state, op)
    assert outcome == Outcome.rejected(reason)
    assert after is state


def test_collect_out_of_range_rejected():
    state, _ = run(camera_ready() + [Define(PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"),
                                  Move(PLATE, Position.from_meters(16, 0))])
    after, outcome = apply(state, Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"))
    assert outcome.reason == "subject out of range"
    assert after is state


def test_postcondition_rejects_tampered_results():
    before, _ = run([Move(PLATE, Position.from_meters(3, 0))])
    after, _ = apply(before, CAMERA_DECLARATION)
    assert check_postcondition(before, CAMERA_DECLARATION, after)
    extra_knows = after.copy()
    extra_knows.knows[(OTHER_PLATE, CAMERA)] = CAMERA_DECLARATION.info
    assert not check_postcondition(before, CAMERA_DECLARATION, extra_knows)

    key = (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)
    collect = Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD")
    before, _ = run(camera_ready() + [Define(PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD")])
    after, _ = apply(before, collect)
    assert check_postcondition(before, collect, after)
    for forged in [(STRICT, b"AB-123-CD"), (BOUND, b"EF-456-GH")]:
        tampered = after.copy()
        tampered.store_c[key] = forged
        assert not check_postcondition(before, collect, tampered)


def test_install_without_declaration_rejected():
    state = SystemState()
    after, outcome = apply(state, CAMERA_INSTALL)
    assert outcome == Outcome.rejected("not declared")
    assert after is state


def test_collect_without_any_policy_rejected():
    state, _ = run(camera_ready())
    assert state.store_s_get((PLATE, DataTypeCode.PLATE_NUMBER)) == EMPTY_ENTRY
    after, outcome = apply(state, Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, None, None))
    assert outcome == Outcome.rejected("no subject policy")
    assert after is state


def test_collect_without_subject_policy_keeps_stored_policy():
    key = (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)
    state, _ = run(camera_ready() + [
        Define(PLATE, DataTypeCode.PLATE_NUMBER, None, b"AB-123-CD"),
        Mutation("store_c", key, (BOUND, None)),
    ])
    collect = Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, None, b"AB-123-CD")
    after, outcome = apply(state, collect, 700)
    assert outcome.is_applied
    assert after.store_c[key] == (BOUND, b"AB-123-CD")
    assert after.collected_at[key] == 700
    assert check_postcondition(state, collect, after)


def test_malformed_value_raises():
    with pytest.raises(MalformedOperationError):
        apply(SystemState(), Define(PLATE, DataTypeCode.MAC_ADDRESS, None, b"\x01\x02"))


def test_require_from_paired_gateway_replaces_policy():
    key = (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)
    state, _ = run(camera_ready() + [
        Define(PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"),
        Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"),
        Pair(PLATE, PHONE),
        Move(PHONE, Position.from_meters(0, 2)),
        Define(PHONE, DataTypeCode.PLATE_NUMBER, STRICT, None),
    ])
    collected_at = state.collected_at[key]
    after, outcome = apply(state, Require(PHONE, PLATE, CAMERA, DataTypeCode.PLATE_NUMBER, STRICT, b"AB-123-CD"), 9999)
    assert outcome.is_applied
    assert after.store_c[key] == (STRICT, b"AB-123-CD")
    assert after.collected_at[key] == collected_at

    # an unpaired requester is refused
    _, outcome = apply(state, Require(PLATE, PLATE, CAMERA, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"))
    assert outcome.reason in ("not paired", "requester policy mismatch")


def test_purge_is_inclusive_and_traced_only_when_it_removes():
    key = (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)
    engine = SemanticsEngine()
    for op in camera_ready() + [Define(PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD")]:
        engine.execute(op, 0)
    assert engine.execute(Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"), 1000).is_applied
    traced = len(engine.trace)

    assert engine.sweep(86400999) is None
    assert len(engine.trace) == traced
    assert key in engine.state.store_c

    assert engine.sweep(86401000) == Outcome.applied()
    assert key not in engine.state.store_c
    assert isinstance(engine.trace[-1].op, Purge)
    assert engine.sweep(86402000) is None
    assert purge_expired(engine.state, 10 ** 9) is engine.state
    assert verify_trace(engine.trace) == []


def test_engine_clamps_timestamps_and_notifies():
    engine = SemanticsEngine()
    seen = []
    engine.listeners.append(lambda entry, state: seen.append((entry.timestamp, entry.outcome.status)))
    engine.submit(Move(PLATE, Position(0, 0)), 500)
    engine.submit(Pair(PLATE, PHONE), 100)
    engine.drain()
    assert seen == [(500, APPLIED), (500, APPLIED)]
    assert engine.state.paired_to(PLATE) == PHONE


def test_informed_counterexample():
    steps = [
        Mutation("config", CAMERA, CAMERA_INSTALL.info),
        Move(PLATE, Position.from_meters(3, 0)),
        Define(PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"),
        Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, BOUND, b"AB-123-CD"),
    ]
    _, trace = run(steps)
    assert trace[0].outcome.status == FORCED
    assert {v.property for v in verify_trace(trace)} == {Property.INFORMED}


def test_subject_policy_counterexample():
    key = (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)
    steps = camera_ready() + [
        Define(PLATE, DataTypeCode.PLATE_NUMBER, None, b"AB-123-CD"),
        Mutation("store_c", key, (BOUND, b"stale")),
        Collect(CAMERA, PLATE, DataTypeCode.PLATE_NUMBER, None, b"AB-123-CD"),
    ]
    state, trace = run(steps)
    assert state.store_c[key] == (BOUND, b"AB-123-CD")
    assert {v.property for v in verify_trace(trace)} == {Property.SUBJECT_POLICY}


def test_last_requirement_counterexample():
    key = (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)
    steps = camera_ready() + [
        Define(PLATE, DataTypeCode.PLATE_NUMBER, None, b"AB-123-CD"),
        Mutation("store_c", key, (CONTROLLER, None)),
        Require(PLATE, PLATE, CAMERA, DataTypeCode.PLATE_NUMBER, None, b"AB-123-CD"),
    ]
    _, trace = run(steps)
    assert trace[-1].outcome.is_applied
    assert {v.property for v in verify_trace(trace)} == {Property.LAST_REQUIREMENT}


def test_controller_policy_counterexample():
    key = (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER)
    steps = camera_ready() + [Mutation("store_c", key, (STRICT, b"AB-123-CD"))]
    _, trace = run(steps)
    violations = verify_trace(trace)
    assert [v.property for v in violations] == [Property.CONTROLLER_POLICY]
    assert violations[0].index == len(steps) - 1


@settings(DRAWN, max_examples=25, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
@given(data=st.data())
def test_trace_file_replays(tmp_path, data):
    factory = OperationFactory(data.draw)
    state, trace = SystemState(), []
    for ts in range(100):
        op = factory.any(state)
        state, outcome = apply(state, op, ts * 10)
        trace.append(TraceEntry(ts * 10, op, outcome))
    trace.append(TraceEntry(2000, Mutation("store_c", (CAMERA, PLATE, DataTypeCode.PLATE_NUMBER), None),
                            Outcome(FORCED)))
    trace.append(TraceEntry(2000, Purge(2000), Outcome.applied()))

    path = tmp_path / "nested" / "trace.jsonl"
    write_trace(trace, path)
    assert load_trace(path) == trace
    assert verify_trace(load_trace(path)) == []


def test_replay_errors(tmp_path):
    _, trace = run(camera_ready())
    with pytest.raises(ReplayError):
        verify_trace([trace[1], trace[0]])
    with pytest.raises(ReplayError):
        verify_trace([TraceEntry(0, CAMERA_INSTALL, Outcome.applied())])

    path = tmp_path / "broken.jsonl"
    path.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(ReplayError):
        load_trace(path)
    path.write_text(json.dumps({"timestamp": 0, "op": "teleport", "params": {}, "outcome": "applied"}) + "\n",
                    encoding="utf-8")
    with pytest.raises(ReplayError):
        load_trace(path)
    path.write_text(json.dumps({"timestamp": 0, "op": "move"}) + "\n", encoding="utf-8")
    with pytest.raises(ReplayError):
        load_trace(path)
