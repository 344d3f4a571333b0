import copy
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from config.config import Config
from config.default import DEFAULT_CONFIG
from helper.errors import ScriptError
from models.policy import DataTypeCode, Policy
from models.receipt import ConsentReceipt, ReceiptLog
from models.state import DeviceId, SubjectDeviceId, SystemState
from utils.scenario import (
    RUNNERS, GateRecord, OccupancyGate, ScenarioScript, bundled_script, load_script, run_anpr, run_mall,
    run_meeting_room, run_script, subject_identifier,
)
from utils.semantics import Collect, Purge, Require, run_step

BUNDLED = ("anpr_basic", "anpr_refuse", "mall_walk", "meeting_room")


@pytest.fixture
def config():
    return Config(data=copy.deepcopy(DEFAULT_CONFIG))


def script(name):
    return load_script(bundled_script(name))


def replay(trace):
    """States after each entry."""
    st = SystemState()
    for entry in trace:
        st, _ = run_step(st, entry.op, entry.timestamp)
        yield entry, st


@pytest.mark.parametrize("transport", ["beacon", "registry"])
@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_hold_every_property(name, transport, config):
    result = run_script(script(name), transport=transport, config=config)
    assert result.transport == transport
    assert result.violations == []
    assert result.trace


def test_same_seed_same_trace(config):
    first = run_anpr(script("anpr_basic"), config=config)
    second = run_anpr(script("anpr_basic"), config=config)
    assert [e.to_json() for e in first.trace] == [e.to_json() for e in second.trace]
    assert [r.receipt_id for r in first.receipts] == [r.receipt_id for r in second.receipts]
    assert first.seed == 7


@pytest.mark.parametrize("name", ["anpr_basic", "mall_walk"])
def test_transports_apply_the_same_operations(name, config):
    beacon = run_script(script(name), transport="beacon", config=config)
    registry = run_script(script(name), transport="registry", config=config)
    assert beacon.applied_ops() == registry.applied_ops()
    assert {r.transport for r in beacon.receipts} == {"beacon"}
    assert {r.transport for r in registry.receipts} == {"registry"}


def test_anpr_collection_and_withdrawal(config):
    result = run_anpr(script("anpr_basic"), config=config)
    camera = DeviceId.from_label("gate-camera-north")
    plate = SubjectDeviceId.plate("AB-123-CD")
    key = (camera, plate, result.script.device("gate-camera-north").data_type)

    assert [r.subject for r in result.receipts] == [plate]
    stored_at = [entry.timestamp for entry, st in replay(result.trace)
                 if isinstance(entry.op, Collect) and entry.op.subject == plate and key in st.store_c]
    assert stored_at == [7500, 11500, 15500]

    withdrawal = [e for e in result.trace if isinstance(e.op, Require)]
    assert [(e.timestamp, e.outcome.is_applied) for e in withdrawal] == [(16100, True)]
    purges = [e.timestamp for e in result.trace if isinstance(e.op, Purge)]
    assert purges == [17000]

    later = [(e.timestamp, e.outcome.status) for e in result.trace
             if isinstance(e.op, Collect) and e.op.subject == plate and e.timestamp > 17000]
    assert later == [(19500, "applied"), (23500, "rejected")]
    final = list(replay(result.trace))[-1][1]
    assert key not in final.store_c


def test_refusing_vehicles_are_never_stored(config):
    result = run_anpr(script("anpr_refuse"), config=config)
    assert result.receipts == []
    collects = 0
    for entry, st in replay(result.trace):
        if isinstance(entry.op, Collect):
            collects += 1
            assert not st.store_c
    assert collects > 0


def test_mall_consents_per_controller(config):
    result = run_mall(script("mall_walk"), config=config)
    devices = [r.device_id for r in result.receipts]
    assert sorted(devices) == sorted(DeviceId.from_label(label) for label in ("tracker-a", "tracker-b"))
    assert len({r.receipt_id for r in result.receipts}) == 2

    tracker_c = DeviceId.from_label("tracker-c")
    assert all(key[0] != tracker_c for _, st in replay(result.trace) for key in st.store_c)


def test_meeting_room_gate(config):
    result = run_meeting_room(script("meeting_room"), config=config)
    assert result.enabled_intervals("room-mic") == [(0, 12000), (16000, 26000)]

    log = result.gate_log("room-mic")
    assert log[0].cause == "start" and log[0].count == 0 and log[0].enabled
    disabled = [r for r in log if not r.enabled]
    assert disabled and all(r.tally < r.count for r in disabled)

    mic = DeviceId.from_label("room-mic")
    captured = {e.timestamp for e in result.trace if isinstance(e.op, Collect) and e.op.device_id == mic}
    assert not captured & set(range(12000, 16000))
    assert len(result.receipts) == 3


def test_meeting_room_withdrawal_closes_gate(config):
    data = json.loads(bundled_script("meeting_room").read_text(encoding="utf-8"))
    data["events"] = [{"at": 10100, "type": "withdraw", "subject": "g1", "device": "room-mic"}]
    result = run_meeting_room(ScenarioScript.from_dict(data), config=config)
    assert result.violations == []
    assert result.enabled_intervals("room-mic") == [(0, 10100), (20000, 26000)]

    closing = [r for r in result.gate_log("room-mic") if r.cause == "withdraw"]
    assert closing == [GateRecord(10100, 3, 2, False, "withdraw")]

    voice = subject_identifier(DataTypeCode.SOUND, "g1-voice")
    assert result.revocations == [(DeviceId.from_label("room-mic"), voice, 10100)]
    assert voice in {r.subject for r in result.receipts}


def test_receipt_log_revocations():
    mic = DeviceId.from_label("room-mic")
    voice = subject_identifier(DataTypeCode.SOUND, "g1-voice")
    log = ReceiptLog()
    first = ConsentReceipt.issue(mic, voice, Policy(), 100, b"\x00" * 8, "beacon")
    log.append(first)
    assert log.active(voice, mic) == [first]

    log.revoke(mic, voice, 200)
    assert log.active(voice, mic) == []
    assert log.for_subject(voice) == [first] and len(log) == 1

    again = ConsentReceipt.issue(mic, voice, Policy(), 300, b"\x01" * 8, "beacon")
    log.append(again)
    assert log.active(voice, mic) == [again]
    assert log.active(voice, DeviceId.from_label("projector")) == []


def test_gate_intervals_are_half_open():
    gate = OccupancyGate(DeviceId.from_label("room-mic"), None, None)
    assert gate.enabled and gate.enabled_intervals(100) == []
    for ts, enabled in ((0, True), (10, False), (10, True), (20, True), (30, False), (30, False)):
        gate.log.append(GateRecord(ts, 0, 0, enabled, "test"))
    assert gate.enabled_intervals(50) == [(0, 10), (10, 30)]


def test_runner_checks_the_kind(config):
    with pytest.raises(ScriptError):
        run_anpr(script("mall_walk"), config=config)
    assert set(RUNNERS) == {"anpr", "mall", "meeting_room"}


def test_seed_and_transport_overrides(config):
    result = run_script(script("mall_walk"), seed=99, transport="registry", config=config)
    assert result.seed == 99 and result.transport == "registry"
    with pytest.raises(ScriptError):
        run_script(script("mall_walk"), transport="smoke-signals", config=config)


def _minimal():
    return json.loads(bundled_script("anpr_refuse").read_text(encoding="utf-8"))


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(kind="airport"),
    lambda d: d.update(transport="carrier"),
    lambda d: d.update(devices=[]),
    lambda d: d.pop("duration_ms"),
    lambda d: d["devices"].append(copy.deepcopy(d["devices"][0])),
    lambda d: d["subjects"].append(copy.deepcopy(d["subjects"][0])),
    lambda d: d["devices"][0].update(data_type="SMELL"),
    lambda d: d["devices"][0].update(position=[0]),
    lambda d: d["devices"][0].update(declare_at=2000, install_at=1000),
    lambda d: d["subjects"][0].update(identifiers={"MAC_ADDRESS": "not-a-mac"}),
    lambda d: d["subjects"][0].update(path=[{"at": 500, "position": [0, 0]}, {"at": 100, "position": [1, 1]}]),
    lambda d: d.update(events=[{"at": 1, "type": "explode", "subject": "car-3", "device": "gate-camera-north"}]),
    lambda d: d.update(events=[{"at": 1, "type": "withdraw", "subject": "nobody", "device": "gate-camera-north"}]),
])
def test_invalid_scripts(mutate):
    data = _minimal()
    mutate(data)
    with pytest.raises(ScriptError):
        ScenarioScript.from_dict(data)


def test_script_files(tmp_path):
    with pytest.raises(ScriptError):
        load_script(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{\"kind\": ", encoding="utf-8")
    with pytest.raises(ScriptError):
        load_script(broken)
    with pytest.raises(ScriptError):
        ScenarioScript.from_dict([])


def test_script_defaults():
    parsed = script("meeting_room")
    assert parsed.subject("g1").gateway == "g1-phone"
    mic = parsed.device("room-mic")
    assert mic.install_at == mic.declare_at == 0
    assert mic.room is not None
    with pytest.raises(ScriptError):
        parsed.device("projector")
