"""
Scenario Simulator
Discrete-event runs of the vehicle tracking, shopping mall and meeting room
deployments on a virtual millisecond clock. Every run drives the semantics
engine through real endpoints (beacons and scanners, or the registry) and
returns a verifiable trace.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple

import numpy as np
import simpy

from config.config import get_config
from helper.errors import ConsentFrameworkError, ScriptError
from models.autoload import load_transport
from models.policy import DataTypeCode, Policy, implies
from models.receipt import ConsentReceipt, ReceiptLog
from models.state import Declaration, DeviceId, Position, Range, SubjectDeviceId, within
from utils.beacon import BeaconEndpoint, RadioBus, ScannerEndpoint
from utils.pdc import Answer, ConsentRule, PersonalDataCustodian
from utils.registry import RegistryStore, TokenBook
from utils.registry_client import EmbeddedRegistryClient, RegistryPoller
from utils.semantics import (
    Collect, Declare, Define, Install, Move, Pair, PropertyViolation, Purge, SemanticsEngine, Trace,
    step_to_params, verify_trace,
)

logger = logging.getLogger(__name__)

KINDS = ("anpr", "mall", "meeting_room")
TRANSPORTS = ("beacon", "registry")
EVENT_TYPES = ("withdraw",)


# --- script -----------------------------------------------------------------

def _require(data: Dict[str, Any], key: str, where: str):
    if key not in data:
        raise ScriptError(f"{where}: missing '{key}'")
    return data[key]


def _position(value, where: str) -> Position:
    try:
        x, y = value
        return Position.from_meters(float(x), float(y))
    except (TypeError, ValueError) as e:
        raise ScriptError(f"{where}: bad position {value!r} ({e})")


def subject_identifier(data_type: DataTypeCode, text: str) -> SubjectDeviceId:
    """Identifier a subject exposes for one data type."""
    if data_type == DataTypeCode.PLATE_NUMBER:
        return SubjectDeviceId.plate(text)
    if data_type == DataTypeCode.MAC_ADDRESS:
        return SubjectDeviceId.mac(text)
    return SubjectDeviceId(data_type, text.encode("utf-8"))


@dataclass(frozen=True)
class DeviceSpec:
    label: str
    position: Position
    range: Range
    data_type: DataTypeCode
    policy: Policy
    controller: str
    declare_at: int = 0
    install_at: int = 0
    capture_every_ms: int = 0
    capture_offset_ms: int = 0
    room: Optional[Tuple[Position, Range]] = None

    @property
    def device_id(self) -> DeviceId:
        return DeviceId.from_label(self.label)

    @property
    def declaration(self) -> Declaration:
        return Declaration(self.device_id, self.position, self.range, self.data_type, self.policy)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DeviceSpec":
        label = _require(data, "id", "device")
        where = f"device '{label}'"
        try:
            data_type = DataTypeCode[_require(data, "data_type", where)]
            policy = Policy.from_dict(_require(data, "policy", where))
            rng = Range.from_meters(float(_require(data, "range", where)))
        except (KeyError, TypeError, ValueError) as e:
            raise ScriptError(f"{where}: {e}")
        capture = data.get("capture") or {}
        room = None
        if data.get("room"):
            room = (_position(_require(data["room"], "position", where), where),
                    Range.from_meters(float(_require(data["room"], "range", where))))
        declare_at = int(data.get("declare_at", 0))
        install_at = int(data.get("install_at", declare_at))
        if install_at < declare_at:
            raise ScriptError(f"{where}: installed before it is declared")
        return cls(label, _position(_require(data, "position", where), where), rng, data_type, policy,
                   str(data.get("controller", policy.controller_id)), declare_at, install_at,
                   int(capture.get("every_ms", 0)), int(capture.get("offset_ms", 0)), room)


@dataclass(frozen=True)
class SubjectSpec:
    name: str
    gateway: str
    identifiers: Dict[DataTypeCode, str]
    rules: Tuple[ConsentRule, ...] = ()
    answers: Dict[str, Answer] = field(default_factory=dict)
    default_answer: Optional[Answer] = None
    path: Tuple[Tuple[int, Position], ...] = ()

    @property
    def gateway_id(self) -> SubjectDeviceId:
        return SubjectDeviceId.label(self.gateway)

    def sources(self) -> Dict[DataTypeCode, SubjectDeviceId]:
        return {t: subject_identifier(t, text) for t, text in sorted(self.identifiers.items())}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SubjectSpec":
        name = _require(data, "name", "subject")
        where = f"subject '{name}'"
        try:
            identifiers = {DataTypeCode[k]: str(v) for k, v in (data.get("identifiers") or {}).items()}
            rules = tuple(ConsentRule.from_dict(r) for r in data.get("rules", []))
            answers = {label: Answer(letter) for label, letter in (data.get("answers") or {}).items()}
            default = Answer(data["default_answer"]) if data.get("default_answer") else None
            for data_type, text in identifiers.items():
                subject_identifier(data_type, text)
        except (KeyError, TypeError, ValueError) as e:
            raise ScriptError(f"{where}: {e}")

        path = []
        for step in data.get("path", []):
            at = int(_require(step, "at", where))
            if path and at < path[-1][0]:
                raise ScriptError(f"{where}: path times must not decrease")
            path.append((at, _position(_require(step, "position", where), where)))
        return cls(name, str(data.get("gateway", f"{name}-phone")), identifiers, rules, answers, default,
                   tuple(path))


@dataclass(frozen=True)
class ScenarioEvent:
    at: int
    type: str
    subject: str
    device: str


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    kind: str
    seed: int
    transport: str
    duration_ms: int
    devices: Tuple[DeviceSpec, ...]
    subjects: Tuple[SubjectSpec, ...]
    events: Tuple[ScenarioEvent, ...] = ()

    def device(self, label: str) -> DeviceSpec:
        for spec in self.devices:
            if spec.label == label:
                return spec
        raise ScriptError(f"Unknown device '{label}'")

    def subject(self, name: str) -> SubjectSpec:
        for spec in self.subjects:
            if spec.name == name:
                return spec
        raise ScriptError(f"Unknown subject '{name}'")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioScript":
        if not isinstance(data, dict):
            raise ScriptError("A scenario script is a JSON object")
        kind = _require(data, "kind", "script")
        if kind not in KINDS:
            raise ScriptError(f"Unknown scenario kind '{kind}'")
        transport = data.get("transport", "beacon")
        if transport not in TRANSPORTS:
            raise ScriptError(f"Unknown transport '{transport}'")

        devices = tuple(DeviceSpec.from_dict(d) for d in data.get("devices", []))
        subjects = tuple(SubjectSpec.from_dict(s) for s in data.get("subjects", []))
        if not devices:
            raise ScriptError("A scenario needs at least one device")
        for label, count in Counter(d.label for d in devices).items():
            if count > 1:
                raise ScriptError(f"Duplicate device '{label}'")
        for name, count in Counter(s.name for s in subjects).items():
            if count > 1:
                raise ScriptError(f"Duplicate subject '{name}'")

        script = cls(str(data.get("name", kind)), kind, int(data.get("seed", 0)), transport,
                     int(_require(data, "duration_ms", "script")), devices, subjects)
        events = []
        for event in data.get("events", []):
            etype = _require(event, "type", "event")
            if etype not in EVENT_TYPES:
                raise ScriptError(f"Unknown event type '{etype}'")
            parsed = ScenarioEvent(int(_require(event, "at", "event")), etype,
                                   _require(event, "subject", "event"), _require(event, "device", "event"))
            script.subject(parsed.subject)
            script.device(parsed.device)
            events.append(parsed)
        return cls(script.name, kind, script.seed, transport, script.duration_ms, devices, subjects,
                   tuple(sorted(events, key=lambda e: e.at)))


def load_script(path) -> ScenarioScript:
    """Read and validate a JSON scenario script."""
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = json.load(file)
    except FileNotFoundError:
        raise ScriptError(f"Scenario file not found: {path}")
    except (OSError, json.JSONDecodeError) as e:
        raise ScriptError(f"Cannot read scenario {path}: {e}")
    return ScenarioScript.from_dict(data)


def bundled_script(name: str) -> Path:
    return Path(__file__).parent.parent / "assets" / "scenarios" / f"{name}.json"


# --- occupancy gate ---------------------------------------------------------

@dataclass
class GateRecord:
    timestamp: int
    count: int
    tally: int
    enabled: bool
    cause: str


class OccupancyGate:
    """
    Processing gate for a room: enabled exactly when every guest counted in
    the room holds an unrevoked consent for the room's device.
    """

    def __init__(self, device_id: DeviceId, center: Position, zone: Range):
        self.device_id = device_id
        self.center = center
        self.zone = zone
        self.log: List[GateRecord] = []
        self.logger = logging.getLogger(__name__)

    @property
    def enabled(self) -> bool:
        return self.log[-1].enabled if self.log else True

    def present(self, positions: Dict[str, Optional[Position]]) -> List[str]:
        return sorted(name for name, pos in positions.items()
                      if pos is not None and within(pos, self.center, self.zone))

    def evaluate(self, now: int, present: List[Tuple[str, SubjectDeviceId]], receipts: ReceiptLog,
                 cause: str) -> bool:
        count = len(present)
        tally = sum(1 for _, source in present if receipts.active(source, self.device_id))
        enabled = tally == count
        if self.log and self.log[-1].enabled != enabled:
            self.logger.info(f"Room gate of {self.device_id} {'enabled' if enabled else 'disabled'} "
                             f"at {now} ms ({tally}/{count}, {cause})")
        self.log.append(GateRecord(now, count, tally, enabled, cause))
        return enabled

    def enabled_intervals(self, end: int) -> List[Tuple[int, int]]:
        """Half-open [start, stop) intervals during which processing was enabled."""
        intervals = []
        start = None
        for record in self.log:
            if record.enabled and start is None:
                start = record.timestamp
            elif not record.enabled and start is not None:
                if record.timestamp > start:
                    intervals.append((start, record.timestamp))
                start = None
        if start is not None and end > start:
            intervals.append((start, end))
        return intervals


# --- result -----------------------------------------------------------------

@dataclass
class ScenarioResult:
    script: ScenarioScript
    transport: str
    seed: int
    trace: Trace
    receipts: List[ConsentReceipt]
    gates: Dict[str, OccupancyGate]
    violations: List[PropertyViolation]
    revocations: List[Tuple[DeviceId, SubjectDeviceId, int]] = field(default_factory=list)

    def applied_ops(self) -> List[Tuple[str, str]]:
        """Applied operations in order, without timestamps or purge sweeps."""
        return [(entry.op.tag, json.dumps(step_to_params(entry.op), sort_keys=True))
                for entry in self.trace
                if entry.outcome.is_applied and not isinstance(entry.op, Purge)]

    def gate_log(self, label: str) -> List[GateRecord]:
        return self.gates[label].log

    def enabled_intervals(self, label: str) -> List[Tuple[int, int]]:
        return self.gates[label].enabled_intervals(self.script.duration_ms)


# --- simulator --------------------------------------------------------------

class ScenarioSimulator:
    """
    One run of a script on a simpy environment.

    Devices, subjects, sweeps and (for the registry transport) polls and
    consent pulls are simpy processes; events scheduled at the same instant
    run in process creation order, so equal (script, seed) give equal traces.
    """

    def __init__(self, script: ScenarioScript, seed: Optional[int] = None, transport: Optional[str] = None,
                 config=None):
        self.script = script
        self.seed = script.seed if seed is None else int(seed)
        self.transport_name = transport or script.transport
        if self.transport_name not in TRANSPORTS:
            raise ScriptError(f"Unknown transport '{self.transport_name}'")
        self.config = config or get_config()
        self.logger = logging.getLogger(__name__)

        self.env = simpy.Environment()
        self.engine = SemanticsEngine()
        self.receipts = ReceiptLog()
        self.transport = load_transport(self.transport_name)
        seeds = np.random.SeedSequence(self.seed).spawn(len(script.subjects) + 1)

        self.interval_ms = int(self.config.get('beacon.advertising_interval_ms', 250))
        self.sweep_period_ms = int(self.config.get('simulation.sweep_period_ms', 1000))
        self.pull_period_ms = int(self.config.get('simulation.consent_pull_period_ms', 1000))

        self.bus = None
        self.registry = None
        if self.transport_name == "beacon":
            self.bus = RadioBus(self.config.get('beacon.drop_probability', 0.0),
                                self.config.get('beacon.range_margin_m', 0.0), seeds[-1])
        else:
            tokens = {f"controller:{d.controller}": d.controller for d in script.devices}
            tokens.update({f"subject:{s.name}": s.name for s in script.subjects})
            self.registry = RegistryStore(TokenBook(tokens), clock=lambda: int(self.env.now),
                                          grid_cell_m=self.config.get('registry.grid_cell_m', 0))

        self.beacons: Dict[str, BeaconEndpoint] = {}
        self.labels = {d.device_id: d.label for d in script.devices}
        self.gates = {d.label: OccupancyGate(d.device_id, d.room[0], d.room[1])
                      for d in script.devices if d.room is not None}
        self.tracked: Dict[str, Set[SubjectDeviceId]] = {d.label: set() for d in script.devices}
        self.pulled: Dict[str, int] = {d.label: 0 for d in script.devices}

        self.custodians: Dict[str, PersonalDataCustodian] = {}
        self.pollers: Dict[str, RegistryPoller] = {}
        for index, subject in enumerate(script.subjects):
            self._build_subject(subject, seeds[index])

    # setup

    def _position_of(self, subject_id: SubjectDeviceId):
        return lambda: self.engine.state.position.get(subject_id)

    def _prompt_handler(self, subject: SubjectSpec):
        def answer(decl: Declaration) -> Optional[Answer]:
            return subject.answers.get(self.labels.get(decl.device_id), subject.default_answer)
        return answer

    def _build_subject(self, subject: SubjectSpec, seed):
        gateway = subject.gateway_id
        if self.transport_name == "beacon":
            context = {'bus': self.bus, 'position': self._position_of(gateway)}
        else:
            context = {'client': EmbeddedRegistryClient(self.registry, f"subject:{subject.name}")}

        pdc = PersonalDataCustodian(gateway, self.engine, self.transport, context,
                                    identifiers=subject.sources(), rules=list(subject.rules),
                                    prompt_handler=self._prompt_handler(subject),
                                    retries=self.config.get('pdc.retries', 3), seed=seed)
        self.custodians[subject.name] = pdc

        if self.transport_name == "beacon":
            self.bus.attach_scanner(ScannerEndpoint(self._position_of(gateway), pdc.on_declaration,
                                                    name=f"scanner-{subject.name}"))
        else:
            self.pollers[subject.name] = RegistryPoller(
                EmbeddedRegistryClient(self.registry, f"subject:{subject.name}"),
                self._position_of(gateway), pdc.on_declaration,
                period_ms=self.config.get('registry.poll_period_ms', 2000),
                lookahead_m=self.config.get('registry.lookahead_m', 0.0),
                backoff_max_ms=self.config.get('registry.backoff_max_ms', 30000))

    def _setup_subjects(self):
        for subject in self.script.subjects:
            gateway = subject.gateway_id
            for data_type, source in subject.sources().items():
                self.engine.execute(Define(source, data_type, None, source.value), 0)
                if source != gateway:
                    self.engine.execute(Pair(source, gateway), 0)

    # gates

    def _guests(self, spec: DeviceSpec) -> Dict[str, Tuple[SubjectDeviceId, SubjectDeviceId]]:
        guests = {}
        for subject in self.script.subjects:
            source = subject.sources().get(spec.data_type)
            if source is not None:
                guests[subject.name] = (subject.gateway_id, source)
        return guests

    def _present(self, label: str) -> List[Tuple[str, SubjectDeviceId]]:
        spec = self.script.device(label)
        guests = self._guests(spec)
        positions = {name: self.engine.state.position.get(gw) for name, (gw, _) in guests.items()}
        return [(name, guests[name][1]) for name in self.gates[label].present(positions)]

    def _evaluate_gates(self, cause: str, labels=None):
        for label in sorted(labels if labels is not None else self.gates):
            self.gates[label].evaluate(int(self.env.now), self._present(label), self.receipts, cause)

    def _on_receipt(self, receipt: ConsentReceipt):
        label = self.labels.get(receipt.device_id)
        if label in self.gates:
            self._evaluate_gates("consent", [label])

    # processes

    def _device_process(self, spec: DeviceSpec):
        yield self.env.timeout(spec.declare_at)
        decl = spec.declaration
        self.engine.execute(Declare(decl.device_id, decl.position, decl.range, decl.data_type, decl.policy),
                            int(self.env.now))
        if self.transport_name == "beacon":
            beacon = BeaconEndpoint(decl, self.bus, self.receipts, interval_ms=self.interval_ms,
                                    phase_ms=int(self.env.now), on_consent=self._on_receipt,
                                    name=f"beacon-{spec.label}")
            self.beacons[spec.label] = beacon
            self.env.process(self._beacon_process(beacon))
        else:
            EmbeddedRegistryClient(self.registry, f"controller:{spec.controller}").put_device(decl)

        yield self.env.timeout(spec.install_at - spec.declare_at)
        self.engine.execute(Install(decl.device_id, decl.position, decl.range, decl.data_type, decl.policy),
                            int(self.env.now))
        if spec.capture_every_ms > 0:
            self.env.process(self._capture_process(spec))

    def _beacon_process(self, beacon: BeaconEndpoint):
        while True:
            beacon.tick(int(self.env.now))
            yield self.env.timeout(beacon.interval_ms)

    def _capture_process(self, spec: DeviceSpec):
        first = max(spec.capture_offset_ms, spec.install_at)
        yield self.env.timeout(first - self.env.now)
        while True:
            self._capture(spec, int(self.env.now))
            yield self.env.timeout(spec.capture_every_ms)

    def _capture(self, spec: DeviceSpec, now: int):
        st = self.engine.state
        if spec.label in self.gates:
            if not self.gates[spec.label].enabled:
                self.logger.debug(f"{spec.label}: processing disabled at {now} ms")
                return
            targets = [source for _, source in self._present(spec.label)]
        else:
            in_range = {source for _, source in self._guests(spec).values()
                        if st.position.get(source) is not None
                        and within(st.position[source], spec.position, spec.range)}
            tracked = self.tracked[spec.label]
            targets = sorted(in_range | tracked)
            self.tracked[spec.label] = in_range

        for source in targets:
            policy, value = self.engine.state.store_s_get((source, spec.data_type))
            self.engine.execute(Collect(spec.device_id, source, spec.data_type, policy, value), now)

    def _subject_process(self, subject: SubjectSpec):
        pdc = self.custodians[subject.name]
        for at, position in subject.path:
            yield self.env.timeout(at - self.env.now)
            now = int(self.env.now)
            before = {label: self._present(label) for label in self.gates}
            self.engine.execute(Move(subject.gateway_id, position), now)
            for source in subject.sources().values():
                if source != subject.gateway_id:
                    self.engine.execute(Move(source, position), now)
            pdc.flush(now)
            for label in sorted(self.gates):
                after = self._present(label)
                if after != before[label]:
                    cause = "enter" if len(after) > len(before[label]) else "leave"
                    self._evaluate_gates(cause, [label])

    def _poll_process(self, poller: RegistryPoller):
        while True:
            poller.poll_once(int(self.env.now))
            yield self.env.timeout(max(1, poller.next_poll - int(self.env.now)))

    def _consent_pull_process(self):
        while True:
            now = int(self.env.now)
            for spec in self.script.devices:
                if spec.declare_at > now:
                    continue
                client = EmbeddedRegistryClient(self.registry, f"controller:{spec.controller}")
                try:
                    records = client.get_consents(spec.device_id, 0)
                except ConsentFrameworkError as e:
                    self.logger.warning(f"{spec.label}: consent pull failed: {e.message}")
                    continue
                for record in records[self.pulled[spec.label]:]:
                    if not implies(spec.policy, record.policy):
                        self.logger.info(f"{spec.label}: consent from {record.subject} not met by the device policy")
                        continue
                    receipt = ConsentReceipt.issue(spec.device_id, record.subject, record.policy,
                                                   record.timestamp, record.nonce, "registry")
                    self.receipts.append(receipt)
                    self._on_receipt(receipt)
                self.pulled[spec.label] = len(records)
            yield self.env.timeout(self.pull_period_ms)

    def _sweep_process(self):
        while True:
            yield self.env.timeout(self.sweep_period_ms)
            self.engine.sweep(int(self.env.now))

    def _event_process(self, event: ScenarioEvent):
        yield self.env.timeout(event.at - self.env.now)
        now = int(self.env.now)
        spec = self.script.device(event.device)
        pdc = self.custodians[event.subject]
        try:
            outcome = pdc.withdraw(spec.device_id, spec.data_type, now)
        except ConsentFrameworkError as e:
            self.logger.warning(f"Withdrawal by {event.subject} from {event.device} failed: {e.message}")
            return
        if outcome.is_applied:
            self.receipts.revoke(spec.device_id, pdc.identifiers[spec.data_type], now)
            if event.device in self.gates:
                self._evaluate_gates("withdraw", [event.device])

    # run

    def run(self) -> ScenarioResult:
        self.logger.info(f"Running scenario '{self.script.name}' ({self.script.kind}) over "
                         f"{self.transport_name}, seed {self.seed}")
        self._setup_subjects()
        self._evaluate_gates("start")

        for spec in self.script.devices:
            self.env.process(self._device_process(spec))
        for subject in self.script.subjects:
            self.env.process(self._subject_process(subject))
        for name in sorted(self.pollers):
            self.env.process(self._poll_process(self.pollers[name]))
        if self.registry is not None:
            self.env.process(self._consent_pull_process())
        self.env.process(self._sweep_process())
        for event in self.script.events:
            self.env.process(self._event_process(event))

        self.env.run(until=self.script.duration_ms)

        violations = verify_trace(self.engine.trace, self.config.get('semantics.gateway_knows_check', False))
        for violation in violations:
            self.logger.warning(f"Property violation: {violation}")
        self.logger.info(f"Scenario '{self.script.name}' done: {len(self.engine.trace)} steps, "
                         f"{len(self.receipts)} receipts, {len(violations)} violations")
        return ScenarioResult(self.script, self.transport_name, self.seed, list(self.engine.trace),
                              list(self.receipts), self.gates, violations, self.receipts.revocations)


def run_script(script: ScenarioScript, seed=None, transport=None, config=None) -> ScenarioResult:
    return ScenarioSimulator(script, seed, transport, config).run()


def _run_kind(kind: str, script: ScenarioScript, seed, transport, config) -> ScenarioResult:
    if script.kind != kind:
        raise ScriptError(f"Script '{script.name}' is a {script.kind} scenario, not {kind}")
    return run_script(script, seed, transport, config)


def run_anpr(script: ScenarioScript, seed=None, transport=None, config=None) -> ScenarioResult:
    """Plate-reading cameras over a road with passing vehicles."""
    return _run_kind("anpr", script, seed, transport, config)


def run_mall(script: ScenarioScript, seed=None, transport=None, config=None) -> ScenarioResult:
    """Wi-Fi trackers collecting MAC addresses along a walking path."""
    return _run_kind("mall", script, seed, transport, config)


def run_meeting_room(script: ScenarioScript, seed=None, transport=None, config=None) -> ScenarioResult:
    """Room microphone gated on present-guest consents."""
    return _run_kind("meeting_room", script, seed, transport, config)


RUNNERS = {"anpr": run_anpr, "mall": run_mall, "meeting_room": run_meeting_room}
