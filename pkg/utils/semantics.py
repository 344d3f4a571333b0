"""
Operational semantics for declarations, collection and consent.

Seven operations act on a SystemState. Each has a precondition, checked by
apply(), and a postcondition, evaluated independently by
check_postcondition(). A trace of timestamped operations can be replayed by
verify_trace(), which reports violations of the four derived properties:

- INFORMED: a subject device was informed of a declaration before collection
- SUBJECT_POLICY: stored data carries the subject's last communicated policy
- LAST_REQUIREMENT: a require leaves the last communicated policy in place
- CONTROLLER_POLICY: stored data is covered by the controller's policy
"""

import json
import logging
import queue
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, ClassVar, Dict, Iterable, List, Optional, Tuple, Union

from helper.errors import MalformedOperationError, ReplayError
from models.policy import DataTypeCode, MaybePolicy, Policy, implies, override
from models.state import (
    EMPTY_ENTRY, DeviceId, DeviceInfo, Position, Range, SubjectDeviceId, SystemState,
    validate_value, within,
)

logger = logging.getLogger(__name__)


# --- operations -------------------------------------------------------------

@dataclass(frozen=True)
class Install:
    tag: ClassVar[str] = "install"
    device_id: DeviceId
    position: Position
    range: Range
    data_type: DataTypeCode
    policy: Policy

    @property
    def info(self) -> DeviceInfo:
        return DeviceInfo(self.position, self.range, self.data_type, self.policy)


@dataclass(frozen=True)
class Declare:
    tag: ClassVar[str] = "declare"
    device_id: DeviceId
    position: Position
    range: Range
    data_type: DataTypeCode
    policy: Policy

    @property
    def info(self) -> DeviceInfo:
        return DeviceInfo(self.position, self.range, self.data_type, self.policy)


@dataclass(frozen=True)
class Collect:
    tag: ClassVar[str] = "collect"
    device_id: DeviceId
    subject: SubjectDeviceId
    data_type: DataTypeCode
    policy: MaybePolicy
    value: Optional[bytes]


@dataclass(frozen=True)
class Move:
    tag: ClassVar[str] = "move"
    subject: SubjectDeviceId
    position: Position


@dataclass(frozen=True)
class Define:
    tag: ClassVar[str] = "define"
    subject: SubjectDeviceId
    data_type: DataTypeCode
    policy: MaybePolicy
    value: Optional[bytes]


@dataclass(frozen=True)
class Pair:
    tag: ClassVar[str] = "pair"
    subject: SubjectDeviceId
    target: SubjectDeviceId


@dataclass(frozen=True)
class Require:
    tag: ClassVar[str] = "require"
    requester: SubjectDeviceId
    subject: SubjectDeviceId
    device_id: DeviceId
    data_type: DataTypeCode
    policy: MaybePolicy
    value: Optional[bytes]


Operation = Union[Install, Declare, Collect, Move, Define, Pair, Require]
OPERATION_TYPES = (Install, Declare, Collect, Move, Define, Pair, Require)


@dataclass(frozen=True)
class Mutation:
    """Direct write to one state map, bypassing apply(). value None deletes."""
    tag: ClassVar[str] = "mutate"
    map_name: str
    key: Any
    value: Any


@dataclass(frozen=True)
class Purge:
    tag: ClassVar[str] = "purge"
    now: int


Step = Union[Operation, Mutation, Purge]


# --- outcomes and trace -----------------------------------------------------

APPLIED = "applied"
REJECTED = "rejected"
FORCED = "forced"


@dataclass(frozen=True)
class Outcome:
    status: str
    reason: Optional[str] = None

    @classmethod
    def applied(cls) -> "Outcome":
        return cls(APPLIED)

    @classmethod
    def rejected(cls, reason: str) -> "Outcome":
        return cls(REJECTED, reason)

    @property
    def is_applied(self) -> bool:
        return self.status == APPLIED


@dataclass(frozen=True)
class TraceEntry:
    timestamp: int
    op: Step
    outcome: Outcome

    def to_json(self) -> Dict[str, Any]:
        entry = {
            "timestamp": self.timestamp,
            "op": self.op.tag,
            "params": step_to_params(self.op),
            "outcome": self.outcome.status,
        }
        if self.outcome.reason is not None:
            entry["reason"] = self.outcome.reason
        return entry

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "TraceEntry":
        try:
            return cls(
                int(data["timestamp"]),
                step_from_params(data["op"], data["params"]),
                Outcome(data["outcome"], data.get("reason")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ReplayError(f"Malformed trace entry: {e}")


Trace = List[TraceEntry]


# --- parameter codecs -------------------------------------------------------

def _policy_json(p: MaybePolicy):
    return p.to_dict() if p is not None else None


def _policy_from(data) -> MaybePolicy:
    return Policy.from_dict(data) if data is not None else None


def _value_json(v: Optional[bytes]):
    return v.hex() if v is not None else None


def _value_from(data) -> Optional[bytes]:
    return bytes.fromhex(data) if data is not None else None


def _info_from(params) -> Tuple[Position, Range, DataTypeCode, Policy]:
    info = DeviceInfo.from_dict(params)
    return info.position, info.range, info.data_type, info.policy


def _store_key_c(key):
    device_id, subject, data_type = key
    return {"device_id": device_id.hex(), "subject": subject.to_dict(), "data_type": data_type.name}


def _store_key_c_from(data):
    return (DeviceId.from_hex(data["device_id"]), SubjectDeviceId.from_dict(data["subject"]),
            DataTypeCode[data["data_type"]])


def _store_key_s(key):
    subject, data_type = key
    return {"subject": subject.to_dict(), "data_type": data_type.name}


def _store_key_s_from(data):
    return (SubjectDeviceId.from_dict(data["subject"]), DataTypeCode[data["data_type"]])


def _entry_json(entry):
    return {"policy": _policy_json(entry[0]), "value": _value_json(entry[1])}


def _entry_from(data):
    return (_policy_from(data["policy"]), _value_from(data["value"]))


# map name -> (key to json, key from json, value to json, value from json)
MUTABLE_MAPS: Dict[str, Tuple[Callable, Callable, Callable, Callable]] = {
    "config": (lambda k: {"device_id": k.hex()}, lambda d: DeviceId.from_hex(d["device_id"]),
               lambda v: v.to_dict(), DeviceInfo.from_dict),
    "declared": (lambda k: {"device_id": k.hex()}, lambda d: DeviceId.from_hex(d["device_id"]),
                 lambda v: v.to_dict(), DeviceInfo.from_dict),
    "knows": (lambda k: {"subject": k[0].to_dict(), "device_id": k[1].hex()},
              lambda d: (SubjectDeviceId.from_dict(d["subject"]), DeviceId.from_hex(d["device_id"])),
              lambda v: v.to_dict(), DeviceInfo.from_dict),
    "position": (lambda k: {"subject": k.to_dict()}, lambda d: SubjectDeviceId.from_dict(d["subject"]),
                 lambda v: list(v.to_meters()), lambda d: Position.from_meters(*d)),
    "paired": (lambda k: {"subject": k.to_dict()}, lambda d: SubjectDeviceId.from_dict(d["subject"]),
               lambda v: v.to_dict(), SubjectDeviceId.from_dict),
    "store_c": (_store_key_c, _store_key_c_from, _entry_json, _entry_from),
    "store_s": (_store_key_s, _store_key_s_from, _entry_json, _entry_from),
}


def step_to_params(op: Step) -> Dict[str, Any]:
    """Serialize the parameters of an operation, mutation or purge."""
    if isinstance(op, (Install, Declare)):
        return {"device_id": op.device_id.hex(), **op.info.to_dict()}
    if isinstance(op, Collect):
        return {"device_id": op.device_id.hex(), "subject": op.subject.to_dict(),
                "data_type": op.data_type.name, "policy": _policy_json(op.policy),
                "value": _value_json(op.value)}
    if isinstance(op, Move):
        return {"subject": op.subject.to_dict(), "position": list(op.position.to_meters())}
    if isinstance(op, Define):
        return {"subject": op.subject.to_dict(), "data_type": op.data_type.name,
                "policy": _policy_json(op.policy), "value": _value_json(op.value)}
    if isinstance(op, Pair):
        return {"subject": op.subject.to_dict(), "target": op.target.to_dict()}
    if isinstance(op, Require):
        return {"requester": op.requester.to_dict(), "subject": op.subject.to_dict(),
                "device_id": op.device_id.hex(), "data_type": op.data_type.name,
                "policy": _policy_json(op.policy), "value": _value_json(op.value)}
    if isinstance(op, Mutation):
        key_json, _, value_json, _ = MUTABLE_MAPS[op.map_name]
        return {"map": op.map_name, "key": key_json(op.key),
                "value": value_json(op.value) if op.value is not None else None}
    if isinstance(op, Purge):
        return {"now": op.now}
    raise MalformedOperationError(f"Unknown operation {op!r}")


def step_from_params(tag: str, params: Dict[str, Any]) -> Step:
    """Rebuild an operation from its trace parameters."""
    try:
        if tag in ("install", "declare"):
            cls = Install if tag == "install" else Declare
            return cls(DeviceId.from_hex(params["device_id"]), *_info_from(params))
        if tag == "collect":
            return Collect(DeviceId.from_hex(params["device_id"]),
                           SubjectDeviceId.from_dict(params["subject"]),
                           DataTypeCode[params["data_type"]],
                           _policy_from(params["policy"]), _value_from(params["value"]))
        if tag == "move":
            return Move(SubjectDeviceId.from_dict(params["subject"]), Position.from_meters(*params["position"]))
        if tag == "define":
            return Define(SubjectDeviceId.from_dict(params["subject"]), DataTypeCode[params["data_type"]],
                          _policy_from(params["policy"]), _value_from(params["value"]))
        if tag == "pair":
            return Pair(SubjectDeviceId.from_dict(params["subject"]), SubjectDeviceId.from_dict(params["target"]))
        if tag == "require":
            return Require(SubjectDeviceId.from_dict(params["requester"]),
                           SubjectDeviceId.from_dict(params["subject"]),
                           DeviceId.from_hex(params["device_id"]), DataTypeCode[params["data_type"]],
                           _policy_from(params["policy"]), _value_from(params["value"]))
        if tag == "mutate":
            _, key_from, _, value_from = MUTABLE_MAPS[params["map"]]
            value = params.get("value")
            return Mutation(params["map"], key_from(params["key"]),
                            value_from(value) if value is not None else None)
        if tag == "purge":
            return Purge(int(params["now"]))
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedOperationError(f"Invalid parameters for {tag}: {e}")
    raise MalformedOperationError(f"Unknown operation tag '{tag}'")


# --- transitions ------------------------------------------------------------

def _validate(op: Operation):
    if not isinstance(op, OPERATION_TYPES):
        raise MalformedOperationError(f"Not an operation: {op!r}")
    if isinstance(op, (Collect, Define, Require)):
        reason = validate_value(op.data_type, op.value)
        if reason:
            raise MalformedOperationError(f"{op.tag}: {reason}")


def _set_store_c(st: SystemState, key, entry, now: Optional[int]):
    if entry == EMPTY_ENTRY:
        st.store_c.pop(key, None)
        st.collected_at.pop(key, None)
    else:
        st.store_c[key] = entry
        if now is not None:
            st.collected_at[key] = now


def apply(st: SystemState, op: Operation, now: int = 0) -> Tuple[SystemState, Outcome]:
    """
    Apply one operation.

    Args:
        st: Current state, never modified
        op: Operation to apply
        now: Timestamp in ms, recorded beside collected data

    Returns:
        (new state, outcome); the state is st itself when rejected

    Raises:
        MalformedOperationError: for structurally invalid parameters
    """
    _validate(op)

    if isinstance(op, Install):
        declared = st.declared.get(op.device_id)
        if declared is None:
            return st, Outcome.rejected("not declared")
        if declared != op.info:
            return st, Outcome.rejected("declared with a different tuple")
        new = st.copy()
        new.config[op.device_id] = op.info
        return new, Outcome.applied()

    if isinstance(op, Declare):
        new = st.copy()
        new.declared[op.device_id] = op.info
        for subject, pos in st.position.items():
            if within(pos, op.position, op.range):
                new.knows[(subject, op.device_id)] = op.info
        return new, Outcome.applied()

    if isinstance(op, Collect):
        cfg = st.config.get(op.device_id)
        if cfg is None:
            return st, Outcome.rejected("device not installed")
        if cfg.data_type != op.data_type:
            return st, Outcome.rejected("data type mismatch")
        key = (op.device_id, op.subject, op.data_type)
        stored_policy, _ = st.store_c_get(key)
        pos = st.position.get(op.subject)
        if pos is None:
            return st, Outcome.rejected("subject has no position")
        if not within(pos, cfg.position, cfg.range):
            return st, Outcome.rejected("subject out of range")
        if st.store_s_get((op.subject, op.data_type)) != (op.policy, op.value):
            return st, Outcome.rejected("subject store mismatch")
        effective = override(op.policy, stored_policy)
        if effective is None:
            return st, Outcome.rejected("no subject policy")
        new = st.copy()
        if implies(cfg.policy, effective):
            _set_store_c(new, key, (effective, op.value), now)
        else:
            _set_store_c(new, key, EMPTY_ENTRY, now)
        return new, Outcome.applied()

    if isinstance(op, Move):
        new = st.copy()
        new.position[op.subject] = op.position
        for device_id, info in st.declared.items():
            if within(op.position, info.position, info.range):
                new.knows[(op.subject, device_id)] = info
        return new, Outcome.applied()

    if isinstance(op, Define):
        key = (op.subject, op.data_type)
        old_policy, old_value = st.store_s_get(key)
        new = st.copy()
        entry = (override(op.policy, old_policy), override(op.value, old_value))
        if entry == EMPTY_ENTRY:
            new.store_s.pop(key, None)
        else:
            new.store_s[key] = entry
        return new, Outcome.applied()

    if isinstance(op, Pair):
        new = st.copy()
        new.paired[op.subject] = op.target
        return new, Outcome.applied()

    # Require
    cfg = st.config.get(op.device_id)
    if cfg is None:
        return st, Outcome.rejected("device not installed")
    if cfg.data_type != op.data_type:
        return st, Outcome.rejected("data type mismatch")
    key = (op.device_id, op.subject, op.data_type)
    stored_policy, stored_value = st.store_c_get(key)
    if stored_policy is None and stored_value is None:
        return st, Outcome.rejected("nothing stored")
    pos = st.position.get(op.requester)
    if pos is None:
        return st, Outcome.rejected("requester has no position")
    if not within(pos, cfg.position, cfg.range):
        return st, Outcome.rejected("requester out of range")
    if st.store_s_get((op.requester, op.data_type))[0] != op.policy:
        return st, Outcome.rejected("requester policy mismatch")
    if st.store_s_get((op.subject, op.data_type))[1] != op.value:
        return st, Outcome.rejected("subject value mismatch")
    if st.paired_to(op.subject) != op.requester:
        return st, Outcome.rejected("not paired")
    new = st.copy()
    _set_store_c(new, key, (override(op.policy, stored_policy), override(op.value, stored_value)), None)
    return new, Outcome.applied()


def purge_expired(st: SystemState, now: int) -> SystemState:
    """Drop every collected entry whose retention has elapsed (inclusive)."""
    expired = [
        key for key, (policy, _) in st.store_c.items()
        if policy is not None and key in st.collected_at
        and now - st.collected_at[key] >= policy.retention * 1000
    ]
    if not expired:
        return st
    new = st.copy()
    for key in expired:
        _set_store_c(new, key, EMPTY_ENTRY, None)
    return new


def apply_mutation(st: SystemState, mutation: Mutation, now: int = 0) -> SystemState:
    if mutation.map_name not in MUTABLE_MAPS:
        raise MalformedOperationError(f"Unknown state map '{mutation.map_name}'")
    new = st.copy()
    if mutation.map_name == "store_c":
        _set_store_c(new, mutation.key, mutation.value if mutation.value is not None else EMPTY_ENTRY, now)
        return new
    target = getattr(new, mutation.map_name)
    if mutation.value is None:
        target.pop(mutation.key, None)
    else:
        target[mutation.key] = mutation.value
    return new


def run_step(st: SystemState, op: Step, now: int) -> Tuple[SystemState, Outcome]:
    """Apply an operation, a direct mutation or a purge sweep."""
    if isinstance(op, Mutation):
        return apply_mutation(st, op, now), Outcome(FORCED)
    if isinstance(op, Purge):
        return purge_expired(st, op.now), Outcome.applied()
    return apply(st, op, now)


# --- postcondition oracle ---------------------------------------------------

def _frame_holds(before: SystemState, after: SystemState, touched: Dict[str, set]) -> bool:
    for name in SystemState.MAPS:
        old, new = getattr(before, name), getattr(after, name)
        allowed = touched.get(name, set())
        for key in set(old) | set(new):
            if key in allowed:
                continue
            if old.get(key, None) != new.get(key, None):
                return False
    return True


def check_postcondition(before: SystemState, op: Operation, after: SystemState) -> bool:
    """
    Evaluate the postcondition predicate of an applied operation.

    Written directly from the predicates rather than by re-running apply():
    the named entries must hold their required values and every other entry
    must be unchanged.
    """
    if isinstance(op, Install):
        return after.config.get(op.device_id) == op.info and \
            _frame_holds(before, after, {"config": {op.device_id}})

    if isinstance(op, Declare):
        informed = {(s, op.device_id) for s, pos in before.position.items()
                    if within(pos, op.position, op.range)}
        return after.declared.get(op.device_id) == op.info and \
            all(after.knows.get(k) == op.info for k in informed) and \
            _frame_holds(before, after, {"declared": {op.device_id}, "knows": informed})

    if isinstance(op, Collect):
        key = (op.device_id, op.subject, op.data_type)
        effective = override(op.policy, before.store_c_get(key)[0])
        if effective is None:
            return False
        expected = (effective, op.value) if implies(before.config[op.device_id].policy, effective) else EMPTY_ENTRY
        return after.store_c_get(key) == expected and \
            _frame_holds(before, after, {"store_c": {key}, "collected_at": {key}})

    if isinstance(op, Move):
        informed = {d: info for d, info in before.declared.items()
                    if within(op.position, info.position, info.range)}
        return after.position.get(op.subject) == op.position and \
            all(after.knows.get((op.subject, d)) == info for d, info in informed.items()) and \
            _frame_holds(before, after, {"position": {op.subject},
                                         "knows": {(op.subject, d) for d in informed}})

    if isinstance(op, Define):
        key = (op.subject, op.data_type)
        old_policy, old_value = before.store_s_get(key)
        expected = (override(op.policy, old_policy), override(op.value, old_value))
        return after.store_s_get(key) == expected and _frame_holds(before, after, {"store_s": {key}})

    if isinstance(op, Pair):
        return after.paired_to(op.subject) == op.target and \
            _frame_holds(before, after, {"paired": {op.subject}})

    if isinstance(op, Require):
        key = (op.device_id, op.subject, op.data_type)
        old_policy, old_value = before.store_c_get(key)
        expected = (override(op.policy, old_policy), override(op.value, old_value))
        return after.store_c_get(key) == expected and \
            _frame_holds(before, after, {"store_c": {key}, "collected_at": {key}})

    return False


# --- trace files ------------------------------------------------------------

def write_trace(trace: Iterable[TraceEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in trace:
            f.write(json.dumps(entry.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def load_trace(path) -> Trace:
    trace = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ReplayError(f"Line {lineno} is not JSON: {e}")
            try:
                trace.append(TraceEntry.from_json(data))
            except MalformedOperationError as e:
                raise ReplayError(f"Line {lineno}: {e.message}")
    return trace


# --- verifier ---------------------------------------------------------------

class Property(Enum):
    INFORMED = "informed before collection"
    SUBJECT_POLICY = "collected under the last subject policy"
    LAST_REQUIREMENT = "require keeps the last subject policy"
    CONTROLLER_POLICY = "stored data covered by controller policy"


@dataclass(frozen=True)
class PropertyViolation:
    property: Property
    index: int
    timestamp: int
    detail: str

    def __str__(self):
        return f"[{self.timestamp} ms #{self.index}] {self.property.name}: {self.detail}"


@dataclass
class _Tracker:
    # last subject policy communicated per (device, subject, type)
    last_policy: Dict[Tuple, Policy] = field(default_factory=dict)
    # last writer of each store_c entry
    writer: Dict[Tuple, str] = field(default_factory=dict)
    reported: set = field(default_factory=set)


def _controller_violations(st: SystemState, tracker: _Tracker, index: int, ts: int) -> List[PropertyViolation]:
    found = []
    for key, (policy, value) in st.store_c.items():
        if value is None or tracker.writer.get(key) not in ("collect", "mutate"):
            continue
        cfg = st.config.get(key[0])
        if cfg is not None and policy is not None and implies(cfg.policy, policy):
            continue
        marker = (key, policy, value, cfg)
        if marker in tracker.reported:
            continue
        tracker.reported.add(marker)
        found.append(PropertyViolation(Property.CONTROLLER_POLICY, index, ts,
                                       f"device {key[0]} stores data of {key[1]} under an uncovered policy"))
    return found


def verify_trace(trace: Iterable[TraceEntry], gateway_knows_check: bool = False) -> List[PropertyViolation]:
    """
    Replay a trace from the empty state and report property violations.

    Args:
        trace: Timestamped entries, replayed in order
        gateway_knows_check: Also require the paired gateway to know the device

    Returns:
        Every violation found, in trace order

    Raises:
        ReplayError: when timestamps decrease or a recorded outcome differs
    """
    st = SystemState()
    tracker = _Tracker()
    violations: List[PropertyViolation] = []
    last_ts = None

    for index, entry in enumerate(trace):
        op, ts = entry.op, entry.timestamp
        if last_ts is not None and ts < last_ts:
            raise ReplayError(f"Entry {index}: timestamp {ts} precedes {last_ts}")
        last_ts = ts

        try:
            after, outcome = run_step(st, op, ts)
        except MalformedOperationError as e:
            raise ReplayError(f"Entry {index}: {e.message}")
        if outcome.status != entry.outcome.status:
            raise ReplayError(f"Entry {index}: recorded {entry.outcome.status}, replayed {outcome.status}"
                              + (f" ({outcome.reason})" if outcome.reason else ""))

        if outcome.is_applied and isinstance(op, Collect):
            declared = st.declared.get(op.device_id)
            knowers = [op.subject]
            if gateway_knows_check and st.paired_to(op.subject) != op.subject:
                knowers.append(st.paired_to(op.subject))
            for knower in knowers:
                if declared is None or st.knows.get((knower, op.device_id)) != declared:
                    violations.append(PropertyViolation(
                        Property.INFORMED, index, ts,
                        f"{knower} was not informed of device {op.device_id} before collection"))

            key = (op.device_id, op.subject, op.data_type)
            if op.policy is not None:
                tracker.last_policy[key] = op.policy
            tracker.writer[key] = "collect"
            policy, value = after.store_c_get(key)
            if value is not None and policy != tracker.last_policy.get(key):
                violations.append(PropertyViolation(
                    Property.SUBJECT_POLICY, index, ts,
                    f"device {op.device_id} stored data of {op.subject} under a policy the subject never sent"))
        elif outcome.is_applied and isinstance(op, Require):
            key = (op.device_id, op.subject, op.data_type)
            if op.policy is not None:
                tracker.last_policy[key] = op.policy
            tracker.writer[key] = "require"
            if after.store_c_get(key)[0] != tracker.last_policy.get(key):
                violations.append(PropertyViolation(
                    Property.LAST_REQUIREMENT, index, ts,
                    f"device {op.device_id} keeps a policy for {op.subject} other than the last one required"))
        elif isinstance(op, Mutation) and op.map_name == "store_c":
            tracker.writer[op.key] = "mutate"

        st = after
        violations.extend(_controller_violations(st, tracker, index, ts))

    return violations


# --- engine -----------------------------------------------------------------

class SemanticsEngine:
    """
    Single writer of the system state.

    Producers call submit() from any thread; drain() applies queued steps in
    order and records each one in the trace.
    """

    def __init__(self, state: Optional[SystemState] = None):
        self.state = state if state is not None else SystemState()
        self.trace: Trace = []
        self.listeners: List[Callable[[TraceEntry, SystemState], None]] = []
        self._queue: "queue.Queue[Tuple[int, Step]]" = queue.Queue()
        self._lock = threading.Lock()
        self._last_ts = 0
        self.logger = logging.getLogger(__name__)

    def submit(self, op: Step, timestamp: int) -> None:
        self._queue.put((timestamp, op))

    def drain(self) -> List[TraceEntry]:
        processed = []
        with self._lock:
            while True:
                try:
                    timestamp, op = self._queue.get_nowait()
                except queue.Empty:
                    break
                processed.append(self._step(op, timestamp))
        for entry in processed:
            for listener in self.listeners:
                listener(entry, self.state)
        return processed

    def execute(self, op: Step, timestamp: int) -> Outcome:
        """Submit one step and drain the queue, returning that step's outcome."""
        self.submit(op, timestamp)
        for entry in reversed(self.drain()):
            if entry.op is op:
                return entry.outcome
        raise RuntimeError(f"Step {op.tag} was not processed")

    def sweep(self, now: int) -> Optional[Outcome]:
        """Purge expired entries; the sweep is traced only when it removes data."""
        if purge_expired(self.state, now) is self.state:
            return None
        return self.execute(Purge(now), now)

    def _step(self, op: Step, timestamp: int) -> TraceEntry:
        if timestamp < self._last_ts:
            self.logger.debug(f"Clamping timestamp {timestamp} to {self._last_ts}")
            timestamp = self._last_ts
        self._last_ts = timestamp

        self.state, outcome = run_step(self.state, op, timestamp)
        entry = TraceEntry(timestamp, op, outcome)
        self.trace.append(entry)

        if outcome.status == REJECTED:
            self.logger.info(f"{timestamp} ms {op.tag} rejected: {outcome.reason}")
        else:
            self.logger.debug(f"{timestamp} ms {op.tag} {outcome.status}")
        return entry
