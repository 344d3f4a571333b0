"""
Abstract system state
Finite maps for device configuration, declarations, subject knowledge,
positions, pairing and the two data stores, plus the geometry they rely on.
"""

import uuid
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Set, Tuple

from models.policy import DataTypeCode, MaybePolicy, Policy

INT32_MIN = -(2 ** 31)
INT32_MAX = 2 ** 31 - 1
MAX_SUBJECT_VALUE = 32
MAX_DATA_VALUE = 256

DEVICE_NAMESPACE = uuid.UUID("6f1c2a9e-41d0-4a57-9a8e-0c5d3b7e2f10")


@dataclass(frozen=True, order=True)
class Position:
    """Planar position in centimeters."""
    x_cm: int
    y_cm: int

    def __post_init__(self):
        for value in (self.x_cm, self.y_cm):
            if not INT32_MIN <= value <= INT32_MAX:
                raise ValueError(f"Coordinate {value} cm out of range")

    @classmethod
    def from_meters(cls, x: float, y: float) -> "Position":
        return cls(int(round(x * 100)), int(round(y * 100)))

    def to_meters(self) -> Tuple[float, float]:
        return (self.x_cm / 100, self.y_cm / 100)

    def offset(self, dx_cm: int, dy_cm: int) -> "Position":
        return Position(self.x_cm + dx_cm, self.y_cm + dy_cm)


@dataclass(frozen=True, order=True)
class Range:
    """Radius in decimeters."""
    decimeters: int

    def __post_init__(self):
        if self.decimeters < 0:
            raise ValueError("Range must be non-negative")

    @classmethod
    def from_meters(cls, meters: float) -> "Range":
        return cls(int(round(meters * 10)))

    @property
    def centimeters(self) -> int:
        return self.decimeters * 10

    @property
    def meters(self) -> float:
        return self.decimeters / 10


def within(pos: Position, center: Position, rng: Range) -> bool:
    """Inclusive disc membership, exact in integer centimeters."""
    dx = pos.x_cm - center.x_cm
    dy = pos.y_cm - center.y_cm
    return dx * dx + dy * dy <= rng.centimeters * rng.centimeters


@dataclass(frozen=True, order=True)
class DeviceId:
    raw: bytes

    def __post_init__(self):
        if len(self.raw) != 16:
            raise ValueError("Device ids are 16 octets")

    @classmethod
    def from_label(cls, label: str) -> "DeviceId":
        return cls(uuid.uuid5(DEVICE_NAMESPACE, label).bytes)

    @classmethod
    def from_hex(cls, text: str) -> "DeviceId":
        return cls(bytes.fromhex(text))

    def hex(self) -> str:
        return self.raw.hex()

    def __str__(self):
        return self.raw.hex()[:8]


@dataclass(frozen=True, order=True)
class SubjectDeviceId:
    kind: DataTypeCode
    value: bytes

    def __post_init__(self):
        object.__setattr__(self, "kind", DataTypeCode(self.kind))
        if len(self.value) > MAX_SUBJECT_VALUE:
            raise ValueError(f"Subject identifier exceeds {MAX_SUBJECT_VALUE} octets")

    @classmethod
    def plate(cls, text: str) -> "SubjectDeviceId":
        return cls(DataTypeCode.PLATE_NUMBER, text.encode("utf-8"))

    @classmethod
    def mac(cls, text: str) -> "SubjectDeviceId":
        return cls(DataTypeCode.MAC_ADDRESS, bytes.fromhex(text.replace(":", "")))

    @classmethod
    def label(cls, text: str) -> "SubjectDeviceId":
        """Identifier for a phone or other gateway device."""
        return cls(DataTypeCode.PRESENCE, text.encode("utf-8"))

    def to_dict(self) -> Dict[str, str]:
        return {"kind": self.kind.name, "value": self.value.hex()}

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> "SubjectDeviceId":
        return cls(DataTypeCode[data["kind"]], bytes.fromhex(data["value"]))

    def __str__(self):
        if self.kind == DataTypeCode.MAC_ADDRESS:
            return ":".join(f"{b:02x}" for b in self.value)
        try:
            return self.value.decode("utf-8")
        except UnicodeDecodeError:
            return self.value.hex()


def validate_value(data_type: DataTypeCode, value: Optional[bytes]) -> Optional[str]:
    """Return a reason when a data value does not fit its type, else None."""
    if value is None:
        return None
    if len(value) > MAX_DATA_VALUE:
        return f"value exceeds {MAX_DATA_VALUE} octets"
    if data_type == DataTypeCode.MAC_ADDRESS and len(value) != 6:
        return "MAC address values are 6 octets"
    if data_type == DataTypeCode.PLATE_NUMBER:
        try:
            value.decode("utf-8")
        except UnicodeDecodeError:
            return "plate numbers are UTF-8 text"
    return None


@dataclass(frozen=True)
class DeviceInfo:
    position: Position
    range: Range
    data_type: DataTypeCode
    policy: Policy

    def to_dict(self) -> Dict[str, Any]:
        x, y = self.position.to_meters()
        return {
            "position": [x, y],
            "range": self.range.meters,
            "data_type": self.data_type.name,
            "policy": self.policy.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DeviceInfo":
        return cls(
            Position.from_meters(*data["position"]),
            Range.from_meters(data["range"]),
            DataTypeCode[data["data_type"]],
            Policy.from_dict(data["policy"]),
        )


@dataclass(frozen=True)
class Declaration:
    device_id: DeviceId
    position: Position
    range: Range
    data_type: DataTypeCode
    policy: Policy

    @property
    def info(self) -> DeviceInfo:
        return DeviceInfo(self.position, self.range, self.data_type, self.policy)

    @classmethod
    def of(cls, device_id: DeviceId, info: DeviceInfo) -> "Declaration":
        return cls(device_id, info.position, info.range, info.data_type, info.policy)

    def to_dict(self) -> Dict[str, Any]:
        return {"device_id": self.device_id.hex(), **self.info.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Declaration":
        return cls.of(DeviceId.from_hex(data["device_id"]), DeviceInfo.from_dict(data))


StoreEntry = Tuple[MaybePolicy, Optional[bytes]]
EMPTY_ENTRY: StoreEntry = (None, None)

StoreCKey = Tuple[DeviceId, SubjectDeviceId, DataTypeCode]
StoreSKey = Tuple[SubjectDeviceId, DataTypeCode]


@dataclass
class SystemState:
    config: Dict[DeviceId, DeviceInfo] = field(default_factory=dict)
    declared: Dict[DeviceId, DeviceInfo] = field(default_factory=dict)
    knows: Dict[Tuple[SubjectDeviceId, DeviceId], DeviceInfo] = field(default_factory=dict)
    position: Dict[SubjectDeviceId, Position] = field(default_factory=dict)
    paired: Dict[SubjectDeviceId, SubjectDeviceId] = field(default_factory=dict)
    store_c: Dict[StoreCKey, StoreEntry] = field(default_factory=dict)
    store_s: Dict[StoreSKey, StoreEntry] = field(default_factory=dict)
    # collection timestamps (ms) beside store_c, used by retention sweeps
    collected_at: Dict[StoreCKey, int] = field(default_factory=dict)

    MAPS = ("config", "declared", "knows", "position", "paired", "store_c", "store_s", "collected_at")

    def copy(self) -> "SystemState":
        return SystemState(**{name: dict(getattr(self, name)) for name in self.MAPS})

    def paired_to(self, subject: SubjectDeviceId) -> SubjectDeviceId:
        return self.paired.get(subject, subject)

    def store_c_get(self, key: StoreCKey) -> StoreEntry:
        return self.store_c.get(key, EMPTY_ENTRY)

    def store_s_get(self, key: StoreSKey) -> StoreEntry:
        return self.store_s.get(key, EMPTY_ENTRY)

    def subjects(self) -> Set[SubjectDeviceId]:
        return set(self.position) | set(self.paired) | set(self.paired.values()) | {s for s, _ in self.store_s}

    def to_json_dict(self) -> Dict[str, Any]:
        """Structured snapshot; map names mirror the attribute names."""
        def policy(p):
            return p.to_dict() if p is not None else None

        def value(v):
            return v.hex() if v is not None else None

        return {
            "config": [{"device_id": d.hex(), **info.to_dict()}
                       for d, info in sorted(self.config.items())],
            "declared": [{"device_id": d.hex(), **info.to_dict()}
                         for d, info in sorted(self.declared.items())],
            "knows": [{"subject": s.to_dict(), "device_id": d.hex(), **info.to_dict()}
                      for (s, d), info in sorted(self.knows.items())],
            "position": [{"subject": s.to_dict(), "position": list(p.to_meters())}
                         for s, p in sorted(self.position.items())],
            "paired": [{"subject": s.to_dict(), "paired": t.to_dict()}
                       for s, t in sorted(self.paired.items())],
            "store_c": [{"device_id": d.hex(), "subject": s.to_dict(), "data_type": t.name,
                         "policy": policy(p), "value": value(v),
                         "collected_at": self.collected_at.get((d, s, t))}
                        for (d, s, t), (p, v) in sorted(self.store_c.items(), key=lambda kv: kv[0])],
            "store_s": [{"subject": s.to_dict(), "data_type": t.name,
                         "policy": policy(p), "value": value(v)}
                        for (s, t), (p, v) in sorted(self.store_s.items(), key=lambda kv: kv[0])],
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "SystemState":
        def policy(p):
            return Policy.from_dict(p) if p is not None else None

        def value(v):
            return bytes.fromhex(v) if v is not None else None

        st = cls()
        for row in data.get("config", []):
            st.config[DeviceId.from_hex(row["device_id"])] = DeviceInfo.from_dict(row)
        for row in data.get("declared", []):
            st.declared[DeviceId.from_hex(row["device_id"])] = DeviceInfo.from_dict(row)
        for row in data.get("knows", []):
            key = (SubjectDeviceId.from_dict(row["subject"]), DeviceId.from_hex(row["device_id"]))
            st.knows[key] = DeviceInfo.from_dict(row)
        for row in data.get("position", []):
            st.position[SubjectDeviceId.from_dict(row["subject"])] = Position.from_meters(*row["position"])
        for row in data.get("paired", []):
            st.paired[SubjectDeviceId.from_dict(row["subject"])] = SubjectDeviceId.from_dict(row["paired"])
        for row in data.get("store_c", []):
            key = (DeviceId.from_hex(row["device_id"]), SubjectDeviceId.from_dict(row["subject"]),
                   DataTypeCode[row["data_type"]])
            st.store_c[key] = (policy(row["policy"]), value(row["value"]))
            if row.get("collected_at") is not None:
                st.collected_at[key] = row["collected_at"]
        for row in data.get("store_s", []):
            key = (SubjectDeviceId.from_dict(row["subject"]), DataTypeCode[row["data_type"]])
            st.store_s[key] = (policy(row["policy"]), value(row["value"]))
        return st


def subjects_in_range(st: SystemState, center: Position, rng: Range) -> Set[SubjectDeviceId]:
    """Positioned subjects whose position lies in the disc."""
    return {s for s, pos in st.position.items() if within(pos, center, rng)}


def devices_covering(infos: Dict[DeviceId, DeviceInfo], pos: Position) -> Iterable[DeviceId]:
    return [d for d, info in infos.items() if within(pos, info.position, info.range)]
