"""
Device and consent registries
Controllers publish their declarations here so subjects can be informed
before reaching a device; subjects post consents here for controllers to
retrieve. Access is guarded by opaque bearer tokens bound to principals.
"""

import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Set, Tuple

import yaml

from helper.errors import RegistryError
from models.policy import DataTypeCode, Policy, render_policy
from models.state import Declaration, DeviceId, Position, Range, SubjectDeviceId

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistryRecord:
    device_id: DeviceId
    position: Position
    range: Range
    data_type: DataTypeCode
    policy: Policy
    declared_at: int
    human_readable: str

    @classmethod
    def from_declaration(cls, decl: Declaration, declared_at: int) -> "RegistryRecord":
        return cls(decl.device_id, decl.position, decl.range, decl.data_type, decl.policy,
                   declared_at, render_policy(decl.policy))

    @property
    def declaration(self) -> Declaration:
        return Declaration(self.device_id, self.position, self.range, self.data_type, self.policy)

    def to_dict(self) -> Dict[str, Any]:
        return {**self.declaration.to_dict(), "declared_at": self.declared_at,
                "human_readable": self.human_readable}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RegistryRecord":
        decl = Declaration.from_dict(data)
        return cls.from_declaration(decl, int(data.get("declared_at", 0)))


@dataclass(frozen=True)
class ConsentRecord:
    device_id: DeviceId
    subject: SubjectDeviceId
    policy: Policy
    timestamp: int
    token_id: str = ""
    nonce: bytes = b""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "device_id": self.device_id.hex(),
            "subject": self.subject.to_dict(),
            "policy": self.policy.to_dict(),
            "timestamp": self.timestamp,
            "token_id": self.token_id,
            "nonce": self.nonce.hex(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConsentRecord":
        return cls(
            DeviceId.from_hex(data["device_id"]),
            SubjectDeviceId.from_dict(data["subject"]),
            Policy.from_dict(data["policy"]),
            int(data["timestamp"]),
            data.get("token_id", ""),
            bytes.fromhex(data.get("nonce", "")),
        )


class TokenBook:
    """Bearer tokens mapped to the principals they authenticate."""

    def __init__(self, tokens: Optional[Dict[str, str]] = None):
        self.tokens = dict(tokens or {})

    @classmethod
    def load(cls, path) -> "TokenBook":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise RegistryError(500, f"Error parsing tokens file {path}: {e}")
        tokens = data.get("tokens", {})
        if not isinstance(tokens, dict):
            raise RegistryError(500, f"'tokens' in {path} must be a mapping")
        logger.info(f"Loaded {len(tokens)} registry tokens from {Path(path).name}")
        return cls({str(k): str(v) for k, v in tokens.items()})

    def principal(self, token: Optional[str]) -> Optional[str]:
        if not token:
            return None
        return self.tokens.get(token)

    def require(self, token: Optional[str]) -> str:
        principal = self.principal(token)
        if principal is None:
            raise RegistryError(401, "Invalid or missing bearer token")
        return principal


def intersects(center: Position, radius_cm: int, record: RegistryRecord) -> bool:
    """Query disc meets the record's collection zone (inclusive)."""
    dx = record.position.x_cm - center.x_cm
    dy = record.position.y_cm - center.y_cm
    reach = radius_cm + record.range.centimeters
    return dx * dx + dy * dy <= reach * reach


def nearby_linear(records: Iterable[RegistryRecord], center: Position, radius_cm: int) -> List[RegistryRecord]:
    """Reference scan over every record."""
    return sorted((r for r in records if intersects(center, radius_cm, r)), key=lambda r: r.device_id)


class GridIndex:
    """Uniform grid over device centres; candidates are refined by intersects()."""

    def __init__(self, cell_cm: int):
        if cell_cm <= 0:
            raise ValueError("Grid cell size must be positive")
        self.cell_cm = cell_cm
        self.cells: Dict[Tuple[int, int], Set[DeviceId]] = {}
        self.max_range_cm = 0

    def _cell(self, pos: Position) -> Tuple[int, int]:
        return (pos.x_cm // self.cell_cm, pos.y_cm // self.cell_cm)

    def add(self, record: RegistryRecord):
        self.cells.setdefault(self._cell(record.position), set()).add(record.device_id)
        self.max_range_cm = max(self.max_range_cm, record.range.centimeters)

    def remove(self, record: RegistryRecord):
        cell = self.cells.get(self._cell(record.position))
        if cell is not None:
            cell.discard(record.device_id)
            if not cell:
                del self.cells[self._cell(record.position)]

    def candidates(self, center: Position, radius_cm: int) -> Optional[Set[DeviceId]]:
        """Device ids that may intersect, or None when a full scan is cheaper."""
        reach = radius_cm + self.max_range_cm
        x0, y0 = (center.x_cm - reach) // self.cell_cm, (center.y_cm - reach) // self.cell_cm
        x1, y1 = (center.x_cm + reach) // self.cell_cm, (center.y_cm + reach) // self.cell_cm
        if (x1 - x0 + 1) * (y1 - y0 + 1) > len(self.cells):
            return None
        found: Set[DeviceId] = set()
        for cx in range(x0, x1 + 1):
            for cy in range(y0, y1 + 1):
                found |= self.cells.get((cx, cy), set())
        return found


class RegistryStore:
    """
    In-memory controller and subject registries.

    All methods are linearizable under a single re-entrant lock. Errors are
    raised as RegistryError carrying the HTTP status the service returns.
    """

    def __init__(self, tokens: TokenBook, clock: Optional[Callable[[], int]] = None, grid_cell_m=0):
        self.tokens = tokens
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.grid = GridIndex(int(round(grid_cell_m * 100))) if grid_cell_m else None
        self._devices: Dict[DeviceId, RegistryRecord] = {}
        self._owners: Dict[DeviceId, str] = {}
        self._consents: List[ConsentRecord] = []
        self._lock = threading.RLock()
        self.logger = logging.getLogger(__name__)

    # --- controller registry ---

    def put_device(self, decl: Declaration, token: Optional[str]) -> RegistryRecord:
        principal = self.tokens.require(token)
        with self._lock:
            owner = self._owners.get(decl.device_id)
            if owner is not None and owner != principal:
                raise RegistryError(403, f"Device {decl.device_id.hex()} belongs to another controller")
            previous = self._devices.get(decl.device_id)
            if previous is not None and self.grid:
                self.grid.remove(previous)
            record = RegistryRecord.from_declaration(decl, self.clock())
            self._devices[decl.device_id] = record
            self._owners[decl.device_id] = principal
            if self.grid:
                self.grid.add(record)
        self.logger.info(f"{principal} declared device {decl.device_id}")
        return record

    def get_device(self, device_id: DeviceId) -> RegistryRecord:
        with self._lock:
            record = self._devices.get(device_id)
        if record is None:
            raise RegistryError(404, f"Unknown device {device_id.hex()}")
        return record

    def delete_device(self, device_id: DeviceId, token: Optional[str]) -> RegistryRecord:
        principal = self.tokens.require(token)
        with self._lock:
            record = self._devices.get(device_id)
            if record is None:
                raise RegistryError(404, f"Unknown device {device_id.hex()}")
            if self._owners.get(device_id) != principal:
                raise RegistryError(403, f"Device {device_id.hex()} belongs to another controller")
            del self._devices[device_id]
            if self.grid:
                self.grid.remove(record)
        self.logger.info(f"{principal} withdrew device {device_id}")
        return record

    def nearby(self, center: Position, radius_m: float) -> List[RegistryRecord]:
        if radius_m < 0:
            raise RegistryError(400, "radius must be non-negative")
        radius_cm = int(round(radius_m * 100))
        with self._lock:
            candidates = self.grid.candidates(center, radius_cm) if self.grid else None
            if candidates is None:
                records = list(self._devices.values())
            else:
                records = [self._devices[d] for d in candidates if d in self._devices]
        return nearby_linear(records, center, radius_cm)

    def records(self) -> List[RegistryRecord]:
        with self._lock:
            return list(self._devices.values())

    # --- subject registry ---

    def post_consent(self, record: ConsentRecord, token: Optional[str]) -> ConsentRecord:
        principal = self.tokens.require(token)
        with self._lock:
            if record.device_id not in self._owners:
                raise RegistryError(404, f"Unknown device {record.device_id.hex()}")
            stored = ConsentRecord(record.device_id, record.subject, record.policy,
                                   record.timestamp, principal, record.nonce)
            self._consents.append(stored)
        self.logger.info(f"Consent from {record.subject} for device {record.device_id} recorded")
        return stored

    def get_consents(self, device_id: DeviceId, since: int, token: Optional[str]) -> List[ConsentRecord]:
        principal = self.tokens.require(token)
        with self._lock:
            owner = self._owners.get(device_id)
            if owner is None:
                raise RegistryError(404, f"Unknown device {device_id.hex()}")
            if owner != principal:
                raise RegistryError(403, f"Consents of device {device_id.hex()} belong to another controller")
            return [c for c in self._consents if c.device_id == device_id and c.timestamp >= since]
