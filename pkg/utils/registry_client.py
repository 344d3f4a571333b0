"""
Registry clients and the subject-side poller
RegistryClient talks HTTP/JSON through requests; EmbeddedRegistryClient calls
a RegistryStore in process. Both expose the same methods so the poller, the
PDC and the simulator do not care which one they hold.
"""

import logging
import time
from typing import Callable, Dict, Iterator, List, Optional

import requests

from helper.errors import RegistryError, TransportError
from models.state import Declaration, DeviceId, Position
from utils.registry import ConsentRecord, RegistryRecord, RegistryStore

logger = logging.getLogger(__name__)


class RegistryClient:
    """HTTP client for the registry service."""

    def __init__(self, base_url, token=None, session=None, timeout=5.0):
        self.base_url = base_url.rstrip('/')
        self.token = token
        self.session = session or requests.Session()
        self.timeout = timeout
        self.logger = logging.getLogger(__name__)

    def _request(self, method, path, params=None, json=None):
        headers = {}
        if self.token:
            headers['Authorization'] = f"Bearer {self.token}"
        try:
            response = self.session.request(method, f"{self.base_url}{path}", params=params, json=json,
                                            headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(f"Registry unreachable: {e}")

        if response.status_code >= 400:
            try:
                message = response.json().get('error', '')
            except ValueError:
                message = response.text
            raise RegistryError(response.status_code, message or f"HTTP {response.status_code}")
        return response.json()

    def put_device(self, decl: Declaration) -> RegistryRecord:
        return RegistryRecord.from_dict(self._request('PUT', f"/devices/{decl.device_id.hex()}", json=decl.to_dict()))

    def get_device(self, device_id: DeviceId) -> RegistryRecord:
        return RegistryRecord.from_dict(self._request('GET', f"/devices/{device_id.hex()}"))

    def delete_device(self, device_id: DeviceId) -> None:
        self._request('DELETE', f"/devices/{device_id.hex()}")

    def nearby(self, position: Position, radius_m: float) -> List[RegistryRecord]:
        x, y = position.to_meters()
        data = self._request('GET', "/devices", params={'x': x, 'y': y, 'radius': radius_m})
        return [RegistryRecord.from_dict(r) for r in data.get('devices', [])]

    def post_consent(self, record: ConsentRecord) -> ConsentRecord:
        return ConsentRecord.from_dict(self._request('POST', "/consents", json=record.to_dict()))

    def get_consents(self, device_id: DeviceId, since: int = 0) -> List[ConsentRecord]:
        data = self._request('GET', "/consents", params={'device_id': device_id.hex(), 'since': since})
        return [ConsentRecord.from_dict(r) for r in data.get('consents', [])]


class EmbeddedRegistryClient:
    """Same surface as RegistryClient, backed by an in-process store."""

    def __init__(self, store: RegistryStore, token=None):
        self.store = store
        self.token = token
        self.available = True

    def _check(self):
        if not self.available:
            raise TransportError("Registry unreachable")

    def put_device(self, decl: Declaration) -> RegistryRecord:
        self._check()
        return self.store.put_device(decl, self.token)

    def get_device(self, device_id: DeviceId) -> RegistryRecord:
        self._check()
        return self.store.get_device(device_id)

    def delete_device(self, device_id: DeviceId) -> None:
        self._check()
        self.store.delete_device(device_id, self.token)

    def nearby(self, position: Position, radius_m: float) -> List[RegistryRecord]:
        self._check()
        return self.store.nearby(position, radius_m)

    def post_consent(self, record: ConsentRecord) -> ConsentRecord:
        self._check()
        return self.store.post_consent(record, self.token)

    def get_consents(self, device_id: DeviceId, since: int = 0) -> List[ConsentRecord]:
        self._check()
        return self.store.get_consents(device_id, since, self.token)


class RegistryPoller:
    """
    Periodic nearby() queries from a subject's gateway device.

    Each new or re-declared record is reported once as a Declaration. Failed
    polls back off exponentially up to backoff_max_ms; staleness() reports how
    long ago the last successful poll completed.
    """

    def __init__(self, client, position_source: Callable[[], Optional[Position]],
                 on_declaration: Optional[Callable[[Declaration, int], None]] = None,
                 period_ms=2000, lookahead_m=0.0, backoff_max_ms=30000):
        self.client = client
        self.position_source = position_source
        self.on_declaration = on_declaration
        self.period_ms = int(period_ms)
        self.lookahead_m = float(lookahead_m)
        self.backoff_max_ms = int(backoff_max_ms)

        self.seen: Dict[DeviceId, int] = {}
        self.failures = 0
        self.last_success: Optional[int] = None
        self.started_at: Optional[int] = None
        self.next_poll = 0

        self.logger = logging.getLogger(__name__)

    def backoff_ms(self) -> int:
        return min(self.period_ms * (2 ** self.failures), self.backoff_max_ms)

    def staleness(self, now: int) -> int:
        reference = self.last_success if self.last_success is not None else self.started_at
        return now - reference if reference is not None else 0

    def due(self, now: int) -> bool:
        return now >= self.next_poll

    def poll_once(self, now: int) -> List[Declaration]:
        """Query the registry at the current position; returns new declarations."""
        if self.started_at is None:
            self.started_at = now
        position = self.position_source()
        if position is None:
            self.next_poll = now + self.period_ms
            return []

        try:
            records = self.client.nearby(position, self.lookahead_m)
        except (TransportError, RegistryError) as e:
            self.failures += 1
            self.next_poll = now + self.backoff_ms()
            self.logger.warning(f"Registry poll failed ({self.failures} in a row), "
                                f"stale for {self.staleness(now)} ms: {e.message}")
            return []

        self.failures = 0
        self.last_success = now
        self.next_poll = now + self.period_ms

        fresh = []
        for record in records:
            if self.seen.get(record.device_id) == record.declared_at:
                continue
            self.seen[record.device_id] = record.declared_at
            decl = record.declaration
            fresh.append(decl)
            if self.on_declaration:
                self.on_declaration(decl, now)
        return fresh

    def poll_loop(self, clock: Callable[[], int]) -> Iterator[Declaration]:
        """Generator of declarations; sleeps between polls on the given ms clock."""
        while True:
            now = clock()
            if not self.due(now):
                time.sleep((self.next_poll - now) / 1000)
                continue
            for decl in self.poll_once(now):
                yield decl
