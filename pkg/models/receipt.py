"""
Consent receipts kept by data controllers as proof of consent.
"""

import hashlib
import struct
import threading
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Tuple

from models.policy import Policy, encode_policy
from models.state import DeviceId, SubjectDeviceId


def make_receipt_id(device_id: DeviceId, subject: SubjectDeviceId, policy: Policy,
                    timestamp: int, nonce: bytes, transport: str) -> str:
    digest = hashlib.sha256()
    digest.update(device_id.raw)
    digest.update(bytes([subject.kind, len(subject.value)]) + subject.value)
    digest.update(encode_policy(policy))
    digest.update(struct.pack(">Q", timestamp))
    digest.update(nonce)
    digest.update(transport.encode("utf-8"))
    return digest.hexdigest()[:16]


@dataclass(frozen=True)
class ConsentReceipt:
    receipt_id: str
    device_id: DeviceId
    subject: SubjectDeviceId
    policy: Policy
    timestamp: int
    nonce: bytes
    transport: str

    @classmethod
    def issue(cls, device_id, subject, policy, timestamp, nonce, transport) -> "ConsentReceipt":
        receipt_id = make_receipt_id(device_id, subject, policy, timestamp, nonce, transport)
        return cls(receipt_id, device_id, subject, policy, timestamp, nonce, transport)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "receipt_id": self.receipt_id,
            "device_id": self.device_id.hex(),
            "subject": self.subject.to_dict(),
            "policy": self.policy.to_dict(),
            "timestamp": self.timestamp,
            "nonce": self.nonce.hex(),
            "transport": self.transport,
        }


class ReceiptLog:
    """
    Append-only receipt store shared by every endpoint of one controller.

    A withdrawal appends a revocation instead of removing receipts; a receipt
    is active while no revocation for its (device, subject) follows it.
    """

    def __init__(self):
        self._receipts: List[ConsentReceipt] = []
        self._revocations: List[Tuple[DeviceId, SubjectDeviceId, int]] = []
        self._revoked_before: Dict[Tuple[DeviceId, SubjectDeviceId], int] = {}
        self._lock = threading.Lock()

    def append(self, receipt: ConsentReceipt) -> None:
        with self._lock:
            self._receipts.append(receipt)

    def revoke(self, device_id: DeviceId, subject: SubjectDeviceId, timestamp: int) -> None:
        with self._lock:
            self._revocations.append((device_id, subject, timestamp))
            self._revoked_before[(device_id, subject)] = len(self._receipts)

    def for_device(self, device_id: DeviceId) -> List[ConsentReceipt]:
        with self._lock:
            return [r for r in self._receipts if r.device_id == device_id]

    def for_subject(self, subject: SubjectDeviceId, device_id: Optional[DeviceId] = None) -> List[ConsentReceipt]:
        with self._lock:
            return [r for r in self._receipts
                    if r.subject == subject and (device_id is None or r.device_id == device_id)]

    def active(self, subject: SubjectDeviceId, device_id: DeviceId) -> List[ConsentReceipt]:
        """Receipts of subject for device given after its last revocation."""
        with self._lock:
            start = self._revoked_before.get((device_id, subject), 0)
            return [r for r in self._receipts[start:] if r.subject == subject and r.device_id == device_id]

    @property
    def revocations(self) -> List[Tuple[DeviceId, SubjectDeviceId, int]]:
        with self._lock:
            return list(self._revocations)

    def __iter__(self) -> Iterator[ConsentReceipt]:
        with self._lock:
            return iter(list(self._receipts))

    def __len__(self):
        return len(self._receipts)
