"""
Privacy beacon transport
Declarations are broadcast as small advertisement fragments; subjects write
their consent back over a short connection. Radio is emulated by an in-memory
bus that only delivers to listeners within range of the emitting beacon.
"""

import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from helper.errors import MalformedFrameError, MalformedTLVError, OversizePolicyError
from helper.tlv import TLVItem, build_tlv, parse_canonical
from models.policy import DataTypeCode, Policy, decode_policy, encode_policy, implies
from models.receipt import ConsentReceipt, ReceiptLog
from models.state import Declaration, DeviceId, Position, Range, SubjectDeviceId, within

logger = logging.getLogger(__name__)

ADV_MAGIC = b"PB"
CONSENT_MAGIC = b"PC"
VERSION = 0x01

MAX_FRAME = 31
MAX_FRAGMENT_PAYLOAD = 21
MAX_RANGE_DM = 0xFFFF
FRAGMENT_HEADER = struct.Struct(">2sBIBBB")
CONSENT_HEADER = struct.Struct(">2sB16sBB")
CONSENT_TRAILER = struct.Struct(">Q8s")

TAG_DEVICE_ID = 0x01
TAG_POSITION = 0x02
TAG_RANGE = 0x03
TAG_DATA_TYPE = 0x04
TAG_POLICY = 0x05
DECLARATION_TAGS = (TAG_DEVICE_ID, TAG_POSITION, TAG_RANGE, TAG_DATA_TYPE, TAG_POLICY)

STATUS_ACCEPTED = 0x00
STATUS_REJECTED = 0x01
STATUS_MALFORMED = 0x02


# --- advertisement fragments ------------------------------------------------

@dataclass(frozen=True)
class AdvertisementFragment:
    declaration_id: int
    index: int
    count: int
    payload: bytes

    def serialize(self) -> bytes:
        return FRAGMENT_HEADER.pack(ADV_MAGIC, VERSION, self.declaration_id,
                                    self.index, self.count, len(self.payload)) + self.payload

    @classmethod
    def parse(cls, frame: bytes) -> "AdvertisementFragment":
        if len(frame) < FRAGMENT_HEADER.size:
            raise MalformedFrameError(f"Fragment of {len(frame)} octets is shorter than its header")
        if len(frame) > MAX_FRAME:
            raise MalformedFrameError(f"Fragment of {len(frame)} octets exceeds {MAX_FRAME}")
        magic, version, declaration_id, index, count, length = FRAGMENT_HEADER.unpack_from(frame)
        if magic != ADV_MAGIC:
            raise MalformedFrameError(f"Bad advertisement magic {magic!r}")
        if version != VERSION:
            raise MalformedFrameError(f"Unsupported advertisement version {version}")
        if count == 0 or index >= count:
            raise MalformedFrameError(f"Fragment index {index} outside count {count}")
        if length > MAX_FRAGMENT_PAYLOAD or FRAGMENT_HEADER.size + length != len(frame):
            raise MalformedFrameError(f"Payload length {length} does not match frame")
        return cls(declaration_id, index, count, bytes(frame[FRAGMENT_HEADER.size:]))


@dataclass(frozen=True)
class NeedsMore:
    declaration_id: Optional[int]
    missing: Tuple[int, ...]


def encode_declaration_payload(d: Declaration) -> bytes:
    policy = encode_policy(d.policy)
    if len(policy) > 255:
        raise OversizePolicyError(len(policy))
    if d.range.decimeters > MAX_RANGE_DM:
        raise MalformedFrameError(f"Range of {d.range.decimeters} dm does not fit in 16 bits")
    return build_tlv([
        TLVItem(TAG_DEVICE_ID, d.device_id.raw),
        TLVItem(TAG_POSITION, struct.pack(">ii", d.position.x_cm, d.position.y_cm)),
        TLVItem(TAG_RANGE, struct.pack(">H", d.range.decimeters)),
        TLVItem(TAG_DATA_TYPE, bytes([d.data_type])),
        TLVItem(TAG_POLICY, policy),
    ])


def decode_declaration_payload(payload: bytes) -> Declaration:
    try:
        fields = {item.tag: item.value for item in parse_canonical(payload, DECLARATION_TAGS)}
        missing = [tag for tag in DECLARATION_TAGS if tag not in fields]
        if missing:
            raise MalformedFrameError(f"Declaration lacks tags {missing}")
        if len(fields[TAG_DEVICE_ID]) != 16 or len(fields[TAG_POSITION]) != 8 \
                or len(fields[TAG_RANGE]) != 2 or len(fields[TAG_DATA_TYPE]) != 1:
            raise MalformedFrameError("Declaration field has the wrong width")
        x_cm, y_cm = struct.unpack(">ii", fields[TAG_POSITION])
        (decimeters,) = struct.unpack(">H", fields[TAG_RANGE])
        return Declaration(
            DeviceId(fields[TAG_DEVICE_ID]),
            Position(x_cm, y_cm),
            Range(decimeters),
            DataTypeCode(fields[TAG_DATA_TYPE][0]),
            decode_policy(fields[TAG_POLICY]),
        )
    except MalformedTLVError as e:
        raise MalformedFrameError(f"Declaration payload: {e.message}")
    except ValueError as e:
        raise MalformedFrameError(f"Declaration payload: {e}")


def encode_declaration(d: Declaration) -> List[AdvertisementFragment]:
    """
    Split a declaration into advertisement fragments.

    Args:
        d: Declaration to broadcast

    Returns:
        Fragments in index order, sharing one declaration id
    """
    payload = encode_declaration_payload(d)
    declaration_id = zlib.crc32(payload)
    count = math.ceil(len(payload) / MAX_FRAGMENT_PAYLOAD)
    return [
        AdvertisementFragment(declaration_id, i, count,
                              payload[i * MAX_FRAGMENT_PAYLOAD:(i + 1) * MAX_FRAGMENT_PAYLOAD])
        for i in range(count)
    ]


def decode_declaration(frags: Iterable[AdvertisementFragment]) -> Union[Declaration, NeedsMore]:
    """
    Reassemble a declaration from fragments received in any order.

    Returns:
        The Declaration, or NeedsMore listing the missing indexes (no id and
        no indexes when nothing has arrived yet)

    Raises:
        MalformedFrameError: on inconsistent fragments or a bad payload
    """
    frags = list(frags)
    if not frags:
        return NeedsMore(None, ())
    ids = {f.declaration_id for f in frags}
    if len(ids) != 1:
        raise MalformedFrameError(f"Fragments mix declaration ids {sorted(ids)}")
    declaration_id = ids.pop()
    counts = {f.count for f in frags}
    if len(counts) != 1:
        raise MalformedFrameError(f"Inconsistent fragment counts {sorted(counts)}")
    count = counts.pop()

    parts: Dict[int, bytes] = {}
    for frag in frags:
        if frag.index >= count:
            raise MalformedFrameError(f"Fragment index {frag.index} outside count {count}")
        if frag.index in parts and parts[frag.index] != frag.payload:
            raise MalformedFrameError(f"Conflicting payloads for fragment {frag.index}")
        parts[frag.index] = frag.payload

    missing = tuple(i for i in range(count) if i not in parts)
    if missing:
        return NeedsMore(declaration_id, missing)

    payload = b"".join(parts[i] for i in range(count))
    if zlib.crc32(payload) != declaration_id:
        raise MalformedFrameError("Reassembled payload does not match its declaration id")
    return decode_declaration_payload(payload)


# --- consent frames ---------------------------------------------------------

@dataclass(frozen=True)
class ConsentFrame:
    device_id: DeviceId
    subject: SubjectDeviceId
    timestamp: int
    nonce: bytes
    policy: Policy

    def serialize(self) -> bytes:
        return (CONSENT_HEADER.pack(CONSENT_MAGIC, VERSION, self.device_id.raw,
                                    self.subject.kind, len(self.subject.value))
                + self.subject.value
                + CONSENT_TRAILER.pack(self.timestamp, self.nonce)
                + encode_policy(self.policy))

    @classmethod
    def parse(cls, frame: bytes) -> "ConsentFrame":
        if len(frame) < CONSENT_HEADER.size:
            raise MalformedFrameError("Consent frame shorter than its header")
        magic, version, device_id, kind, subject_len = CONSENT_HEADER.unpack_from(frame)
        if magic != CONSENT_MAGIC:
            raise MalformedFrameError(f"Bad consent magic {magic!r}")
        if version != VERSION:
            raise MalformedFrameError(f"Unsupported consent version {version}")
        if subject_len > 32:
            raise MalformedFrameError(f"Subject length {subject_len} exceeds 32")
        offset = CONSENT_HEADER.size
        value = frame[offset:offset + subject_len]
        offset += subject_len
        if len(value) != subject_len or len(frame) < offset + CONSENT_TRAILER.size:
            raise MalformedFrameError("Consent frame truncated")
        timestamp, nonce = CONSENT_TRAILER.unpack_from(frame, offset)
        offset += CONSENT_TRAILER.size
        try:
            subject = SubjectDeviceId(DataTypeCode(kind), bytes(value))
            policy = decode_policy(bytes(frame[offset:]))
        except MalformedTLVError as e:
            raise MalformedFrameError(f"Consent policy: {e.message}")
        except ValueError as e:
            raise MalformedFrameError(f"Consent subject: {e}")
        return cls(DeviceId(device_id), subject, timestamp, nonce, policy)


# --- radio bus and endpoints ------------------------------------------------

class ConsentChannel:
    """Short-lived connection from a subject device to one beacon."""

    def __init__(self, beacon: "BeaconEndpoint"):
        self.beacon = beacon

    def write(self, frame: bytes, now: int) -> int:
        return self.beacon.write_consent(frame, now)


class RadioBus:
    """
    Broadcast medium shared by beacons and scanners.

    Delivery happens instantly and in emission order, to every scanner whose
    current position lies within the beacon's declared range plus margin.
    """

    def __init__(self, drop_probability=0.0, range_margin_m=0.0, seed=None):
        self.drop_probability = float(drop_probability)
        self.range_margin = Range.from_meters(range_margin_m)
        self.rng = np.random.default_rng(seed)
        self.beacons: Dict[DeviceId, "BeaconEndpoint"] = {}
        self.scanners: List["ScannerEndpoint"] = []
        self.emissions: List[Tuple[int, str, bytes]] = []
        self.logger = logging.getLogger(__name__)

    def attach_beacon(self, beacon: "BeaconEndpoint"):
        self.beacons[beacon.device_id] = beacon

    def attach_scanner(self, scanner: "ScannerEndpoint"):
        self.scanners.append(scanner)

    def coverage(self, beacon: "BeaconEndpoint") -> Range:
        return Range(beacon.declaration.range.decimeters + self.range_margin.decimeters)

    def broadcast(self, beacon: "BeaconEndpoint", frame: bytes, now: int) -> int:
        """Deliver one frame; returns the number of scanners reached."""
        self.emissions.append((now, beacon.name, frame))
        coverage = self.coverage(beacon)
        delivered = 0
        for scanner in self.scanners:
            pos = scanner.position()
            if pos is None or not within(pos, beacon.declaration.position, coverage):
                continue
            if self.drop_probability > 0 and self.rng.random() < self.drop_probability:
                continue
            scanner.receive(frame, now)
            delivered += 1
        return delivered

    def connect(self, position: Optional[Position], device_id: DeviceId) -> Optional[ConsentChannel]:
        """Open a consent channel, or None when the beacon is unknown or out of range."""
        beacon = self.beacons.get(device_id)
        if beacon is None or position is None:
            return None
        if not within(position, beacon.declaration.position, self.coverage(beacon)):
            return None
        return ConsentChannel(beacon)


class BeaconEndpoint:
    """Beacon attached to one collecting device."""

    def __init__(self, declaration: Declaration, bus: RadioBus, receipts: Optional[ReceiptLog] = None,
                 interval_ms=250, phase_ms=0, on_consent: Optional[Callable[[ConsentReceipt], None]] = None,
                 name=None):
        self.bus = bus
        self.receipts = receipts if receipts is not None else ReceiptLog()
        self.interval_ms = int(interval_ms)
        self.on_consent = on_consent
        self.name = name or f"beacon-{declaration.device_id}"
        self.logger = logging.getLogger(__name__)
        self._next_emit = int(phase_ms)
        self.set_declaration(declaration)
        bus.attach_beacon(self)

    @property
    def device_id(self) -> DeviceId:
        return self.declaration.device_id

    def set_declaration(self, declaration: Declaration):
        self.declaration = declaration
        self.frames = [f.serialize() for f in encode_declaration(declaration)]
        self._cursor = 0

    def tick(self, now: int) -> List[bytes]:
        """Emit every fragment due at or before now, round-robin."""
        emitted = []
        while now >= self._next_emit:
            frame = self.frames[self._cursor]
            self._cursor = (self._cursor + 1) % len(self.frames)
            self.bus.broadcast(self, frame, self._next_emit)
            emitted.append(frame)
            self._next_emit += self.interval_ms
        return emitted

    def write_consent(self, data: bytes, now: int) -> int:
        try:
            frame = ConsentFrame.parse(data)
        except MalformedFrameError as e:
            self.logger.warning(f"{self.name}: malformed consent frame: {e.message}")
            return STATUS_MALFORMED
        if frame.device_id != self.device_id:
            self.logger.warning(f"{self.name}: consent addressed to device {frame.device_id}")
            return STATUS_MALFORMED
        if not implies(self.declaration.policy, frame.policy):
            self.logger.info(f"{self.name}: consent from {frame.subject} not met by the device policy")
            return STATUS_REJECTED

        receipt = ConsentReceipt.issue(self.device_id, frame.subject, frame.policy,
                                       frame.timestamp, frame.nonce, "beacon")
        self.receipts.append(receipt)
        self.logger.info(f"{self.name}: consent {receipt.receipt_id} from {frame.subject} stored")
        if self.on_consent:
            self.on_consent(receipt)
        return STATUS_ACCEPTED


class ScannerEndpoint:
    """
    Passive listener on a subject device. Never emits; reassembles fragments
    per declaration id and reports each declaration once per content version.
    """

    def __init__(self, position_source: Callable[[], Optional[Position]],
                 on_declaration: Optional[Callable[[Declaration, int], None]] = None, name="scanner"):
        self.position = position_source
        self.on_declaration = on_declaration
        self.name = name
        self.pending: Dict[int, List[AdvertisementFragment]] = {}
        self.known: Dict[int, Declaration] = {}
        self.completed_at: Dict[int, int] = {}
        self.received = 0
        self.logger = logging.getLogger(__name__)

    def receive(self, frame: bytes, now: int):
        self.received += 1
        try:
            fragment = AdvertisementFragment.parse(frame)
        except MalformedFrameError as e:
            self.logger.debug(f"{self.name}: dropping frame: {e.message}")
            return
        if fragment.declaration_id in self.known:
            return

        bucket = self.pending.setdefault(fragment.declaration_id, [])
        if fragment in bucket:
            return
        bucket.append(fragment)
        try:
            result = decode_declaration(bucket)
        except MalformedFrameError as e:
            self.logger.warning(f"{self.name}: discarding declaration {fragment.declaration_id:08x}: {e.message}")
            del self.pending[fragment.declaration_id]
            return
        if isinstance(result, NeedsMore):
            return

        del self.pending[fragment.declaration_id]
        self.known[fragment.declaration_id] = result
        self.completed_at[fragment.declaration_id] = now
        self.logger.debug(f"{self.name}: declaration of device {result.device_id} complete at {now} ms")
        if self.on_declaration:
            self.on_declaration(result, now)


def capture_to_hex(frames: Iterable[bytes]) -> str:
    """One hex frame per line, as read back by the interactive PDC session."""
    return "".join(frame.hex() + "\n" for frame in frames)


def declarations_from_capture(lines: Iterable[str]) -> List[Declaration]:
    """Reassemble every complete declaration found in a captured hex stream."""
    found: List[Declaration] = []
    scanner = ScannerEndpoint(lambda: None, lambda decl, now: found.append(decl), name="capture")
    for lineno, line in enumerate(lines):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            frame = bytes.fromhex(line)
        except ValueError:
            raise MalformedFrameError(f"Capture line {lineno + 1} is not hex")
        scanner.receive(frame, 0)
    return found
