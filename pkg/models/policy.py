"""
Privacy policy model
A policy is either a concrete commitment published by a data controller or a
bound set by a data subject. Both live in one type and are ordered by
implies(): p1 implies p2 when p1 is at least as restrictive as p2 demands.
"""

import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Dict, FrozenSet, Optional, TypeVar

from helper.duration_text import DurationText
from helper.errors import MalformedTLVError, OversizePolicyError, UndefinedPolicyError
from helper.tlv import TLVItem, build_tlv, parse_canonical

TAG_CONTROLLER_ID = 0x10
TAG_CATEGORY = 0x11
TAG_PURPOSES = 0x12
TAG_RETENTION = 0x13
TAG_RECIPIENTS = 0x14
TAG_CROSS_BORDER = 0x15

POLICY_TAGS = (TAG_CONTROLLER_ID, TAG_CATEGORY, TAG_PURPOSES,
               TAG_RETENTION, TAG_RECIPIENTS, TAG_CROSS_BORDER)
MANDATORY_TAGS = POLICY_TAGS[1:]

MAX_CONTROLLER_ID = 32
MAX_RETENTION = 0xFFFFFFFF


class ControllerCategory(IntEnum):
    OTHER = 0x00
    MUSEUM = 0x01
    RETAIL = 0x02
    ROAD_OPERATOR = 0x03
    EMPLOYER = 0x04


class Purpose(IntEnum):
    COUNTING_VISITORS = 0x01
    BILLING = 0x02
    PROFILING = 0x03
    SECURITY = 0x04
    ANALYTICS = 0x05


class Recipient(IntEnum):
    CONTROLLER_ONLY = 0x01
    PARTNERS = 0x02
    PUBLIC = 0x03


class DataTypeCode(IntEnum):
    MAC_ADDRESS = 0x01
    PLATE_NUMBER = 0x02
    IMAGE = 0x03
    SOUND = 0x04
    PRESENCE = 0x05


CATEGORY_NAMES = {
    ControllerCategory.OTHER: "any kind of organisation",
    ControllerCategory.MUSEUM: "a museum",
    ControllerCategory.RETAIL: "a retailer",
    ControllerCategory.ROAD_OPERATOR: "a road operator",
    ControllerCategory.EMPLOYER: "an employer",
}

PURPOSE_NAMES = {
    Purpose.COUNTING_VISITORS: "counting visitors",
    Purpose.BILLING: "billing",
    Purpose.PROFILING: "profiling",
    Purpose.SECURITY: "security",
    Purpose.ANALYTICS: "analytics",
}

RECIPIENT_NAMES = {
    Recipient.CONTROLLER_ONLY: "the controller only",
    Recipient.PARTNERS: "partners of the controller",
    Recipient.PUBLIC: "the public",
}


@dataclass(frozen=True)
class Policy:
    controller_id: str = ""
    controller_category: ControllerCategory = ControllerCategory.OTHER
    purposes: FrozenSet[Purpose] = field(default_factory=frozenset)
    retention: int = 0
    recipients: FrozenSet[Recipient] = field(default_factory=frozenset)
    cross_border: bool = False

    def __post_init__(self):
        # normalise iterables and plain ints so equality is structural
        object.__setattr__(self, "controller_category", ControllerCategory(self.controller_category))
        object.__setattr__(self, "purposes", frozenset(Purpose(p) for p in self.purposes))
        object.__setattr__(self, "recipients", frozenset(Recipient(r) for r in self.recipients))
        object.__setattr__(self, "cross_border", bool(self.cross_border))
        if len(self.controller_id.encode("utf-8")) > MAX_CONTROLLER_ID:
            raise ValueError(f"controller_id exceeds {MAX_CONTROLLER_ID} octets")
        if not 0 <= self.retention <= MAX_RETENTION:
            raise ValueError(f"retention {self.retention} out of range")

    def with_retention(self, seconds: int) -> "Policy":
        return replace(self, retention=seconds)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "controller_id": self.controller_id,
            "controller_category": self.controller_category.name,
            "purposes": [p.name for p in sorted(self.purposes)],
            "retention": self.retention,
            "recipients": [r.name for r in sorted(self.recipients)],
            "cross_border": self.cross_border,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Policy":
        return cls(
            controller_id=data.get("controller_id", ""),
            controller_category=ControllerCategory[data.get("controller_category", "OTHER")],
            purposes=frozenset(Purpose[name] for name in data.get("purposes", [])),
            retention=int(data.get("retention", 0)),
            recipients=frozenset(Recipient[name] for name in data.get("recipients", [])),
            cross_border=bool(data.get("cross_border", False)),
        )


MaybePolicy = Optional[Policy]
T = TypeVar("T")


def override(a: Optional[T], b: Optional[T]) -> Optional[T]:
    """Left-biased choice: a unless a is undefined (None), then b."""
    return a if a is not None else b


def implies(p1: MaybePolicy, p2: MaybePolicy) -> bool:
    """
    Check whether p1 is at least as restrictive as p2.

    Args:
        p1: Commitment, usually a controller policy
        p2: Requirement, usually a subject's bound

    Returns:
        True when every field of p1 satisfies p2
    """
    if p1 is None or p2 is None:
        raise UndefinedPolicyError()

    if not p1.purposes <= p2.purposes:
        return False
    if p1.retention > p2.retention:
        return False
    if not p1.recipients <= p2.recipients:
        return False
    if p1.cross_border and not p2.cross_border:
        return False
    if p2.controller_category != ControllerCategory.OTHER and p2.controller_category != p1.controller_category:
        return False
    if p2.controller_id and p2.controller_id != p1.controller_id:
        return False
    return True


def encode_policy(p: Policy) -> bytes:
    """Canonical TLV encoding: ascending tags, sorted set elements."""
    items = []
    if p.controller_id:
        items.append(TLVItem(TAG_CONTROLLER_ID, p.controller_id.encode("utf-8")))
    items.append(TLVItem(TAG_CATEGORY, bytes([p.controller_category])))
    items.append(TLVItem(TAG_PURPOSES, bytes(sorted(p.purposes))))
    items.append(TLVItem(TAG_RETENTION, struct.pack(">I", p.retention)))
    items.append(TLVItem(TAG_RECIPIENTS, bytes(sorted(p.recipients))))
    items.append(TLVItem(TAG_CROSS_BORDER, b"\x01" if p.cross_border else b"\x00"))
    encoded = build_tlv(items)
    if len(encoded) > 255:
        raise OversizePolicyError(len(encoded))
    return encoded


def _decode_codes(value: bytes, enum_cls, tag: int) -> frozenset:
    if list(value) != sorted(set(value)):
        raise MalformedTLVError(f"Codes under tag 0x{tag:02x} are not sorted or repeat")
    try:
        return frozenset(enum_cls(code) for code in value)
    except ValueError as e:
        raise MalformedTLVError(f"Unknown code under tag 0x{tag:02x}: {e}")


def decode_policy(data: bytes) -> Policy:
    """
    Decode a canonical policy TLV stream.

    Raises:
        MalformedTLVError: on empty, truncated, non-canonical or unknown input
    """
    if not data:
        raise MalformedTLVError("Empty policy stream")

    fields = {item.tag: item.value for item in parse_canonical(data, POLICY_TAGS)}
    missing = [tag for tag in MANDATORY_TAGS if tag not in fields]
    if missing:
        raise MalformedTLVError(f"Missing mandatory tags: {', '.join(f'0x{t:02x}' for t in missing)}")

    try:
        controller_id = fields.get(TAG_CONTROLLER_ID, b"").decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedTLVError(f"controller_id is not UTF-8: {e}")
    if TAG_CONTROLLER_ID in fields and not controller_id:
        raise MalformedTLVError("Empty controller_id must be omitted")
    if len(fields.get(TAG_CONTROLLER_ID, b"")) > MAX_CONTROLLER_ID:
        raise MalformedTLVError("controller_id exceeds 32 octets")

    if len(fields[TAG_CATEGORY]) != 1:
        raise MalformedTLVError("controller_category must be one octet")
    try:
        category = ControllerCategory(fields[TAG_CATEGORY][0])
    except ValueError:
        raise MalformedTLVError(f"Unknown controller category 0x{fields[TAG_CATEGORY][0]:02x}")

    if len(fields[TAG_RETENTION]) != 4:
        raise MalformedTLVError("retention must be four octets")
    (retention,) = struct.unpack(">I", fields[TAG_RETENTION])

    cross_border = fields[TAG_CROSS_BORDER]
    if cross_border not in (b"\x00", b"\x01"):
        raise MalformedTLVError("cross_border must be 0x00 or 0x01")

    return Policy(
        controller_id=controller_id,
        controller_category=category,
        purposes=_decode_codes(fields[TAG_PURPOSES], Purpose, TAG_PURPOSES),
        retention=retention,
        recipients=_decode_codes(fields[TAG_RECIPIENTS], Recipient, TAG_RECIPIENTS),
        cross_border=cross_border == b"\x01",
    )


def _join(words):
    words = list(words)
    if not words:
        return "nothing"
    if len(words) == 1:
        return words[0]
    return ", ".join(words[:-1]) + " and " + words[-1]


def render_policy(p: Policy) -> str:
    """Render a policy as six English sentences, one per field."""
    sentences = []
    if p.controller_id:
        sentences.append(f"The data controller is {p.controller_id}.")
    else:
        sentences.append("Any data controller may collect the data.")
    sentences.append(f"The controller is {CATEGORY_NAMES[p.controller_category]}.")
    sentences.append(f"The data is used for {_join(PURPOSE_NAMES[x] for x in sorted(p.purposes))}.")
    if p.retention == 0:
        sentences.append("The data is deleted immediately.")
    else:
        sentences.append(f"The data is kept for at most {DurationText.convert(p.retention)}.")
    sentences.append(f"The data is shared with {_join(RECIPIENT_NAMES[x] for x in sorted(p.recipients))}.")
    if p.cross_border:
        sentences.append("The data may be transferred outside the jurisdiction.")
    else:
        sentences.append("The data stays within the jurisdiction.")
    return " ".join(sentences)
