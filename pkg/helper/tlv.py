"""
TLV helpers
One-octet tag, one-octet length, value. Used by the policy codec and by the
declaration payload carried in advertisement fragments.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, List, Sequence

from helper.errors import MalformedTLVError


@dataclass(frozen=True)
class TLVItem:
    tag: int
    value: bytes

    def serialize(self) -> bytes:
        if len(self.value) > 255:
            raise MalformedTLVError(f"Value for tag 0x{self.tag:02x} exceeds 255 octets")
        return bytes([self.tag, len(self.value)]) + self.value


def build_tlv(items: Iterable[TLVItem]) -> bytes:
    """Serialize TLV items in the given order."""
    return b"".join(item.serialize() for item in items)


def parse_tlv(payload: bytes) -> Iterator[TLVItem]:
    """Parse a TLV stream into items, rejecting truncated input."""
    idx = 0
    total = len(payload)
    while idx < total:
        if idx + 2 > total:
            raise MalformedTLVError(f"Truncated TLV header at offset {idx}")
        tag = payload[idx]
        length = payload[idx + 1]
        value_end = idx + 2 + length
        if value_end > total:
            raise MalformedTLVError(f"Value for tag 0x{tag:02x} runs past end of stream")
        yield TLVItem(tag=tag, value=bytes(payload[idx + 2:value_end]))
        idx = value_end


def parse_canonical(payload: bytes, known_tags: Sequence[int]) -> List[TLVItem]:
    """
    Parse a TLV stream that must be in strictly ascending tag order.

    Tags with the high bit set are non-critical and skipped; any other tag
    outside known_tags is an error.

    Args:
        payload: Raw TLV octets
        known_tags: Tags the caller understands

    Returns:
        Known items in stream order
    """
    items = []
    last_tag = -1
    for item in parse_tlv(payload):
        if item.tag <= last_tag:
            raise MalformedTLVError(f"Tag 0x{item.tag:02x} is duplicated or out of order")
        last_tag = item.tag
        if item.tag in known_tags:
            items.append(item)
        elif not item.tag & 0x80:
            raise MalformedTLVError(f"Unknown critical tag 0x{item.tag:02x}")
    return items
