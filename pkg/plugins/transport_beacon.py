"""
Beacon Transport Plugin
Delivers consents over a short connection to the device's privacy beacon
"""

import logging

from helper.errors import TransportError
from utils.beacon import ConsentFrame

logger = logging.getLogger(__name__)


def deliver(message, context):
    """
    Write a consent frame to the beacon of message.device_id.

    Args:
        message: ConsentMessage to send
        context: dict with 'bus' (RadioBus) and 'position' (callable giving
                 the gateway's current Position)

    Returns:
        int: Status octet answered by the beacon
    """
    bus = context['bus']
    position = context['position']()
    channel = bus.connect(position, message.device_id)
    if channel is None:
        raise TransportError(f"No beacon for device {message.device_id} in range")

    frame = ConsentFrame(message.device_id, message.subject, message.timestamp,
                         message.nonce, message.policy).serialize()
    status = channel.write(frame, message.timestamp)
    logger.debug(f"Beacon of {message.device_id} answered 0x{status:02x}")
    return status


def get_info():
    """Get plugin information."""
    return {
        'name': 'Privacy Beacon',
        'type': 'transport',
        'description': 'Direct consent write to an in-range privacy beacon',
        'requires': ['numpy'],
        'needs_range': True,
    }
