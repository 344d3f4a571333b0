"""
Registry Transport Plugin
Posts consents to the online subject registry for controllers to retrieve
"""

import logging

from helper.errors import RegistryError, TransportError
from utils.registry import ConsentRecord

logger = logging.getLogger(__name__)

STATUS_ACCEPTED = 0x00


def deliver(message, context):
    """
    Post a consent record.

    Args:
        message: ConsentMessage to send
        context: dict with 'client' (RegistryClient or EmbeddedRegistryClient)

    Returns:
        int: 0x00 once the registry stored the record
    """
    client = context['client']
    record = ConsentRecord(message.device_id, message.subject, message.policy,
                           message.timestamp, nonce=message.nonce)
    try:
        stored = client.post_consent(record)
    except RegistryError as e:
        raise TransportError(f"Registry refused consent ({e.status}): {e.message}")
    logger.debug(f"Consent for {message.device_id} stored by registry as {stored.token_id}")
    return STATUS_ACCEPTED


def get_info():
    """Get plugin information."""
    return {
        'name': 'Online Registry',
        'type': 'transport',
        'description': 'Consent posted to the subject registry over HTTP',
        'requires': ['requests'],
        'needs_range': False,
    }
