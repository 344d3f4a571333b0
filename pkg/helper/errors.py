"""
Error types for the consent framework
Every error carries an optional solution hint and a stable error code.
"""


class ConsentFrameworkError(Exception):
    """Base exception for consent framework errors."""
    def __init__(self, message, solution=None, error_code=None):
        self.message = message
        self.solution = solution
        self.error_code = error_code
        super().__init__(self.message)


class UndefinedPolicyError(ConsentFrameworkError):
    """A policy comparison was attempted with an undefined operand."""
    def __init__(self, message="Cannot compare an undefined policy"):
        super().__init__(message, "Check the policy with override() before comparing", "POLICY_UNDEFINED")


class MalformedTLVError(ConsentFrameworkError):
    """A TLV stream is truncated, out of order or carries unknown codes."""
    def __init__(self, message):
        super().__init__(message, "Re-encode the value with encode_policy()", "TLV_MALFORMED")


class MalformedOperationError(ConsentFrameworkError):
    """An operation carries structurally invalid parameters."""
    def __init__(self, message):
        super().__init__(message, None, "OPERATION_MALFORMED")


class ReplayError(ConsentFrameworkError):
    """A trace cannot be replayed from the empty state."""
    def __init__(self, message):
        super().__init__(message, "Regenerate the trace with the simulator", "TRACE_UNREPLAYABLE")


class OversizePolicyError(ConsentFrameworkError):
    """A policy does not fit in a single TLV value."""
    def __init__(self, size):
        super().__init__(f"Policy TLV is {size} octets, limit is 255",
                         "Shorten the controller identifier or drop codes", "POLICY_OVERSIZE")


class MalformedFrameError(ConsentFrameworkError):
    """An advertisement or consent frame violates its layout."""
    def __init__(self, message):
        super().__init__(message, None, "FRAME_MALFORMED")


class MissingIdentifierError(ConsentFrameworkError):
    """The PDC has no subject identifier for a data type."""
    def __init__(self, data_type):
        super().__init__(f"No identifier configured for {data_type}",
                         "Add it under pdc.identifiers in config.yml", "IDENTIFIER_MISSING")


class ScriptError(ConsentFrameworkError):
    """A scenario script cannot be loaded or validated."""
    def __init__(self, message):
        super().__init__(message, "Compare the script with assets/scenarios/anpr_basic.json", "SCRIPT_INVALID")


class RegistryError(ConsentFrameworkError):
    """A registry request failed; status mirrors the HTTP status code."""
    def __init__(self, status, message):
        self.status = status
        super().__init__(message, None, f"REGISTRY_{status}")


class TransportError(ConsentFrameworkError):
    """A consent could not be delivered over a transport."""
    def __init__(self, message):
        super().__init__(message, "Retry when the device is reachable", "TRANSPORT_FAILED")


class UninformedDeviceError(ConsentFrameworkError):
    """A consent was about to go to a device the gateway was never informed of."""
    def __init__(self, device_id):
        super().__init__(f"Gateway has not been informed of device {device_id}",
                         "Wait for the declaration to be received in range", "DEVICE_UNINFORMED")


class RuleFileError(ConsentFrameworkError):
    """A consent rule file cannot be read."""
    def __init__(self, message):
        super().__init__(message, "Check the file against 'cli.py rules list' output", "RULES_INVALID")


class ConfigFileError(ConsentFrameworkError):
    """config.yml exists but is not valid YAML."""
    def __init__(self, message):
        super().__init__(message, "Delete config.yml to have the defaults written again", "CONFIG_INVALID")
