"""Exception hierarchy for the EPIC toolkit.

Every error raised by the library derives from EpicError so batch drivers
can catch protocol failures without masking programming errors.
"""


class EpicError(Exception):
    """Base class for all library errors."""


class ConfigError(EpicError):
    """Invalid or inconsistent configuration value."""


class ParameterError(EpicError):
    """Operation called with out-of-domain parameters."""


class DecodeError(EpicError):
    """Malformed element or packet encoding."""


class DimensionError(EpicError):
    """Vector length does not match the hash dimension d."""


class KeyError_(EpicError):
    """Unusable key material (e.g. zero private key)."""


class AuthFailed(EpicError):
    """Signature or certificate verification failed."""


class ReplayRejected(EpicError):
    """Timestamp outside the freshness window."""


class KeyConfirmationFailed(EpicError):
    """Key-agreement confirmation digest mismatch."""


class KeyNotProvisioned(EpicError):
    """No short-term key covers the requested (day, slot)."""


class MaskReuseError(EpicError):
    """A one-time mask was consumed twice."""


class InsufficientCandidates(EpicError):
    """Proxy selection asked for more proxies than candidates exist."""


class SequencingError(EpicError):
    """Billing operation called out of slot order."""


class IncompletePeriodError(EpicError):
    """Billing period is missing report slots."""


class IncompleteBillingError(EpicError):
    """Bill computation is missing recovered period totals."""


class DlogRangeError(EpicError):
    """Discrete log target outside the configured solver range."""


class ConsistencyError(EpicError):
    """Recovered aggregate violates the sanity bound."""


class AttackDetected(EpicError):
    """Integrity verification failed; carries the evidence collected so far."""

    def __init__(self, message, culprits=None, check=None):
        super().__init__(message)
        self.culprits = list(culprits or [])
        self.check = check


class InconsistentEvidence(EpicError):
    """Attacker identification scanned every node without a verdict."""


class TopologyError(EpicError):
    """Topology violates its invariants (disconnected, bad root, ...)."""


class InvalidTestError(EpicError):
    """Statistical test invoked with an invalid sampling regime."""


class StateError(EpicError):
    """Missing or corrupt persisted system state."""
