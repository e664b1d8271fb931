"""Exception hierarchy.

Every protocol failure carries a short machine-readable ``code`` and a
distinct process ``exit_code`` so the CLI can map errors one-to-one.
"""


class ProtocolError(Exception):
    code = "error"
    exit_code = 1

    def diagnostic(self) -> str:
        return f"error: {self.code}: {self}"


class ConfigError(ProtocolError, ValueError):
    code = "config"
    exit_code = 2


class UsageError(ProtocolError, ValueError):
    code = "usage"
    exit_code = 3


class RangeError(UsageError):
    code = "range"
    exit_code = 4


class RegistrationRefused(ProtocolError):
    code = "kyc-required"
    exit_code = 5


class MalformedCredential(ProtocolError, ValueError):
    code = "malformed-credential"
    exit_code = 6


class AuthorizationDenied(ProtocolError):
    code = "authorization-denied"
    exit_code = 7


class NotFound(ProtocolError, LookupError):
    code = "not-found"
    exit_code = 8


class WindowClosed(ProtocolError):
    code = "window-closed"
    exit_code = 9


class ConstraintViolation(ProtocolError):
    """Proving refused because the witness breaks a circuit constraint."""

    code = "constraint-violation"
    exit_code = 10

    def __init__(self, constraint: str, index: int | None = None):
        self.constraint = constraint
        self.index = index
        where = f"tuple {index}: " if index is not None else ""
        super().__init__(f"{where}{constraint}")


class TupleInvalid(ProtocolError):
    code = "tuple-invalid"
    exit_code = 11

    def __init__(self, dimension: str, reason: str = "verification failed"):
        self.dimension = dimension
        super().__init__(f"dimension {dimension}: {reason}")


class UnknownCAKey(ProtocolError):
    code = "unknown-ca-key"
    exit_code = 12


class ProofInvalid(ProtocolError):
    code = "proof-invalid"
    exit_code = 13


class DuplicateApplication(ProtocolError):
    code = "duplicate-application"
    exit_code = 14


class TooEarly(ProtocolError):
    code = "too-early"
    exit_code = 15


class NotAdmin(ProtocolError):
    code = "not-admin"
    exit_code = 16


class AlreadySet(ProtocolError):
    code = "already-set"
    exit_code = 17


class BadProof(ProtocolError):
    code = "bad-proof"
    exit_code = 18


class AlreadyClaimed(ProtocolError):
    code = "already-claimed"
    exit_code = 19


class RootsNotSet(ProtocolError):
    code = "roots-not-set"
    exit_code = 20


class NotAwarded(ProtocolError):
    code = "not-awarded"
    exit_code = 21


class TamperError(ProtocolError):
    code = "tamper"
    exit_code = 22


class AuditMismatch(ProtocolError):
    code = "root-mismatch"
    exit_code = 23


class AuditIncomplete(ProtocolError):
    code = "incomplete"
    exit_code = 24
