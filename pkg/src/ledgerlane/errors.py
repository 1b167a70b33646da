"""Exception hierarchy.

Every domain error carries an ``exit_code`` so the CLI can map failures to
stable process exit statuses (2 is reserved for usage errors).
"""

from __future__ import annotations


class LedgerLaneError(Exception):
    exit_code = 1


class NotFound(LedgerLaneError):
    exit_code = 3


class UnknownPrincipal(NotFound):
    pass


class AlreadyExists(LedgerLaneError):
    exit_code = 4


class DuplicateTx(AlreadyExists):
    pass


class NotAuthorized(LedgerLaneError):
    exit_code = 5


class BadSignature(NotAuthorized):
    pass


class InvalidInput(LedgerLaneError):
    exit_code = 6


class EmptyId(InvalidInput):
    pass


class InvalidId(InvalidInput):
    pass


class InvalidRole(InvalidInput):
    pass


class EmptyBatch(InvalidInput):
    pass


class MalformedQuery(InvalidInput):
    pass


class ZeroValidators(InvalidInput):
    pass


class NoActiveValidators(InvalidInput):
    pass


class NotUntrustedSource(InvalidInput):
    pass


class ParseError(InvalidInput):
    """Metadata document could not be decoded; ``key`` names the culprit."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class SchemaError(InvalidInput):
    def __init__(self, issues):
        self.issues = list(issues)
        fields = ", ".join(issue.field for issue in self.issues)
        super().__init__(f"schema violations in: {fields}")


class IntegrityViolation(LedgerLaneError):
    exit_code = 7


class CorruptChain(IntegrityViolation):
    def __init__(self, message: str, height: int | None = None):
        super().__init__(message)
        self.height = height


class SubmissionRejected(LedgerLaneError):
    exit_code = 8


class BelowTrustThreshold(SubmissionRejected):
    pass


class ConfigError(LedgerLaneError):
    exit_code = 9


class StorageUnavailable(LedgerLaneError):
    exit_code = 9
