"""Exception types shared across the package."""


class ClfdError(Exception):
    """Base class for package errors."""


class ValidationError(ClfdError):
    """A file or config failed schema validation; message names the offending field."""


class DomainError(ClfdError):
    """A mathematical precondition was violated (e.g. rotation-map domain)."""


class TrainingDiverged(ClfdError):
    """A non-finite gradient or loss appeared during training."""
