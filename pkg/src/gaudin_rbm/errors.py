"""Exception hierarchy shared by every stage of the pipeline."""


class GaudinRbmError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(GaudinRbmError, ValueError):
    """A parameter or input shape is outside the documented domain."""


class ConsistencyError(GaudinRbmError):
    """An internal cache no longer matches the state that produced it."""


class ProvenanceError(GaudinRbmError):
    """A sample set was paired with parameters that did not generate it."""


class NumericalError(GaudinRbmError, ArithmeticError):
    """A linear solve or integration step failed numerically."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SizeGuardError(GaudinRbmError):
    """A dense computation was refused because the Hilbert space is too large."""


class OptimizationFailure(GaudinRbmError):
    """Every independent optimization run failed to produce a finite loss."""

    def __init__(self, message, traces=None):
        super().__init__(message)
        self.traces = traces or []


class ConfigError(GaudinRbmError):
    """Run configuration is missing keys or holds invalid values."""


class MissingArtifactError(GaudinRbmError):
    """A stage needs an artifact (e.g. a lower-level checkpoint) that is absent."""
