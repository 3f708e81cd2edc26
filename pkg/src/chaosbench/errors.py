"""Exception hierarchy for the benchmark harness.

Every error raised on purpose by the library derives from ChaosBenchError so
callers can catch harness failures without swallowing programming errors.
"""


class ChaosBenchError(Exception):
    """Base class for all harness errors."""


class InvalidArgumentError(ChaosBenchError, ValueError):
    """A caller violated an operation precondition."""


class IntegrationBlowupError(ChaosBenchError):
    """Trajectory left the finite range during integration.

    Carries the last time (in the system's native time units) at which the
    state was still finite.
    """

    def __init__(self, message: str, last_valid_time: float):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class EstimationFailureError(ChaosBenchError):
    """An iterative estimate failed to converge within its budget."""


class UpsamplingRefusedError(InvalidArgumentError):
    """Resampling was asked to produce a grid finer than the source data."""


class FitFailureError(ChaosBenchError):
    """Model fitting could not produce finite weights."""


class UnsupportedModeError(InvalidArgumentError):
    """A channel policy was requested that the model cannot provide."""


class DegenerateGeometryError(ChaosBenchError):
    """A point cloud has no usable geometric structure (e.g. all points equal)."""


class NumericFailureError(ChaosBenchError):
    """A metric produced a non-finite intermediate despite safeguards."""


class UndefinedSimilarityError(ChaosBenchError):
    """Similarity/correlation is undefined (zero variance input)."""


class UndefinedCorrelationError(UndefinedSimilarityError):
    """Rank correlation is undefined (zero rank variance)."""


class ShuffleImpossibleError(ChaosBenchError):
    """No block permutation can satisfy the shuffle constraints."""


class SchemaVersionError(ChaosBenchError):
    """A persisted artifact uses a schema this version cannot read."""


class ConfigError(ChaosBenchError):
    """A configuration document is malformed.

    ``where`` names the offending key/line for CLI diagnostics.
    """

    def __init__(self, message: str, where: str = ""):
        super().__init__(message)
        self.where = where


class ProtocolViolationError(ChaosBenchError):
    """An external adapter broke the wire protocol.

    ``raw`` carries the offending payload for logging.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class AdapterTimeoutError(ChaosBenchError):
    """An external adapter did not answer within the request timeout."""
