"""Exception hierarchy.

Every error raised by the library derives from :class:`HierCombineError` so
callers (and the command-line entry point) can separate input problems from
sampler problems with a single ``except`` per family.
"""


class HierCombineError(Exception):
    """Base class for all library errors."""


class ValidationError(HierCombineError, ValueError):
    """Input data or arguments violate a documented invariant."""


class NonPositiveUncertainty(ValidationError):
    def __init__(self, source_id):
        self.source_id = source_id
        super().__init__(f"source {source_id!r}: uncertainty s must be > 0")


class NonFiniteValue(ValidationError):
    def __init__(self, source_id, field):
        self.source_id = source_id
        self.field = field
        super().__init__(f"source {source_id!r}: field {field!r} is not finite")


class DuplicateSourceId(ValidationError):
    def __init__(self, source_id):
        self.source_id = source_id
        super().__init__(f"duplicate source_id {source_id!r}")


class CovariateDimensionMismatch(ValidationError):
    pass


class TooFewSources(ValidationError):
    pass


class DomainViolation(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaError(ValidationError):
    pass


class InvalidScale(ValidationError):
    pass


class InvalidCorrelation(ValidationError):
    pass


class NegativeArgument(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class NoVariance(ValidationError):
    pass


class RankDeficientDesign(ValidationError):
    pass


class DegenerateUncertainty(ValidationError):
    pass


class MissingParameter(ValidationError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"draws are missing parameter {name!r}")


class MissingDrawsFile(ValidationError):
    pass


class SamplerError(HierCombineError, RuntimeError):
    """The sampler could not produce draws."""


class InitializationFailure(SamplerError):
    pass


class SamplerDiverged(SamplerError):
    pass


class NonFiniteDensity(SamplerError):
    def __init__(self, index, message="non-finite log density"):
        self.index = index
        super().__init__(f"{message} (coordinate {index})")


class InsufficientDraws(HierCombineError, ValueError):
    pass
