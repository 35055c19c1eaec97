"""Exception hierarchy shared by every stage of the pipeline."""


class PipelineError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this error."""

    exit_code = 1

    def __init__(self, message, *, line=None, source=None):
        self.line = line
        self.source = source
        prefix = ""
        if source is not None:
            prefix += f"{source}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class ValidationError(PipelineError):
    pass


# score tables
class MalformedRow(ValidationError):
    pass


class DuplicateTriple(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class UnknownMetric(ValidationError):
    pass


class InvalidManifest(ValidationError):
    pass


class SparseGroup(ValidationError):
    pass


class SingletonGroup(ValidationError):
    pass


# reward / curation / weighting
class EmptyFamily(ValidationError):
    pass


class RatioTooLarge(ValidationError):
    pass


class GroupSizeMismatch(ValidationError):
    pass


class EmptyGroup(ValidationError):
    pass


class EmptyCorpus(ValidationError):
    pass


# model
class OutOfRangeT(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class FrozenParameters(PipelineError):
    pass


# training / statistics
class EmptyBatch(ValidationError):
    pass


class EmptyList(ValidationError):
    pass


class SampleCountMismatch(ValidationError):
    pass


class NonConvergence(PipelineError):
    exit_code = 2


class DivergenceDetected(PipelineError):
    """Loss went non-finite. ``partial`` holds the run logged so far."""

    exit_code = 2

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
