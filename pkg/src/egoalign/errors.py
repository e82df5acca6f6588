"""Exception hierarchy shared by every pipeline stage."""


class AlignError(Exception):
    """Base class. ``frame`` and ``episode`` are filled in as the error bubbles up."""

    def __init__(self, message="", *, frame=None, episode=None):
        super().__init__(message)
        self.frame = frame
        self.episode = episode

    def attach(self, *, frame=None, episode=None):
        if frame is not None and self.frame is None:
            self.frame = frame
        if episode is not None and self.episode is None:
            self.episode = episode
        return self

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.episode is not None:
            where.append(f"episode={self.episode}")
        if self.frame is not None:
            where.append(f"frame={self.frame}")
        if where:
            return f"{msg} [{', '.join(where)}]"
        return msg


# geometry
class NonPositiveDepth(AlignError, ValueError):
    pass


# filters
class WindowTooLarge(AlignError, ValueError):
    pass


class InvalidOrder(AlignError, ValueError):
    pass


class InvalidCutoff(AlignError, ValueError):
    pass


class InvalidFactor(AlignError, ValueError):
    pass


# action alignment
class LengthMismatch(AlignError, ValueError):
    pass


class TooShort(AlignError, ValueError):
    pass


class InsufficientDuration(AlignError, ValueError):
    pass


class InvalidThreshold(AlignError, ValueError):
    pass


class DegenerateFinger(AlignError, ValueError):
    pass


class RangeError(AlignError, ValueError):
    pass


# view alignment
class InvalidTargetSize(AlignError, ValueError):
    pass


class ResolutionMismatch(AlignError, ValueError):
    pass


class AllHoles(AlignError, ValueError):
    pass


class ExternalFailure(AlignError, RuntimeError):
    pass


class ContractViolation(AlignError, RuntimeError):
    pass


# ingest / persistence / sampling
class SchemaError(AlignError, ValueError):
    pass


class MonotonicityError(AlignError, ValueError):
    pass


class DanglingReference(AlignError, FileNotFoundError):
    pass


class IoError(AlignError, OSError):
    pass


class VersionMismatch(AlignError, ValueError):
    pass


class EmptyPool(AlignError, ValueError):
    pass


class InvalidRatio(AlignError, ValueError):
    pass


class InvalidK(AlignError, ValueError):
    pass


class EmptyChunk(AlignError, ValueError):
    pass


class ConfigError(AlignError, ValueError):
    pass
