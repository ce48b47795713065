"""Exception hierarchy shared by all modules."""


class LabError(Exception):
    """Base class for every error raised by mcflab."""


class DomainError(LabError):
    """A point lies outside the coordinate domain of a chart."""


class ValidationError(LabError):
    """Invalid user input: bad metric, bad immersion, bad config value."""


class ConfigurationError(LabError):
    """Numerical configuration is unusable (e.g. differencing step underflow)."""


class DegenerateInputError(LabError):
    """Degenerate geometric input such as a collapsed plane or curve."""


class FrameError(LabError):
    """A normal frame could not be completed at some sample."""


class SingularityError(LabError):
    """The discrete flow self-intersected."""

    def __init__(self, message, samples=None, time=None):
        super().__init__(message)
        self.samples = samples
        self.time = time


class DistanceError(LabError):
    """Numerical projection onto the reference submanifold failed."""


class OutOfTubeError(DistanceError):
    """The query point is too far from the reference submanifold."""


class CertificationError(LabError):
    """Certification aborted at a located sample."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
