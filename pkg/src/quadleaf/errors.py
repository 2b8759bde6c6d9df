"""Exception hierarchy shared by all quadleaf modules."""


class QuadleafError(Exception):
    """Base class for every error raised by this package."""


class DecodeError(QuadleafError):
    pass


class UnsupportedFormat(QuadleafError):
    pass


class BoundsError(QuadleafError):
    pass


class IndivisibleSegment(QuadleafError):
    pass


class ConfigError(QuadleafError):
    pass


class TrainingError(QuadleafError):
    pass


class ClassifyError(QuadleafError):
    pass


class ExternalClassifierError(ClassifyError):
    """The external classifier process failed (nonzero exit, timeout, missing binary)."""


class ProtocolError(ClassifyError):
    """The external classifier answered with something that breaks the wire contract."""
