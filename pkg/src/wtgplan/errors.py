"""Exception hierarchy shared by every stage of the pipeline."""


class WtgError(Exception):
    """Base class for all errors raised by wtgplan."""


class InputError(WtgError):
    """Bad data on disk or bad user-supplied geometry."""


class MalformedFile(InputError):
    pass


class EmptyCloud(InputError):
    pass


class NonFiniteValue(InputError, ValueError):
    pass


class LengthMismatch(InputError, ValueError):
    pass


class IoFailure(InputError, OSError):
    pass


class VersionMismatch(InputError):
    pass


class InvalidSpec(InputError, ValueError):
    pass


class ConfigError(WtgError, ValueError):
    pass


class EmptyVoxel(WtgError, ValueError):
    pass


class NotSymmetric(WtgError, ValueError):
    pass


class DegenerateFootprint(WtgError):
    """Fewer than three points, or all points collinear."""


class FieldMismatch(WtgError):
    pass


class UnknownNode(WtgError, KeyError):
    pass


class NoNodeInRange(WtgError):
    pass


class NoPath(WtgError):
    pass
