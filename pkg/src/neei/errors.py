"""Exception types raised across the package."""


class NeeiError(Exception):
    """Base class for all package errors."""


class TargetOnElement(NeeiError):
    """A channel target coincides with an array element (or the array center)."""


class ZeroChannel(NeeiError):
    """Beamforming was requested for an all-zero channel."""


class DimensionMismatch(NeeiError):
    """Channel and beam vectors have different lengths."""


class DegenerateRegion(NeeiError):
    """A heatmap region has zero or negative extent."""


class ControlLimitViolation(NeeiError):
    """A control input exceeds the configured speed limits."""


class NoFeasiblePlan(NeeiError):
    """Every sampled rollout violated the safety distance."""


class ZeroGain(NeeiError):
    """Uplink gain is zero, so no finite transmit power delivers the frame."""


class TooManyFramesForExact(NeeiError):
    """Exhaustive subset enumeration was requested for too many frames."""


class InstanceTooLarge(NeeiError):
    """An oracle was asked to run on an instance beyond its size limit."""


class ParseError(NeeiError):
    """A scenario file could not be parsed.

    ``line`` is 1-based when known, ``field`` is a dotted key path when known.
    """

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(NeeiError):
    """A parsed scenario violates a domain invariant.

    ``field`` is the dotted key path of the offending value, ``line`` its
    1-based line in the file when known.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        text = f"{field}: {message}" if field else message
        super().__init__(f"{text} (line {line})" if line is not None else text)
