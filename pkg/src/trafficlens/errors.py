"""Exception types shared across the toolkit."""


class TrafficLensError(Exception):
    """Base class for all toolkit errors."""


class InputError(TrafficLensError, ValueError):
    """Rejected input: bad geometry, malformed file, invalid parameter."""


class UnclassifiableMovement(TrafficLensError):
    """A clipped fragment starts or ends strictly inside its mask, so the
    entry/exit approaches cannot be determined."""


class BackendError(TrafficLensError, RuntimeError):
    """An external simulation backend failed (nonzero exit, timeout, or
    unparseable output)."""
