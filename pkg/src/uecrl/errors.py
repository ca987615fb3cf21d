class InvalidArgument(ValueError):
    """Caller supplied an argument outside an operation's domain."""


class CorruptState(RuntimeError):
    """Parameters or intermediate values became non-finite."""
