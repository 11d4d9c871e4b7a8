"""Exception types raised across the package."""


class BoundsError(IndexError):
    """A coordinate or linear index lies outside the grid."""


class UnsupportedScaleError(ValueError):
    """The rank count exceeds what the row-wise decomposition can place."""


class ContractError(RuntimeError):
    """An API precondition was violated (wrong sizes, use after finalize, ...)."""


class CommError(RuntimeError):
    """A transport operation failed. ``peer`` names the remote rank when known."""

    def __init__(self, message, peer=None):
        super().__init__(message if peer is None else f"{message} (peer {peer})")
        self.peer = peer


class FramingError(CommError):
    """A socket frame violated the wire format."""


class StartupError(CommError):
    """A transport could not be brought up (connect timeout, bind failure)."""


class RankFailure(RuntimeError):
    """One or more rank workers raised. ``failures`` maps rank id to exception."""

    def __init__(self, failures):
        self.failures = dict(failures)
        first = min(self.failures)
        super().__init__(f"rank {first} failed: {self.failures[first]!r}" + (
            f" (+{len(self.failures) - 1} more)" if len(self.failures) > 1 else ""))
