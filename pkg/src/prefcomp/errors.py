"""Exception types shared across the package."""


class PrefCompError(Exception):
    """Base class for all package errors."""


class NoAudioFound(PrefCompError):
    """A corpus directory contains no usable WAV files."""


class FormatError(PrefCompError):
    """A WAV file is unreadable or malformed; carries the offending path."""

    def __init__(self, path, reason=""):
        self.path = str(path)
        msg = f"invalid WAV file: {self.path}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class InvalidRate(PrefCompError):
    """Requested sample rate is not a positive integer."""


class ZeroPowerError(PrefCompError):
    """A signal with zero power cannot be scaled to a target SNR."""


class BandSpecError(PrefCompError):
    """Band edges are inconsistent with each other or with the sample rate."""


class DimensionError(PrefCompError):
    """Vector/tensor lengths or shapes do not match."""


class ExpansionError(PrefCompError):
    """Gain deltas imply a non-positive output-level delta (infinite compression)."""


class TooShort(PrefCompError):
    """Audio clip is shorter than one analysis frame."""


class TrainingDiverged(PrefCompError):
    """Training produced a non-finite loss; carries the last stable parameters."""

    def __init__(self, message, last_stable=None):
        super().__init__(message)
        self.last_stable = last_stable


class NotReady(PrefCompError):
    """Replay buffer does not yet hold enough transitions for a training step."""


class QueueExhausted(PrefCompError):
    """The segment queue holds no pair of records with distinct CR sets."""


class ListenerUnavailable(PrefCompError):
    """No feedback arrived from the listener within the allowed time."""


class BalanceWarning(UserWarning):
    """A preference class is absent; balancing proceeds over the classes present."""
