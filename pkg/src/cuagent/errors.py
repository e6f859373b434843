"""Exception hierarchy shared across the runtime."""


class CuagentError(Exception):
    """Base class for every error raised by this package."""


class ProtocolError(CuagentError):
    """A model reply or wire payload does not follow the documented grammar."""


class ActionError(ProtocolError):
    """Base for GUI action parse/validation failures."""


class MalformedAction(ActionError):
    pass


class OutOfBounds(ActionError):
    pass


class UnknownKey(ActionError):
    pass


class UndecodableDecision(ProtocolError):
    pass


class EnvironmentUnreachable(CuagentError):
    """The environment session cannot be reached or has died."""


class TransportError(EnvironmentUnreachable):
    pass


class SessionExpired(EnvironmentUnreachable):
    pass


class SessionBusy(CuagentError):
    """An operation was attempted while another is in flight on the same session."""


class UnknownSnapshot(CuagentError):
    pass


class BackendError(CuagentError):
    def __init__(self, message: str, *, transient: bool = False):
        super().__init__(message)
        self.transient = transient


class HarnessError(BackendError):
    """Replay harness failures. These abort the task instead of being absorbed by workers."""


class ReplayExhausted(HarnessError):
    pass


class ReplayMismatch(HarnessError):
    pass


class ParseError(CuagentError):
    def __init__(self, message: str, position: str | int):
        super().__init__(f"{message} (at {position})")
        self.position = position


class EvaluationIndeterminate(CuagentError):
    """Evaluation could not complete because the environment failed."""


class EmptySelection(CuagentError):
    pass


class BadBins(CuagentError):
    pass


class TraceIngestError(CuagentError):
    pass
