from .base import DEFAULT_SCRIPT_TIMEOUT, EnvironmentSession, RetryingSession
from .http import HttpEnvironment
from .sim import SNAPSHOTS, SimDesktop, SimDesktopState, make_fixture

__all__ = [
    "DEFAULT_SCRIPT_TIMEOUT",
    "EnvironmentSession",
    "RetryingSession",
    "HttpEnvironment",
    "SNAPSHOTS",
    "SimDesktop",
    "SimDesktopState",
    "make_fixture",
]
