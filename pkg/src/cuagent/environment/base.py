from __future__ import annotations

import hashlib
import logging
import time
from abc import ABC, abstractmethod
from typing import Callable

from ..errors import TransportError
from ..protocol import CodeAction, ExecResult, GuiAction, Observation

log = logging.getLogger(__name__)

DEFAULT_SCRIPT_TIMEOUT = 120.0


class EnvironmentSession(ABC):
    """One exclusively-owned machine (real or simulated) for one task."""

    session_id: str
    screen: tuple[int, int]

    @abstractmethod
    def execute_script(self, action: CodeAction, timeout: float = DEFAULT_SCRIPT_TIMEOUT) -> tuple[ExecResult, Observation]:
        ...

    @abstractmethod
    def perform_action(self, action: GuiAction) -> Observation:
        ...

    @abstractmethod
    def capture_screenshot(self) -> Observation:
        ...

    @abstractmethod
    def reset(self, snapshot_id: str) -> "EnvironmentSession":
        ...

    @abstractmethod
    def read_file(self, path: str) -> bytes | None:
        """Read-only probe used by evaluators; None when ``path`` is not a regular file."""

    def file_md5(self, path: str) -> str | None:
        data = self.read_file(path)
        return None if data is None else hashlib.md5(data).hexdigest()

    def close(self) -> None:
        pass


class RetryingSession(EnvironmentSession):
    """Retry policy wrapper: re-issues idempotent operations after TransportError.

    ``execute_script`` and ``perform_action`` are never retried since a lost response
    does not mean the side effect did not happen.
    """

    def __init__(self, inner: EnvironmentSession, attempts: int = 3, backoff: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep

    @property
    def session_id(self) -> str:  # type: ignore[override]
        return self.inner.session_id

    @property
    def screen(self) -> tuple[int, int]:  # type: ignore[override]
        return self.inner.screen

    def _retry(self, fn, *args):
        for attempt in range(1, self.attempts + 1):
            try:
                return fn(*args)
            except TransportError as exc:
                if attempt == self.attempts:
                    raise
                log.warning("transport error (attempt %d/%d): %s", attempt, self.attempts, exc)
                self._sleep(self.backoff * 2 ** (attempt - 1))

    def execute_script(self, action, timeout=DEFAULT_SCRIPT_TIMEOUT):
        return self.inner.execute_script(action, timeout)

    def perform_action(self, action):
        return self.inner.perform_action(action)

    def capture_screenshot(self):
        return self._retry(self.inner.capture_screenshot)

    def reset(self, snapshot_id):
        self._retry(self.inner.reset, snapshot_id)
        return self

    def read_file(self, path):
        return self._retry(self.inner.read_file, path)

    def file_md5(self, path):
        return self._retry(self.inner.file_md5, path)

    def close(self):
        self.inner.close()
