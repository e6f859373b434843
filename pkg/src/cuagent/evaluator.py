"""Boolean AND/OR evaluator trees over execution-based atomic checks.

Grammar (JSON). Structural keys combine children, atom keys name checks:

    {"and": [expr, expr, ...]}                     all children true (>= 2 children)
    {"or":  [expr, expr, ...]}                     any child true (>= 2 children)
    {"file_exists": "/abs/path"}
    {"md5": {"path": "/abs/path", "digest": "<32 lowercase hex>"}}
    {"file_matches": {"path": "/abs/path", "pattern": "<python re>"}}
    {"script": {"language": "python"|"bash", "code": "..."}}   exit code 0 means true

``file_matches`` uses Python ``re.search`` on the file decoded as UTF-8 (errors
replaced). ``script`` may have side effects; fixtures place it last.
Additional atom kinds can be added with :func:`register_atom`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, ClassVar, Union

from .environment.base import EnvironmentSession
from .errors import EnvironmentUnreachable, EvaluationIndeterminate, ParseError
from .protocol import LANGUAGES, CodeAction

_HEX32 = re.compile(r"[0-9a-f]{32}")
SCRIPT_TIMEOUT = 60.0


class AtomicCheck:
    key: ClassVar[str]

    def check(self, env: EnvironmentSession) -> bool:
        raise NotImplementedError

    def to_value(self) -> Any:
        raise NotImplementedError

    @classmethod
    def from_value(cls, value: Any, position: str) -> "AtomicCheck":
        raise NotImplementedError


def _abs_path(value: Any, position: str) -> str:
    if not isinstance(value, str) or not value.startswith("/"):
        raise ParseError(f"expected an absolute path, got {value!r}", position)
    return value


def _fields(value: Any, required: tuple[str, ...], position: str) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise ParseError("expected an object", position)
    missing = [k for k in required if k not in value]
    extra = sorted(set(value) - set(required))
    if missing or extra:
        raise ParseError(f"expected fields {list(required)}, missing {missing}, unexpected {extra}", position)
    return value


@dataclass(frozen=True)
class FileExists(AtomicCheck):
    key: ClassVar[str] = "file_exists"
    path: str

    def check(self, env):
        return env.read_file(self.path) is not None

    def to_value(self):
        return self.path

    @classmethod
    def from_value(cls, value, position):
        return cls(_abs_path(value, position))


@dataclass(frozen=True)
class FileMd5Equals(AtomicCheck):
    key: ClassVar[str] = "md5"
    path: str
    digest: str

    def __post_init__(self):
        if not _HEX32.fullmatch(self.digest):
            raise ValueError(f"md5 digest must be 32 lowercase hex chars: {self.digest!r}")

    def check(self, env):
        return env.file_md5(self.path) == self.digest

    def to_value(self):
        return {"path": self.path, "digest": self.digest}

    @classmethod
    def from_value(cls, value, position):
        value = _fields(value, ("path", "digest"), position)
        path = _abs_path(value["path"], f"{position}.path")
        if not isinstance(value["digest"], str) or not _HEX32.fullmatch(value["digest"]):
            raise ParseError("digest must be 32 lowercase hex chars", f"{position}.digest")
        return cls(path, value["digest"])

    @classmethod
    def of_bytes(cls, path: str, data: bytes) -> "FileMd5Equals":
        return cls(path, hashlib.md5(data).hexdigest())


@dataclass(frozen=True)
class FileContentMatches(AtomicCheck):
    key: ClassVar[str] = "file_matches"
    path: str
    pattern: str

    def __post_init__(self):
        re.compile(self.pattern)

    def check(self, env):
        data = env.read_file(self.path)
        if data is None:
            return False
        return re.search(self.pattern, data.decode("utf-8", errors="replace")) is not None

    def to_value(self):
        return {"path": self.path, "pattern": self.pattern}

    @classmethod
    def from_value(cls, value, position):
        value = _fields(value, ("path", "pattern"), position)
        path = _abs_path(value["path"], f"{position}.path")
        pattern = value["pattern"]
        if not isinstance(pattern, str):
            raise ParseError("pattern must be a string", f"{position}.pattern")
        try:
            re.compile(pattern)
        except re.error as exc:
            raise ParseError(f"bad regular expression: {exc}", f"{position}.pattern") from None
        return cls(path, pattern)


@dataclass(frozen=True)
class ScriptPredicate(AtomicCheck):
    key: ClassVar[str] = "script"
    action: CodeAction

    def check(self, env):
        result, _ = env.execute_script(self.action, SCRIPT_TIMEOUT)
        return result.exit_code == 0

    def to_value(self):
        return {"language": self.action.language, "code": self.action.source}

    @classmethod
    def from_value(cls, value, position):
        value = _fields(value, ("language", "code"), position)
        if value["language"] not in LANGUAGES:
            raise ParseError(f"language must be one of {LANGUAGES}", f"{position}.language")
        if not isinstance(value["code"], str) or not value["code"].strip():
            raise ParseError("code must be a non-empty string", f"{position}.code")
        return cls(CodeAction(value["language"], value["code"]))


ATOMS: dict[str, type[AtomicCheck]] = {}


def register_atom(cls: type[AtomicCheck]) -> type[AtomicCheck]:
    if cls.key in ("and", "or"):
        raise ValueError(f"{cls.key!r} is a structural key")
    ATOMS[cls.key] = cls
    return cls


for _cls in (FileExists, FileMd5Equals, FileContentMatches, ScriptPredicate):
    register_atom(_cls)


# --------------------------------------------------------------------------- tree


@dataclass(frozen=True)
class Atom:
    check: AtomicCheck


@dataclass(frozen=True)
class And:
    children: tuple["EvaluatorExpr", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("and needs at least 2 children")


@dataclass(frozen=True)
class Or:
    children: tuple["EvaluatorExpr", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("or needs at least 2 children")


EvaluatorExpr = Union[Atom, And, Or]


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INDETERMINATE = "indeterminate"


def evaluate(expr: EvaluatorExpr, env: EnvironmentSession,
             log: list[tuple[AtomicCheck, bool]] | None = None) -> bool:
    """Short-circuit left-to-right evaluation.

    ``log`` receives one ``(atom, result)`` entry per atom actually checked; these
    checks are not agent steps and are never written to a Trace.
    """
    if isinstance(expr, Atom):
        try:
            value = bool(expr.check.check(env))
        except EnvironmentUnreachable as exc:
            raise EvaluationIndeterminate(f"{expr.check.key} check failed: {exc}") from exc
        if log is not None:
            log.append((expr.check, value))
        return value
    if isinstance(expr, And):
        return all(evaluate(c, env, log) for c in expr.children)
    if isinstance(expr, Or):
        return any(evaluate(c, env, log) for c in expr.children)
    raise TypeError(f"not an evaluator expression: {expr!r}")


def verdict(expr: EvaluatorExpr, env: EnvironmentSession,
            log: list[tuple[AtomicCheck, bool]] | None = None) -> Verdict:
    try:
        return Verdict.PASS if evaluate(expr, env, log) else Verdict.FAIL
    except EvaluationIndeterminate:
        return Verdict.INDETERMINATE


def atoms_of(expr: EvaluatorExpr) -> list[AtomicCheck]:
    if isinstance(expr, Atom):
        return [expr.check]
    return [a for c in expr.children for a in atoms_of(c)]


def truth_value(expr: EvaluatorExpr, assign: Callable[[AtomicCheck], bool]) -> bool:
    """Evaluate without an environment, using ``assign`` for atom values."""
    if isinstance(expr, Atom):
        return assign(expr.check)
    values = [truth_value(c, assign) for c in expr.children]
    return all(values) if isinstance(expr, And) else any(values)


# --------------------------------------------------------------------------- text form


def expr_from_dict(data: Any, position: str = "$") -> EvaluatorExpr:
    if not isinstance(data, dict) or len(data) != 1:
        raise ParseError("each node must be an object with exactly one key", position)
    (key, value), = data.items()
    if key in ("and", "or"):
        if not isinstance(value, list):
            raise ParseError(f"{key} takes a list of children", f"{position}.{key}")
        if len(value) < 2:
            raise ParseError(f"{key} needs at least 2 children, got {len(value)}", f"{position}.{key}")
        children = tuple(expr_from_dict(c, f"{position}.{key}[{i}]") for i, c in enumerate(value))
        return And(children) if key == "and" else Or(children)
    cls = ATOMS.get(key)
    if cls is None:
        raise ParseError(f"unknown key {key!r}", position)
    return Atom(cls.from_value(value, f"{position}.{key}"))


def expr_to_dict(expr: EvaluatorExpr) -> dict[str, Any]:
    if isinstance(expr, Atom):
        return {expr.check.key: expr.check.to_value()}
    key = "and" if isinstance(expr, And) else "or"
    return {key: [expr_to_dict(c) for c in expr.children]}


def parse_evaluator(spec_text: str | dict[str, Any]) -> EvaluatorExpr:
    if isinstance(spec_text, str):
        try:
            data = json.loads(spec_text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    else:
        data = spec_text
    return expr_from_dict(data)


def serialize_evaluator(expr: EvaluatorExpr) -> str:
    return json.dumps(expr_to_dict(expr), sort_keys=True, separators=(",", ":"))
