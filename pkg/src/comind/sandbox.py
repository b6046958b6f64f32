"""Sandbox clients for model-emitted code.

``SubprocessSandbox`` drives the external execution shim over its JSON
stdio wire protocol (request on stdin, one result object on stdout), one
process per execution.  ``StubSandbox`` is a built-in deterministic fake
keyed by code digest, so the whole engine suite runs with no shim present.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

STATUS_OK = "ok"
STATUS_ERROR = "error"
STATUS_TIMEOUT = "timeout"


class SandboxUnavailable(Exception):
    """The sandbox command could not be run or broke the wire protocol."""


@dataclass
class ExecResult:
    status: str
    stdout: str = ""
    stderr: str = ""
    error_type: str | None = None
    error_message: str | None = None
    duration_ms: int = 0
    produced_files: list[str] = field(default_factory=list)

    @property
    def error_text(self) -> str:
        """Rendering used by the repair prompt: ``Type: message``."""
        if self.status == STATUS_TIMEOUT:
            return "Timeout: execution exceeded the time limit"
        if self.error_type:
            return f"{self.error_type}: {self.error_message or ''}".rstrip(": ")
        return self.error_message or ""

    @classmethod
    def from_wire(cls, obj: dict) -> "ExecResult":
        return cls(
            status=obj["status"],
            stdout=obj.get("stdout", ""),
            stderr=obj.get("stderr", ""),
            error_type=obj.get("error_type"),
            error_message=obj.get("error_message"),
            duration_ms=int(obj.get("duration_ms", 0)),
            produced_files=list(obj.get("produced_files", [])),
        )


def code_digest(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()


class SubprocessSandbox:
    """One shim process per execution; the command line comes from config
    (e.g. ``["python3", "-m", "sandbox_shim"]``)."""

    def __init__(self, command: list[str], wait_grace_s: float = 10.0) -> None:
        if not command:
            raise ValueError("sandbox command must be non-empty")
        self.command = list(command)
        self.wait_grace_s = wait_grace_s

    def execute(
        self,
        code: str,
        workdir: Path | str,
        timeout_s: float = 30.0,
        capture_figures: bool = False,
    ) -> ExecResult:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        request = {
            "code": code,
            "timeout_s": timeout_s,
            "workdir": str(workdir),
            "capture_figures": capture_figures,
        }
        try:
            proc = subprocess.run(
                self.command,
                input=json.dumps(request).encode("utf-8"),
                capture_output=True,
                timeout=timeout_s + self.wait_grace_s,
            )
        except FileNotFoundError as exc:
            raise SandboxUnavailable(f"sandbox command not found: {self.command[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise SandboxUnavailable(f"sandbox shim hung past {timeout_s + self.wait_grace_s}s") from exc
        out = proc.stdout.decode("utf-8", errors="replace").strip()
        try:
            return ExecResult.from_wire(json.loads(out))
        except (ValueError, KeyError) as exc:
            stderr = proc.stderr.decode("utf-8", errors="replace")[:500]
            raise SandboxUnavailable(
                f"sandbox shim returned no result object (exit {proc.returncode}): {stderr}"
            ) from exc


class StubSandbox:
    """Deterministic fake: results are pre-registered per code digest.
    Registered produced files are materialized into the requested workdir so
    figure-capture consumers can read real bytes."""

    def __init__(self) -> None:
        self._results: dict[str, ExecResult] = {}
        self._files: dict[str, dict[str, bytes]] = {}
        self.executions: list[str] = []

    def register(
        self,
        code: str,
        stdout: str = "",
        status: str = STATUS_OK,
        error_type: str | None = None,
        error_message: str | None = None,
        stderr: str = "",
        files: dict[str, bytes] | None = None,
    ) -> None:
        digest = code_digest(code)
        produced = sorted(files) if files else []
        self._results[digest] = ExecResult(
            status=status,
            stdout=stdout,
            stderr=stderr,
            error_type=error_type,
            error_message=error_message,
            duration_ms=0,
            produced_files=produced,
        )
        if files:
            self._files[digest] = dict(files)

    def register_error(self, code: str, error_type: str, error_message: str) -> None:
        self.register(code, status=STATUS_ERROR, error_type=error_type, error_message=error_message)

    def execute(
        self,
        code: str,
        workdir: Path | str,
        timeout_s: float = 30.0,
        capture_figures: bool = False,
    ) -> ExecResult:
        digest = code_digest(code)
        self.executions.append(digest)
        result = self._results.get(digest)
        if result is None:
            return ExecResult(
                status=STATUS_ERROR,
                error_type="StubMiss",
                error_message="no stub registered for this code",
            )
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        for name, data in self._files.get(digest, {}).items():
            target = workdir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        return ExecResult(
            status=result.status,
            stdout=result.stdout,
            stderr=result.stderr,
            error_type=result.error_type,
            error_message=result.error_message,
            duration_ms=result.duration_ms,
            produced_files=list(result.produced_files),
        )


class FailingSandbox:
    """Sandbox double that is permanently unreachable."""

    def __init__(self, message: str = "sandbox offline") -> None:
        self.message = message

    def execute(self, code: str, workdir, timeout_s: float = 30.0, capture_figures: bool = False):
        raise SandboxUnavailable(self.message)


def timed_ms(start: float) -> int:
    return int((time.monotonic() - start) * 1000)
