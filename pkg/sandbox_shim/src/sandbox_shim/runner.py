"""Execute one piece of untrusted Python code under resource limits.

Each request runs in a fresh interpreter process, chdir'd into the
request's working directory, with a stripped environment (no proxy
variables, no inherited PYTHONPATH), a hard wall-clock timeout that kills
the whole process group, and best-effort OS resource limits (address
space, CPU seconds).  Stdout and stderr are captured, never forwarded, so
the shim's own stdout stays a single JSON object.

With ``capture_figures`` the working directory is snapshotted before and
after the run and every newly created image-typed file is listed in the
result, relative to the working directory.
"""

from __future__ import annotations

import os
import re
import signal
import subprocess
import sys
import tempfile
import time
from pathlib import Path

DEFAULT_TIMEOUT_S = 30.0
MEMORY_LIMIT_BYTES = 512 * 1024 * 1024
OUTPUT_CAP_CHARS = 1_000_000

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".gif", ".bmp", ".svg", ".webp", ".tif", ".tiff"}

_ERROR_LINE_RE = re.compile(r"^([A-Za-z_][\w.]*)(?::\s?(.*))?$")


def _snapshot(workdir: Path) -> set[str]:
    if not workdir.exists():
        return set()
    return {
        str(path.relative_to(workdir))
        for path in workdir.rglob("*")
        if path.is_file()
    }


def _set_limits(timeout_s: float):
    def apply() -> None:
        os.setsid()
        try:
            import resource

            resource.setrlimit(resource.RLIMIT_AS, (MEMORY_LIMIT_BYTES, MEMORY_LIMIT_BYTES))
            cpu = max(1, int(timeout_s) + 1)
            resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
        except (ImportError, ValueError, OSError):
            pass  # limits are best effort; the wall-clock kill still applies

    return apply


def _child_env(workdir: Path, config_dir: Path) -> dict[str, str]:
    # Deliberately not inherited: PYTHONPATH, credentials, *_proxy (crude
    # network denial for the common HTTP clients).
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "HOME": str(workdir),
        "LANG": os.environ.get("LANG", "C.UTF-8"),
        "PYTHONDONTWRITEBYTECODE": "1",
        "PYTHONIOENCODING": "utf-8",
        "MPLBACKEND": "Agg",
        "MPLCONFIGDIR": str(config_dir),
        "NO_PROXY": "*",
    }
    return env


def _parse_error(stderr: str, returncode: int) -> tuple[str, str]:
    if returncode < 0:
        try:
            name = signal.Signals(-returncode).name
        except ValueError:
            name = str(-returncode)
        return "Signal", f"process killed by signal {name}"
    lines = [line for line in stderr.strip().splitlines() if line.strip()]
    if lines:
        match = _ERROR_LINE_RE.match(lines[-1].strip())
        if match:
            return match.group(1), match.group(2) or ""
        return "Error", lines[-1].strip()[:300]
    return "Error", f"exit code {returncode}"


def _cap(text: str) -> str:
    if len(text) <= OUTPUT_CAP_CHARS:
        return text
    return text[:OUTPUT_CAP_CHARS] + "\n...[output truncated]"


def run_request(request: dict) -> dict:
    code = request["code"]
    timeout_s = float(request.get("timeout_s", DEFAULT_TIMEOUT_S))
    if timeout_s <= 0:
        raise ValueError("timeout_s must be positive")
    workdir = Path(request["workdir"]).resolve()
    capture_figures = bool(request.get("capture_figures", False))
    workdir.mkdir(parents=True, exist_ok=True)

    before = _snapshot(workdir) if capture_figures else set()
    started = time.monotonic()

    with tempfile.TemporaryDirectory(prefix="shim-") as scratch:
        scratch_dir = Path(scratch)
        script = scratch_dir / "request.py"
        script.write_text(code, encoding="utf-8")
        proc = subprocess.Popen(
            [sys.executable, str(script)],
            cwd=str(workdir),
            env=_child_env(workdir, scratch_dir),
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            stdin=subprocess.DEVNULL,
            preexec_fn=_set_limits(timeout_s),
        )
        timed_out = False
        try:
            stdout_b, stderr_b = proc.communicate(timeout=timeout_s)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            stdout_b, stderr_b = proc.communicate()

    duration_ms = int((time.monotonic() - started) * 1000)
    stdout = _cap(stdout_b.decode("utf-8", errors="replace"))
    stderr = _cap(stderr_b.decode("utf-8", errors="replace"))

    produced: list[str] = []
    if capture_figures:
        created = _snapshot(workdir) - before
        produced = sorted(
            name for name in created if Path(name).suffix.lower() in IMAGE_EXTENSIONS
        )

    if timed_out:
        return {
            "status": "timeout",
            "stdout": stdout,
            "stderr": stderr,
            "error_type": None,
            "error_message": None,
            "duration_ms": duration_ms,
            "produced_files": produced,
        }
    if proc.returncode != 0:
        error_type, error_message = _parse_error(stderr, proc.returncode)
        return {
            "status": "error",
            "stdout": stdout,
            "stderr": stderr,
            "error_type": error_type,
            "error_message": error_message,
            "duration_ms": duration_ms,
            "produced_files": produced,
        }
    return {
        "status": "ok",
        "stdout": stdout,
        "stderr": stderr,
        "error_type": None,
        "error_message": None,
        "duration_ms": duration_ms,
        "produced_files": produced,
    }
