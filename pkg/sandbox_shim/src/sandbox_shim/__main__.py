"""Stdio entry point: one JSON request on stdin, one JSON result on stdout.

Exit code is 0 whenever a result object was delivered (including error and
timeout results); nonzero only when the request itself was unreadable."""

from __future__ import annotations

import json
import sys

from .runner import run_request


def _protocol_error(message: str) -> dict:
    return {
        "status": "error",
        "stdout": "",
        "stderr": "",
        "error_type": "ProtocolError",
        "error_message": message,
        "duration_ms": 0,
        "produced_files": [],
    }


def main() -> int:
    raw = sys.stdin.read()
    try:
        request = json.loads(raw)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
        result = run_request(request)
    except (ValueError, KeyError, TypeError) as exc:
        print(json.dumps(_protocol_error(f"{type(exc).__name__}: {exc}")))
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
