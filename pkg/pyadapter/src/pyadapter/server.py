"""Line-delimited JSON request loop over stdin/stdout."""

from __future__ import annotations

import json
import sys
from typing import IO, Optional

from .simulator import AdapterFault, SimulatedModel, UnsupportedOperation


def canonical_dumps(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dispatch(adapter, request: dict) -> dict:
    rid = request.get("id")
    op = request.get("op")
    payload = request.get("payload") or {}
    if not isinstance(op, str) or not isinstance(payload, dict):
        return {"id": rid, "ok": False, "error": "malformed request"}
    try:
        result = adapter.handle(op, payload)
    except UnsupportedOperation:
        return {"id": rid, "ok": False, "error": "unsupported"}
    except AdapterFault as exc:
        return {"id": rid, "ok": False, "error": str(exc)}
    return {"id": rid, "ok": True, "payload": result}


def serve(
    stdin: Optional[IO[str]] = None,
    stdout: Optional[IO[str]] = None,
    adapter=None,
) -> int:
    """Answer requests until shutdown or EOF; returns the exit code.

    Malformed lines get an ok=false response and the loop keeps running; a
    successful shutdown ends it cleanly. Replace ``adapter`` with any object
    exposing handle(op, payload) to serve a real model instead of the
    simulator.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    adapter = adapter if adapter is not None else SimulatedModel()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be an object")
        except ValueError:
            response = {"id": None, "ok": False, "error": "malformed request"}
            request = {}
        else:
            response = dispatch(adapter, request)
        stdout.write(canonical_dumps(response) + "\n")
        stdout.flush()
        if request.get("op") == "shutdown" and response.get("ok"):
            return 0
    return 0


def main() -> int:
    return serve()


if __name__ == "__main__":
    sys.exit(main())
