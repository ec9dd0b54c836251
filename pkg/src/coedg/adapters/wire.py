"""Message layer of the "coedg/1" adapter protocol.

Requests and responses are single-line UTF-8 JSON objects in canonical form
(sorted keys, no spaces). Requests: {"id": N, "op": ..., "payload": {...}};
responses: {"id": N, "ok": true, "payload": {...}} or
{"id": N, "ok": false, "error": "..."}. Responses are returned in request
order; an unknown op yields ok=false with error "unsupported".
"""

from __future__ import annotations

import json
from typing import Protocol

PROTOCOL_VERSION = "coedg/1"

OPS = ("init", "detect", "generate", "embed", "train_epoch", "reinit", "shutdown")


class UnsupportedOperation(Exception):
    """Raised by an adapter for ops it does not implement."""


class AdapterFault(Exception):
    """Adapter-level failure reported on the wire (ok=false)."""


class ServesRequests(Protocol):
    def handle(self, op: str, payload: dict) -> dict: ...


def canonical_dumps(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dispatch(adapter: ServesRequests, request: dict) -> dict:
    """Run one request against an adapter, wrapping the outcome as a response."""
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
