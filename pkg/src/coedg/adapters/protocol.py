"""Engine-side client for the "coedg/1" adapter protocol.

An AdapterHandle drives exactly one adapter, either in-process (the built-in
simulated models) or a child process speaking line-delimited JSON over
stdio. Requests are strictly sequential per handle, every request carries a
deadline, and all traffic can be recorded into a TraceRecorder whose digest
makes whole runs comparable.
"""

from __future__ import annotations

import hashlib
import json
import queue
import shlex
import subprocess
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from ..dip import DipInput
from ..geometry import BBox, Detection, Source
from .wire import PROTOCOL_VERSION, canonical_dumps, dispatch

DEFAULT_DEADLINE = 30.0
HANDSHAKE_DEADLINE = 10.0


class AdapterError(Exception):
    """Base class for all adapter-boundary failures."""


class AdapterTransportError(AdapterError):
    pass


class AdapterTimeout(AdapterTransportError):
    pass


class AdapterRemoteError(AdapterError):
    """The adapter answered ok=false."""


class AdapterUnsupported(AdapterRemoteError):
    """The adapter answered ok=false with error "unsupported"."""


class ProtocolVersionMismatch(AdapterError):
    pass


class TraceRecorder:
    """Hashes every wire line in order and counts ops per handle label."""

    def __init__(self) -> None:
        self._hash = hashlib.sha256()
        self.op_counts: Counter = Counter()
        self.lines = 0

    def record_line(self, line: str) -> None:
        self._hash.update(line.encode("utf-8"))
        self._hash.update(b"\n")
        self.lines += 1

    def record_op(self, label: str, op: str) -> None:
        self.op_counts[(label, op)] += 1

    def digest(self) -> str:
        return self._hash.hexdigest()


@dataclass(frozen=True)
class GenerationResult:
    category_probs: tuple[float, ...]
    report: tuple[str, ...]
    token_probs: Optional[tuple[float, ...]]


@dataclass(frozen=True)
class TrainReport:
    loss: float
    samples_seen: int
    skill: Optional[float] = None


def detection_to_wire(det: Detection, with_source: bool = True) -> dict:
    box = det.box
    out = {
        "category": det.category,
        "box": [box.x0, box.y0, box.x1, box.y1],
        "score": det.score,
    }
    if with_source:
        out["source"] = det.source.value
    return out


def detection_from_wire(obj: dict, source: Source) -> Detection:
    x0, y0, x1, y1 = obj["box"]
    return Detection(
        category=int(obj["category"]),
        box=BBox(float(x0), float(y0), float(x1), float(y1)),
        score=float(obj["score"]),
        source=Source(obj["source"]) if "source" in obj else source,
    )


def dip_to_wire(dip: DipInput) -> dict:
    slots = []
    for slot in dip.slots:
        if slot.kind == "null":
            slots.append({"kind": "null"})
        else:
            assert slot.crop is not None and slot.location is not None
            slots.append(
                {
                    "kind": "abnormality",
                    "crop": [slot.crop.x0, slot.crop.y0, slot.crop.x1, slot.crop.y1],
                    "location": list(slot.location.as_tuple()),
                    "category": slot.category,
                }
            )
    return {"sample_id": dip.sample_id, "slots": slots, "class_token": True}


class _InProcessTransport:
    kind = "in-process"

    def __init__(self, adapter) -> None:
        self._adapter = adapter

    def round_trip(self, line: str, deadline: float) -> str:
        response = dispatch(self._adapter, json.loads(line))
        return canonical_dumps(response)

    def close(self) -> None:
        pass


class _StdioTransport:
    kind = "child-process stdio"

    def __init__(self, proc: subprocess.Popen) -> None:
        self._proc = proc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def round_trip(self, line: str, deadline: float) -> str:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise AdapterTransportError(f"write failed: {exc}") from exc
        try:
            item = self._lines.get(timeout=deadline)
        except queue.Empty:
            raise AdapterTimeout(f"deadline exceeded ({deadline}s)") from None
        if item is None:
            raise AdapterTransportError("adapter closed the connection")
        return item.rstrip("\n")

    def close(self) -> None:
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            self._proc.wait(timeout=5.0)
        except (OSError, ValueError, subprocess.TimeoutExpired):
            self._proc.kill()


class AdapterHandle:
    """Strict request/response client for one detector or generator."""

    def __init__(
        self,
        role: str,
        transport,
        trace: Optional[TraceRecorder] = None,
        label: str = "",
        deadline: float = DEFAULT_DEADLINE,
    ) -> None:
        if role not in ("detector", "generator"):
            raise ValueError(f"unknown role: {role}")
        self.role = role
        self.label = label or role
        self.state = "uninitialized"
        self.skill: Optional[float] = None
        self.embed_dim: Optional[int] = None
        self.deadline = deadline
        self._transport = transport
        self._trace = trace
        self._next_id = 0
        self._lock = threading.Lock()

    @property
    def transport_kind(self) -> str:
        return self._transport.kind

    def request(self, op: str, payload: dict, deadline: Optional[float] = None) -> dict:
        with self._lock:
            if self.state == "closed":
                raise AdapterTransportError("handle is closed")
            if op != "init" and self.state != "ready":
                raise AdapterError(f"adapter not ready for op {op}")
            rid = self._next_id
            self._next_id += 1
            line = canonical_dumps({"id": rid, "op": op, "payload": payload})
            if self._trace is not None:
                self._trace.record_line(line)
                self._trace.record_op(self.label, op)
            try:
                resp_line = self._transport.round_trip(line, deadline or self.deadline)
            except AdapterTransportError:
                self.state = "closed"
                raise
            if self._trace is not None:
                self._trace.record_line(resp_line)
            try:
                resp = json.loads(resp_line)
            except json.JSONDecodeError as exc:
                self.state = "closed"
                raise AdapterTransportError(f"unparseable response: {exc}") from exc
            if resp.get("id") != rid:
                self.state = "closed"
                raise AdapterTransportError(
                    f"response id {resp.get('id')} does not match request {rid}"
                )
            if not resp.get("ok"):
                error = resp.get("error", "adapter error")
                if error == "unsupported":
                    raise AdapterUnsupported(op)
                raise AdapterRemoteError(error)
            return resp.get("payload") or {}

    # -- typed operations ---------------------------------------------------

    def init(self, payload: dict) -> dict:
        body = {"protocol": PROTOCOL_VERSION, "role": self.role, **payload}
        try:
            resp = self.request("init", body, deadline=HANDSHAKE_DEADLINE)
        except AdapterRemoteError as exc:
            if "version mismatch" in str(exc):
                raise ProtocolVersionMismatch(str(exc)) from exc
            raise
        if resp.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolVersionMismatch(
                f"adapter speaks {resp.get('protocol')!r}, engine speaks {PROTOCOL_VERSION!r}"
            )
        self.state = "ready"
        self.skill = resp.get("skill")
        self.embed_dim = resp.get("embed_dim")
        return resp

    def detect(self, sample_id: str, source: Source) -> list[Detection]:
        resp = self.request("detect", {"sample_id": sample_id})
        return [detection_from_wire(d, source) for d in resp["detections"]]

    def generate(
        self, dip: DipInput, reference: Optional[Sequence[str]] = None
    ) -> GenerationResult:
        payload: dict = {"dip": dip_to_wire(dip)}
        payload["reference"] = list(reference) if reference is not None else None
        resp = self.request("generate", payload)
        token_probs = resp.get("token_probs")
        return GenerationResult(
            category_probs=tuple(resp["category_probs"]),
            report=tuple(resp["report"]),
            token_probs=tuple(token_probs) if token_probs is not None else None,
        )

    def embed(self, sample_id: str) -> list[float]:
        resp = self.request("embed", {"sample_id": sample_id})
        return list(resp["vector"])

    def train_epoch(self, payload: dict) -> TrainReport:
        resp = self.request("train_epoch", payload)
        report = TrainReport(
            loss=float(resp["loss"]),
            samples_seen=int(resp["samples_seen"]),
            skill=resp.get("skill"),
        )
        if report.skill is not None:
            self.skill = report.skill
        return report

    def reinit(self, seed: int) -> None:
        resp = self.request("reinit", {"seed": seed})
        self.skill = resp.get("skill", self.skill)

    def shutdown(self) -> None:
        if self.state == "ready":
            try:
                self.request("shutdown", {})
            except AdapterError:
                pass
        self.close()

    def close(self) -> None:
        self.state = "closed"
        self._transport.close()

    # -- simulated-adapter introspection (tests and checkpoints) ------------

    def backing_model(self):
        """The in-process model object, if this handle wraps one."""
        if isinstance(self._transport, _InProcessTransport):
            return self._transport._adapter
        return None


def in_process_handle(
    role: str,
    adapter,
    trace: Optional[TraceRecorder] = None,
    label: str = "",
) -> AdapterHandle:
    """Wrap an in-process adapter object behind the same wire discipline."""
    return AdapterHandle(role, _InProcessTransport(adapter), trace=trace, label=label)


def spawn_external(
    command: str | Sequence[str],
    role: str,
    trace: Optional[TraceRecorder] = None,
    label: str = "",
    deadline: float = DEFAULT_DEADLINE,
) -> AdapterHandle:
    """Launch a child-process adapter speaking line-delimited JSON on stdio.

    The handle starts uninitialized; call init() to run the handshake
    (10 s deadline, protocol version checked).
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
    except (FileNotFoundError, PermissionError, OSError) as exc:
        raise AdapterTransportError(f"cannot launch adapter: {exc}") from exc
    return AdapterHandle(
        role, _StdioTransport(proc), trace=trace, label=label, deadline=deadline
    )
