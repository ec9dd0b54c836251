from .protocol import (
    AdapterError,
    AdapterHandle,
    AdapterRemoteError,
    AdapterTimeout,
    AdapterTransportError,
    AdapterUnsupported,
    GenerationResult,
    ProtocolVersionMismatch,
    TraceRecorder,
    TrainReport,
    detection_from_wire,
    detection_to_wire,
    dip_to_wire,
    in_process_handle,
    spawn_external,
)
from .simulated import SimulatedModel
from .wire import PROTOCOL_VERSION, canonical_dumps, dispatch

__all__ = [
    "AdapterError",
    "AdapterHandle",
    "AdapterRemoteError",
    "AdapterTimeout",
    "AdapterTransportError",
    "AdapterUnsupported",
    "GenerationResult",
    "PROTOCOL_VERSION",
    "ProtocolVersionMismatch",
    "SimulatedModel",
    "TraceRecorder",
    "TrainReport",
    "canonical_dumps",
    "detection_from_wire",
    "detection_to_wire",
    "dip_to_wire",
    "dispatch",
    "in_process_handle",
    "spawn_external",
]
