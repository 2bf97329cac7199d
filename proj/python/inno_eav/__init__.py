"""Python bindings for the Inno-EAV charging stack."""

from ._eav import (
    MAX_FRAME_BYTES,
    CodecError,
    FleetReport,
    Registry,
    RegistryError,
    SimError,
    Station,
    StationError,
    TransportError,
    charge,
    decode_message,
    encode_message,
    make_bill,
    price,
    run_cli,
    run_sim,
    set_log_level,
    verify_ledger,
)

__all__ = [
    "MAX_FRAME_BYTES",
    "CodecError",
    "FleetReport",
    "Registry",
    "RegistryError",
    "SimError",
    "Station",
    "StationError",
    "TransportError",
    "charge",
    "decode_message",
    "encode_message",
    "make_bill",
    "price",
    "run_cli",
    "run_sim",
    "set_log_level",
    "verify_ledger",
]
