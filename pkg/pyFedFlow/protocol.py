"""
FEDF frame codec for the socket transport.

Frame (little-endian)::

    magic "FEDF" (4) | version u16 | msg_type u8 | round u32 | client_id u32
    | payload_len u64 | payload | CRC32 u32 over header and payload

GLOBAL_PARAMS and CLIENT_UPDATE payloads are ``n_k u64`` followed by a checkpoint
block (see `neuralnet.encode_params`); n_k is 0 for GLOBAL_PARAMS. CLIENT_UPDATE
payloads additionally end with the client's local training loss as f64. HELLO
carries n_k u64, ERROR a UTF-8 message.
"""
import socket
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Tuple

from .errors import FormatError, ProtocolError
from .neuralnet import ModelParams, decode_params, encode_params

MAGIC = b"FEDF"
VERSION = 1

HEADER = struct.Struct("<4sHBIIQ")
HEADER_SIZE = HEADER.size
CRC = struct.Struct("<I")
COUNT = struct.Struct("<Q")
LOSS = struct.Struct("<d")

# Max payload size (256 MB)
MAX_PAYLOAD = 256 * 1024 * 1024


class MsgType(IntEnum):
    HELLO = 0
    GLOBAL_PARAMS = 1
    CLIENT_UPDATE = 2
    ROUND_DONE = 3
    SHUTDOWN = 4
    ERROR = 5


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    round_index: int
    client_id: int
    payload: bytes = b""


def encode_frame(msg_type: int, round_index: int, client_id: int, payload: bytes = b"") -> bytes:
    """
    Encode a frame for the wire.

    Examples
    --------
    >>> data = encode_frame(MsgType.SHUTDOWN, 3, 0)
    >>> decode_frame(data).msg_type
    <MsgType.SHUTDOWN: 4>
    """
    header = HEADER.pack(MAGIC, VERSION, int(msg_type), round_index, client_id, len(payload))
    body = header + payload
    return body + CRC.pack(zlib.crc32(body))


def _parse_header(header: bytes) -> Tuple[MsgType, int, int, int]:
    magic, version, msg_type, round_index, client_id, payload_len = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"Bad frame magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"Unsupported protocol version {version}")
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"Unknown message type {msg_type}") from None
    if payload_len > MAX_PAYLOAD:
        raise ProtocolError(f"Payload of {payload_len} bytes exceeds the {MAX_PAYLOAD} byte limit")
    return kind, round_index, client_id, payload_len


def _check_crc(body: bytes, trailer: bytes) -> None:
    (crc,) = CRC.unpack(trailer)
    if crc != zlib.crc32(body):
        raise ProtocolError("Frame CRC mismatch")


def decode_frame(data: bytes) -> Frame:
    """
    Decode one complete frame.

    Raises
    ------
    ProtocolError
        On bad magic, version, message type, length or CRC.
    """
    if len(data) < HEADER_SIZE + CRC.size:
        raise ProtocolError("Frame too short")
    kind, round_index, client_id, payload_len = _parse_header(data[:HEADER_SIZE])
    end = HEADER_SIZE + payload_len
    if len(data) != end + CRC.size:
        raise ProtocolError(f"Frame length {len(data)} does not match payload_len {payload_len}")
    _check_crc(data[:end], data[end:])
    return Frame(kind, round_index, client_id, bytes(data[HEADER_SIZE:end]))


def _recv_exact(sock: socket.socket, n: int, at_boundary: bool = False) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            if at_boundary and remaining == n:
                raise EOFError("connection closed")
            raise ProtocolError(f"Connection closed mid-frame ({n - remaining}/{n} bytes)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Frame:
    """
    Read one frame from `sock`.

    Raises
    ------
    EOFError
        If the peer closed the connection between frames.
    ProtocolError
        If the frame is malformed or the connection closes mid-frame.
    """
    header = _recv_exact(sock, HEADER_SIZE, at_boundary=True)
    kind, round_index, client_id, payload_len = _parse_header(header)
    payload = _recv_exact(sock, payload_len)
    _check_crc(header + payload, _recv_exact(sock, CRC.size))
    return Frame(kind, round_index, client_id, payload)


def send_frame(sock: socket.socket, msg_type: int, round_index: int, client_id: int, payload: bytes = b"") -> None:
    sock.sendall(encode_frame(msg_type, round_index, client_id, payload))


def encode_params_payload(params: ModelParams, n_k: int = 0, local_loss: Optional[float] = None) -> bytes:
    parts = [COUNT.pack(n_k), encode_params(params)]
    if local_loss is not None:
        parts.append(LOSS.pack(local_loss))
    return b"".join(parts)


def decode_params_payload(payload: bytes, with_loss: bool = False) -> Tuple[ModelParams, int, Optional[float]]:
    """
    Split a parameter payload into (params, n_k, local loss or None).

    Raises
    ------
    ProtocolError
        If the embedded checkpoint block is malformed or the length is off.
    """
    if len(payload) < COUNT.size:
        raise ProtocolError("Parameter payload too short")
    (n_k,) = COUNT.unpack_from(payload, 0)
    try:
        params, offset = decode_params(payload, COUNT.size)
    except FormatError as exc:
        raise ProtocolError(f"Bad parameter block: {exc}") from exc
    loss = None
    if with_loss:
        if len(payload) != offset + LOSS.size:
            raise ProtocolError("CLIENT_UPDATE payload missing the local loss trailer")
        (loss,) = LOSS.unpack_from(payload, offset)
    elif len(payload) != offset:
        raise ProtocolError(f"{len(payload) - offset} trailing bytes in parameter payload")
    return params, n_k, loss
