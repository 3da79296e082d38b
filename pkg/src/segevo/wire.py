"""Frame codec for talking to out-of-process segmentation backends.

A frame is a fixed 15-byte header followed by a payload:

    offset  size  field
    0       4     magic, ASCII "SGRM"
    4       1     version, 0x01
    5       1     message type: 0x01 request, 0x02 response, 0x7F error
    6       4     image height, u32 little-endian
    10      4     image width, u32 little-endian
    14      1     channel count

Request payload: height*width*channels bytes of uint8 samples, row-major,
channel-interleaved. Response payload: height*width uint16 little-endian
class labels with the channels byte set to 0. Error payload: UTF-8 message
with height = width = channels = 0.

On the transport each frame is preceded by its byte length as a u32
little-endian prefix. The codec here is transport-agnostic; framing I/O
lives with the transport owners (oracle module, bridge server).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ProtocolError

MAGIC = b"SGRM"
VERSION = 0x01
MSG_REQUEST = 0x01
MSG_RESPONSE = 0x02
MSG_ERROR = 0x7F

_HEADER = struct.Struct("<4sBBIIB")
HEADER_SIZE = _HEADER.size  # 15

# Sanity ceiling: a dimension beyond this implies a corrupt or hostile header
# (the max request payload is ~0.75 GiB at 16384x16384x3).
MAX_DIMENSION = 1 << 14


def encode_request(pixels: np.ndarray) -> bytes:
    """Serialize an (H, W, C) uint8 array as a request frame."""
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8 or arr.ndim != 3:
        raise ProtocolError(f"request wants (H, W, C) uint8, got {arr.dtype} ndim={arr.ndim}")
    h, w, c = arr.shape
    if c not in (1, 3):
        raise ProtocolError(f"request channel count must be 1 or 3, got {c}")
    header = _HEADER.pack(MAGIC, VERSION, MSG_REQUEST, h, w, c)
    return header + np.ascontiguousarray(arr).tobytes()


def encode_response(labels: np.ndarray) -> bytes:
    """Serialize an (H, W) uint16 label array as a response frame."""
    arr = np.asarray(labels)
    if arr.dtype != np.uint16 or arr.ndim != 2:
        raise ProtocolError(f"response wants (H, W) uint16, got {arr.dtype} ndim={arr.ndim}")
    h, w = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, MSG_RESPONSE, h, w, 0)
    return header + np.ascontiguousarray(arr).astype("<u2", copy=False).tobytes()


def encode_error(message: str) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, MSG_ERROR, 0, 0, 0)
    return header + message.encode("utf-8")


def decode_frame(data: bytes):
    """Parse one frame; returns (msg_type, payload_object).

    Payloads decode to an ndarray for requests/responses and a str for error
    frames. Every malformation raises ProtocolError naming what was wrong.
    """
    if len(data) < HEADER_SIZE:
        raise ProtocolError(f"frame truncated: {len(data)} bytes, header needs {HEADER_SIZE}")
    magic, version, msg_type, height, width, channels = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    payload = data[HEADER_SIZE:]
    if msg_type == MSG_ERROR:
        if (height, width, channels) != (0, 0, 0):
            raise ProtocolError("error frame must carry zero dimensions")
        try:
            return MSG_ERROR, payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"error frame payload is not UTF-8: {exc}") from None
    if msg_type == MSG_REQUEST:
        if channels not in (1, 3):
            raise ProtocolError(f"request channel count must be 1 or 3, got {channels}")
        _check_dims(height, width)
        expected = height * width * channels
        if len(payload) != expected:
            raise ProtocolError(
                f"request payload is {len(payload)} bytes, {height}x{width}x{channels} needs {expected}"
            )
        arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
        return MSG_REQUEST, arr
    if msg_type == MSG_RESPONSE:
        if channels != 0:
            raise ProtocolError(f"response channels byte must be 0, got {channels}")
        _check_dims(height, width)
        expected = height * width * 2
        if len(payload) != expected:
            raise ProtocolError(
                f"response payload is {len(payload)} bytes, {height}x{width} u16 needs {expected}"
            )
        arr = np.frombuffer(payload, dtype="<u2").astype(np.uint16).reshape(height, width)
        return MSG_RESPONSE, arr
    raise ProtocolError(f"unknown message type 0x{msg_type:02x}")


def _check_dims(height: int, width: int):
    if height == 0 or width == 0:
        raise ProtocolError(f"zero image dimension {height}x{width}")
    if height > MAX_DIMENSION or width > MAX_DIMENSION:
        raise ProtocolError(f"dimension {height}x{width} exceeds limit {MAX_DIMENSION}")


def frame_with_length(frame: bytes) -> bytes:
    """Prefix a frame with its u32 little-endian byte length for the wire."""
    if len(frame) > 0xFFFFFFFF:
        raise ProtocolError("frame exceeds 4 GiB length prefix")
    return struct.pack("<I", len(frame)) + frame


def split_length_prefix(data: bytes) -> tuple[int, bytes]:
    """Read the length prefix; returns (frame_length, rest_of_buffer)."""
    if len(data) < 4:
        raise ProtocolError(f"length prefix truncated: {len(data)} bytes")
    (length,) = struct.unpack_from("<I", data)
    return length, data[4:]
