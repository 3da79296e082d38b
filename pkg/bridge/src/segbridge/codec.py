"""Independent implementation of the oracle wire format.

The byte layout is specified in the toolkit's docs/PROTOCOL.md and frozen
by the shared golden files under tests/fixtures/frames/. This module is
written against that document only; it deliberately shares no code with
the segevo client so that the two sides keep each other honest.

Header, 15 bytes, integers little-endian:

    0   4  magic "SGRM"
    4   1  version (1)
    5   1  type: 0x01 request, 0x02 response, 0x7F error
    6   4  height u32
    10  4  width u32
    14  1  channels
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError

MAGIC = b"SGRM"
VERSION = 1
TYPE_REQUEST = 0x01
TYPE_RESPONSE = 0x02
TYPE_ERROR = 0x7F
HEADER_LEN = 15
DIMENSION_LIMIT = 16384


@dataclass(frozen=True)
class RequestFrame:
    pixels: np.ndarray  # (H, W, C) uint8


@dataclass(frozen=True)
class ResponseFrame:
    labels: np.ndarray  # (H, W) uint16


@dataclass(frozen=True)
class ErrorFrame:
    message: str


def _header(frame_type: int, height: int, width: int, channels: int) -> bytes:
    return (MAGIC
            + bytes([VERSION, frame_type])
            + height.to_bytes(4, "little")
            + width.to_bytes(4, "little")
            + bytes([channels]))


def encode_request(pixels: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(pixels)
    if arr.dtype != np.uint8 or arr.ndim != 3:
        raise ProtocolError(f"request pixels must be (H, W, C) uint8, got {arr.dtype} ndim={arr.ndim}")
    h, w, c = arr.shape
    if c not in (1, 3):
        raise ProtocolError(f"request needs 1 or 3 channels, got {c}")
    return _header(TYPE_REQUEST, h, w, c) + arr.tobytes()


def encode_response(labels: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(labels)
    if arr.dtype != np.uint16 or arr.ndim != 2:
        raise ProtocolError(f"response labels must be (H, W) uint16, got {arr.dtype} ndim={arr.ndim}")
    h, w = arr.shape
    # the layout is explicitly little-endian regardless of host order
    return _header(TYPE_RESPONSE, h, w, 0) + arr.astype("<u2", copy=False).tobytes()


def encode_error(message: str) -> bytes:
    return _header(TYPE_ERROR, 0, 0, 0) + message.encode("utf-8")


def _u32(blob: bytes, offset: int) -> int:
    return int.from_bytes(blob[offset:offset + 4], "little")


def decode_frame(blob: bytes) -> RequestFrame | ResponseFrame | ErrorFrame:
    """Parse one frame; every malformation raises ProtocolError."""
    if len(blob) < HEADER_LEN:
        raise ProtocolError(f"frame of {len(blob)} bytes is shorter than the {HEADER_LEN}-byte header")
    if blob[:4] != MAGIC:
        raise ProtocolError(f"bad magic {blob[:4]!r}")
    if blob[4] != VERSION:
        raise ProtocolError(f"unsupported version {blob[4]}")
    frame_type = blob[5]
    height = _u32(blob, 6)
    width = _u32(blob, 10)
    channels = blob[14]
    payload = blob[HEADER_LEN:]

    if frame_type == TYPE_ERROR:
        if height or width or channels:
            raise ProtocolError("error frame must carry zero dimensions")
        try:
            return ErrorFrame(payload.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"error message is not UTF-8: {exc}") from None

    if height == 0 or width == 0:
        raise ProtocolError(f"zero dimension in {height}x{width}")
    if height > DIMENSION_LIMIT or width > DIMENSION_LIMIT:
        raise ProtocolError(f"{height}x{width} exceeds the {DIMENSION_LIMIT} dimension limit")

    if frame_type == TYPE_REQUEST:
        if channels not in (1, 3):
            raise ProtocolError(f"request needs 1 or 3 channels, got {channels}")
        want = height * width * channels
        if len(payload) != want:
            raise ProtocolError(f"request payload {len(payload)} bytes, expected {want}")
        pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
        return RequestFrame(pixels)

    if frame_type == TYPE_RESPONSE:
        if channels != 0:
            raise ProtocolError(f"response channels byte must be 0, got {channels}")
        want = height * width * 2
        if len(payload) != want:
            raise ProtocolError(f"response payload {len(payload)} bytes, expected {want}")
        labels = np.frombuffer(payload, dtype="<u2").astype(np.uint16).reshape(height, width)
        return ResponseFrame(labels)

    raise ProtocolError(f"unknown frame type 0x{frame_type:02x}")


def write_frame(stream, frame: bytes) -> None:
    """Write one length-prefixed frame and flush it."""
    stream.write(len(frame).to_bytes(4, "little") + frame)
    stream.flush()


def read_frame(stream) -> bytes | None:
    """Read one length-prefixed frame; None on clean EOF at a boundary."""
    prefix = stream.read(4)
    if prefix == b"":
        return None
    if len(prefix) < 4:
        raise ProtocolError(f"length prefix truncated at {len(prefix)} bytes")
    length = int.from_bytes(prefix, "little")
    body = bytearray()
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise ProtocolError(f"stream ended {length - len(body)} bytes short of a frame")
        body.extend(chunk)
    return bytes(body)
