"""The serve loop: frames in, labels out, errors as frames, never a crash.

One request is in flight at a time per connection. Socket mode accepts any
number of connections, each handled in its own thread and served serially.
Diagnostics go to stderr; stdout belongs to the protocol in stdio mode.
"""

from __future__ import annotations

import socket
import sys
import threading

from . import codec
from .errors import BridgeError, ProtocolError, StartupError
from .model import TRANSPORT_SOCKET, TRANSPORT_STDIO, BridgeConfig, load_model


def _log(message: str) -> None:
    print(f"segbridge: {message}", file=sys.stderr, flush=True)


def handle_frame(blob: bytes, segment) -> bytes:
    """Map one inbound frame to one outbound frame.

    Everything that can go wrong (malformed bytes, a frame of the wrong
    type, the model raising, a contract violation) comes back as an error
    frame; only I/O problems propagate to the caller.
    """
    try:
        frame = codec.decode_frame(blob)
        if not isinstance(frame, codec.RequestFrame):
            raise ProtocolError(f"server expects request frames, got {type(frame).__name__}")
        labels = segment(frame.pixels)
        return codec.encode_response(labels)
    except BridgeError as exc:
        return codec.encode_error(str(exc))
    except Exception as exc:  # noqa: BLE001 - crash containment is the contract
        return codec.encode_error(f"{type(exc).__name__}: {exc}")


def serve_stream(reader, writer, segment) -> int:
    """Serve until EOF on reader; returns the number of frames answered."""
    answered = 0
    while True:
        try:
            blob = codec.read_frame(reader)
        except ProtocolError as exc:
            # A torn length prefix or truncated frame means the stream is no
            # longer aligned; answering would be guesswork, so stop.
            _log(f"unrecoverable stream state: {exc}")
            return answered
        if blob is None:
            return answered
        codec.write_frame(writer, handle_frame(blob, segment))
        answered += 1


def _serve_stdio(segment) -> None:
    served = serve_stream(sys.stdin.buffer, sys.stdout.buffer, segment)
    _log(f"stdin closed after {served} requests")


def _serve_socket(cfg: BridgeConfig, segment) -> None:
    host, port = cfg.address
    try:
        listener = socket.create_server((host, port))
    except OSError as exc:
        raise StartupError(f"cannot bind {host}:{port}: {exc}") from exc
    bound = listener.getsockname()
    _log(f"listening on {bound[0]}:{bound[1]}")
    while True:
        conn, peer = listener.accept()
        thread = threading.Thread(
            target=_serve_connection, args=(conn, peer, cfg, segment), daemon=True)
        thread.start()


def _serve_connection(conn: socket.socket, peer, cfg: BridgeConfig, segment) -> None:
    conn.settimeout(cfg.timeout)
    try:
        with conn, conn.makefile("rb") as reader, conn.makefile("wb") as writer:
            served = serve_stream(reader, writer, segment)
            _log(f"{peer[0]}:{peer[1]} disconnected after {served} requests")
    except (OSError, ValueError) as exc:
        _log(f"connection to {peer[0]}:{peer[1]} dropped: {exc}")


def serve(cfg: BridgeConfig) -> None:
    """Load the model and serve until the transport closes.

    StartupError propagates (nothing was served); from the first frame on,
    failures are answered in-band and the loop keeps going.
    """
    segment = load_model(cfg)
    if cfg.transport == TRANSPORT_STDIO:
        _serve_stdio(segment)
    elif cfg.transport == TRANSPORT_SOCKET:
        _serve_socket(cfg, segment)
    else:  # unreachable: BridgeConfig validates transport
        raise StartupError(f"unknown transport {cfg.transport!r}")
