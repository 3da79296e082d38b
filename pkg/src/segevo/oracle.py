"""Segmentation backends: a deterministic built-in palette segmenter for
local work, and a remote client that speaks the frame protocol to external
models over subprocess pipes or a stream socket.

Remote connections are strictly serial: one request in flight per connection,
guarded by a lock. Parallel callers should each own a connection.
"""

from __future__ import annotations

import hashlib
import os
import select
import shlex
import socket
import struct
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    ChannelMismatch,
    InvalidConfig,
    OracleError,
    OracleTimeout,
    ProtocolError,
)
from .imaging import Image, LabelMap
from .wire import (
    HEADER_SIZE,
    MAX_DIMENSION,
    MSG_ERROR,
    MSG_RESPONSE,
    decode_frame,
    encode_request,
    frame_with_length,
)

DEFAULT_TIMEOUT = 30.0

# Reference palette for the synthetic corpus: a neutral background plus four
# single-channel accents, far enough apart to segment cleanly but close
# enough that channel-level distortions can merge classes.
DEFAULT_CENTROIDS: tuple[tuple[int, tuple[int, int, int]], ...] = (
    (0, (96, 96, 96)),
    (1, (144, 96, 96)),
    (2, (96, 144, 96)),
    (3, (96, 96, 144)),
    (4, (144, 144, 96)),
)


@dataclass(frozen=True)
class PaletteSegmenter:
    """Nearest-centroid color segmenter.

    centroids is an ordered list of (class index, RGB triple); each pixel is
    assigned the class whose color is nearest by squared Euclidean distance,
    ties going to the lowest class index.
    """

    centroids: tuple[tuple[int, tuple[int, int, int]], ...] = DEFAULT_CENTROIDS

    def __post_init__(self):
        cents = tuple(
            (int(cls), tuple(int(v) for v in color)) for cls, color in self.centroids
        )
        if len(cents) < 2:
            raise InvalidConfig("palette needs at least 2 centroids")
        classes = [cls for cls, _ in cents]
        if len(set(classes)) != len(classes):
            raise InvalidConfig(f"duplicate class indices in palette: {sorted(classes)}")
        for cls, color in cents:
            if not (0 <= cls <= 0xFFFF):
                raise InvalidConfig(f"class index {cls} outside uint16 range")
            if len(color) != 3 or any(not (0 <= v <= 255) for v in color):
                raise InvalidConfig(f"centroid color {color} must be 3 bytes")
        # Ascending class order makes argmin's first-minimum rule implement
        # the lowest-class-index tie break.
        object.__setattr__(self, "centroids", tuple(sorted(cents)))

    @property
    def descriptor(self) -> str:
        blob = repr(self.centroids).encode()
        return f"builtin-palette:{hashlib.blake2b(blob, digest_size=6).hexdigest()}"

    def segment(self, img: Image) -> LabelMap:
        return palette_segment(img, self)


def palette_segment(img: Image, seg: PaletteSegmenter) -> LabelMap:
    """Assign every pixel the class of its nearest centroid color."""
    if img.channels != 3:
        raise ChannelMismatch(f"palette segmentation wants 3 channels, got {img.channels}")
    classes = np.array([cls for cls, _ in seg.centroids], dtype=np.uint16)
    colors = np.array([color for _, color in seg.centroids], dtype=np.int32)
    pixels = img.samples.astype(np.int32)
    # (H, W, K) squared distances; ~4 MB per megapixel per centroid.
    diff = pixels[:, :, None, :] - colors[None, None, :, :]
    dist = np.sum(diff * diff, axis=-1)
    return LabelMap(classes[np.argmin(dist, axis=-1)])


class _PipeTransport:
    """Length-prefixed frames over a child process's stdin/stdout."""

    def __init__(self, command: str):
        self.command = command
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            bufsize=0,
        )
        self._fd = self._proc.stdout.fileno()

    def send(self, blob: bytes):
        try:
            self._proc.stdin.write(blob)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"backend closed its input: {exc}") from exc

    def read_exact(self, n: int, deadline: float) -> bytes:
        chunks = bytearray()
        while len(chunks) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTimeout(f"backend did not answer within the timeout ({self.command})")
            ready, _, _ = select.select([self._fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(self._fd, n - len(chunks))
            if not chunk:
                raise ProtocolError(
                    f"backend closed the stream after {len(chunks)} of {n} bytes"
                )
            chunks.extend(chunk)
        return bytes(chunks)

    def close(self):
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class _SocketTransport:
    """Length-prefixed frames over a stream socket."""

    def __init__(self, host: str, port: int, connect_timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise ProtocolError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._endpoint = f"{host}:{port}"

    def send(self, blob: bytes):
        try:
            self._sock.sendall(blob)
        except OSError as exc:
            raise ProtocolError(f"send to {self._endpoint} failed: {exc}") from exc

    def read_exact(self, n: int, deadline: float) -> bytes:
        chunks = bytearray()
        while len(chunks) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTimeout(f"backend did not answer within the timeout ({self._endpoint})")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(n - len(chunks))
            except socket.timeout:
                raise OracleTimeout(
                    f"backend did not answer within the timeout ({self._endpoint})"
                ) from None
            except OSError as exc:
                raise ProtocolError(f"read from {self._endpoint} failed: {exc}") from exc
            if not chunk:
                raise ProtocolError(
                    f"backend closed the stream after {len(chunks)} of {n} bytes"
                )
            chunks.extend(chunk)
        return bytes(chunks)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


# Largest frame a well-formed peer can send: a max-dimension response.
_MAX_FRAME = HEADER_SIZE + MAX_DIMENSION * MAX_DIMENSION * 3


class RemoteOracle:
    """Client for an external segmentation model speaking the frame protocol."""

    def __init__(self, transport, descriptor: str, timeout: float = DEFAULT_TIMEOUT):
        if timeout <= 0:
            raise InvalidConfig(f"timeout must be positive, got {timeout}")
        self._transport = transport
        self._timeout = timeout
        self._lock = threading.Lock()
        self.descriptor = descriptor

    def segment(self, img: Image) -> LabelMap:
        request = frame_with_length(encode_request(img.samples))
        with self._lock:
            deadline = time.monotonic() + self._timeout
            self._transport.send(request)
            raw_len = self._transport.read_exact(4, deadline)
            (length,) = struct.unpack("<I", raw_len)
            if length < HEADER_SIZE or length > _MAX_FRAME:
                raise ProtocolError(f"implausible frame length {length}")
            frame = self._transport.read_exact(length, deadline)
        msg_type, payload = decode_frame(frame)
        if msg_type == MSG_ERROR:
            raise OracleError(f"backend error: {payload}")
        if msg_type != MSG_RESPONSE:
            raise ProtocolError(f"expected a response frame, got type 0x{msg_type:02x}")
        if payload.shape != (img.height, img.width):
            raise ProtocolError(
                f"response shape {payload.shape} does not match request {(img.height, img.width)}"
            )
        return LabelMap(payload)

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False


def make_oracle(spec: str, timeout: float = DEFAULT_TIMEOUT):
    """Build an oracle from an endpoint string.

    Recognized forms:
      builtin-palette        the reference nearest-centroid segmenter
      cmd:<command line>     spawn the command, frames over stdio
      tcp:<host>:<port>      connect to a running server
    """
    if spec == "builtin-palette":
        return PaletteSegmenter()
    if spec.startswith("cmd:"):
        command = spec[len("cmd:"):].strip()
        if not command:
            raise InvalidConfig("cmd: endpoint needs a command line")
        return RemoteOracle(_PipeTransport(command), descriptor=spec, timeout=timeout)
    if spec.startswith("tcp:"):
        rest = spec[len("tcp:"):]
        host, sep, port_text = rest.rpartition(":")
        if not sep or not host:
            raise InvalidConfig(f"tcp endpoint must be tcp:<host>:<port>, got {spec!r}")
        try:
            port = int(port_text)
        except ValueError:
            raise InvalidConfig(f"bad port in endpoint {spec!r}") from None
        return RemoteOracle(
            _SocketTransport(host, port, connect_timeout=timeout),
            descriptor=spec,
            timeout=timeout,
        )
    raise InvalidConfig(
        f"unknown oracle endpoint {spec!r}; expected builtin-palette, cmd:..., or tcp:host:port"
    )


def remote_segment(img: Image, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> LabelMap:
    """One-shot convenience: connect, segment a single image, close."""
    oracle = make_oracle(endpoint, timeout=timeout)
    if isinstance(oracle, PaletteSegmenter):
        return oracle.segment(img)
    with oracle:
        return oracle.segment(img)
