"""The bridge's frame codec against the normative byte layout."""

import io
from pathlib import Path

import numpy as np
import pytest

from segbridge.codec import (
    DIMENSION_LIMIT,
    HEADER_LEN,
    ErrorFrame,
    RequestFrame,
    ResponseFrame,
    decode_frame,
    encode_error,
    encode_request,
    encode_response,
    read_frame,
    write_frame,
)
from segbridge.errors import ProtocolError

# The same frozen fixtures the main toolkit's client tests assert against.
GOLDEN = Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "frames"


class TestGoldenFrames:
    def test_request_rgb(self):
        blob = (GOLDEN / "request_2x3_rgb.bin").read_bytes()
        frame = decode_frame(blob)
        assert isinstance(frame, RequestFrame)
        assert np.array_equal(frame.pixels,
                              np.arange(18, dtype=np.uint8).reshape(2, 3, 3))
        assert encode_request(frame.pixels) == blob

    def test_request_gray(self):
        blob = (GOLDEN / "request_1x1_gray.bin").read_bytes()
        frame = decode_frame(blob)
        assert frame.pixels.shape == (1, 1, 1)
        assert frame.pixels[0, 0, 0] == 200
        assert encode_request(frame.pixels) == blob

    def test_response(self):
        blob = (GOLDEN / "response_2x3.bin").read_bytes()
        frame = decode_frame(blob)
        assert isinstance(frame, ResponseFrame)
        assert np.array_equal(frame.labels,
                              np.array([[0, 1, 2], [3, 500, 65535]], dtype=np.uint16))
        assert encode_response(frame.labels) == blob

    def test_error(self):
        blob = (GOLDEN / "error.bin").read_bytes()
        frame = decode_frame(blob)
        assert isinstance(frame, ErrorFrame)
        assert frame.message == "backend unavailable: out of memory ×4"
        assert encode_error(frame.message) == blob

    def test_header_layout_by_hand(self):
        # reproduce a frame from the documented field offsets alone
        expected = (b"SGRM" + bytes([1, 0x01])
                    + (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
                    + bytes([3]) + bytes(range(18)))
        assert encode_request(np.arange(18, dtype=np.uint8).reshape(2, 3, 3)) == expected


class TestEncodeValidation:
    def test_request_dtype_and_shape(self):
        with pytest.raises(ProtocolError, match="uint8"):
            encode_request(np.zeros((2, 2, 3), dtype=np.int32))
        with pytest.raises(ProtocolError, match="ndim"):
            encode_request(np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(ProtocolError, match="channels"):
            encode_request(np.zeros((2, 2, 2), dtype=np.uint8))

    def test_response_dtype_and_shape(self):
        with pytest.raises(ProtocolError, match="uint16"):
            encode_response(np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(ProtocolError, match="ndim"):
            encode_response(np.zeros((2, 2, 1), dtype=np.uint16))

    def test_response_bytes_are_little_endian(self):
        big = np.array([[0x0102]], dtype=">u2")
        blob = encode_response(big.astype(np.uint16))
        assert blob[-2:] == b"\x02\x01"


class TestDecodeRejections:
    def _mutate(self, name: str, offset: int, value: int) -> bytes:
        blob = bytearray((GOLDEN / name).read_bytes())
        blob[offset] = value
        return bytes(blob)

    def test_short_header(self):
        with pytest.raises(ProtocolError, match="shorter"):
            decode_frame(b"SGRM")

    def test_bad_magic(self):
        with pytest.raises(ProtocolError, match="magic"):
            decode_frame(self._mutate("request_1x1_gray.bin", 0, ord("X")))

    def test_unknown_version(self):
        with pytest.raises(ProtocolError, match="version 9"):
            decode_frame(self._mutate("request_1x1_gray.bin", 4, 9))

    def test_unknown_type(self):
        with pytest.raises(ProtocolError, match="0x41"):
            decode_frame(self._mutate("request_1x1_gray.bin", 5, 0x41))

    def test_zero_dimension(self):
        with pytest.raises(ProtocolError, match="zero dimension"):
            decode_frame(self._mutate("request_1x1_gray.bin", 6, 0))

    def test_oversized_dimension(self):
        header = (b"SGRM" + bytes([1, 0x01])
                  + (DIMENSION_LIMIT + 1).to_bytes(4, "little")
                  + (1).to_bytes(4, "little") + bytes([1]))
        with pytest.raises(ProtocolError, match="exceeds"):
            decode_frame(header + b"\x00")

    def test_request_payload_mismatch(self):
        blob = (GOLDEN / "request_2x3_rgb.bin").read_bytes()
        with pytest.raises(ProtocolError, match="expected 18"):
            decode_frame(blob[:-1])

    def test_response_payload_mismatch(self):
        blob = (GOLDEN / "response_2x3.bin").read_bytes()
        with pytest.raises(ProtocolError, match="expected 12"):
            decode_frame(blob + b"\x00")

    def test_response_channels_must_be_zero(self):
        with pytest.raises(ProtocolError, match="channels byte"):
            decode_frame(self._mutate("response_2x3.bin", 14, 2))

    def test_error_frame_with_dimensions(self):
        with pytest.raises(ProtocolError, match="zero dimensions"):
            decode_frame(self._mutate("error.bin", 6, 1))

    def test_error_frame_bad_utf8(self):
        blob = (GOLDEN / "error.bin").read_bytes()[:HEADER_LEN] + b"\xff\xfe"
        with pytest.raises(ProtocolError, match="not UTF-8"):
            decode_frame(blob)

    def test_request_bad_channel_count(self):
        with pytest.raises(ProtocolError, match="channels"):
            decode_frame(self._mutate("request_1x1_gray.bin", 14, 5))


class TestStreamFraming:
    def test_round_trip(self):
        buf = io.BytesIO()
        first = encode_request(np.zeros((1, 2, 3), dtype=np.uint8))
        second = encode_error("later")
        write_frame(buf, first)
        write_frame(buf, second)
        buf.seek(0)
        assert read_frame(buf) == first
        assert read_frame(buf) == second
        assert read_frame(buf) is None  # clean EOF

    def test_truncated_prefix(self):
        with pytest.raises(ProtocolError, match="prefix truncated"):
            read_frame(io.BytesIO(b"\x05\x00"))

    def test_truncated_body(self):
        buf = io.BytesIO((10).to_bytes(4, "little") + b"abc")
        with pytest.raises(ProtocolError, match="7 bytes short"):
            read_frame(buf)


def test_fuzzed_bytes_only_raise_protocol_error():
    rng = np.random.default_rng(4321)
    samples = [
        (GOLDEN / name).read_bytes()
        for name in ("request_2x3_rgb.bin", "response_2x3.bin", "error.bin")
    ]
    for i in range(5000):
        if i % 2 == 0:
            blob = rng.integers(0, 256, size=int(rng.integers(0, 48))).astype(np.uint8).tobytes()
        else:
            base = bytearray(samples[i % len(samples)])
            base[int(rng.integers(0, len(base)))] ^= int(rng.integers(1, 256))
            blob = bytes(base[: int(rng.integers(1, len(base) + 1))])
        try:
            decode_frame(blob)
        except ProtocolError:
            pass
