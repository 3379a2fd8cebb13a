"""Length-prefixed binary protocol for talking to a remote noise scorer.

Every frame is a 4-byte big-endian payload length followed by the payload.
Header integers are big-endian; the dense float blocks are little-endian
float32, row-major, channel-interleaved (height, width, 3).

Request payload:
    magic "RDSC" | version u16 = 1 | type u8 = 1 | timestep u32
    | height u32 | width u32 | prompt_len u32 | prompt utf-8
    | noised rendering f32 x (H*W*3) | injected noise f32 x (H*W*3)

Response payload:
    magic "RDSC" | version u16 = 1 | type u8 = 2 | status u8
    | status 0: predicted noise f32 x (H*W*3)
    | else:     diag_len u32 | diagnostic utf-8
"""

from __future__ import annotations

import socket
import struct

import numpy as np

from .errors import GuidanceError, ProtocolError
from .guidance import Scorer

MAGIC = b"RDSC"
VERSION = 1
TYPE_REQUEST = 1
TYPE_RESPONSE = 2
STATUS_OK = 0
MAX_SIDE = 4096
DEFAULT_TIMEOUT = 120.0

_PREFIX = struct.Struct(">I")
_REQ_HEAD = struct.Struct(">4sHBIIII")
_RESP_HEAD = struct.Struct(">4sHBB")
_U32 = struct.Struct(">I")

_MAX_FRAME = _REQ_HEAD.size + 2 ** 16 + 2 * MAX_SIDE * MAX_SIDE * 3 * 4


def _check_sides(height: int, width: int) -> None:
    if not (1 <= height <= MAX_SIDE and 1 <= width <= MAX_SIDE):
        raise ProtocolError(
            f"grid sides must be in [1, {MAX_SIDE}], got {height} x {width}")


def _block_bytes(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x, dtype="<f4").tobytes()


def _block_array(buf: bytes, height: int, width: int) -> np.ndarray:
    expected = height * width * 3 * 4
    if len(buf) != expected:
        raise ProtocolError(
            f"float block is {len(buf)} bytes, expected {expected}")
    flat = np.frombuffer(buf, dtype="<f4")
    return flat.reshape(height, width, 3).astype(np.float64)


def encode_request(timestep: int, noisy: np.ndarray, noise: np.ndarray,
                   prompt: str = "") -> bytes:
    if noisy.shape != noise.shape or noisy.ndim != 3 or noisy.shape[2] != 3:
        raise ProtocolError("scorer request needs two matching H x W x 3 blocks")
    h, w = noisy.shape[:2]
    _check_sides(h, w)
    if not 0 <= timestep < 2 ** 32:
        raise ProtocolError(f"timestep {timestep} does not fit in u32")
    prompt_bytes = prompt.encode("utf-8")
    head = _REQ_HEAD.pack(MAGIC, VERSION, TYPE_REQUEST, timestep, h, w,
                          len(prompt_bytes))
    return head + prompt_bytes + _block_bytes(noisy) + _block_bytes(noise)


def decode_request(payload: bytes) -> tuple[int, np.ndarray, np.ndarray, str]:
    if len(payload) < _REQ_HEAD.size:
        raise ProtocolError("request shorter than its header")
    magic, version, kind, timestep, h, w, plen = \
        _REQ_HEAD.unpack_from(payload)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if kind != TYPE_REQUEST:
        raise ProtocolError(f"expected request type, got {kind}")
    _check_sides(h, w)
    block = h * w * 3 * 4
    expected = _REQ_HEAD.size + plen + 2 * block
    if len(payload) != expected:
        raise ProtocolError(
            f"request is {len(payload)} bytes, expected {expected}")
    off = _REQ_HEAD.size
    try:
        prompt = payload[off:off + plen].decode("utf-8")
    except UnicodeDecodeError as e:
        raise ProtocolError("prompt is not valid utf-8") from e
    off += plen
    noisy = _block_array(payload[off:off + block], h, w)
    noise = _block_array(payload[off + block:off + 2 * block], h, w)
    return timestep, noisy, noise, prompt


def encode_response(eps_hat: np.ndarray) -> bytes:
    if eps_hat.ndim != 3 or eps_hat.shape[2] != 3:
        raise ProtocolError("scorer response block must be H x W x 3")
    head = _RESP_HEAD.pack(MAGIC, VERSION, TYPE_RESPONSE, STATUS_OK)
    return head + _block_bytes(eps_hat)


def encode_error(status: int, message: str) -> bytes:
    if not 1 <= status <= 255:
        raise ProtocolError("error status must be in [1, 255]")
    msg = message.encode("utf-8")
    head = _RESP_HEAD.pack(MAGIC, VERSION, TYPE_RESPONSE, status)
    return head + _U32.pack(len(msg)) + msg


def decode_response(payload: bytes, height: int, width: int) -> np.ndarray:
    """Predicted noise from a response frame; raises on error status."""
    if len(payload) < _RESP_HEAD.size:
        raise ProtocolError("response shorter than its header")
    magic, version, kind, status = _RESP_HEAD.unpack_from(payload)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if kind != TYPE_RESPONSE:
        raise ProtocolError(f"expected response type, got {kind}")
    body = payload[_RESP_HEAD.size:]
    if status != STATUS_OK:
        if len(body) < _U32.size:
            raise ProtocolError("error response is missing its diagnostic")
        (dlen,) = _U32.unpack_from(body)
        if len(body) != _U32.size + dlen:
            raise ProtocolError("error diagnostic length mismatch")
        diag = body[_U32.size:].decode("utf-8", errors="replace")
        raise GuidanceError(f"scorer error {status}: {diag}")
    return _block_array(body, height, width)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    (n,) = _PREFIX.unpack(_recv_exact(sock, _PREFIX.size))
    if n > _MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds the protocol limit")
    return _recv_exact(sock, n)


def write_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_PREFIX.pack(len(payload)) + payload)


class RemoteScorer(Scorer):
    """Client-side scorer that forwards each query over a TCP connection.

    Noise is quantized through float32 before use so that what the server
    sees is exactly what the guidance math uses; an echo server then yields
    an exactly zero signal. Transport failures raise GuidanceError.
    """

    def __init__(self, host: str, port: int,
                 timeout: float = DEFAULT_TIMEOUT):
        self.host = host
        self.port = int(port)
        self.timeout = float(timeout)
        self._sock: socket.socket | None = None

    def prepare_noise(self, noise: np.ndarray) -> np.ndarray:
        return noise.astype(np.float32).astype(np.float64)

    def _connection(self) -> socket.socket:
        if self._sock is None:
            self._sock = socket.create_connection(
                (self.host, self.port), timeout=self.timeout)
        return self._sock

    def predict_noise(self, noisy, t, noise, prompt):
        h, w = noisy.shape[:2]
        request = encode_request(t, noisy, noise, prompt)
        try:
            sock = self._connection()
            write_frame(sock, request)
            payload = read_frame(sock)
        except (OSError, ProtocolError) as e:
            self.close()
            if isinstance(e, ProtocolError):
                raise
            raise GuidanceError(
                f"scorer at {self.host}:{self.port} failed: {e}") from e
        return decode_response(payload, h, w)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
