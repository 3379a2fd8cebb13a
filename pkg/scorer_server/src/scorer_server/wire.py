"""Framing and payload codec for the noise-prediction protocol, version 1.

Frames are a 4-byte big-endian payload length followed by the payload.
Header fields are big-endian; the dense float blocks are little-endian
float32 laid out row-major as (height, width, 3).

Request payload:
    magic "RDSC" | version u16 = 1 | type u8 = 1 | timestep u32
    | height u32 | width u32 | prompt_len u32 | prompt utf-8
    | noised rendering block | injected noise block

Response payload:
    magic "RDSC" | version u16 = 1 | type u8 = 2 | status u8
    | status 0: predicted noise block
    | else:     diag_len u32 | diagnostic utf-8
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"RDSC"
VERSION = 1
TYPE_REQUEST = 1
TYPE_RESPONSE = 2
STATUS_OK = 0
STATUS_MODEL_FAILURE = 1
STATUS_BAD_REQUEST = 2
MAX_SIDE = 4096

_PREFIX = struct.Struct(">I")
_REQ_HEAD = struct.Struct(">4sHBIIII")
_RESP_HEAD = struct.Struct(">4sHBB")
_U32 = struct.Struct(">I")

MAX_FRAME = _REQ_HEAD.size + 2 ** 16 + 2 * MAX_SIDE * MAX_SIDE * 3 * 4


class WireError(ValueError):
    """A frame that cannot be parsed as a protocol v1 request."""


@dataclass(frozen=True)
class Request:
    timestep: int
    noisy: np.ndarray
    noise: np.ndarray
    prompt: str


def decode_request(payload: bytes) -> Request:
    if len(payload) < _REQ_HEAD.size:
        raise WireError("request shorter than its header")
    magic, version, kind, timestep, height, width, prompt_len = \
        _REQ_HEAD.unpack_from(payload)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    if kind != TYPE_REQUEST:
        raise WireError(f"expected request type {TYPE_REQUEST}, got {kind}")
    if not (1 <= height <= MAX_SIDE and 1 <= width <= MAX_SIDE):
        raise WireError(
            f"grid sides must be in [1, {MAX_SIDE}], got {height} x {width}")

    body = payload[_REQ_HEAD.size:]
    block = height * width * 3 * 4
    if len(body) != prompt_len + 2 * block:
        raise WireError(
            f"request body is {len(body)} bytes, expected "
            f"{prompt_len + 2 * block}")
    try:
        prompt = body[:prompt_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise WireError(f"prompt is not valid utf-8: {exc}") from exc

    def block_at(offset: int) -> np.ndarray:
        flat = np.frombuffer(body, dtype="<f4", count=height * width * 3,
                             offset=offset)
        return flat.reshape(height, width, 3).astype(np.float64)

    noisy = block_at(prompt_len)
    noise = block_at(prompt_len + block)
    return Request(timestep, noisy, noise, prompt)


def encode_response(eps_hat: np.ndarray) -> bytes:
    head = _RESP_HEAD.pack(MAGIC, VERSION, TYPE_RESPONSE, STATUS_OK)
    return head + np.ascontiguousarray(eps_hat, dtype="<f4").tobytes()


def encode_error(status: int, message: str) -> bytes:
    if not 1 <= status <= 255:
        raise ValueError("error status must be in [1, 255]")
    msg = message.encode("utf-8")
    head = _RESP_HEAD.pack(MAGIC, VERSION, TYPE_RESPONSE, status)
    return head + _U32.pack(len(msg)) + msg


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            if not chunks and remaining == n:
                raise ConnectionError("peer closed the connection")
            raise WireError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    (n,) = _PREFIX.unpack(_recv_exact(sock, _PREFIX.size))
    if n > MAX_FRAME:
        raise WireError(f"frame of {n} bytes exceeds the protocol limit")
    return _recv_exact(sock, n)


def write_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_PREFIX.pack(len(payload)) + payload)
