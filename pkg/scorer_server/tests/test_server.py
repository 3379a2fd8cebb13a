"""End-to-end checks of the threaded server over real sockets."""

import socket
import struct
import threading

import numpy as np
import pytest

from scorer_server import wire
from scorer_server.backends import EchoBackend
from scorer_server.server import ScorerServer

from test_wire import GOLDEN_REQUEST, GOLDEN_RESPONSE


class FailingBackend:
    def predict(self, timestep, noisy, noise, prompt):
        raise RuntimeError("weights exploded")


class WrongShapeBackend:
    def predict(self, timestep, noisy, noise, prompt):
        return np.zeros((1, 1, 3))


def start_server(backend):
    server = ScorerServer(("127.0.0.1", 0), backend)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_address[1]


@pytest.fixture()
def echo_port():
    server, port = start_server(EchoBackend())
    yield port
    server.shutdown()
    server.server_close()


def roundtrip(port: int, payload: bytes) -> bytes:
    with socket.create_connection(("127.0.0.1", port), timeout=5) as s:
        wire.write_frame(s, payload)
        return wire.read_frame(s)


def test_echo_matches_golden_fixture(echo_port):
    assert roundtrip(echo_port, GOLDEN_REQUEST) == GOLDEN_RESPONSE


def test_echo_returns_noise_block_bitwise(echo_port):
    rng = np.random.default_rng(11)
    noisy = rng.standard_normal((6, 5, 3)).astype("<f4")
    noise = rng.standard_normal((6, 5, 3)).astype("<f4")
    head = struct.pack(">4sHBIIII", b"RDSC", 1, 1, 500, 6, 5, 0)
    response = roundtrip(echo_port, head + noisy.tobytes() + noise.tobytes())
    assert response[:8] == struct.pack(">4sHBB", b"RDSC", 1, 2, 0)
    assert response[8:] == noise.tobytes()


def test_malformed_magic_gets_status_2(echo_port):
    response = roundtrip(echo_port, b"XXXX" + GOLDEN_REQUEST[4:])
    magic, version, kind, status = struct.unpack_from(">4sHBB", response)
    assert (magic, version, kind) == (b"RDSC", 1, 2)
    assert status == wire.STATUS_BAD_REQUEST
    (dlen,) = struct.unpack_from(">I", response, 8)
    assert b"magic" in response[12:12 + dlen]


def test_oversized_sides_get_status_2(echo_port):
    head = struct.pack(">4sHBIIII", b"RDSC", 1, 1, 0, wire.MAX_SIDE + 1, 2, 0)
    response = roundtrip(echo_port, head)
    assert response[7] == wire.STATUS_BAD_REQUEST


def test_backend_exception_gets_status_1():
    server, port = start_server(FailingBackend())
    try:
        response = roundtrip(port, GOLDEN_REQUEST)
        assert response[7] == wire.STATUS_MODEL_FAILURE
        assert b"weights exploded" in response
    finally:
        server.shutdown()
        server.server_close()


def test_wrong_backend_shape_gets_status_1():
    server, port = start_server(WrongShapeBackend())
    try:
        response = roundtrip(port, GOLDEN_REQUEST)
        assert response[7] == wire.STATUS_MODEL_FAILURE
    finally:
        server.shutdown()
        server.server_close()


def test_connection_survives_bad_request_then_serves(echo_port):
    with socket.create_connection(("127.0.0.1", echo_port), timeout=5) as s:
        wire.write_frame(s, b"RDSCjunk")
        first = wire.read_frame(s)
        assert first[7] == wire.STATUS_BAD_REQUEST
        wire.write_frame(s, GOLDEN_REQUEST)
        assert wire.read_frame(s) == GOLDEN_RESPONSE


def test_sequential_requests_reuse_one_connection(echo_port):
    with socket.create_connection(("127.0.0.1", echo_port), timeout=5) as s:
        for _ in range(3):
            wire.write_frame(s, GOLDEN_REQUEST)
            assert wire.read_frame(s) == GOLDEN_RESPONSE


def test_connections_are_served_concurrently(echo_port):
    with socket.create_connection(("127.0.0.1", echo_port), timeout=5) as a, \
            socket.create_connection(("127.0.0.1", echo_port), timeout=5) as b:
        wire.write_frame(b, GOLDEN_REQUEST)
        assert wire.read_frame(b) == GOLDEN_RESPONSE
        wire.write_frame(a, GOLDEN_REQUEST)
        assert wire.read_frame(a) == GOLDEN_RESPONSE
