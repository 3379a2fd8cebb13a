"""Threaded TCP server speaking the noise-prediction protocol.

Each connection is handled by one thread and serves one request at a
time; separate connections run concurrently. Requests that do not parse
come back as status-2 frames with a diagnostic, backend exceptions as
status-1 frames, so a misbehaving client or model never kills the server.
"""

from __future__ import annotations

import logging
import socketserver

import numpy as np

from . import wire

log = logging.getLogger("scorer_server")


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        backend = self.server.backend
        while True:
            try:
                payload = wire.read_frame(self.request)
            except ConnectionError:
                return
            except (wire.WireError, OSError) as exc:
                log.info("dropping connection: %s", exc)
                return
            try:
                req = wire.decode_request(payload)
            except wire.WireError as exc:
                wire.write_frame(self.request, wire.encode_error(
                    wire.STATUS_BAD_REQUEST, str(exc)))
                continue
            try:
                eps_hat = np.asarray(
                    backend.predict(req.timestep, req.noisy, req.noise,
                                    req.prompt))
                if eps_hat.shape != req.noisy.shape:
                    raise ValueError(
                        f"backend produced shape {eps_hat.shape}, "
                        f"request was {req.noisy.shape}")
                response = wire.encode_response(eps_hat)
            except Exception as exc:
                log.warning("backend failure: %s", exc)
                response = wire.encode_error(wire.STATUS_MODEL_FAILURE,
                                             f"{type(exc).__name__}: {exc}")
            wire.write_frame(self.request, response)


class ScorerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], backend):
        super().__init__(address, _Handler)
        self.backend = backend


def serve(host: str, port: int, backend) -> None:
    with ScorerServer((host, port), backend) as server:
        bound = server.server_address
        log.info("listening on %s:%d", bound[0], bound[1])
        print(f"listening on {bound[0]}:{bound[1]}", flush=True)
        server.serve_forever()
