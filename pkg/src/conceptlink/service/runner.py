"""Run the service on an ephemeral local port, in-process.

The CLI stays a thin HTTP client even for local one-shot runs: it boots the
app here, talks to it over a real socket, and tears it down when done.
"""

from __future__ import annotations

import threading
import time

import uvicorn
from fastapi import FastAPI


class EphemeralServer:
    """Context manager hosting a FastAPI app on 127.0.0.1 with a random port."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1"):
        self.app = app
        self.host = host
        self._server: uvicorn.Server | None = None
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        if self._server is None or not self._server.servers:
            raise RuntimeError("server is not running")
        sock = self._server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{self.host}:{port}"

    def __enter__(self) -> "EphemeralServer":
        config = uvicorn.Config(self.app, host=self.host, port=0, log_level="warning")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        deadline = time.monotonic() + 10.0
        while not self._server.started:
            if time.monotonic() >= deadline:
                raise RuntimeError("service did not start within 10 seconds")
            if not self._thread.is_alive():
                raise RuntimeError("service thread exited during startup")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc_info) -> None:
        if self._server is not None:
            self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10.0)
