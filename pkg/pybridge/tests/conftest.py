"""Fixtures: tiny checkpoints and an in-thread uvicorn server."""
from __future__ import annotations

import socket
import threading
import time

import pytest
import requests
import uvicorn

from pybridge.server import create_app
from pybridge.tinymodel import build_tiny_checkpoint, build_untrained_checkpoint


class ServerThread:
    """Runs a FastAPI app on a free port in a daemon thread."""

    def __init__(self, app) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.bind(("127.0.0.1", 0))
        self.port = self._sock.getsockname()[1]
        self.url = f"http://127.0.0.1:{self.port}"
        config = uvicorn.Config(app, log_level="warning", access_log=False)
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(
            target=self._server.run, kwargs={"sockets": [self._sock]}, daemon=True
        )

    def start(self) -> "ServerThread":
        self._thread.start()
        deadline = time.monotonic() + 60
        while time.monotonic() < deadline:
            try:
                if requests.get(self.url + "/health", timeout=2).status_code == 200:
                    return self
            except requests.RequestException:
                pass
            time.sleep(0.1)
        raise RuntimeError("server did not come up within 60s")

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=20)

    def __enter__(self) -> "ServerThread":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


@pytest.fixture(scope="session")
def raw_checkpoint(tmp_path_factory):
    """Random-weight checkpoint; fast, content-free, fine for wiring tests."""
    out = tmp_path_factory.mktemp("models") / "m0"
    build_untrained_checkpoint(out, seed=0)
    return out


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """Pretrained demo checkpoint with wrong-then-corrected behavior."""
    out = tmp_path_factory.mktemp("models") / "m0"
    build_tiny_checkpoint(out, seed=0)
    return out


@pytest.fixture
def raw_server(raw_checkpoint, tmp_path):
    app = create_app(
        raw_checkpoint,
        model_id="m0",
        models_dir=tmp_path / "trained",
        train_mode="lora",
    )
    with ServerThread(app) as server:
        yield server
