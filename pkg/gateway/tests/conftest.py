"""A live stub-mode gateway served over real HTTP for protocol tests."""

from __future__ import annotations

import threading
import time

import pytest
import uvicorn

from openavs_gateway.app import create_app
from openavs_gateway.config import GatewayConfig


@pytest.fixture(scope="session")
def stub_gateway_url():
    server = uvicorn.Server(
        uvicorn.Config(
            create_app(GatewayConfig.stub()), host="127.0.0.1", port=0, log_level="warning"
        )
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("gateway did not start")
        time.sleep(0.05)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)
