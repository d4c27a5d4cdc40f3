"""Fixtures for the reference backend: loaded runtime plus a live server.

Module-level imports stay stdlib-only so the engine's own suite collects
and runs fully when the serving stack is not installed; every fixture
skips cleanly instead.
"""

import threading
import time
from pathlib import Path

import pytest

MODEL_DIR = Path(__file__).resolve().parents[1] / "model"


def _load_service():
    pytest.importorskip("torch")
    pytest.importorskip("transformers")
    service = pytest.importorskip("refbackend.service")
    if not (MODEL_DIR / "config.json").exists():
        pytest.skip("model artifact missing; run scripts/make_tiny_model.py")
    return service


@pytest.fixture(scope="session")
def model_dir() -> str:
    _load_service()
    return str(MODEL_DIR)


@pytest.fixture(scope="session")
def runtime(model_dir: str):
    service = _load_service()
    return service.ModelRuntime(service.BackendConfig(model_dir=model_dir))


@pytest.fixture(scope="session")
def echo_runtime(model_dir: str):
    service = _load_service()
    return service.ModelRuntime(
        service.BackendConfig(model_dir=model_dir, echo=True)
    )


class LiveServer:
    """uvicorn on an ephemeral port in a daemon thread."""

    def __init__(self, app) -> None:
        import uvicorn

        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.base_url = ""

    def start(self) -> "LiveServer":
        self._thread.start()
        deadline = time.monotonic() + 30.0
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start within 30s")
            if not self._thread.is_alive():
                raise RuntimeError("server thread died during startup")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        self.base_url = f"http://127.0.0.1:{port}"
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10.0)


@pytest.fixture(scope="session")
def base_url(model_dir: str):
    pytest.importorskip("uvicorn")
    service = _load_service()
    app = service.create_app(
        service.BackendConfig(model_dir=model_dir, max_concurrent=4)
    )
    server = LiveServer(app).start()
    yield server.base_url
    server.stop()
