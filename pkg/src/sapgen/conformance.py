"""Protocol conformance checks runnable against any backend server.

Every check takes a base URL and raises AssertionError on violation. The
mock server and any real backend must pass the identical suite: message
shapes, error bodies, and client retry accounting.
"""

from __future__ import annotations

from typing import Callable

import requests

from .backend_gateway import (
    EmbeddingRequest,
    GenerationRequest,
    HttpBackend,
    ProtocolError,
    TransportError,
)
from .prompt_kit import LangTag, render_prompt, translation_task

UNREACHABLE_URL = "http://127.0.0.1:1"


def _sample_prompt() -> str:
    task = translation_task(
        LangTag(code="es", display_name="Spanish"),
        LangTag(code="en", display_name="English"),
    )
    return render_prompt(task, "Hola.", "")


def check_health_shape(base_url: str) -> None:
    payload = HttpBackend(base_url).health()
    assert payload.get("status") == "ok", f"health status: {payload}"
    models = payload.get("models")
    assert isinstance(models, dict), "health must report a 'models' mapping"
    for key in ("infill", "embed"):
        assert isinstance(models.get(key), str) and models[key], (
            f"health models must name {key!r}"
        )


def check_infill_shape(base_url: str) -> None:
    client = HttpBackend(base_url)
    resp = client.generate(GenerationRequest(prompt=_sample_prompt()))
    assert isinstance(resp.infill, str), "infill must be text"


def check_infill_missing_prompt(base_url: str) -> None:
    raw = requests.post(f"{base_url}/infill", json={"max_new_tokens": 4}, timeout=10)
    assert raw.status_code == 400, f"expected 400, got {raw.status_code}"
    body = raw.json()
    err = body.get("error")
    assert isinstance(err, dict), f"error body must be an object: {body}"
    assert isinstance(err.get("type"), str) and err["type"], "error.type required"
    assert isinstance(err.get("message"), str) and err["message"], (
        "error.message required"
    )


def check_infill_missing_mask(base_url: str) -> None:
    raw = requests.post(
        f"{base_url}/infill",
        json={"prompt": "no sentinel anywhere", "max_new_tokens": 4},
        timeout=10,
    )
    assert raw.status_code == 400, f"expected 400, got {raw.status_code}"
    err = raw.json().get("error")
    assert isinstance(err, dict) and err.get("type") and err.get("message")


def check_client_maps_error_body(base_url: str) -> None:
    client = HttpBackend(base_url)
    try:
        client.generate(GenerationRequest(prompt="no sentinel anywhere"))
    except ProtocolError:
        return
    raise AssertionError("client must raise ProtocolError on a 400 error body")


def check_embed_shape(base_url: str) -> None:
    client = HttpBackend(base_url)
    resp = client.embed(EmbeddingRequest(texts=("abc xyz", "abc xyz")))
    assert len(resp.results) == 2, "one result per input text"
    first, second = resp.results
    assert first.tokens == second.tokens, "identical texts must tokenize alike"
    assert first.vectors == second.vectors, "identical texts must embed alike"
    assert len(first.tokens) == len(first.vectors)
    dims = {len(v) for r in resp.results for v in r.vectors}
    assert len(dims) == 1 and dims.pop() >= 1, "vectors must share one dimension"


def check_embed_error_body(base_url: str) -> None:
    raw = requests.post(f"{base_url}/embed", json={"texts": "not a list"}, timeout=10)
    assert raw.status_code == 400, f"expected 400, got {raw.status_code}"
    err = raw.json().get("error")
    assert isinstance(err, dict) and err.get("type") and err.get("message")


def check_retry_accounting(base_url: str) -> None:
    good = HttpBackend(base_url, max_attempts=3, backoff=0.001)
    good.generate(GenerationRequest(prompt=_sample_prompt()))
    bad = HttpBackend(UNREACHABLE_URL, max_attempts=3, backoff=0.001, timeout=0.2)
    try:
        bad.generate(GenerationRequest(prompt=_sample_prompt()))
    except TransportError as exc:
        assert exc.attempts == 3, f"expected 3 attempts, saw {exc.attempts}"
        return
    raise AssertionError("unreachable endpoint must raise TransportError")


CHECKS: tuple[tuple[str, Callable[[str], None]], ...] = (
    ("health_shape", check_health_shape),
    ("infill_shape", check_infill_shape),
    ("infill_missing_prompt", check_infill_missing_prompt),
    ("infill_missing_mask", check_infill_missing_mask),
    ("client_maps_error_body", check_client_maps_error_body),
    ("embed_shape", check_embed_shape),
    ("embed_error_body", check_embed_error_body),
    ("retry_accounting", check_retry_accounting),
)


def run_conformance(base_url: str) -> None:
    """Run every check; raise with the list of failures, if any."""
    failures = []
    for name, check in CHECKS:
        try:
            check(base_url)
        except AssertionError as exc:
            failures.append(f"{name}: {exc}")
    if failures:
        raise AssertionError("conformance failures: " + "; ".join(failures))
