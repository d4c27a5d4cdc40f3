"""Wire protocol, backend clients, and deterministic mock backends.

A backend is anything that can infill one masked span and/or embed token
sequences. The wire protocol is JSON over HTTP: POST /infill, POST /embed,
GET /health. Error responses carry {"error": {"type", "message"}}. The mock
implementations make the whole pipeline testable without a neural model; a
small threaded HTTP server exposes them over the same protocol so engine,
mock, and any real backend share one conformance suite.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Mapping, Protocol

import requests

from .prompt_kit import DEFAULT_MASK_TOKEN, DEFAULT_STOP_TOKEN

logger = logging.getLogger(__name__)

NOISE_SUFFIX = "@@"


class BackendError(Exception):
    """Base for backend failures."""


class TransportError(BackendError):
    """Network-level failure after exhausting retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ProtocolError(BackendError):
    """The peer spoke, but not the protocol."""


# ---------------------------------------------------------------------------
# Wire messages.

@dataclass(frozen=True, slots=True)
class GenerationRequest:
    prompt: str
    max_new_tokens: int = 20
    decode_params: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        # Decode params travel as a JSON object, so canonicalize to sorted
        # unique keys; later duplicates win, matching dict semantics.
        canonical = tuple(sorted(dict(self.decode_params).items()))
        if canonical != self.decode_params:
            object.__setattr__(self, "decode_params", canonical)


@dataclass(frozen=True, slots=True)
class GenerationResponse:
    infill: str


@dataclass(frozen=True, slots=True)
class EmbeddingRequest:
    texts: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.texts:
            raise ValueError("texts must be non-empty")


@dataclass(frozen=True, slots=True)
class TextEmbedding:
    tokens: tuple[str, ...]
    vectors: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.vectors):
            raise ValueError("tokens and vectors must have equal length")
        dims = {len(v) for v in self.vectors}
        if len(dims) > 1:
            raise ValueError("all vectors must share one dimension")


@dataclass(frozen=True, slots=True)
class EmbeddingResponse:
    results: tuple[TextEmbedding, ...]


def generation_request_to_wire(req: GenerationRequest) -> dict[str, Any]:
    return {
        "prompt": req.prompt,
        "max_new_tokens": req.max_new_tokens,
        "decode_params": dict(req.decode_params),
    }


def generation_request_from_wire(body: Mapping[str, Any]) -> GenerationRequest:
    prompt = body.get("prompt")
    if not isinstance(prompt, str):
        raise ProtocolError("generation request must carry a text 'prompt' field")
    try:
        return GenerationRequest(
            prompt=prompt,
            max_new_tokens=int(body.get("max_new_tokens", 20)),
            decode_params=tuple(dict(body.get("decode_params", {})).items()),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad generation request: {exc}") from exc


def generation_response_to_wire(resp: GenerationResponse) -> dict[str, Any]:
    return {"infill": resp.infill}


def generation_response_from_wire(body: Mapping[str, Any]) -> GenerationResponse:
    infill = body.get("infill")
    if not isinstance(infill, str):
        raise ProtocolError("generation response must carry a text 'infill' field")
    return GenerationResponse(infill=infill)


def embedding_request_to_wire(req: EmbeddingRequest) -> dict[str, Any]:
    return {"texts": list(req.texts)}


def embedding_request_from_wire(body: Mapping[str, Any]) -> EmbeddingRequest:
    texts = body.get("texts")
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        raise ProtocolError("embedding request must carry a list of texts")
    try:
        return EmbeddingRequest(texts=tuple(texts))
    except ValueError as exc:
        raise ProtocolError(str(exc)) from exc


def embedding_response_to_wire(resp: EmbeddingResponse) -> dict[str, Any]:
    return {
        "results": [
            {"tokens": list(r.tokens), "vectors": [list(v) for v in r.vectors]}
            for r in resp.results
        ]
    }


def embedding_response_from_wire(body: Mapping[str, Any]) -> EmbeddingResponse:
    raw = body.get("results")
    if not isinstance(raw, list):
        raise ProtocolError("embedding response must carry a 'results' list")
    results = []
    try:
        for r in raw:
            results.append(
                TextEmbedding(
                    tokens=tuple(r["tokens"]),
                    vectors=tuple(tuple(float(x) for x in v) for v in r["vectors"]),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad embedding response: {exc}") from exc
    return EmbeddingResponse(results=tuple(results))


class InfillBackend(Protocol):
    def generate(self, req: GenerationRequest) -> GenerationResponse: ...


class EmbedBackend(Protocol):
    def embed(self, req: EmbeddingRequest) -> EmbeddingResponse: ...


# ---------------------------------------------------------------------------
# Deterministic mock infill backend.

@dataclass(frozen=True, slots=True)
class MockInfillSpec:
    """Toy deterministic "translator": word lexicon plus span budget.

    noise_rate corrupts the last word of a returned span (never the first,
    and never a single-word span) by appending a junk suffix; the decision
    is a pure function of (seed, prompt), so calls are order-independent
    and safe under concurrency and retries.
    """

    lexicon: tuple[tuple[str, str], ...]
    span_budget: int = 2
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.span_budget < 1:
            raise ValueError("span_budget must be >= 1")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")


def make_mock_spec(
    lexicon: Mapping[str, str],
    span_budget: int = 2,
    noise_rate: float = 0.0,
    seed: int = 0,
) -> MockInfillSpec:
    return MockInfillSpec(
        lexicon=tuple(sorted(lexicon.items())),
        span_budget=span_budget,
        noise_rate=noise_rate,
        seed=seed,
    )


def _parse_prompt(prompt: str, mask_token: str, stop_token: str) -> tuple[str, str]:
    """Extract (query, partial_output) from an engine-rendered prompt."""
    lines = prompt.split("\n")
    if len(lines) < 2:
        raise ProtocolError("prompt must contain a query line and a target line")
    target_line = lines[-1]
    if target_line.count(mask_token) != 1:
        raise ProtocolError("target line must contain exactly one mask token")
    _, sep, rest = target_line.partition(": ")
    if not sep:
        raise ProtocolError("target line must carry a field label")
    partial = rest[: rest.index(mask_token)].rstrip(" ")
    query_line = lines[-2]
    _, sep, query = query_line.partition(": ")
    if not sep:
        raise ProtocolError("query line must carry a field label")
    query = query.removesuffix(stop_token)
    if not query:
        raise ProtocolError("query text is empty")
    return query, partial


def mock_infill(spec: MockInfillSpec, prompt: str) -> str:
    """Infill per the lexicon: next span_budget words of the translation.

    Parses the query and partial output from the prompt, maps each query
    word through the lexicon (unknown words pass through), and returns the
    words the partial output does not yet cover, capped at span_budget.
    An exhausted remainder yields the stop token.
    """
    query, partial = _parse_prompt(prompt, DEFAULT_MASK_TOKEN, DEFAULT_STOP_TOKEN)
    lexicon = dict(spec.lexicon)
    translated = [lexicon.get(w, w) for w in query.split(" ")]
    done = len(partial.split()) if partial else 0
    remainder = translated[done:]
    if not remainder:
        return DEFAULT_STOP_TOKEN
    span = remainder[: spec.span_budget]
    if spec.noise_rate > 0.0 and len(span) >= 2:
        digest = hashlib.blake2b(
            f"{spec.seed}\x1f{prompt}".encode("utf-8"), digest_size=8
        ).digest()
        rng = random.Random(int.from_bytes(digest, "big"))
        if rng.random() < spec.noise_rate:
            span[-1] += NOISE_SUFFIX
    return " ".join(span)


@dataclass(frozen=True, slots=True)
class MockInfillBackend:
    spec: MockInfillSpec

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        return GenerationResponse(infill=mock_infill(self.spec, req.prompt))


# ---------------------------------------------------------------------------
# Deterministic mock embedder: character-trigram counts per whitespace token.

def _token_trigrams(token: str) -> list[str]:
    padded = f"^{token}$"
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


class MockEmbedder:
    """L2-normalized char-trigram count vectors per whitespace token.

    The vector space is the sorted union of trigrams across the request's
    texts, so all vectors in one response share a dimension and texts with
    disjoint trigram sets are exactly orthogonal.
    """

    def embed(self, req: EmbeddingRequest) -> EmbeddingResponse:
        per_text_tokens = [text.split() for text in req.texts]
        vocab: set[str] = set()
        for tokens in per_text_tokens:
            for token in tokens:
                vocab.update(_token_trigrams(token))
        index = {g: i for i, g in enumerate(sorted(vocab))}
        dim = max(len(index), 1)
        results = []
        for tokens in per_text_tokens:
            vectors = []
            for token in tokens:
                counts = [0.0] * dim
                for g in _token_trigrams(token):
                    counts[index[g]] += 1.0
                norm = sum(c * c for c in counts) ** 0.5
                if norm > 0.0:
                    counts = [c / norm for c in counts]
                vectors.append(tuple(counts))
            results.append(TextEmbedding(tokens=tuple(tokens), vectors=tuple(vectors)))
        return EmbeddingResponse(results=tuple(results))


class CountingBackend:
    """Delegating wrapper that counts generate() calls."""

    def __init__(self, inner: InfillBackend):
        self.inner = inner
        self.calls = 0

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        self.calls += 1
        return self.inner.generate(req)


# ---------------------------------------------------------------------------
# HTTP client.

class HttpBackend:
    """Client for any server speaking the infill/embed protocol.

    Retries transport failures and 5xx responses with exponential backoff;
    infill calls are stateless, so retrying is safe. 4xx and malformed
    bodies are protocol errors and are not retried.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 10.0,
        max_attempts: int = 3,
        backoff: float = 0.05,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        url = f"{self.base_url}{path}"
        last_error = "unreachable"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._session().post(url, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"POST {url} failed: {exc}"
            else:
                if resp.status_code >= 500:
                    last_error = f"POST {url} returned {resp.status_code}"
                elif resp.status_code >= 400:
                    raise ProtocolError(_format_error_body(resp))
                else:
                    try:
                        payload = resp.json()
                    except ValueError as exc:
                        raise ProtocolError(f"non-JSON response from {url}") from exc
                    if not isinstance(payload, dict):
                        raise ProtocolError(f"non-object response from {url}")
                    return payload
            if attempt < self.max_attempts:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
        raise TransportError(last_error, attempts=self.max_attempts)

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        payload = self._post("/infill", generation_request_to_wire(req))
        return generation_response_from_wire(payload)

    def embed(self, req: EmbeddingRequest) -> EmbeddingResponse:
        payload = self._post("/embed", embedding_request_to_wire(req))
        return embedding_response_from_wire(payload)

    def health(self) -> dict[str, Any]:
        url = f"{self.base_url}/health"
        try:
            resp = self._session().get(url, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"GET {url} failed: {exc}", attempts=1) from exc
        if resp.status_code != 200:
            raise ProtocolError(f"health check returned {resp.status_code}")
        return resp.json()


def _format_error_body(resp: requests.Response) -> str:
    try:
        err = resp.json()["error"]
        return f"{err['type']}: {err['message']}"
    except (ValueError, KeyError, TypeError):
        return f"HTTP {resp.status_code} with malformed error body"


# ---------------------------------------------------------------------------
# Mock HTTP server exposing the protocol.

class _MockHandler(BaseHTTPRequestHandler):
    infill_backend: MockInfillBackend
    embedder: MockEmbedder

    def log_message(self, fmt: str, *args: Any) -> None:
        logger.debug("mock server: " + fmt, *args)

    def _send_json(self, status: int, payload: dict[str, Any]) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_body(self, status: int, kind: str, message: str) -> None:
        self._send_json(status, {"error": {"type": kind, "message": message}})

    def _read_body(self) -> dict[str, Any]:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        payload = json.loads(raw.decode("utf-8"))
        if not isinstance(payload, dict):
            raise ValueError("request body must be a JSON object")
        return payload

    def do_GET(self) -> None:
        if self.path == "/health":
            self._send_json(
                200,
                {
                    "status": "ok",
                    "models": {"infill": "mock-lexicon", "embed": "mock-trigram"},
                },
            )
        else:
            self._send_error_body(404, "protocol", f"unknown path {self.path}")

    def do_POST(self) -> None:
        try:
            body = self._read_body()
        except (ValueError, UnicodeDecodeError) as exc:
            self._send_error_body(400, "protocol", f"unreadable body: {exc}")
            return
        if self.path == "/infill":
            try:
                req = generation_request_from_wire(body)
                resp = self.infill_backend.generate(req)
            except (ProtocolError, ValueError) as exc:
                self._send_error_body(400, "protocol", str(exc))
                return
            self._send_json(200, generation_response_to_wire(resp))
        elif self.path == "/embed":
            try:
                req = embedding_request_from_wire(body)
                resp = self.embedder.embed(req)
            except (ProtocolError, ValueError) as exc:
                self._send_error_body(400, "protocol", str(exc))
                return
            self._send_json(200, embedding_response_to_wire(resp))
        else:
            self._send_error_body(404, "protocol", f"unknown path {self.path}")


class MockServer:
    """Threaded HTTP server wrapping the mock backends."""

    def __init__(self, spec: MockInfillSpec, host: str = "127.0.0.1", port: int = 0):
        handler = type(
            "BoundMockHandler",
            (_MockHandler,),
            {"infill_backend": MockInfillBackend(spec), "embedder": MockEmbedder()},
        )
        self._server = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc: Any) -> None:
        self.stop()
