"""HTTP backend serving a real seq2seq infill model and token embedder.

Speaks the same protocol as the engine's mock server: POST /infill,
POST /embed, GET /health, errors as {"error": {"type", "message"}}. The
engine's mask and stop markers are plain text on the wire; a sentinel map
translates them into the model's own sentinel vocabulary on the way in and
back again on the way out, so the engine never needs to know which model
is behind the URL.

Decoding is greedy unless the request's decode_params say otherwise. An
echo mode (no model call, the mapped-and-unmapped prompt comes straight
back) exists to prove the sentinel round trip is lossless.
"""

from __future__ import annotations

import argparse
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool
from starlette.exceptions import HTTPException as StarletteHTTPException

logger = logging.getLogger(__name__)

MASK_TOKEN = "<X>"
STOP_TOKEN = "</s>"

DEFAULT_SENTINEL_MAP: dict[str, str] = {
    MASK_TOKEN: "<extra_id_0>",
    STOP_TOKEN: "<extra_id_99>",
}

MAX_NEW_TOKENS_CAP = 512

# Request decode_params the server will forward to the model; anything else
# is rejected rather than silently ignored.
DECODE_PARAM_TYPES: dict[str, type] = {
    "do_sample": bool,
    "num_beams": int,
    "temperature": float,
    "top_k": int,
    "top_p": float,
    "repetition_penalty": float,
}


@dataclass(frozen=True)
class BackendConfig:
    """What to serve and how hard it may be driven.

    sentinel_map must cover both engine markers, otherwise prompts would
    leak raw marker text into the model's input.
    """

    model_dir: str
    embedder_dir: str | None = None
    device: str = "cpu"
    max_concurrent: int = 4
    sentinel_map: Mapping[str, str] = field(
        default_factory=lambda: dict(DEFAULT_SENTINEL_MAP)
    )
    echo: bool = False

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        for token in (MASK_TOKEN, STOP_TOKEN):
            if not self.sentinel_map.get(token):
                raise ValueError(f"sentinel_map must cover {token!r}")
        if len(set(self.sentinel_map.values())) != len(self.sentinel_map):
            raise ValueError("sentinel_map values must be distinct")

    @property
    def embed_source(self) -> str:
        return self.embedder_dir or self.model_dir


class ModelRuntime:
    """Loaded model plus the locking that keeps it safe to share.

    A bounded semaphore admits at most max_concurrent requests into the
    model section; a lock serializes the actual forward passes.
    """

    def __init__(self, config: BackendConfig):
        import torch
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        self.config = config
        self._torch = torch
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(config.model_dir)
            self.model = AutoModelForSeq2SeqLM.from_pretrained(config.model_dir)
        except Exception as exc:
            raise RuntimeError(f"cannot load model {config.model_dir!r}: {exc}") from exc
        self.model.to(config.device)
        self.model.eval()
        if config.embedder_dir and config.embedder_dir != config.model_dir:
            try:
                self.embed_tokenizer = AutoTokenizer.from_pretrained(config.embedder_dir)
                embed_model = AutoModelForSeq2SeqLM.from_pretrained(config.embedder_dir)
            except Exception as exc:
                raise RuntimeError(
                    f"cannot load embedder {config.embedder_dir!r}: {exc}"
                ) from exc
            embed_model.to(config.device)
            embed_model.eval()
            self.encoder = embed_model.get_encoder()
        else:
            self.embed_tokenizer = self.tokenizer
            self.encoder = self.model.get_encoder()
        self._admission = threading.BoundedSemaphore(config.max_concurrent)
        self._model_lock = threading.Lock()
        # Longest markers first so one substitution can never eat part of
        # another.
        self._to_model = sorted(
            config.sentinel_map.items(), key=lambda kv: -len(kv[0])
        )
        self._to_engine = sorted(
            ((v, k) for k, v in config.sentinel_map.items()),
            key=lambda kv: -len(kv[0]),
        )

    def map_to_model(self, text: str) -> str:
        for engine_tok, model_tok in self._to_model:
            text = text.replace(engine_tok, model_tok)
        return text

    def map_to_engine(self, text: str) -> str:
        for model_tok, engine_tok in self._to_engine:
            text = text.replace(model_tok, engine_tok)
        return text

    def infill(
        self,
        prompt: str,
        max_new_tokens: int,
        decode_params: Mapping[str, Any] | None = None,
    ) -> str:
        """One infill decode for the single masked span in the prompt."""
        if prompt.count(MASK_TOKEN) != 1:
            raise ValueError(f"prompt must contain exactly one {MASK_TOKEN!r} marker")
        mapped = self.map_to_model(prompt)
        if self.config.echo:
            return self.map_to_engine(mapped)
        gen_kwargs = self._decode_kwargs(decode_params or {})
        with self._admission:
            ids = self.embed_ids(self.tokenizer, mapped)
            ids.append(self.tokenizer.eos_token_id)
            input_ids = self._torch.tensor([ids], device=self.config.device)
            attention_mask = self._torch.ones_like(input_ids)
            with self._model_lock, self._torch.no_grad():
                out = self.model.generate(
                    input_ids=input_ids,
                    attention_mask=attention_mask,
                    max_new_tokens=max_new_tokens,
                    **gen_kwargs,
                )
        text = self._decode_new_tokens(out[0].tolist())
        return self.map_to_engine(text)

    def embed(self, texts: list[str]) -> list[tuple[list[str], list[list[float]]]]:
        """Per-token final-encoder-layer vectors for each text."""
        results: list[tuple[list[str], list[list[float]]]] = []
        with self._admission:
            for text in texts:
                ids = self.embed_ids(self.embed_tokenizer, text)
                if not ids:
                    results.append(([], []))
                    continue
                tokens = self.embed_tokenizer.convert_ids_to_tokens(ids)
                input_ids = self._torch.tensor([ids], device=self.config.device)
                attention_mask = self._torch.ones_like(input_ids)
                with self._model_lock, self._torch.no_grad():
                    hidden = self.encoder(
                        input_ids=input_ids, attention_mask=attention_mask
                    ).last_hidden_state
                results.append((list(tokens), hidden[0].tolist()))
        return results

    @staticmethod
    def embed_ids(tokenizer: Any, text: str) -> list[int]:
        return tokenizer.encode(text, add_special_tokens=False)

    def _decode_kwargs(self, params: Mapping[str, Any]) -> dict[str, Any]:
        kwargs: dict[str, Any] = {"do_sample": False, "num_beams": 1}
        for key, value in params.items():
            expected = DECODE_PARAM_TYPES.get(key)
            if expected is None:
                raise ValueError(f"unsupported decode param {key!r}")
            if expected is bool:
                if not isinstance(value, bool):
                    raise ValueError(f"decode param {key!r} must be a boolean")
                kwargs[key] = value
            elif expected is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ValueError(f"decode param {key!r} must be an integer")
                kwargs[key] = value
            else:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValueError(f"decode param {key!r} must be a number")
                kwargs[key] = float(value)
        return kwargs

    def _decode_new_tokens(self, seq: list[int]) -> str:
        pad_id = self.tokenizer.pad_token_id
        eos_id = self.tokenizer.eos_token_id
        if seq and seq[0] == self.model.config.decoder_start_token_id:
            seq = seq[1:]
        kept: list[int] = []
        for tok_id in seq:
            if tok_id == eos_id:
                break
            if tok_id == pad_id:
                continue
            kept.append(tok_id)
        return " ".join(self.tokenizer.convert_ids_to_tokens(kept))

    @property
    def model_id(self) -> str:
        return self.config.model_dir

    @property
    def embedder_id(self) -> str:
        return self.config.embed_source


def create_app(config: BackendConfig) -> FastAPI:
    """Build the FastAPI app around one loaded runtime."""
    runtime = ModelRuntime(config)
    app = FastAPI(title="sapgen reference backend", docs_url=None, redoc_url=None)

    def error_response(status: int, kind: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=status, content={"error": {"type": kind, "message": message}}
        )

    @app.exception_handler(StarletteHTTPException)
    async def on_http_error(request: Request, exc: StarletteHTTPException) -> JSONResponse:
        return error_response(exc.status_code, "protocol", str(exc.detail))

    @app.exception_handler(Exception)
    async def on_internal_error(request: Request, exc: Exception) -> JSONResponse:
        logger.exception("request failed")
        return error_response(500, "internal", f"{type(exc).__name__}: {exc}")

    async def read_body(request: Request) -> dict[str, Any]:
        try:
            body = await request.json()
        except (ValueError, UnicodeDecodeError) as exc:
            raise _BadRequest("protocol", f"unreadable body: {exc}") from exc
        if not isinstance(body, dict):
            raise _BadRequest("protocol", "request body must be a JSON object")
        return body

    @app.post("/infill")
    async def infill(request: Request) -> JSONResponse:
        try:
            body = await read_body(request)
            prompt = body.get("prompt")
            if not isinstance(prompt, str) or not prompt:
                raise _BadRequest(
                    "validation", "generation request must carry a text 'prompt' field"
                )
            max_new_tokens = body.get("max_new_tokens", 20)
            if isinstance(max_new_tokens, bool) or not isinstance(max_new_tokens, int):
                raise _BadRequest("validation", "max_new_tokens must be an integer")
            if not 1 <= max_new_tokens <= MAX_NEW_TOKENS_CAP:
                raise _BadRequest(
                    "validation",
                    f"max_new_tokens must lie in [1, {MAX_NEW_TOKENS_CAP}]",
                )
            decode_params = body.get("decode_params", {})
            if not isinstance(decode_params, dict):
                raise _BadRequest("validation", "decode_params must be an object")
            try:
                text = await run_in_threadpool(
                    runtime.infill, prompt, max_new_tokens, decode_params
                )
            except ValueError as exc:
                raise _BadRequest("validation", str(exc)) from exc
        except _BadRequest as exc:
            return error_response(400, exc.kind, exc.message)
        return JSONResponse(status_code=200, content={"infill": text})

    @app.post("/embed")
    async def embed(request: Request) -> JSONResponse:
        try:
            body = await read_body(request)
            texts = body.get("texts")
            if not isinstance(texts, list) or not all(
                isinstance(t, str) for t in texts
            ):
                raise _BadRequest(
                    "validation", "embedding request must carry a list of texts"
                )
            if not texts:
                raise _BadRequest("validation", "texts must be non-empty")
            results = await run_in_threadpool(runtime.embed, texts)
        except _BadRequest as exc:
            return error_response(400, exc.kind, exc.message)
        return JSONResponse(
            status_code=200,
            content={
                "results": [
                    {"tokens": tokens, "vectors": vectors}
                    for tokens, vectors in results
                ]
            },
        )

    @app.get("/health")
    async def health() -> JSONResponse:
        return JSONResponse(
            status_code=200,
            content={
                "status": "ok",
                "models": {"infill": runtime.model_id, "embed": runtime.embedder_id},
            },
        )

    return app


class _BadRequest(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.message = message


def main(argv: list[str] | None = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(
        prog="sapgen-ref-backend",
        description="Serve a seq2seq model behind the infill/embed protocol.",
    )
    parser.add_argument("--model-dir", required=True, help="model directory or identifier")
    parser.add_argument("--embedder-dir", default=None, help="separate embedder (default: the model)")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--max-concurrent", type=int, default=4)
    parser.add_argument(
        "--echo",
        action="store_true",
        help="return the sentinel round-tripped prompt instead of decoding",
    )
    parser.add_argument(
        "--sentinel-map",
        default=None,
        help="JSON object mapping engine markers to model sentinel tokens",
    )
    args = parser.parse_args(argv)

    sentinel_map = dict(DEFAULT_SENTINEL_MAP)
    if args.sentinel_map:
        try:
            loaded = json.loads(args.sentinel_map)
        except ValueError as exc:
            parser.error(f"--sentinel-map is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            parser.error("--sentinel-map must be a JSON object")
        sentinel_map = {str(k): str(v) for k, v in loaded.items()}

    try:
        config = BackendConfig(
            model_dir=str(Path(args.model_dir)),
            embedder_dir=args.embedder_dir,
            device=args.device,
            max_concurrent=args.max_concurrent,
            sentinel_map=sentinel_map,
            echo=args.echo,
        )
        app = create_app(config)
    except (ValueError, RuntimeError) as exc:
        parser.exit(status=2, message=f"startup failed: {exc}\n")
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
