"""Behavior of the serving layer: sentinel mapping, decoding, embeddings."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest
import requests

pytest.importorskip("refbackend")

from refbackend.service import (
    MASK_TOKEN,
    MAX_NEW_TOKENS_CAP,
    STOP_TOKEN,
    BackendConfig,
    ModelRuntime,
)

FIXTURES_PATH = Path(__file__).resolve().parent / "fixtures" / "infill_fixtures.json"


def load_fixtures() -> list[dict]:
    return json.loads(FIXTURES_PATH.read_text(encoding="utf-8"))["cases"]


# ---------------------------------------------------------------------------
# Sentinel mapping and echo mode.

def test_echo_mode_round_trips_stop_and_mask_markers(echo_runtime) -> None:
    prompt = (
        "Translate Spanish to English.\n"
        f"Spanish: gato{STOP_TOKEN}\nEnglish: cat{STOP_TOKEN}\n"
        f"Spanish: Hola.{STOP_TOKEN}\nEnglish: {MASK_TOKEN}"
    )
    assert echo_runtime.infill(prompt, 8) == prompt


def test_echo_mode_preserves_arbitrary_text(echo_runtime) -> None:
    prompt = f"weird éü text, tabs\there\nquery: x{STOP_TOKEN}\nout: {MASK_TOKEN}"
    assert echo_runtime.infill(prompt, 4) == prompt


def test_marker_maps_are_mutual_inverses_on_real_prompts(runtime) -> None:
    for case in load_fixtures():
        prompt = case["prompt"]
        assert runtime.map_to_engine(runtime.map_to_model(prompt)) == prompt


def test_infill_requires_exactly_one_mask(echo_runtime) -> None:
    with pytest.raises(ValueError, match="exactly one"):
        echo_runtime.infill("no markers here", 4)
    with pytest.raises(ValueError, match="exactly one"):
        echo_runtime.infill(f"a: {MASK_TOKEN}\nb: {MASK_TOKEN}", 4)


def test_sentinel_map_must_cover_both_markers() -> None:
    with pytest.raises(ValueError, match="sentinel_map"):
        BackendConfig(model_dir="m", sentinel_map={MASK_TOKEN: "<extra_id_0>"})
    with pytest.raises(ValueError, match="distinct"):
        BackendConfig(
            model_dir="m",
            sentinel_map={MASK_TOKEN: "<extra_id_0>", STOP_TOKEN: "<extra_id_0>"},
        )
    with pytest.raises(ValueError, match="max_concurrent"):
        BackendConfig(model_dir="m", max_concurrent=0)


def test_missing_model_directory_is_a_startup_error() -> None:
    with pytest.raises(RuntimeError, match="cannot load model"):
        ModelRuntime(BackendConfig(model_dir="/nonexistent/model"))


# ---------------------------------------------------------------------------
# Greedy decoding against the pinned fixtures.

def test_pinned_greedy_fixtures_over_http(base_url: str) -> None:
    cases = load_fixtures()
    assert len(cases) == 10
    for case in cases:
        resp = requests.post(
            f"{base_url}/infill",
            json={"prompt": case["prompt"], "max_new_tokens": case["max_new_tokens"]},
            timeout=10,
        )
        assert resp.status_code == 200, f"{case['name']}: {resp.text}"
        assert resp.json()["infill"] == case["infill"], case["name"]


def test_fixture_prompts_are_well_formed() -> None:
    for case in load_fixtures():
        assert case["prompt"].count(MASK_TOKEN) == 1
        assert 1 <= case["max_new_tokens"] <= MAX_NEW_TOKENS_CAP
        assert isinstance(case["infill"], str)


def test_greedy_decode_is_deterministic_across_calls(runtime) -> None:
    prompt = f"Translate Spanish to English.\nSpanish: gato{STOP_TOKEN}\nEnglish: {MASK_TOKEN}"
    assert runtime.infill(prompt, 8) == runtime.infill(prompt, 8)


def test_token_budget_caps_output_and_greedy_is_prefix_stable(runtime) -> None:
    prompt = f"Translate Spanish to English.\nSpanish: agua{STOP_TOKEN}\nEnglish: {MASK_TOKEN}"
    long = runtime.infill(prompt, 6)
    short = runtime.infill(prompt, 2)
    assert len(short.split()) <= 2
    assert len(long.split()) <= 6
    assert long.split()[:2] == short.split()


def test_decode_params_allowlist(base_url: str) -> None:
    prompt = f"q: x{STOP_TOKEN}\nout: {MASK_TOKEN}"
    ok = requests.post(
        f"{base_url}/infill",
        json={"prompt": prompt, "max_new_tokens": 4, "decode_params": {"num_beams": 2}},
        timeout=10,
    )
    assert ok.status_code == 200
    assert isinstance(ok.json()["infill"], str)
    unknown = requests.post(
        f"{base_url}/infill",
        json={"prompt": prompt, "max_new_tokens": 4, "decode_params": {"frobnicate": 1}},
        timeout=10,
    )
    assert unknown.status_code == 400
    assert "frobnicate" in unknown.json()["error"]["message"]
    bad_type = requests.post(
        f"{base_url}/infill",
        json={"prompt": prompt, "max_new_tokens": 4, "decode_params": {"temperature": "hot"}},
        timeout=10,
    )
    assert bad_type.status_code == 400


# ---------------------------------------------------------------------------
# Embeddings.

def test_embed_reports_model_tokens_and_per_token_vectors(base_url: str) -> None:
    resp = requests.post(
        f"{base_url}/embed",
        json={"texts": ["the cat sleeps", "the cat sleeps"]},
        timeout=10,
    )
    assert resp.status_code == 200
    first, second = resp.json()["results"]
    assert first["tokens"] == ["the", "cat", "sleeps"]
    assert first == second
    assert len(first["vectors"]) == len(first["tokens"])
    dims = {len(v) for r in (first, second) for v in r["vectors"]}
    assert len(dims) == 1 and dims.pop() >= 1
    for vec in first["vectors"]:
        norm = math.sqrt(sum(x * x for x in vec))
        assert norm > 0.0
        cos = sum(x * x for x in vec) / (norm * norm)
        assert cos == pytest.approx(1.0)


def test_embed_empty_text_gives_empty_result(base_url: str) -> None:
    resp = requests.post(f"{base_url}/embed", json={"texts": [""]}, timeout=10)
    assert resp.status_code == 200
    assert resp.json()["results"] == [{"tokens": [], "vectors": []}]


def test_embed_unknown_words_tokenize_as_unk(runtime) -> None:
    (tokens, vectors), = runtime.embed(["zorpish flibber"])
    assert tokens == ["<unk>", "<unk>"]
    assert len(vectors) == 2


def test_embed_rejections(base_url: str) -> None:
    for body in ({"texts": "not a list"}, {"texts": []}, {"texts": [1, 2]}, {}):
        resp = requests.post(f"{base_url}/embed", json=body, timeout=10)
        assert resp.status_code == 400, body
        err = resp.json()["error"]
        assert err["type"] and err["message"]


# ---------------------------------------------------------------------------
# HTTP edges.

def test_infill_validation_errors_over_http(base_url: str) -> None:
    prompt = f"q: x{STOP_TOKEN}\nout: {MASK_TOKEN}"
    bad_bodies = [
        {"max_new_tokens": 4},
        {"prompt": ""},
        {"prompt": prompt, "max_new_tokens": "four"},
        {"prompt": prompt, "max_new_tokens": 0},
        {"prompt": prompt, "max_new_tokens": MAX_NEW_TOKENS_CAP + 1},
        {"prompt": prompt, "decode_params": ["not", "an", "object"]},
    ]
    for body in bad_bodies:
        resp = requests.post(f"{base_url}/infill", json=body, timeout=10)
        assert resp.status_code == 400, body
        err = resp.json()["error"]
        assert err["type"] and err["message"]


def test_unreadable_body_gets_protocol_error(base_url: str) -> None:
    resp = requests.post(
        f"{base_url}/infill",
        data=b"{not json",
        headers={"Content-Type": "application/json"},
        timeout=10,
    )
    assert resp.status_code == 400
    assert resp.json()["error"]["type"] == "protocol"


def test_unknown_path_gets_error_envelope(base_url: str) -> None:
    resp = requests.get(f"{base_url}/nope", timeout=10)
    assert resp.status_code == 404
    err = resp.json()["error"]
    assert err["type"] and err["message"]


def test_health_names_the_loaded_models(base_url: str, model_dir: str) -> None:
    resp = requests.get(f"{base_url}/health", timeout=10)
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["models"] == {"infill": model_dir, "embed": model_dir}


def test_concurrent_requests_all_succeed_and_agree(base_url: str) -> None:
    case = load_fixtures()[0]
    body = {"prompt": case["prompt"], "max_new_tokens": case["max_new_tokens"]}

    def hit(_: int) -> str:
        resp = requests.post(f"{base_url}/infill", json=body, timeout=30)
        assert resp.status_code == 200
        return resp.json()["infill"]

    with ThreadPoolExecutor(max_workers=8) as pool:
        outputs = list(pool.map(hit, range(16)))
    assert set(outputs) == {case["infill"]}
