"""Build the tiny seeded seq2seq model this repo serves, then pin fixtures.

The model is a word-level-tokenized T5 with randomly initialized weights
drawn from a fixed seed. It knows nothing about language; what it gives us
is a real transformers load path, a real sentinel vocabulary, and fully
deterministic greedy decodes, all without downloading anything.

Running this script rewrites ref_backend/model/ and regenerates the pinned
greedy-infill fixtures. The fixtures are regression anchors for exactly the
committed weights: do not regenerate them unless the model changes on
purpose.

Usage, from ref_backend/ after `pip install -e .`:

    python scripts/make_tiny_model.py
"""

from __future__ import annotations

import json
from pathlib import Path

import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from transformers import PreTrainedTokenizerFast, T5Config, T5ForConditionalGeneration

from refbackend.service import BackendConfig, ModelRuntime

ROOT = Path(__file__).resolve().parents[1]
MODEL_DIR = ROOT / "model"
FIXTURES_PATH = ROOT / "tests" / "fixtures" / "infill_fixtures.json"

SEED = 20240501

SPECIALS = ["<pad>", "<eos>", "<unk>"] + [f"<extra_id_{i}>" for i in range(100)]

WORDS = """
the a an and or of to in on at is are was were be been it this that
he she they we you i his her its their our your not no yes all some
one two three four five six seven eight nine ten
cat dog bird fish horse tree trees house garden river city road sky
sun moon star rain snow wind cloud weather morning evening night day
red green blue white black small big old new good bad warm cold
eats sleeps runs walks sings reads writes sees likes wants makes says
water bread milk coffee tea apple book table chair door window friend
man woman child family name time year world country word language
Translate Spanish English German French Pivotish Sourcish Targetish
Question Answer Context Summary Document Summarize given
gato perro casa agua libro duerme come grande bonito Hola
Katze Hund Haus Wasser Buch heute Wetter ist sehr nett
chat chien maison eau livre aussi bien
abc xyz foo bar baz
. , : ; ? ! ' " ( ) -
0 1 2 3 4 5 6 7 8 9
""".split()


def build_tokenizer() -> PreTrainedTokenizerFast:
    tokens = SPECIALS + WORDS
    assert len(set(tokens)) == len(tokens), "vocabulary entries must be unique"
    vocab = {tok: i for i, tok in enumerate(tokens)}
    raw = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    raw.pre_tokenizer = Whitespace()
    raw.add_special_tokens(SPECIALS)
    return PreTrainedTokenizerFast(
        tokenizer_object=raw,
        pad_token="<pad>",
        eos_token="<eos>",
        unk_token="<unk>",
        additional_special_tokens=[f"<extra_id_{i}>" for i in range(100)],
        model_max_length=512,
    )


def build_model(tokenizer: PreTrainedTokenizerFast) -> T5ForConditionalGeneration:
    config = T5Config(
        vocab_size=len(tokenizer.get_vocab()),
        d_model=32,
        d_kv=16,
        d_ff=64,
        num_layers=2,
        num_decoder_layers=2,
        num_heads=2,
        relative_attention_num_buckets=8,
        relative_attention_max_distance=32,
        dropout_rate=0.0,
        pad_token_id=tokenizer.pad_token_id,
        eos_token_id=tokenizer.eos_token_id,
        decoder_start_token_id=tokenizer.pad_token_id,
    )
    torch.manual_seed(SEED)
    model = T5ForConditionalGeneration(config)
    model.eval()
    return model


def fixture_prompts() -> list[dict[str, object]]:
    """Ten engine-shaped prompts with varied layouts and budgets."""
    cases: list[dict[str, object]] = [
        {
            "name": "zero_shot_es_en",
            "prompt": "Translate Spanish to English.\nSpanish: Hola.</s>\nEnglish: <X>",
            "max_new_tokens": 8,
        },
        {
            "name": "two_shot_es_en",
            "prompt": (
                "Translate Spanish to English.\n"
                "Spanish: gato</s>\nEnglish: cat</s>\n"
                "Spanish: perro</s>\nEnglish: dog</s>\n"
                "Spanish: el gato duerme</s>\nEnglish: <X>"
            ),
            "max_new_tokens": 8,
        },
        {
            "name": "partial_continuation",
            "prompt": (
                "Translate Spanish to English.\n"
                "Spanish: el gato duerme</s>\n"
                "English: the <X>"
            ),
            "max_new_tokens": 8,
        },
        {
            "name": "zero_shot_de_en",
            "prompt": (
                "Translate German to English.\n"
                "German: das Wetter ist heute sehr nett</s>\n"
                "English: <X>"
            ),
            "max_new_tokens": 8,
        },
        {
            "name": "question_answering",
            "prompt": (
                "Answer the Question given the Context.\n"
                "Context: the cat sleeps in the garden</s>\n"
                "Question: where is the cat</s>\n"
                "Answer: <X>"
            ),
            "max_new_tokens": 12,
        },
        {
            "name": "summarization",
            "prompt": (
                "Summarize the Document in one sentence.\n"
                "Document: the rain fell all morning and the river rose</s>\n"
                "Summary: <X>"
            ),
            "max_new_tokens": 12,
        },
        {
            "name": "unknown_words_pass_through_unk",
            "prompt": (
                "Translate Sourcish to Targetish.\n"
                "Sourcish: zorp flibber quux</s>\n"
                "Targetish: <X>"
            ),
            "max_new_tokens": 8,
        },
        {
            "name": "three_shot_fr_en",
            "prompt": (
                "Translate French to English.\n"
                "French: chat</s>\nEnglish: cat</s>\n"
                "French: chien</s>\nEnglish: dog</s>\n"
                "French: maison</s>\nEnglish: house</s>\n"
                "French: le chat aussi</s>\nEnglish: <X>"
            ),
            "max_new_tokens": 16,
        },
    ]
    return cases


def main() -> None:
    tokenizer = build_tokenizer()
    model = build_model(tokenizer)
    MODEL_DIR.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(MODEL_DIR)
    tokenizer.save_pretrained(MODEL_DIR)
    params = sum(p.numel() for p in model.parameters())
    print(f"saved model ({params} params, vocab {model.config.vocab_size}) to {MODEL_DIR}")

    runtime = ModelRuntime(BackendConfig(model_dir=str(MODEL_DIR)))
    cases = fixture_prompts()
    for case in cases:
        case["infill"] = runtime.infill(case["prompt"], case["max_new_tokens"])

    # A one-token decode, then the same prompt with that token folded into
    # the partial line: pins the fold-in sequence the engine drives.
    first_prompt = "Translate Spanish to English.\nSpanish: agua</s>\nEnglish: <X>"
    first = runtime.infill(first_prompt, 1)
    cases.append(
        {
            "name": "one_token_budget",
            "prompt": first_prompt,
            "max_new_tokens": 1,
            "infill": first,
        }
    )
    folded = (
        "Translate Spanish to English.\n"
        "Spanish: agua</s>\n"
        f"English: {first} <X>"
    )
    cases.append(
        {
            "name": "one_token_then_fold_in",
            "prompt": folded,
            "max_new_tokens": 8,
            "infill": runtime.infill(folded, 8),
        }
    )

    FIXTURES_PATH.parent.mkdir(parents=True, exist_ok=True)
    payload = {"decoding": "greedy", "cases": cases}
    FIXTURES_PATH.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"pinned {len(cases)} greedy fixtures to {FIXTURES_PATH}")
    for case in cases:
        print(f"  {case['name']}: {case['infill']!r}")


if __name__ == "__main__":
    main()
