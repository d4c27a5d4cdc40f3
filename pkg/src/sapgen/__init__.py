"""Iterative mask-infill prompting engine.

Turns short-span infill models into long-form generators by repeatedly
prompting, accepting one word per step, and folding accepted words back
into the prompt. Ships the unsupervised translation bootstrap, prompt
ensembling, pivot strategies, evaluation metrics, mock backends, and the
operator CLI.
"""

from .backend_gateway import (
    EmbeddingRequest,
    GenerationRequest,
    HttpBackend,
    MockEmbedder,
    MockInfillBackend,
    ProtocolError,
    TransportError,
    make_mock_spec,
)
from .bootstrap import BootstrapConfig, IntegrityError, ScoringContext, run_bootstrap
from .ensemble import build_ensemble, translate_ensemble
from .eval_metrics import BleuConfig, corpus_bleu, qa_em_f1, rouge_l
from .prompt_kit import Example, LangTag, PromptTemplate, TaskSpec, translation_task
from .sap_core import SapConfig, sap_generate, single_infill, strip_repetition
from .scoring import detect_language, filter_candidates, pivot_score, similarity

__version__ = "0.1.0"

__all__ = [
    "BleuConfig",
    "BootstrapConfig",
    "EmbeddingRequest",
    "Example",
    "GenerationRequest",
    "HttpBackend",
    "IntegrityError",
    "LangTag",
    "MockEmbedder",
    "MockInfillBackend",
    "PromptTemplate",
    "ProtocolError",
    "SapConfig",
    "ScoringContext",
    "TaskSpec",
    "TransportError",
    "__version__",
    "build_ensemble",
    "corpus_bleu",
    "detect_language",
    "filter_candidates",
    "make_mock_spec",
    "pivot_score",
    "qa_em_f1",
    "rouge_l",
    "run_bootstrap",
    "sap_generate",
    "similarity",
    "single_infill",
    "strip_repetition",
    "translate_ensemble",
    "translation_task",
]
