"""The iterative infill loop.

Each step renders the prompt with the output accepted so far, requests one
infill, keeps the first word (or, in the ablation mode, the whole span), and
stops when the backend emits the stop token. A repetition stripper cuts the
final output at the first adjacent repeated token window.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .backend_gateway import GenerationRequest, InfillBackend
from .prompt_kit import TaskSpec, render_prompt, render_task_prompt

FIRST_WORD = "first_word"
FULL_GENERATION = "full_generation"

FINISH_STOP = "stop_token"
FINISH_EMPTY = "empty_generation"
FINISH_MAX_STEPS = "max_steps"


@dataclass(frozen=True, slots=True)
class SapConfig:
    max_steps: int = 128
    concat_mode: str = FIRST_WORD
    repetition_min_window: int = 3
    max_new_tokens: int = 20
    decode_params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.concat_mode not in (FIRST_WORD, FULL_GENERATION):
            raise ValueError(f"unknown concat_mode: {self.concat_mode!r}")
        if self.repetition_min_window < 1:
            raise ValueError("repetition_min_window must be >= 1")


@dataclass(frozen=True, slots=True)
class SapState:
    accepted: tuple[str, ...] = ()
    step: int = 0
    finished: bool = False
    finish_reason: str = ""


@dataclass(frozen=True, slots=True)
class SapResult:
    text: str
    accepted: tuple[str, ...]
    steps: int
    finish_reason: str
    backend_calls: int


def first_word(g: str) -> str:
    """Prefix of g before the first space, after trimming leading spaces."""
    return g.lstrip(" ").split(" ", 1)[0]


def _render(task: TaskSpec, query, partial: str) -> str:
    if isinstance(query, str):
        return render_prompt(task, query, partial)
    return render_task_prompt(task, query, partial)


def sap_step(
    task: TaskSpec,
    query,
    state: SapState,
    backend: InfillBackend,
    config: SapConfig,
) -> SapState:
    """Run one prompt-infill-accept cycle.

    The query is either the source sentence or, for multi-field tasks, a
    label-to-text mapping. Stop detection scans the first-word segment of
    the infill; in full-generation mode a stop anywhere in the span ends
    the loop, keeping sentinels out of the output.
    """
    if state.finished:
        raise ValueError("sap_step called on a finished state")
    if state.step >= config.max_steps:
        raise ValueError("sap_step called past max_steps")
    prompt = _render(task, query, " ".join(state.accepted))
    req = GenerationRequest(
        prompt=prompt,
        max_new_tokens=config.max_new_tokens,
        decode_params=config.decode_params,
    )
    infill = backend.generate(req).infill
    stop = task.template.stop_token
    if not infill.strip():
        return replace(state, finished=True, finish_reason=FINISH_EMPTY)

    if config.concat_mode == FIRST_WORD:
        head = first_word(infill)
        if stop in head:
            pre = head[: head.index(stop)]
            accepted = state.accepted + (pre,) if pre else state.accepted
            return replace(
                state, accepted=accepted, finished=True, finish_reason=FINISH_STOP
            )
        return replace(state, accepted=state.accepted + (head,), step=state.step + 1)

    span = infill.strip(" ")
    if stop in span:
        pre = span[: span.index(stop)].strip(" ")
        accepted = state.accepted + (pre,) if pre else state.accepted
        return replace(
            state, accepted=accepted, finished=True, finish_reason=FINISH_STOP
        )
    return replace(state, accepted=state.accepted + (span,), step=state.step + 1)


def sap_generate(
    task: TaskSpec,
    query,
    backend: InfillBackend,
    config: SapConfig,
) -> SapResult:
    """Iterate sap_step until a stop token, empty infill, or the step cap.

    Total backend calls equal the accepted step count plus one terminating
    call, except when the cap ends the loop, where calls equal max_steps.
    """
    state = SapState()
    calls = 0
    while not state.finished and state.step < config.max_steps:
        state = sap_step(task, query, state, backend, config)
        calls += 1
    if not state.finished:
        state = replace(state, finished=True, finish_reason=FINISH_MAX_STEPS)
    text = strip_repetition(" ".join(state.accepted), config.repetition_min_window)
    return SapResult(
        text=text,
        accepted=state.accepted,
        steps=state.step,
        finish_reason=state.finish_reason,
        backend_calls=calls,
    )


def single_infill(
    task: TaskSpec,
    query,
    backend: InfillBackend,
    config: SapConfig,
) -> SapResult:
    """Ablation: one raw infill call, truncated at the stop token."""
    prompt = _render(task, query, "")
    req = GenerationRequest(
        prompt=prompt,
        max_new_tokens=config.max_new_tokens,
        decode_params=config.decode_params,
    )
    infill = backend.generate(req).infill
    stop = task.template.stop_token
    if stop in infill:
        infill = infill[: infill.index(stop)]
    text = strip_repetition(infill.strip(" "), config.repetition_min_window)
    return SapResult(
        text=text,
        accepted=(text,) if text else (),
        steps=1,
        finish_reason=FINISH_STOP,
        backend_calls=1,
    )


def strip_repetition(text: str, min_window: int) -> str:
    """Cut at the first adjacent repeated window of >= min_window tokens.

    Tokenizes on whitespace; finds the smallest window w >= min_window and
    earliest index i with tokens[i:i+w] == tokens[i+w:i+2w] and keeps
    tokens[:i+w]. Reapplies until no repeat remains, so the result is a
    fixed point.
    """
    if min_window < 1:
        raise ValueError("min_window must be >= 1")
    tokens = text.split()
    if len(tokens) < 2 * min_window:
        return text
    code_of: dict[str, int] = {}
    codes = np.empty(len(tokens), dtype=np.int64)
    for i, token in enumerate(tokens):
        codes[i] = code_of.setdefault(token, len(code_of))
    n = len(tokens)
    while True:
        cut = kernels.find_repeat(codes[:n], min_window)
        if cut < 0:
            break
        n = cut
    if n == len(tokens):
        return text
    return " ".join(tokens[:n])
