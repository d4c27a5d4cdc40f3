"""Tasks, examples, and prompt templates.

Renders the exact prompt strings an infill backend consumes: an instruction
line, demonstration pairs, the query line, and a final target line carrying
the partial output and a single mask token.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

TRANSLATION = "translation"
QUESTION_ANSWERING = "question_answering"
SUMMARIZATION = "summarization"

TASK_KINDS = (TRANSLATION, QUESTION_ANSWERING, SUMMARIZATION)

DEFAULT_MASK_TOKEN = "<X>"
DEFAULT_STOP_TOKEN = "</s>"


@dataclass(frozen=True, slots=True)
class LangTag:
    """A language identity: short code plus the name used inside prompts."""

    code: str
    display_name: str

    def __post_init__(self) -> None:
        if not self.code or not self.code.islower() or len(self.code) > 8:
            raise ValueError(
                f"lang code must be non-empty lowercase, <= 8 chars: {self.code!r}"
            )
        if not self.display_name:
            raise ValueError("display_name must be non-empty")


@dataclass(frozen=True, slots=True)
class Example:
    """One parallel pair used as an in-context demonstration."""

    source_text: str
    target_text: str
    source_lang: LangTag
    target_lang: LangTag

    def __post_init__(self) -> None:
        if not self.source_text.strip():
            raise ValueError("source_text must be non-empty")
        if not self.target_text.strip():
            raise ValueError("target_text must be non-empty")
        if self.source_lang.code == self.target_lang.code:
            raise ValueError("source_lang and target_lang must differ")


def reverse_example(e: Example) -> Example:
    """Swap source and target, texts and tags together."""
    return Example(
        source_text=e.target_text,
        target_text=e.source_text,
        source_lang=e.target_lang,
        target_lang=e.source_lang,
    )


@dataclass(frozen=True, slots=True)
class PromptTemplate:
    """Layout of one prompt: instruction, field labels, sentinel tokens.

    ``input_labels`` lists the labels of the input field lines, in render
    order; it defaults to just ``source_label``. Multi-field tasks (QA) set
    it to e.g. ("Context", "Question").
    """

    instruction: str
    source_label: str
    target_label: str
    mask_token: str = DEFAULT_MASK_TOKEN
    stop_token: str = DEFAULT_STOP_TOKEN
    example_separator: str = "\n"
    input_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.mask_token or not self.stop_token:
            raise ValueError("mask_token and stop_token must be non-empty")
        if self.mask_token == self.stop_token:
            raise ValueError("mask_token must differ from stop_token")
        labels = (self.source_label, self.target_label) + self.input_labels
        for text in (self.instruction,) + labels:
            if self.mask_token in text or self.stop_token in text:
                raise ValueError(
                    "sentinel tokens must not occur in instruction or labels"
                )
        if self.input_labels and self.source_label not in self.input_labels:
            raise ValueError("input_labels must include source_label")

    @property
    def effective_input_labels(self) -> tuple[str, ...]:
        return self.input_labels if self.input_labels else (self.source_label,)


@dataclass(frozen=True, slots=True)
class TaskSpec:
    """A task: its kind, prompt template, and demonstration shots.

    Translation shots are Examples. Multi-field tasks supply
    ``fielded_shots``: one mapping per shot covering every input label plus
    the target label.
    """

    kind: str
    template: PromptTemplate
    shots: tuple[Example, ...] = ()
    fielded_shots: tuple[Mapping[str, str], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind: {self.kind!r}")
        if self.shots and self.fielded_shots:
            raise ValueError("supply shots or fielded_shots, not both")
        if self.kind == TRANSLATION and self.shots:
            direction = (self.shots[0].source_lang.code, self.shots[0].target_lang.code)
            for shot in self.shots:
                if (shot.source_lang.code, shot.target_lang.code) != direction:
                    raise ValueError("translation shots must share one direction")
        needed = set(self.template.effective_input_labels) | {self.template.target_label}
        for fs in self.fielded_shots:
            missing = needed - set(fs)
            if missing:
                raise ValueError(f"fielded shot missing labels: {sorted(missing)}")


def translation_task(
    source_lang: LangTag,
    target_lang: LangTag,
    shots: tuple[Example, ...] = (),
    mask_token: str = DEFAULT_MASK_TOKEN,
    stop_token: str = DEFAULT_STOP_TOKEN,
) -> TaskSpec:
    """Build the standard translation task for a language direction."""
    template = PromptTemplate(
        instruction=(
            f"Translate {source_lang.display_name} to {target_lang.display_name}."
        ),
        source_label=source_lang.display_name,
        target_label=target_lang.display_name,
        mask_token=mask_token,
        stop_token=stop_token,
    )
    return TaskSpec(kind=TRANSLATION, template=template, shots=shots)


def qa_task(
    fielded_shots: tuple[Mapping[str, str], ...] = (),
    context_label: str = "Context",
    question_label: str = "Question",
    answer_label: str = "Answer",
    instruction: str = "Answer the question using the context.",
) -> TaskSpec:
    template = PromptTemplate(
        instruction=instruction,
        source_label=context_label,
        target_label=answer_label,
        input_labels=(context_label, question_label),
    )
    return TaskSpec(
        kind=QUESTION_ANSWERING, template=template, fielded_shots=fielded_shots
    )


def summarization_task(
    fielded_shots: tuple[Mapping[str, str], ...] = (),
    article_label: str = "Article",
    summary_label: str = "Summary",
    instruction: str = "Summarize the article.",
) -> TaskSpec:
    template = PromptTemplate(
        instruction=instruction,
        source_label=article_label,
        target_label=summary_label,
    )
    return TaskSpec(
        kind=SUMMARIZATION, template=template, fielded_shots=fielded_shots
    )


def with_shots(task: TaskSpec, shots: tuple[Example, ...]) -> TaskSpec:
    return replace(task, shots=shots, fielded_shots=())


def _check_payload(template: PromptTemplate, label: str, text: str) -> None:
    if template.mask_token in text or template.stop_token in text:
        raise ValueError(
            f"{label} text contains a sentinel token (corpus contamination?)"
        )


def render_task_prompt(
    task: TaskSpec, fields: Mapping[str, str], partial_output: str
) -> str:
    """Render the prompt for arbitrary labeled input fields.

    Every input field line and each shot line ends with the stop token; the
    final line is the target label, the partial output, and one mask token.
    """
    template = task.template
    input_labels = template.effective_input_labels
    for label in input_labels:
        if label not in fields:
            raise ValueError(f"missing field: {label!r}")
        _check_payload(template, label, fields[label])

    lines = [template.instruction]
    if task.shots:
        for shot in task.shots:
            _check_payload(template, "shot source", shot.source_text)
            _check_payload(template, "shot target", shot.target_text)
            lines.append(
                f"{template.source_label}: {shot.source_text}{template.stop_token}"
            )
            lines.append(
                f"{template.target_label}: {shot.target_text}{template.stop_token}"
            )
    for fs in task.fielded_shots:
        for label in input_labels:
            _check_payload(template, label, fs[label])
            lines.append(f"{label}: {fs[label]}{template.stop_token}")
        _check_payload(template, "shot target", fs[template.target_label])
        lines.append(
            f"{template.target_label}: {fs[template.target_label]}{template.stop_token}"
        )
    for label in input_labels:
        lines.append(f"{label}: {fields[label]}{template.stop_token}")
    if partial_output:
        last = f"{template.target_label}: {partial_output} {template.mask_token}"
    else:
        last = f"{template.target_label}: {template.mask_token}"
    lines.append(last)
    return template.example_separator.join(lines)


def render_prompt(task: TaskSpec, query: str, partial_output: str) -> str:
    """Render the single-input prompt for a query sentence."""
    if not query:
        raise ValueError("query must be non-empty")
    return render_task_prompt(task, {task.template.source_label: query}, partial_output)
