"""Deterministic prompt assembly with per-fact provenance.

The rendered prompt is: instruction block, blank line, data block, blank
line, History block (omitted when empty), blank line, Question line.
The data block is:

    Persona: <DisplayName>.
    Patient Name: <name>.
    Conditions: <fact>; <fact>.
    Medications: ...
    Observations: ...
    Procedures: ...

Facts join with "; " and each segment line ends with a period; an empty
segment reads "none recorded". The persona choice changes only the
instruction and the Persona line, never the data segments.

Facts are short clinical display strings; the grammar does not escape an
embedded "; ", so parse_data_block would split such a fact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .personas import Persona

SEGMENT_LABELS = ("Conditions", "Medications", "Observations", "Procedures")
EMPTY_SEGMENT = "none recorded"
DEFAULT_HISTORY_WINDOW = 10


class PromptGrammarError(ValueError):
    """A data block that does not follow the prompt grammar."""


@dataclass(frozen=True)
class ContextPrompt:
    instruction: str
    persona_line: str
    patient_line: str
    segments: tuple[tuple[str, tuple[str, ...]], ...]
    history: tuple[tuple[str, str], ...]
    question: str
    provenance_index: Mapping[str, tuple[str, ...]]

    def data_block(self) -> str:
        lines = [self.persona_line, self.patient_line]
        for label, facts in self.segments:
            body = "; ".join(facts) if facts else EMPTY_SEGMENT
            lines.append(f"{label}: {body}.")
        return "\n".join(lines)

    def user_text(self) -> str:
        parts = [self.data_block()]
        if self.history:
            turns = []
            for question, answer in self.history:
                turns.append(f"Q: {question}")
                turns.append(f"A: {answer}")
            parts.append("History:\n" + "\n".join(turns))
        parts.append(f"Question: {self.question}")
        return "\n\n".join(parts)

    def render(self) -> str:
        return f"{self.instruction}\n\n{self.user_text()}"

    def provenance_set(self) -> tuple[str, ...]:
        """Sorted union of references for every fact in the data segments."""
        refs: set[str] = set()
        for _, facts in self.segments:
            for fact in facts:
                refs.update(self.provenance_index.get(fact, ()))
        return tuple(sorted(refs))


def compose_prompt(
    persona: Persona,
    context: "PatientContext",
    question: str,
    history: Sequence[tuple[str, str]] = (),
    max_history: int = DEFAULT_HISTORY_WINDOW,
) -> ContextPrompt:
    """Pure assembly: identical inputs yield byte-identical prompts."""
    window = tuple(history)[-max_history:] if max_history > 0 else ()
    return ContextPrompt(
        instruction=persona.instruction,
        persona_line=f"Persona: {persona.display_name}.",
        patient_line=f"Patient Name: {context.patient.name}.",
        segments=(
            ("Conditions", context.condition_facts),
            ("Medications", context.medication_facts),
            ("Observations", context.observation_facts),
            ("Procedures", context.procedure_facts),
        ),
        history=window,
        question=question,
        provenance_index=context.provenance,
    )


def parse_data_block(user_text: str) -> tuple[str, dict[str, list[str]]]:
    """Recover (persona name, facts per segment) from a prompt's user text.

    The deterministic mock provider uses this; failure signals drift
    between prompt assembly and the grammar.
    """
    lines = user_text.split("\n")
    if not lines or not lines[0].startswith("Persona: ") or not lines[0].endswith("."):
        raise PromptGrammarError("data block must start with a Persona line")
    persona_name = lines[0][len("Persona: ") : -1]
    if not persona_name:
        raise PromptGrammarError("empty persona name")
    if len(lines) < 2 or not lines[1].startswith("Patient Name: ") or not lines[1].endswith("."):
        raise PromptGrammarError("second line must be the Patient Name line")
    segments: dict[str, list[str]] = {}
    for offset, label in enumerate(SEGMENT_LABELS):
        index = 2 + offset
        prefix = f"{label}: "
        if index >= len(lines) or not lines[index].startswith(prefix) or not lines[index].endswith("."):
            raise PromptGrammarError(f"missing or malformed segment line for {label}")
        body = lines[index][len(prefix) : -1]
        segments[label] = [] if body == EMPTY_SEGMENT else body.split("; ")
        if any(not fact for fact in segments[label]):
            raise PromptGrammarError(f"empty fact in segment {label}")
    return persona_name, segments
