"""Persona registry: instruction text, reading level, question templates.

The clinician entries are the canonical ones; the caregiver and patient
instruction/question sets are authored analogues (see README).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Persona:
    id: str
    display_name: str
    instruction: str
    reading_level: str  # "professional" or "plain"
    predefined_questions: tuple[str, ...]

    def __post_init__(self):
        if not self.instruction:
            raise ValueError("persona instruction must be non-empty")
        if not self.predefined_questions:
            raise ValueError("persona must have predefined questions")


CLINICIAN_QUESTIONS = (
    "What treatment options are available for this patient's conditions?",
    "Summarize the medications and conditions for this patient.",
    "List recent procedures and relevant laboratory insights.",
)

PERSONAS: dict[str, Persona] = {
    persona.id: persona
    for persona in (
        Persona(
            id="clinician",
            display_name="Clinician",
            instruction="You are a helpful assistant for a clinician working with EHRs",
            reading_level="professional",
            predefined_questions=CLINICIAN_QUESTIONS,
        ),
        Persona(
            id="caregiver",
            display_name="Caregiver",
            instruction=(
                "You are a helpful assistant for a family caregiver. Explain the patient's "
                "health information in plain, non-technical language and point out what to "
                "discuss with the care team."
            ),
            reading_level="plain",
            predefined_questions=(
                "What do these conditions mean for day-to-day care?",
                "Are there medication routines or side effects to watch for?",
                "Which recent results should we bring up with the care team?",
            ),
        ),
        Persona(
            id="patient",
            display_name="Patient",
            instruction=(
                "You are a helpful assistant speaking directly to a patient about their own "
                "health record. Use plain language, avoid jargon, and be accurate."
            ),
            reading_level="plain",
            predefined_questions=(
                "What do my conditions mean in plain language?",
                "Why am I taking each of my medications?",
                "What did my recent tests show?",
            ),
        ),
    )
}


def get_persona(persona_id: str) -> Persona:
    persona = PERSONAS.get(persona_id)
    if persona is None:
        raise KeyError(f"unknown persona {persona_id!r}; expected one of {', '.join(PERSONAS)}")
    return persona
