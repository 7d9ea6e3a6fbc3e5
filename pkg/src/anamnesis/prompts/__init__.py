"""Versioned prompt templates.

Templates live as plain text files under ``templates/`` and are loaded
byte-for-byte; placeholders look like ``{chief_complaint}``. Because several
templates embed literal JSON braces, rendering substitutes only the named
fields passed by the caller and leaves every other brace untouched
(``str.format`` would choke on the JSON examples).
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

TEMPLATES_VERSION = "1"

# Exact sentinel replies the patient prompt mandates; the rollout harness
# tags turns that match them verbatim.
SENTINEL_DONT_KNOW = "I don't know."
SENTINEL_REPEATED = "Sorry, you've already asked this question."

TEMPLATE_NAMES = (
    "decision_tree_generation",
    "dialogue_generation",
    "dialogue_revision",
    "doctor_fine_tuned",
    "doctor_pre_trained",
    "doctor_forced_diagnosis",
    "patient_vignette",
    "history_summarization",
    "clinical_plan",
    "differential_diagnosis_reasoning",
    "finding_check",
    "diagnosis_match",
    "finding_extraction",
    "socrates_classification",
    "patient_audit",
)


class UnknownTemplate(KeyError):
    pass


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise UnknownTemplate(name)
    ref = resources.files(__package__).joinpath("templates").joinpath(f"{name}.txt")
    return ref.read_text(encoding="utf-8")


def render(name: str, **fields: str) -> str:
    """Fill ``{field}`` slots for the given keys only; all other braces
    (e.g. the JSON format examples inside templates) pass through."""
    text = load_template(name)
    for key, value in fields.items():
        slot = "{" + key + "}"
        if slot not in text:
            raise KeyError(f"template {name!r} has no slot {slot}")
        text = text.replace(slot, str(value))
    return text
