"""JSON schemas for structured judge outputs and the dataset export files.

Judge schemas back ``Gateway.complete_json``; export schemas are the
published contracts for the five training-data files and are enforced
line-by-line on write (and by ``validate_export_lines`` for audits).
"""

from __future__ import annotations

from typing import Any, Iterable

import jsonschema

_CONFIDENCE = {"type": "string", "enum": ["high", "moderate", "low"]}

_TREE_NODE = {
    "type": "object",
    "properties": {
        "criteria": {"type": "string"},
        "branches": {
            "type": "object",
            "properties": {
                "yes": {"$ref": "#/$defs/node"},
                "no": {"$ref": "#/$defs/node"},
            },
            "additionalProperties": False,
        },
        "diagnoses": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "condition": {"type": "string", "minLength": 1},
                    "confidence": _CONFIDENCE,
                    "is_final": {"type": "boolean"},
                },
                "required": ["condition", "confidence", "is_final"],
            },
        },
    },
}

_CHAT_MESSAGE = {
    "type": "object",
    "properties": {
        "role": {"type": "string", "enum": ["system", "user", "assistant"]},
        "content": {"type": "string", "minLength": 1},
    },
    "required": ["role", "content"],
}

JUDGE_SCHEMAS: dict[str, dict[str, Any]] = {
    "decision_tree": {
        "type": "object",
        "properties": {"tree": {"$ref": "#/$defs/node"}},
        "required": ["tree"],
        "$defs": {"node": _TREE_NODE},
    },
    "generated_dialogue": {
        "type": "object",
        "properties": {
            "conversation": {
                "type": "array",
                "minItems": 2,
                "items": {
                    "type": "object",
                    "properties": {
                        "role": {"type": "string", "enum": ["patient", "doctor"]},
                        "content": {"type": "string", "minLength": 1},
                    },
                    "required": ["role", "content"],
                },
            },
            "preliminary_diagnosis": {
                "type": "array",
                "minItems": 5,
                "maxItems": 5,
                "items": {
                    "type": "object",
                    "properties": {
                        "disease": {"type": "string", "minLength": 1},
                        "reason": {"type": "string"},
                    },
                    "required": ["disease"],
                },
            },
        },
        "required": ["conversation", "preliminary_diagnosis"],
    },
    "revision_actions": {
        "type": "object",
        "properties": {
            "critic_res": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "action": {"type": "string", "enum": ["add_turn", "revise_turn"]},
                        "location": {"type": "integer", "minimum": 0},
                        "doctor": {"type": "string"},
                        "patient": {"type": "string"},
                        "comment": {"type": "string"},
                    },
                    "required": ["action", "location"],
                },
            }
        },
        "required": ["critic_res"],
    },
    "finding_alignment": {
        "type": "array",
        "items": {
            "type": "object",
            "properties": {
                "index": {"type": "integer", "minimum": 0},
                "sentence": {"type": "string"},
                "turn": {"type": "integer", "minimum": -1},
            },
            "required": ["index", "turn"],
        },
    },
    "diagnosis_match": {
        "type": "object",
        "properties": {"match_index": {"type": ["integer", "null"], "minimum": -1}},
        "required": ["match_index"],
    },
    "finding_selection": {
        "type": "object",
        "properties": {
            "selected": {"type": "array", "items": {"type": "integer", "minimum": 0}}
        },
        "required": ["selected"],
    },
    "socrates_category": {
        "type": "object",
        "properties": {
            "category": {
                "type": "string",
                "enum": [
                    "Site",
                    "Onset",
                    "Character",
                    "Radiation",
                    "AssociatedSymptoms",
                    "Timing",
                    "ExacerbatingRelieving",
                    "Severity",
                    "History",
                ],
            }
        },
        "required": ["category"],
    },
    "patient_audit": {
        "type": "object",
        "properties": {
            "unsolicited_disclosure": {"type": "boolean"},
            "factual_conflict": {"type": "boolean"},
        },
        "required": ["unsolicited_disclosure", "factual_conflict"],
    },
}

_SFT_RECORD = {
    "type": "object",
    "properties": {
        "case_id": {"type": "string", "minLength": 1},
        "provenance": {"type": "string", "enum": ["curated", "self_augmented"]},
        "system_prompt_id": {"type": "string", "minLength": 1},
        "messages": {"type": "array", "minItems": 2, "items": _CHAT_MESSAGE},
    },
    "required": ["case_id", "provenance", "system_prompt_id", "messages"],
}

_PREFERENCE_PAIR = {
    "type": "object",
    "properties": {
        "case_id": {"type": "string", "minLength": 1},
        "granularity": {"type": "string", "enum": ["dialogue", "turn"]},
        "context": {"type": "array", "minItems": 1, "items": _CHAT_MESSAGE},
        "chosen": {"type": "string", "minLength": 1},
        "rejected": {"type": "string", "minLength": 1},
        "chosen_reward": {"type": "number"},
        "rejected_reward": {"type": "number"},
    },
    "required": [
        "case_id",
        "granularity",
        "context",
        "chosen",
        "rejected",
        "chosen_reward",
        "rejected_reward",
    ],
}

_ST_UNIT = {
    "type": "object",
    "properties": {
        "case_id": {"type": "string", "minLength": 1},
        "turn_index": {"type": "integer", "minimum": 1},
        "context": {"type": "array", "minItems": 2, "items": _CHAT_MESSAGE},
        "response": {"type": "string", "minLength": 1},
    },
    "required": ["case_id", "turn_index", "context", "response"],
}

EXPORT_SCHEMAS: dict[str, dict[str, Any]] = {
    "sft": _SFT_RECORD,
    "self_aug": _SFT_RECORD,
    "mt_pairs": _PREFERENCE_PAIR,
    "st_units": _ST_UNIT,
    "st_pairs": _PREFERENCE_PAIR,
}


def judge_schema(schema_id: str) -> dict[str, Any]:
    try:
        return JUDGE_SCHEMAS[schema_id]
    except KeyError:
        raise KeyError(f"unregistered judge schema: {schema_id!r}") from None


def validate_against(schema: dict[str, Any], value: Any) -> None:
    """Raise jsonschema.ValidationError on mismatch."""
    jsonschema.validate(instance=value, schema=schema)


def validate_export_lines(name: str, lines: Iterable[str]) -> list[tuple[int, str]]:
    """Validate JSONL lines against a published export schema.

    Returns (1-based line number, error message) per bad line so corrupt
    files can be reported with line accuracy.
    """
    import json

    schema = EXPORT_SCHEMAS[name]
    errors: list[tuple[int, str]] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            value = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append((lineno, f"invalid JSON: {exc}"))
            continue
        try:
            validate_against(schema, value)
        except jsonschema.ValidationError as exc:
            errors.append((lineno, exc.message))
    return errors
