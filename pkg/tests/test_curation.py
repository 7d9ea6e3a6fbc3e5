from __future__ import annotations

import json

import pytest

from anamnesis.curation import (
    CurationLlms,
    EmptyExtraction,
    GeneratedDialogue,
    LocationOutOfRange,
    MissingFinalDiagnosis,
    RawNote,
    RevisionAction,
    StructureError,
    apply_revision_actions,
    build_decision_tree,
    critique_and_revise,
    curate_case,
    extract_findings,
    filter_notes,
    find_missing_facts,
    generate_dialogue,
    split_sentences,
    word_count,
)
from anamnesis.domain import Turn
from anamnesis.gateway import EndpointProfile

from conftest import ScriptedTransport, make_gateway, ok_body

ENDPOINT = EndpointProfile(base_url="http://example.test", model_name="m")


def note(n_words: int, diagnosis: str = "Pneumonia") -> RawNote:
    return RawNote(
        note_id="n1",
        chief_complaint="Cough and fever.",
        hpi=" ".join(["word"] * n_words),
        diagnosis=diagnosis,
    )


# -- filtering ------------------------------------------------------------------

def test_note_with_99_words_excluded():
    assert filter_notes([note(99)]) == []


def test_note_missing_diagnosis_excluded():
    assert filter_notes([note(250, diagnosis="")]) == []


def test_note_with_250_words_and_diagnosis_included():
    kept = filter_notes([note(250)])
    assert len(kept) == 1 and kept[0].word_count == 250


def test_filter_notes_pure():
    notes = [note(99), note(100), note(250)]
    assert filter_notes(notes) == filter_notes(notes)


def test_word_count_is_whitespace_tokens():
    assert word_count("one  two\nthree") == 3


# -- finding extraction ------------------------------------------------------------

def _extraction_note(sentences: list[str]) -> RawNote:
    return RawNote(note_id="n1", chief_complaint="cc", hpi=" ".join(sentences), diagnosis="dx")


def test_extract_findings_selected_sentences():
    sentences = [
        "The cough began three days ago.",
        "A chest x-ray showed an opacity.",
        "Fevers reached 38.9 degrees.",
    ]
    gw = make_gateway(ScriptedTransport([(200, ok_body('{"selected": [0, 2]}'))]))
    findings = extract_findings(_extraction_note(sentences), ENDPOINT, gw)
    assert [f.text for f in findings] == [sentences[0], sentences[2]]
    assert [f.finding_id for f in findings] == [0, 1]


def test_extract_findings_empty_raises():
    gw = make_gateway(ScriptedTransport([(200, ok_body('{"selected": []}'))]))
    with pytest.raises(EmptyExtraction):
        extract_findings(_extraction_note(["Only lab values here."]), ENDPOINT, gw)


def test_extract_findings_idempotent_under_deterministic_mock(mock_gateway, mock_endpoint):
    sentences = [
        "The cough began three days ago.",
        "A chest x-ray showed an opacity.",
        "Fevers reached 38.9 degrees.",
    ]
    a = extract_findings(_extraction_note(sentences), mock_endpoint, mock_gateway)
    b = extract_findings(_extraction_note(sentences), mock_endpoint, mock_gateway)
    assert a == b
    assert [f.text for f in a] == [sentences[0], sentences[2]]


def test_split_sentences_handles_decimals():
    assert split_sentences("Fever reached 38.9 degrees. It persisted.") == [
        "Fever reached 38.9 degrees.",
        "It persisted.",
    ]


# -- decision tree -----------------------------------------------------------------

def test_minimal_valid_tree_accepted(case):
    body = json.dumps(
        {"tree": {"criteria": "root", "diagnoses": [{"condition": case.dx, "confidence": "high", "is_final": True}]}}
    )
    gw = make_gateway(ScriptedTransport([(200, ok_body(body))]))
    tree = build_decision_tree(case, ENDPOINT, gw)
    assert tree.terminals()[0].is_final


def test_tree_without_final_rejected(case):
    body = json.dumps(
        {"tree": {"criteria": "root", "diagnoses": [{"condition": "x", "confidence": "low", "is_final": False}]}}
    )
    gw = make_gateway(ScriptedTransport([(200, ok_body(body)), (200, ok_body(body))]))
    with pytest.raises(MissingFinalDiagnosis):
        build_decision_tree(case, ENDPOINT, gw)


def test_scripted_tree_covers_differentials(case, mock_gateway, mock_endpoint):
    tree = build_decision_tree(case, mock_endpoint, mock_gateway)
    conditions = {t.condition for t in tree.terminals()}
    assert case.dx in conditions and len(conditions) >= 3


# -- dialogue generation --------------------------------------------------------------

def test_generate_dialogue_alternates_and_ends_on_doctor(case, mock_gateway, mock_endpoint):
    tree = build_decision_tree(case, mock_endpoint, mock_gateway)
    dialogue = generate_dialogue(case, tree, mock_endpoint, mock_gateway)
    roles = [t.role for t in dialogue.conversation]
    assert roles[0] == "patient" and roles[-1] == "doctor"
    assert all(r == ("patient" if i % 2 == 0 else "doctor") for i, r in enumerate(roles))
    assert len(dialogue.preliminary_diagnosis) == 5


# -- missing facts ----------------------------------------------------------------------

def _dialogue(contents: list[tuple[str, str]]) -> GeneratedDialogue:
    return GeneratedDialogue(
        conversation=tuple(Turn(i, role, text) for i, (role, text) in enumerate(contents)),
        preliminary_diagnosis=(("A", ""),),
    )


def test_find_missing_facts_full_coverage(case):
    body = ok_body(json.dumps([{"index": i, "sentence": "s", "turn": 0} for i in range(4)]))
    gw = make_gateway(ScriptedTransport([(200, body)]))
    dialogue = _dialogue([("patient", "everything")])
    assert find_missing_facts(case, dialogue, ENDPOINT, gw) == []


def test_find_missing_facts_partial(case):
    body = ok_body(
        json.dumps(
            [
                {"index": 0, "sentence": "s", "turn": 0},
                {"index": 1, "sentence": "s", "turn": -1},
                {"index": 2, "sentence": "s", "turn": 0},
                {"index": 3, "sentence": "s", "turn": -1},
            ]
        )
    )
    gw = make_gateway(ScriptedTransport([(200, body)]))
    dialogue = _dialogue([("patient", "some things")])
    assert find_missing_facts(case, dialogue, ENDPOINT, gw) == [1, 3]


def test_find_missing_facts_empty_dialogue_is_everything(case):
    gw = make_gateway(ScriptedTransport([]))
    dialogue = GeneratedDialogue(conversation=(), preliminary_diagnosis=())
    assert find_missing_facts(case, dialogue, ENDPOINT, gw) == [0, 1, 2, 3]


# -- revision mechanics --------------------------------------------------------------------

def _six_turn_dialogue() -> GeneratedDialogue:
    return _dialogue(
        [
            ("patient", "P0"),
            ("doctor", "D1"),
            ("patient", "P2"),
            ("doctor", "D3"),
            ("patient", "P4"),
            ("doctor", "D5"),
        ]
    )


def test_add_turn_at_location_2_lands_at_3_and_4():
    revised = apply_revision_actions(
        _six_turn_dialogue(),
        [RevisionAction(action="add_turn", location=2, doctor="Dnew", patient="Pnew")],
    )
    contents = [t.content for t in revised.conversation]
    assert contents == ["P0", "D1", "P2", "Dnew", "Pnew", "D3", "P4", "D5"]
    assert [t.index for t in revised.conversation] == list(range(8))


def test_revise_turn_replaces_doctor_text_same_length():
    revised = apply_revision_actions(
        _six_turn_dialogue(),
        [RevisionAction(action="revise_turn", location=2, doctor="D3-revised")],
    )
    contents = [t.content for t in revised.conversation]
    assert contents == ["P0", "D1", "P2", "D3-revised", "P4", "D5"]


def test_revise_turn_at_doctor_index_replaces_in_place():
    revised = apply_revision_actions(
        _six_turn_dialogue(),
        [RevisionAction(action="revise_turn", location=3, doctor="D3-direct")],
    )
    assert revised.conversation[3].content == "D3-direct"


def test_double_insert_descending_lands_where_intended():
    actions = [
        RevisionAction(action="add_turn", location=2, doctor="DocA", patient="PatA"),
        RevisionAction(action="add_turn", location=4, doctor="DocB", patient="PatB"),
    ]
    revised = apply_revision_actions(_six_turn_dialogue(), actions)
    contents = [t.content for t in revised.conversation]
    assert contents == ["P0", "D1", "P2", "DocA", "PatA", "D3", "P4", "DocB", "PatB", "D5"]


def test_location_out_of_range_rejected():
    with pytest.raises(LocationOutOfRange):
        apply_revision_actions(
            _six_turn_dialogue(),
            [RevisionAction(action="add_turn", location=12, doctor="x", patient="y")],
        )


def test_alternation_revalidated_after_application():
    broken = GeneratedDialogue(
        conversation=(Turn(0, "doctor", "wrong opener"),), preliminary_diagnosis=()
    )
    with pytest.raises(StructureError):
        apply_revision_actions(broken, [])


def test_critique_and_revise_applies_mock_actions(case, mock_gateway, mock_endpoint):
    dialogue = _six_turn_dialogue()
    missing = [case.findings[1], case.findings[3]]
    revised = critique_and_revise(case, dialogue, missing, mock_endpoint, mock_gateway)
    texts = [t.content for t in revised.conversation]
    assert case.findings[1].text in texts and case.findings[3].text in texts
    assert len(revised.conversation) == 10


# -- end-to-end curation ------------------------------------------------------------------------

def _bundled_note(index: int = 0) -> RawNote:
    from anamnesis.cli import bundled_notes_path
    from anamnesis.domain import read_jsonl

    rows = read_jsonl(bundled_notes_path())
    return RawNote.from_dict(rows[index])


def test_curate_case_converges_and_coverage_never_drops(mock_gateway, mock_endpoint):
    llms = CurationLlms(curator=mock_endpoint, judge=mock_endpoint)
    result = curate_case(_bundled_note(), llms, mock_gateway)
    assert result.status == "ok"
    assert result.case is not None and result.dialogue is not None
    revision_rounds = [r for r in result.rounds if r.get("round") != "final"]
    assert revision_rounds, "the scripted generator leaves gaps, so revision must run"
    for r in revision_rounds:
        if r["accepted"]:
            assert len(r["missing_after"]) <= len(r["missing_before"])
    final = result.rounds[-1]
    assert final["missing"] == []


def test_curate_case_records_stage_failures(mock_endpoint):
    bad_note = RawNote(note_id="x", chief_complaint="cc", hpi="Prescribed antibiotics.", diagnosis="dx")
    gw = make_gateway(ScriptedTransport([(200, ok_body('{"selected": []}'))]))
    llms = CurationLlms(curator=ENDPOINT, judge=ENDPOINT)
    result = curate_case(bad_note, llms, gw)
    assert result.status == "curation_failed"
    assert "extract_findings" in result.error
