"""Deterministic scripted stand-in for every model role.

Profiles whose base_url uses the ``mock://`` scheme are routed here instead
of the network. The scripted model classifies each request by the prompt
template it was built from and answers from the request content alone, so
identical inputs (including the optional ``seed`` field) always produce
identical bytes. That property is what makes the offline end-to-end
pipeline reproducible and lets tests pin exact artifacts.

Rollout variety comes from the seed: seed % 3 picks a doctor quality tier
(terse + wrong, middling, thorough + right) so a three-rollout candidate
pool spreads across the reward scale and preference-pair selection has
real work to do.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any

from .gateway import EndpointProfile, http_transport

# Questions the scripted doctor can ask. The junk ones are off-vignette by
# construction; the scripted patient answers them with the don't-know
# sentinel.
INFORMATIVE_QUESTIONS = [
    "Can you tell me more about how it started?",
    "Have you noticed anything else along with it?",
    "How has it changed since it began?",
    "Is there anything that makes it better or worse?",
    "Can you describe what it feels like?",
    "Have you had any other health problems in the past?",
]
JUNK_QUESTIONS = [
    "Have you traveled internationally recently?",
    "Do you have any pets at home?",
    "Have you changed your laundry detergent recently?",
]

# Chief-complaint keyword -> disease guess for the scripted doctor.
KEYWORD_DISEASES = [
    ("cough", "Pneumonia"),
    ("calf", "Deep vein thrombosis"),
    ("wheez", "Asthma"),
    ("redness", "Cellulitis"),
    ("ankle", "Heart failure"),
]
FILLER_DISEASES = [
    "Gastroesophageal reflux disease",
    "Migraine",
    "Iron deficiency anemia",
    "Urinary tract infection",
    "Hypothyroidism",
    "Generalized anxiety disorder",
]

_DOWNSTREAM_RE = re.compile(
    r"\b(lab|labs|x-ray|xray|imaging|ct scan|ultrasound|ecg|ekg|echocardiogram|"
    r"spirometry|blood tests?|blood cultures?|blood count|troponin|d-dimer|"
    r"white blood cell|intravenous|prescribed|started on|treated with|antibiotic|"
    r"was started|was arranged|was requested|was booked|discharged|"
    r"follow-up|follow up)\b",
    re.IGNORECASE,
)

_STOPWORDS = frozenset(
    "a an and areat be been but by for from had has have i in is it its my of on or "
    "so that the their there they this to was were with you your".split()
)

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
_TURN_LINE_RE = re.compile(r"^Turn (\d+) \((doctor|patient)\): (.*)$")

OPENER_ELICITOR = "What brings you in today?"
DONT_KNOW = "I don't know."
REPEATED = "Sorry, you've already asked this question."


def _h(tag: str) -> int:
    return int(hashlib.sha256(tag.encode("utf-8")).hexdigest()[:12], 16)


def _words(text: str) -> set[str]:
    return {
        w
        for w in re.sub(r"[^a-z0-9 ]+", " ", text.lower()).split()
        if w and w not in _STOPWORDS
    }


def _overlap(sentence: str, utterance: str) -> float:
    sw = _words(sentence)
    if not sw:
        return 0.0
    return len(sw & _words(utterance)) / len(sw)


def _split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_RE.split(text.strip()) if s.strip()]


def _between(text: str, start: str, end: str | None) -> str:
    i = text.find(start)
    if i < 0:
        return ""
    i += len(start)
    if end is None:
        return text[i:]
    j = text.find(end, i)
    return text[i:j] if j >= 0 else text[i:]


def _note_fields(prompt: str) -> tuple[str, str, str]:
    cc = _between(prompt, "Chief Complaint:", "HPI:").strip()
    hpi = _between(prompt, "HPI:", "Final Diagnosis:").strip()
    dx_raw = _between(prompt, "Final Diagnosis:", None)
    dx = dx_raw.strip().splitlines()[0].strip() if dx_raw.strip() else ""
    return cc, hpi, dx


def _finding_sentences(hpi: str) -> list[str]:
    return [s for s in _split_sentences(hpi) if not _DOWNSTREAM_RE.search(s)]


def _guess_disease(patient_text: str) -> str | None:
    low = patient_text.lower()
    for keyword, disease in KEYWORD_DISEASES:
        if keyword in low:
            return disease
    return None


def _diagnosis_labels(guess: str | None, position: int) -> list[str]:
    """Five labels with the guess placed at ``position`` (0-4); position 5
    or a missing guess omits it entirely."""
    labels: list[str] = []
    fillers = iter(FILLER_DISEASES)
    for slot in range(5):
        if guess is not None and slot == position:
            labels.append(guess)
        else:
            labels.append(next(fillers))
    return labels


# -- role handlers -----------------------------------------------------------

def _handle_finding_selection(prompt: str) -> str:
    block = _between(prompt, "sentences:\n", "\nRespond strictly")
    selected = []
    for line in block.splitlines():
        m = re.match(r"^(\d+)\.\s+(.*)$", line.strip())
        if m and not _DOWNSTREAM_RE.search(m.group(2)):
            selected.append(int(m.group(1)))
    return json.dumps({"selected": selected})


def _handle_decision_tree(prompt: str) -> str:
    cc, _, dx = _note_fields(prompt)
    alt = FILLER_DISEASES[_h(f"tree:{dx}") % len(FILLER_DISEASES)]
    alt2 = FILLER_DISEASES[(_h(f"tree:{dx}") + 1) % len(FILLER_DISEASES)]
    tree = {
        "tree": {
            "criteria": f"Does the presentation match: {cc.rstrip('.')}?",
            "branches": {
                "yes": {
                    "criteria": "Are the associated findings present?",
                    "diagnoses": [
                        {"condition": dx, "confidence": "high", "is_final": True},
                        {"condition": alt, "confidence": "moderate", "is_final": False},
                    ],
                },
                "no": {
                    "criteria": "Consider alternatives",
                    "diagnoses": [
                        {"condition": alt2, "confidence": "low", "is_final": False}
                    ],
                },
            },
        }
    }
    return json.dumps(tree)


def _handle_dialogue_generation(prompt: str) -> str:
    cc, hpi, dx = _note_fields(prompt)
    findings = _finding_sentences(hpi)
    # Leave every third finding out so the critic loop has gaps to fill.
    included = [s for i, s in enumerate(findings) if i % 3 != 2]
    conversation: list[dict[str, str]] = [
        {"role": "patient", "content": f"Hi, doctor. {cc}"}
    ]
    for i, sentence in enumerate(included):
        conversation.append(
            {"role": "doctor", "content": INFORMATIVE_QUESTIONS[i % len(INFORMATIVE_QUESTIONS)]}
        )
        conversation.append({"role": "patient", "content": sentence})
    labels = _diagnosis_labels(dx, 0)
    conversation.append(
        {"role": "doctor", "content": "Preliminary diagnoses:\n" + "\n".join(f"{i + 1}. {l}" for i, l in enumerate(labels))}
    )
    prelim = [{"disease": l, "reason": "Consistent with the reported symptoms."} for l in labels]
    return json.dumps({"conversation": conversation, "preliminary_diagnosis": prelim})


def _handle_revision(prompt: str) -> str:
    missing_raw = _between(prompt, "Missing Facts (not mentioned in the conversation):", "Conversation:")
    conversation_raw = _between(prompt, "Conversation:", "\nPlease respond strictly")
    try:
        missing = json.loads(missing_raw.strip())
    except json.JSONDecodeError:
        missing = []
    try:
        conversation = json.loads(conversation_raw.strip())
    except json.JSONDecodeError:
        conversation = []
    # Anchor inserts at the last patient turn: even index by construction.
    location = max(0, len(conversation) - 2)
    follow_ups = [
        "Is there anything else about your health or symptoms you haven't mentioned yet?",
        "Have you noticed anything different in your daily routine because of this?",
        "Is there any other detail, even a small one, that you think I should know?",
    ]
    actions = []
    for i, fact in enumerate(missing):
        actions.append(
            {
                "action": "add_turn",
                "location": location,
                "doctor": follow_ups[i % len(follow_ups)],
                "patient": str(fact),
                "comment": "Surfaces a documented fact the conversation missed.",
            }
        )
    return json.dumps({"critic_res": actions})


def _parse_alignment_inputs(prompt: str) -> tuple[list[tuple[int, str]], list[tuple[int, str]]]:
    sentences_block = _between(prompt, "sentences of medical note:", "conversation:")
    conversation_block = _between(prompt, "conversation:", "\nPlease respond strictly")
    sentences: list[tuple[int, str]] = []
    for line in sentences_block.splitlines():
        m = re.match(r"^(\d+)\.\s+(.*)$", line.strip())
        if m:
            sentences.append((int(m.group(1)), m.group(2)))
    turns: list[tuple[int, str]] = []
    for line in conversation_block.splitlines():
        m = _TURN_LINE_RE.match(line.strip())
        if m:
            turns.append((int(m.group(1)), m.group(3)))
    return sentences, turns


def _handle_finding_check(prompt: str) -> str:
    sentences, turns = _parse_alignment_inputs(prompt)
    out = []
    for index, sentence in sentences:
        aligned = -1
        for turn_no, content in turns:
            if _overlap(sentence, content) >= 0.6:
                aligned = turn_no
        out.append({"index": index, "sentence": sentence, "turn": aligned})
    return json.dumps(out)


def _norm_label(label: str) -> str:
    return re.sub(r"[^a-z0-9 ]+", " ", label.lower()).strip()


def _handle_diagnosis_match(prompt: str) -> str:
    dx = _between(prompt, "ground truth diagnosis:", "candidate diseases:").strip()
    candidates_raw = _between(prompt, "candidate diseases:", "\nReturn your result").strip()
    try:
        candidates = json.loads(candidates_raw)
    except json.JSONDecodeError:
        candidates = []
    ndx = _norm_label(dx)
    for i, candidate in enumerate(candidates):
        nc = _norm_label(str(candidate))
        if nc == ndx or ndx in nc or nc in ndx:
            return json.dumps({"match_index": i})
    return json.dumps({"match_index": -1})


def _handle_patient(payload: dict[str, Any]) -> str:
    messages = payload["messages"]
    vignette = _between(messages[0]["content"], "**Case Vignette**: ", None).strip()
    question = messages[-1]["content"].strip()
    prior_questions = [m["content"].strip() for m in messages[1:-1] if m["role"] == "user"]
    said = [m["content"].strip() for m in messages[1:-1] if m["role"] == "assistant"]

    if question in prior_questions:
        return REPEATED
    if question in JUNK_QUESTIONS:
        return DONT_KNOW
    sentences = _split_sentences(vignette)
    if question == OPENER_ELICITOR:
        return sentences[0] if sentences else DONT_KNOW
    for sentence in sentences:
        if sentence not in said:
            return sentence
    return DONT_KNOW


def _doctor_decision(payload: dict[str, Any]) -> tuple[str, list[str] | None]:
    """Shared doctor policy. Returns (question, None) or ("", labels)."""
    messages = payload["messages"]
    seed = int(payload.get("seed") or 0)
    asked = sum(1 for m in messages if m["role"] == "assistant")
    quality = seed % 3
    n_questions = {0: 2, 1: 3, 2: 5}[quality]
    if asked < n_questions:
        junk = (quality == 0 and asked > 0) or (quality == 1 and asked == 1)
        if junk:
            question = JUNK_QUESTIONS[_h(f"junk:{seed}:{asked}") % len(JUNK_QUESTIONS)]
        else:
            question = INFORMATIVE_QUESTIONS[asked % len(INFORMATIVE_QUESTIONS)]
        return question, None
    # Guess from the opener alone: the chief complaint carries the
    # distinctive keyword, later replies may mention another case's.
    opener = next((m["content"] for m in messages if m["role"] == "user"), "")
    guess = _guess_disease(opener)
    position = {0: 5, 1: 2, 2: 0}[quality]  # 5 omits the guess: no rank
    labels = _diagnosis_labels(guess if position < 5 else None, position)
    return "", labels


def _handle_doctor_pretrained(payload: dict[str, Any]) -> str:
    question, labels = _doctor_decision(payload)
    if labels is None:
        return question
    return "Preliminary Diagnoses:\n" + "\n".join(f"{i + 1}. {l}" for i, l in enumerate(labels))


def _handle_doctor_finetuned(payload: dict[str, Any]) -> str:
    question, labels = _doctor_decision(payload)
    messages = payload["messages"]
    patient_turns = [m["content"] for m in messages if m["role"] == "user"]
    turn_no = max(0, len(patient_turns) - 1)
    last = patient_turns[-1] if patient_turns else "nothing yet"
    summary = f"Turn {turn_no}: The patient said: {last}"
    if labels is None:
        plan = "I need to gather more detail about the presenting symptoms to narrow the differential."
        visible = question
    else:
        plan = "I have enough information to state my preliminary diagnoses, ranked by likelihood."
        visible = "Preliminary Diagnoses:\n" + "\n".join(f"{i + 1}. {l}" for i, l in enumerate(labels))
    return f"<think>Summary: {summary}\nPlan: {plan}</think>{visible}"


def _handle_forced_diagnosis(payload: dict[str, Any]) -> str:
    messages = payload["messages"]
    seed = int(payload.get("seed") or 0)
    opener = next((m["content"] for m in messages if m["role"] == "user"), "")
    guess = _guess_disease(opener)
    position = _h(f"forced:{seed}") % 5
    labels = _diagnosis_labels(guess, position)
    return "preliminary diagnoses:\n" + "\n".join(f"{i + 1}. {l}" for i, l in enumerate(labels))


def _handle_summarization(prompt: str) -> str:
    body = _between(prompt, "Conversation:\n", None)
    patient_lines = [
        line.split(":", 1)[1].strip()
        for line in body.splitlines()
        if line.lower().startswith("patient:")
    ]
    joined = " ".join(patient_lines)[:400]
    return f"The patient reported the following: {joined}" if joined else "The patient has reported nothing yet."


def _handle_plan(prompt: str, differential: bool) -> str:
    if differential:
        return (
            "These are my preliminary diagnoses: the gathered findings point most strongly "
            "to the top-ranked condition, and the rest are ordered by how well they fit."
        )
    return (
        "I need to ask this to rule candidate conditions in or out based on what the "
        "patient has told me so far."
    )


_SOCRATES_RULES = [
    ("Radiation", ("spread", "radiat", "travels", "moves to")),
    ("Onset", ("began", "started", "onset", "sudden", "gradual", "ago")),
    ("Timing", ("constant", "intermittent", "comes and goes", "at night", "worse in the", "duration", "frequency")),
    ("ExacerbatingRelieving", ("worse when", "better when", "relieve", "aggravat", "improves", "worsens with")),
    ("Severity", ("severe", "mild", "moderate", "intense", "out of 10", "scale")),
    ("Site", ("right", "left", "located", "chest", "leg", "arm", "calf", "ankle", "under", "side")),
    ("Character", ("sharp", "dull", "burning", "productive", "dry", "throbbing", "aching", "crackling")),
    ("History", ("history", "medication", "diagnosed", "smoker", "smoking", "surgery", "allerg")),
]


def _handle_socrates(prompt: str) -> str:
    finding = _between(prompt, "finding:", "\nRespond strictly").strip().lower()
    for category, keywords in _SOCRATES_RULES:
        if any(k in finding for k in keywords):
            return json.dumps({"category": category})
    return json.dumps({"category": "AssociatedSymptoms"})


def _handle_patient_audit(prompt: str) -> str:
    reply = _between(prompt, "patient reply:", "\nAnswer two yes/no").strip()
    unsolicited = len(_split_sentences(reply)) > 1
    conflict = "definitely not" in reply.lower()
    return json.dumps({"unsolicited_disclosure": unsolicited, "factual_conflict": conflict})


# -- dispatch ------------------------------------------------------------------

def scripted_response(payload: dict[str, Any]) -> str:
    """Answer one chat-completions payload deterministically."""
    messages = payload["messages"]
    sys_text = messages[0]["content"] if messages and messages[0]["role"] == "system" else ""
    last_user = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")

    if "**Case Vignette**:" in sys_text:
        return _handle_patient(payload)
    if sys_text.startswith("You are a doctor."):
        return _handle_doctor_finetuned(payload)
    if sys_text.startswith("You are an AI doctor. Based on the patient's answers so far"):
        return _handle_forced_diagnosis(payload)
    if sys_text.startswith("You are an AI doctor."):
        return _handle_doctor_pretrained(payload)

    if "generate a structured decision tree" in last_user:
        return _handle_decision_tree(last_user)
    if last_user.startswith("Generate a history-taking dialogue"):
        return _handle_dialogue_generation(last_user)
    if last_user.startswith("You are criticizing a dialogue"):
        return _handle_revision(last_user)
    if "sentences of medical note:" in last_user:
        return _handle_finding_check(last_user)
    if "ground truth diagnosis:" in last_user:
        return _handle_diagnosis_match(last_user)
    if last_user.startswith("Rewrite the following doctor-patient conversation"):
        return _handle_summarization(last_user)
    if "internal reasoning" in last_user:
        return _handle_plan(last_user, differential="(preliminary diagnoses)" in last_user)
    if "numbered sentences" in last_user and '{"selected":' in last_user:
        return _handle_finding_selection(last_user)
    if last_user.startswith("Classify one clinical finding"):
        return _handle_socrates(last_user)
    if last_user.startswith("You are auditing one patient reply"):
        return _handle_patient_audit(last_user)
    raise ValueError("scripted model cannot classify this request")


def mock_transport(profile: EndpointProfile, payload: dict[str, Any], timeout_s: float) -> tuple[int, str]:
    text = scripted_response(payload)
    body = {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0},
        "model": profile.model_name,
    }
    return 200, json.dumps(body)


def routing_transport(profile: EndpointProfile, payload: dict[str, Any], timeout_s: float) -> tuple[int, str]:
    """mock:// profiles stay in-process; anything else goes over HTTP."""
    if profile.base_url.startswith("mock://"):
        return mock_transport(profile, payload, timeout_s)
    return http_transport(profile, payload, timeout_s)
