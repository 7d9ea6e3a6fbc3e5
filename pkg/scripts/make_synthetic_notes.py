"""Regenerate the bundled synthetic notes and sanity-check them against the
constraints the offline pipeline relies on: every usable note has a >=100
word HPI, a chief complaint carrying its disease keyword, cleanly splitting
sentences, low lexical overlap between distinct finding sentences, and
downstream sentences the exclusion filter recognises. Two extra notes
deliberately fail the intake filter (short HPI, missing diagnosis).
"""

from __future__ import annotations

import json
import re
import sys
from pathlib import Path

SRC = Path(__file__).resolve().parents[1] / "src"
sys.path.insert(0, str(SRC))

from anamnesis.curation import split_sentences  # noqa: E402
from anamnesis.mockmodel import _DOWNSTREAM_RE, _overlap  # noqa: E402

NOTES = [
    {
        "note_id": "syn-001",
        "diagnosis": "Pneumonia",
        "chief_complaint": "I've had a worsening cough and a fever for the past three days.",
        "findings": [
            "The trouble started three days ago when a dry tickle in the throat turned into a deep chesty cough.",
            "The cough now brings up thick yellow phlegm, especially first thing in the morning.",
            "Fevers at home have reached 38.9 degrees with shaking chills during the night.",
            "Taking a deep breath causes a sharp ache on the right side of the rib cage.",
            "Climbing a single flight of stairs now leaves the patient winded and needing to rest.",
            "There has been no runny nose, sneezing, or sore throat at any point.",
            "The patient has smoked half a pack of cigarettes daily for about ten years.",
        ],
        "downstream": [
            "A chest x-ray at the urgent care clinic showed a patchy opacity in the right lower lobe.",
            "A blood test drawn the same day reported an elevated white blood cell count, and an oral antibiotic was prescribed pending review.",
        ],
    },
    {
        "note_id": "syn-002",
        "diagnosis": "Deep vein thrombosis",
        "chief_complaint": "My left calf has been swollen and painful since last weekend.",
        "findings": [
            "The swelling appeared over last weekend and has not gone down since.",
            "The area over the inner lower leg feels warm and is tender to firm touch.",
            "Standing or walking for more than a few minutes makes the discomfort considerably worse.",
            "Elevating the limb on pillows brings only slight relief.",
            "Two weeks ago the patient finished a twelve-hour intercontinental flight followed by several sedentary days.",
            "The patient takes a daily combined oral contraceptive pill.",
            "There has been no fever, no injury to the leg, and no similar episode before.",
        ],
        "downstream": [
            "A compression ultrasound was booked at the vascular clinic for the following morning.",
            "A d-dimer blood test was sent from the emergency department and anticoagulation was started on a provisional basis.",
        ],
    },
    {
        "note_id": "syn-003",
        "diagnosis": "Asthma",
        "chief_complaint": "I keep waking up at night wheezing and short of breath.",
        "findings": [
            "Night-time waking with a whistling noise in the chest has occurred four times over the past two weeks.",
            "Episodes of breathlessness also strike after jogging or climbing hills in cold air.",
            "A dry cough lingers for roughly an hour after each episode settles.",
            "Symptoms ease noticeably after sitting upright and resting for a while.",
            "As a child the patient had eczema, and spring hay fever still recurs every year.",
            "The patient's mother has needed an inhaler for most of her adult life.",
            "Between episodes the patient feels entirely well and can exercise normally.",
        ],
        "downstream": [
            "Spirometry with a bronchodilator challenge was arranged through the chest clinic.",
            "A salbutamol inhaler was prescribed as a rescue measure until review.",
        ],
    },
    {
        "note_id": "syn-004",
        "diagnosis": "Cellulitis",
        "chief_complaint": "There is spreading redness on my right shin that hurts to touch.",
        "findings": [
            "The red area on the shin appeared two days ago and has been enlarging since.",
            "The skin there feels hot, tight, and shiny compared with the other leg.",
            "Pressing on the area or brushing it against clothing is distinctly painful.",
            "A small scrape from gardening preceded the redness by about a day.",
            "The patient has felt feverish and slightly sweaty since yesterday evening.",
            "The patient has type 2 diabetes managed with metformin tablets.",
            "No blisters, open sores, or drainage have been noticed on the leg.",
        ],
        "downstream": [
            "Blood cultures and a full blood count were drawn in the assessment unit.",
            "Intravenous flucloxacillin was started and the limb was marked to track the margin.",
        ],
    },
    {
        "note_id": "syn-005",
        "diagnosis": "Heart failure",
        "chief_complaint": "My ankles keep swelling and I get breathless lying flat in bed.",
        "findings": [
            "Both ankles have been puffy by the end of each day for roughly three weeks.",
            "Lying flat at night brings on breathlessness that forces the patient to prop up on three pillows.",
            "Twice the patient has woken suddenly gasping for air in the early hours.",
            "Ordinary activities such as carrying groceries now cause fatigue out of proportion to effort.",
            "Weight has crept up by about four kilograms over the same period despite an unchanged appetite.",
            "The patient had a heart attack five years ago and takes a beta blocker and a statin.",
            "There is no cough, no chest pain at rest, and no recent travel.",
        ],
        "downstream": [
            "An echocardiogram was requested and an ecg in the clinic showed no acute changes.",
            "A furosemide dose was started and daily weights were advised while awaiting review.",
        ],
    },
    # Intentionally filtered out: HPI far below the 100-word floor.
    {
        "note_id": "syn-006-short",
        "diagnosis": "Migraine",
        "chief_complaint": "Bad headache since this morning.",
        "findings": ["A throbbing one-sided headache began this morning and light makes it worse."],
        "downstream": [],
    },
    # Intentionally filtered out: no primary diagnosis recorded.
    {
        "note_id": "syn-007-nodx",
        "diagnosis": "",
        "chief_complaint": "I have felt dizzy on and off for a week.",
        "findings": [
            "Brief spells of the room spinning have come and gone for about a week.",
            "Each spell lasts under a minute and settles when sitting still.",
            "Rolling over in bed or looking up at a shelf can set a spell off.",
            "There has been no hearing change, ringing, or ear pain.",
            "The patient takes no regular medicines and has never had this before.",
            "Walking feels briefly unsteady right after a spell passes.",
            "There has been no weakness, numbness, or trouble speaking at any time.",
            "Coffee intake and sleep have been normal throughout the week.",
            "No recent head knock or injury is recalled.",
            "The spells have not been getting longer or stronger over the week.",
        ],
        "downstream": [],
    },
]

KEYWORDS = {
    "syn-001": "cough",
    "syn-002": "calf",
    "syn-003": "wheez",
    "syn-004": "redness",
    "syn-005": "ankle",
}


def build() -> list[dict]:
    rows = []
    for spec in NOTES:
        hpi = " ".join(spec["findings"] + spec["downstream"])
        rows.append(
            {
                "note_id": spec["note_id"],
                "chief_complaint": spec["chief_complaint"],
                "hpi": hpi,
                "diagnosis": spec["diagnosis"],
            }
        )
    return rows


def check() -> list[str]:
    problems = []
    for spec in NOTES:
        nid = spec["note_id"]
        hpi = " ".join(spec["findings"] + spec["downstream"])
        words = len(hpi.split())
        usable = nid in KEYWORDS
        if usable and words < 100:
            problems.append(f"{nid}: HPI only {words} words")
        if not usable and spec["diagnosis"] and words >= 100:
            problems.append(f"{nid}: should fail the intake filter but would pass")
        if usable and KEYWORDS[nid] not in spec["chief_complaint"].lower():
            problems.append(f"{nid}: chief complaint lacks keyword {KEYWORDS[nid]!r}")
        sentences = split_sentences(hpi)
        if len(sentences) != len(spec["findings"]) + len(spec["downstream"]):
            problems.append(f"{nid}: sentence splitter sees {len(sentences)} sentences")
        for s in spec["findings"]:
            if _DOWNSTREAM_RE.search(s):
                problems.append(f"{nid}: finding tripped the downstream filter: {s!r}")
        for s in spec["downstream"]:
            if not _DOWNSTREAM_RE.search(s):
                problems.append(f"{nid}: downstream sentence not recognised: {s!r}")
        pool = spec["findings"] + [spec["chief_complaint"]]
        for i, a in enumerate(pool):
            for j, b in enumerate(pool):
                if i != j and _overlap(a, b) >= 0.6:
                    problems.append(f"{nid}: sentences {i} and {j} overlap too much")
    return problems


def main() -> int:
    problems = check()
    for p in problems:
        print("PROBLEM:", p)
    out = SRC / "anamnesis" / "data" / "synthetic_notes.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for row in build():
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"wrote {out}")
    for spec in NOTES:
        hpi = " ".join(spec["findings"] + spec["downstream"])
        print(f"  {spec['note_id']}: {len(hpi.split())} HPI words, {len(spec['findings'])} findings")
    return 1 if problems else 0


if __name__ == "__main__":
    raise SystemExit(main())
