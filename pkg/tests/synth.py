"""Deterministic synthetic fixtures: dialogue suites with known gold
alignments, scripted gateway responses, and label files."""

from __future__ import annotations

import json
import random
from pathlib import Path

from clinasr.align import ALIGNER_INSTRUCTION, build_aligner_payload
from clinasr.gateway import ScriptedGateway
from clinasr.models import (
    Alignment,
    AlignmentEntry,
    AnnotationRecord,
    Conversation,
    DOCTOR,
    MATCH_EXACT,
    MATCH_FUZZY,
    MATCH_MISSING,
    PATIENT,
    Utterance,
)

_QUESTIONS = (
    "how is your eye feeling today",
    "any redness or swelling since the operation",
    "are you taking the drops as prescribed",
    "have you noticed any changes in your vision",
    "is there any pain when you read",
    "how did you sleep last night",
    "any discharge from the eye this week",
)

_ANSWERS = (
    "it feels much better than before",
    "there is some extra bleeding near the edge",
    "yes i take them every morning and evening",
    "my vision is a little blurry in bright light",
    "no pain at all just a bit gritty sometimes",
    "i slept well thank you for asking",
    "only some watering when i walk outside",
    "the swelling went down after two days",
    "i ran out of drops on tuesday",
    "sometimes the light makes my eye ache",
)

_SUBSTITUTES = {
    "better": "bitter",
    "bleeding": "breathing",
    "morning": "warning",
    "blurry": "blue",
    "gritty": "pretty",
    "watering": "wandering",
    "swelling": "spelling",
    "drops": "drinks",
    "ache": "egg",
    "well": "ill",
}

# Per-utterance perturbation plans cycled through each conversation.
PLAN = ("exact", "fuzzy", "merge", "split", "missing", "fuzzy", "exact", "split")


def _corrupt(text: str, rng: random.Random) -> str:
    words = text.split()
    hit = False
    for i, w in enumerate(words):
        if w in _SUBSTITUTES:
            words[i] = _SUBSTITUTES[w]
            hit = True
            break
    if not hit:
        words[rng.randrange(len(words))] = "garbled"
    return " ".join(words)


def _corrupt_heavily(text: str) -> str:
    # WER lands in the high-error band [0.4, 1)
    words = text.split()
    return " ".join(
        f"noise{i}" if i % 2 == 0 else w for i, w in enumerate(words)
    )


def build_conversation(conv_id: str, seed: int, n_patient: int = 8,
                       filler_only: int = 0) -> tuple[Conversation, Alignment]:
    """A doctor/patient dialogue plus the true alignment of its ASR side.

    The perturbation plan covers one-to-one exact and fuzzy matches,
    merges (two gold to one ASR), splits (one gold to two ASR fragments),
    and misses. ``filler_only`` marks that many fuzzy slots as pairs that
    differ only by a non-lexical token.
    """
    rng = random.Random(seed)
    gold: list[Utterance] = []
    clock = 0.0

    def add_gold(speaker: str, text: str) -> Utterance:
        nonlocal clock
        u = Utterance(
            index=len(gold),
            speaker=speaker,
            text=text,
            start_time=round(clock, 2),
            end_time=round(clock + 1.5, 2),
        )
        gold.append(u)
        clock += 2.0
        return u

    plans = [PLAN[k % len(PLAN)] for k in range(n_patient)]
    # merges consume the next patient slot too
    k = 0
    while k < len(plans):
        if plans[k] == "merge":
            if k + 1 >= len(plans):
                plans[k] = "fuzzy"
            else:
                plans[k + 1] = "merged_tail"
        k += 1
    fillers_left = filler_only

    patient_utts: list[Utterance] = []
    for k in range(n_patient):
        add_gold(DOCTOR, _QUESTIONS[(seed + k) % len(_QUESTIONS)])
        patient_utts.append(
            add_gold(PATIENT, _ANSWERS[(seed + 3 * k) % len(_ANSWERS)])
        )

    hyp: list[Utterance] = []
    entries: list[AlignmentEntry] = []

    def add_hyp(text: str, start: float, end: float) -> Utterance:
        u = Utterance(
            index=len(hyp),
            speaker=PATIENT,
            text=text,
            start_time=round(start + 0.05, 2),
            end_time=round(end + 0.05, 2),
            confidence=round(rng.uniform(0.7, 0.99), 3),
        )
        hyp.append(u)
        return u

    k = 0
    while k < n_patient:
        g = patient_utts[k]
        plan = plans[k]
        if plan == "exact":
            a = add_hyp(g.text, g.start_time, g.end_time)
            entries.append(AlignmentEntry((g.index,), (a.index,), MATCH_EXACT, 1.0))
        elif plan == "fuzzy":
            fuzzy_seen = sum(1 for e in entries
                             if e.match_type == MATCH_FUZZY and len(e.asr_indices) == 1
                             and len(e.gold_indices) == 1)
            if fillers_left > 0:
                fillers_left -= 1
                words = g.text.split()
                words.insert(len(words) // 2, "um")
                text = " ".join(words)
            elif fuzzy_seen:
                text = _corrupt_heavily(g.text)
            else:
                text = _corrupt(g.text, rng)
            a = add_hyp(text, g.start_time, g.end_time)
            entries.append(AlignmentEntry((g.index,), (a.index,), MATCH_FUZZY, 0.8))
        elif plan == "merge":
            g2 = patient_utts[k + 1]
            a = add_hyp(g.text + " " + g2.text, g.start_time, g2.end_time)
            entries.append(
                AlignmentEntry((g.index, g2.index), (a.index,), MATCH_FUZZY, 0.9)
            )
            k += 2
            continue
        elif plan == "split":
            words = g.text.split()
            half = len(words) // 2
            mid = (g.start_time + g.end_time) / 2
            a1 = add_hyp(" ".join(words[:half]), g.start_time, mid)
            a2 = add_hyp(" ".join(words[half:]), mid, g.end_time)
            entries.append(
                AlignmentEntry(
                    (g.index,), (a1.index, a2.index), MATCH_FUZZY, 0.9,
                    multi_fragment=True,
                )
            )
        elif plan == "missing":
            entries.append(AlignmentEntry((g.index,), (), MATCH_MISSING, 0.0))
        k += 1

    conv = Conversation(
        id=conv_id,
        source="other",
        asr_provider="synthetic",
        gold=tuple(gold),
        hypothesis=tuple(hyp),
    )
    truth = Alignment(conversation_id=conv_id, entries=tuple(entries), standard=True)
    return conv, truth


def build_suite(n_conversations: int = 20, seed: int = 7,
                filler_only_total: int = 0) -> list[tuple[Conversation, Alignment]]:
    out = []
    fillers = filler_only_total
    for k in range(n_conversations):
        take = min(fillers, 1)
        fillers -= take
        out.append(
            build_conversation(f"conv{k:03d}", seed=seed + k, filler_only=take)
        )
    return out


def response_for(truth: Alignment) -> str:
    """The faithful scripted model response for a conversation's truth."""
    return json.dumps(
        {
            "entries": [
                {
                    "gold_indices": list(e.gold_indices),
                    "asr_indices": list(e.asr_indices),
                    "match_type": e.match_type,
                    "similarity": e.similarity,
                }
                for e in truth.entries
            ]
        }
    )


def faithful_script(suite: list[tuple[Conversation, Alignment]]) -> dict[str, str]:
    script: dict[str, str] = {}
    for conv, truth in suite:
        key = ScriptedGateway.key_for(ALIGNER_INSTRUCTION, build_aligner_payload(conv))
        script[key] = response_for(truth)
    return script


def write_script(path: str | Path, script: dict[str, str]) -> None:
    Path(path).write_text(
        json.dumps({"responses": script}, sort_keys=True), encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Randomized perturbations of identity alignments, for refinement-closure
# testing: injected duplicates, misses with controlled similarity, and
# fragment splits.

_BASE_TEXTS = (
    "the swelling has gone down now",
    "i still feel a little pressure",
    "my vision is clear this morning",
    "the drops sting when i use them",
    "i can read the paper again",
    "there was some watering yesterday",
    "the redness faded over the weekend",
    "i feel fine apart from the itch",
    "the light no longer bothers me",
)

# (length, corrupted positions) -> lexical similarity 1 - m/L against the
# all-'a' base string; values straddle the 0.65 recovery threshold.
SIMILARITY_LADDER = (
    (20, 4, 0.80),
    (20, 7, 0.65),
    (20, 8, 0.60),
    (200, 60, 0.70),
    (200, 70, 0.65),
    (200, 71, 0.645),
)


def controlled_pair(base_letter: str, length: int, corrupted: int) -> tuple[str, str]:
    """Two strings whose lexical similarity is exactly 1 - corrupted/length."""
    ref = base_letter * length
    hyp = list(ref)
    for i in range(corrupted):
        hyp[i] = "b" if base_letter != "b" else "c"
    return ref, "".join(hyp)


def perturbation_case(seed: int) -> tuple[Conversation, Alignment, list[dict]]:
    """An identity conversation/alignment with 1-3 injected perturbations.

    Returns (conversation, raw alignment, expectations); each expectation
    describes one perturbation and what refinement must do with it.
    """
    rng = random.Random(seed)
    n = rng.randint(5, 9)
    kinds = ["duplicate", "miss", "split"]
    plans = ["identity"] * n
    positions = list(range(n))
    rng.shuffle(positions)
    expectations: list[dict] = []
    taken: set[int] = set()
    for _ in range(rng.randint(1, 3)):
        kind = rng.choice(kinds)
        spot = next(
            (p for p in positions
             if p not in taken and (p + 1 not in taken) and (p - 1 not in taken)
             and (kind != "duplicate" or (p + 1 < n and p + 2 not in taken))),
            None,
        )
        if spot is None:
            continue
        taken.add(spot)
        plans[spot] = kind
        if kind == "duplicate":
            taken.add(spot + 1)
            plans[spot + 1] = "duplicate_tail"

    gold: list[Utterance] = []
    hyp: list[Utterance] = []
    entries: list[AlignmentEntry] = []
    clock = 0.0
    base_letters = iter("cdefghijk")

    def add_gold(text: str) -> Utterance:
        nonlocal clock
        u = Utterance(len(gold), PATIENT, text,
                      start_time=round(clock, 2), end_time=round(clock + 1.0, 2))
        gold.append(u)
        clock += 1.5
        return u

    def add_hyp(text: str, conf: float) -> Utterance:
        u = Utterance(len(hyp), PATIENT, text,
                      start_time=round(clock - 1.5 + 0.03, 2),
                      end_time=round(clock - 0.5 + 0.03, 2),
                      confidence=conf)
        hyp.append(u)
        return u

    k = 0
    while k < n:
        plan = plans[k]
        text = _BASE_TEXTS[(seed + 2 * k) % len(_BASE_TEXTS)]
        if plan == "identity":
            g = add_gold(text)
            a = add_hyp(text, round(rng.uniform(0.7, 0.99), 3))
            entries.append(AlignmentEntry((g.index,), (a.index,), MATCH_EXACT, 1.0))
            k += 1
        elif plan == "duplicate":
            text2 = _BASE_TEXTS[(seed + 2 * k + 1) % len(_BASE_TEXTS)]
            g1 = add_gold(text)
            g2 = add_gold(text2)
            a = add_hyp(text + " " + text2, round(rng.uniform(0.7, 0.99), 3))
            entries.append(AlignmentEntry((g1.index,), (a.index,), MATCH_FUZZY, 0.7))
            entries.append(AlignmentEntry((g2.index,), (a.index,), MATCH_FUZZY, 0.7))
            expectations.append(
                {"kind": "duplicate", "gold": (g1.index, g2.index), "asr": (a.index,)}
            )
            k += 2
        elif plan == "miss":
            length, corrupted, sim = SIMILARITY_LADDER[
                rng.randrange(len(SIMILARITY_LADDER))
            ]
            ref, corrupted_text = controlled_pair(next(base_letters), length, corrupted)
            g = add_gold(ref)
            a = add_hyp(corrupted_text, round(rng.uniform(0.7, 0.99), 3))
            entries.append(AlignmentEntry((g.index,), (), MATCH_MISSING, 0.0))
            expectations.append(
                {
                    "kind": "miss",
                    "gold": (g.index,),
                    "asr": (a.index,),
                    "similarity": sim,
                    "recoverable": sim >= 0.65,
                }
            )
            k += 1
        else:  # split
            g = add_gold(text)
            words = text.split()
            half = len(words) // 2
            a1 = add_hyp(" ".join(words[:half]), 0.8)
            a2 = add_hyp(" ".join(words[half:]), 0.9)
            entries.append(AlignmentEntry((g.index,), (a1.index,), MATCH_FUZZY, 0.5))
            entries.append(AlignmentEntry((g.index,), (a2.index,), MATCH_FUZZY, 0.5))
            expectations.append(
                {
                    "kind": "split",
                    "gold": (g.index,),
                    "asr": (a1.index, a2.index),
                    "confidence": (0.8 + 0.9) / 2,
                    "span": (a1.start_time, a2.end_time),
                }
            )
            k += 1

    conv = Conversation(
        id=f"perturb{seed}", source="other", asr_provider="synthetic",
        gold=tuple(gold), hypothesis=tuple(hyp),
    )
    raw = Alignment(conversation_id=conv.id, entries=tuple(entries))
    return conv, raw, expectations


def gold_labels_for(example_ids: list[str]) -> list[AnnotationRecord]:
    """Deterministic pseudo-gold labels keyed off the example id."""
    out = []
    for ex_id in sorted(example_ids):
        label = sum(ord(c) for c in ex_id) % 3
        out.append(
            AnnotationRecord(
                example_id=ex_id, annotator_id="gold", label=label,
                justification="synthetic" if label else "",
            )
        )
    return out


def annotator_labels_for(example_ids: list[str], annotator_id: str,
                         disagree_every: int = 0) -> list[AnnotationRecord]:
    out = []
    for n, ex_id in enumerate(sorted(example_ids)):
        label = sum(ord(c) for c in ex_id) % 3
        if disagree_every and n % disagree_every == 0:
            label = (label + 1) % 3
        out.append(
            AnnotationRecord(
                example_id=ex_id,
                annotator_id=annotator_id,
                label=label,
                justification=f"noted by {annotator_id}" if label else "",
            )
        )
    return out
