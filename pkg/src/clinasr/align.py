"""Pair gold utterances with ASR hypotheses.

Three aligners (timestamp proximity, utterance-level global edit alignment,
and an LLM-backed semantic aligner), the deterministic refinement rules that
repair raw model output, and the evaluation operations against a
human-annotated alignment standard. Only patient utterances are submitted
for alignment; doctor turns travel as context.

Aligners are pure given a gateway handle and never mutate a returned
Alignment; conversations may be aligned concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .gateway import (
    ALIGNER_MAX_OUTPUT_TOKENS,
    ALIGNER_PRESET,
    DecodingParams,
    GenerationRequest,
    LlmGateway,
    StructuredOutputError,
    extract_structured,
)
from .models import (
    Alignment,
    AlignmentEntry,
    Conversation,
    GoldAlignmentStandard,
    MATCH_EXACT,
    MATCH_FUZZY,
    MATCH_MISSING,
    Utterance,
    Violation,
    validate_alignment,
)
from .textnorm import normalize

MISS_RECOVERY_THRESHOLD = 0.65
EDIT_ALIGNER_GAP_COST = 0.5


class AlignerError(RuntimeError):
    """Base class for aligner failures."""


class MissingTimestampError(AlignerError):
    def __init__(self, side: str, index: int):
        super().__init__(f"{side} utterance {index} has no timestamps")
        self.side = side
        self.index = index


class AlignmentParseError(AlignerError):
    """The model response stayed unparseable after one repair attempt."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class AlignmentConstraintError(AlignerError):
    """The refined alignment still breaks structural constraints."""

    def __init__(self, violations: list[Violation]):
        rules = ", ".join(v.rule for v in violations)
        super().__init__(f"alignment violates constraints: {rules}")
        self.violations = violations


@dataclass(frozen=True)
class AlignerRequest:
    conversation: Conversation
    decoding: DecodingParams = ALIGNER_PRESET
    max_output_tokens: int = ALIGNER_MAX_OUTPUT_TOKENS

    def __post_init__(self) -> None:
        if self.max_output_tokens > ALIGNER_MAX_OUTPUT_TOKENS:
            raise ValueError(
                f"max_output_tokens {self.max_output_tokens} exceeds the "
                f"{ALIGNER_MAX_OUTPUT_TOKENS} cap for stable long-context output"
            )


def levenshtein(a: str, b: str) -> int:
    """Character-level edit distance (vectorized rows; unicode safe)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    b_codes = np.array([ord(c) for c in b], dtype=np.int64)
    offsets = np.arange(len(b) + 1, dtype=np.int64)
    prev = offsets.copy()
    cur = np.empty(len(b) + 1, dtype=np.int64)
    for i, ca in enumerate(a, 1):
        cur[0] = i
        cur[1:] = np.minimum(prev[:-1] + (b_codes != ord(ca)), prev[1:] + 1)
        # propagate left-to-right insertions: cur[j] = min(cur[j], cur[j-1]+1)
        cur = np.minimum.accumulate(cur - offsets) + offsets
        prev, cur = cur, prev
    return int(prev[-1])


def lexical_similarity(a: str, b: str) -> float:
    """Normalized character-level edit similarity in [0, 1]; two empty
    strings are identical by convention."""
    na, nb = normalize(a), normalize(b)
    if not na and not nb:
        return 1.0
    longest = max(len(na), len(nb))
    return 1.0 - levenshtein(na, nb) / longest


def _entry(gold: tuple[int, ...], asr: tuple[int, ...], match_type: str,
           similarity: float, conv: Conversation | None = None) -> AlignmentEntry:
    multi = len(asr) > 1
    confidence = None
    span = None
    if conv is not None and asr:
        by_index = {u.index: u for u in conv.patient_utterances("hypothesis")}
        frags = [by_index[j] for j in asr if j in by_index]
        confidences = [u.confidence for u in frags if u.confidence is not None]
        if len(asr) > 1 and confidences:
            confidence = float(np.mean(confidences))
        starts = [u.start_time for u in frags if u.start_time is not None]
        ends = [u.end_time for u in frags if u.end_time is not None]
        if len(asr) > 1 and starts and ends:
            span = (min(starts), max(ends))
    return AlignmentEntry(
        gold_indices=tuple(sorted(gold)),
        asr_indices=tuple(sorted(asr)),
        match_type=match_type,
        similarity=similarity,
        multi_fragment=multi,
        confidence=confidence,
        span=span,
    )


def _match_entry(gold_utts: list[Utterance], asr_utts: list[Utterance],
                 conv: Conversation) -> AlignmentEntry:
    gold_text = " ".join(u.text for u in gold_utts)
    asr_text = " ".join(u.text for u in asr_utts)
    sim = lexical_similarity(gold_text, asr_text)
    match_type = MATCH_EXACT if normalize(gold_text) == normalize(asr_text) else MATCH_FUZZY
    return _entry(
        tuple(u.index for u in gold_utts),
        tuple(u.index for u in asr_utts),
        match_type,
        sim,
        conv,
    )


def _missing_entry(gold_indices: tuple[int, ...]) -> AlignmentEntry:
    return _entry(gold_indices, (), MATCH_MISSING, 0.0)


# ---------------------------------------------------------------------------
# Baseline aligners

def align_timestamp_proximity(conv: Conversation) -> Alignment:
    """Nearest-midpoint pairing; conflicts go to the earliest gold utterance
    and losers are marked missing. Guarantees match-once only."""
    gold = list(conv.patient_utterances("gold"))
    asr = list(conv.patient_utterances("hypothesis"))
    for side, utts in (("gold", gold), ("hypothesis", asr)):
        for u in utts:
            if u.midpoint is None:
                raise MissingTimestampError(side, u.index)
    used: set[int] = set()
    entries: list[AlignmentEntry] = []
    for g in gold:
        best = None
        best_dist = None
        for a in asr:
            dist = abs(g.midpoint - a.midpoint)
            if best is None or dist < best_dist:
                best, best_dist = a, dist
        if best is None or best.index in used:
            entries.append(_missing_entry((g.index,)))
            continue
        used.add(best.index)
        entries.append(_match_entry([g], [best], conv))
    return Alignment(conversation_id=conv.id, entries=tuple(entries))


def align_edit_distance(conv: Conversation) -> Alignment:
    """Global dynamic-programming alignment over utterance sequences.

    Substitution cost is 1 - lexical similarity, gaps cost a flat 0.5, and
    the backtrace prefers pairing on ties, so the result is monotone and
    match-once by construction. Fixed order means semantically swapped
    content still aligns positionally; that weakness is inherited from the
    method, not a defect.
    """
    gold = list(conv.patient_utterances("gold"))
    asr = list(conv.patient_utterances("hypothesis"))
    n, m = len(gold), len(asr)
    sim = [[lexical_similarity(g.text, a.text) for a in asr] for g in gold]
    gap = EDIT_ALIGNER_GAP_COST
    dp = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i * gap
    for j in range(1, m + 1):
        dp[0][j] = j * gap
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i][j] = min(
                dp[i - 1][j - 1] + (1.0 - sim[i - 1][j - 1]),
                dp[i - 1][j] + gap,
                dp[i][j - 1] + gap,
            )
    pairs: list[tuple[int, int | None]] = []
    i, j = n, m
    eps = 1e-12
    while i > 0 or j > 0:
        if i > 0 and j > 0 and abs(dp[i][j] - (dp[i - 1][j - 1] + 1.0 - sim[i - 1][j - 1])) < eps:
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and abs(dp[i][j] - (dp[i - 1][j] + gap)) < eps:
            pairs.append((i - 1, None))
            i -= 1
        else:
            j -= 1
    pairs.reverse()
    entries = [
        _match_entry([gold[gi]], [asr[aj]], conv) if aj is not None
        else _missing_entry((gold[gi].index,))
        for gi, aj in pairs
    ]
    return Alignment(conversation_id=conv.id, entries=tuple(entries))


# ---------------------------------------------------------------------------
# LLM aligner

ALIGNER_INSTRUCTION = """\
You align a gold transcript of patient utterances with ASR hypothesis segments.

You are given two ordered sequences as JSON: "gold" utterances (index, text,
timestamps) and "asr" hypotheses (index, text, confidence). Map every gold
utterance to the ASR hypothesis or hypotheses that transcribe it, considering
semantic similarity, sequential order, and ASR confidence. Constraints:
- each ASR segment may be used at most once;
- consecutive ASR segments may be grouped when they form a single utterance;
- consecutive gold utterances may map jointly when the recognizer merged them;
- a gold utterance with no counterpart is "missing";
- never introduce text that is absent from both transcripts.

Respond with only a JSON document of the form:
{"entries": [{"gold_indices": [..], "asr_indices": [..],
  "match_type": "exact"|"fuzzy"|"missing", "similarity": 0.0-1.0}]}
"""

REPAIR_INSTRUCTION = (
    "Your previous response could not be parsed as JSON. "
    "Respond again with only the JSON document, no prose, no fences."
)


def build_aligner_payload(conv: Conversation) -> str:
    doc = {
        "conversation_id": conv.id,
        "gold": [
            {
                "index": u.index,
                "text": u.text,
                "start_time": u.start_time,
                "end_time": u.end_time,
            }
            for u in conv.patient_utterances("gold")
        ],
        "asr": [
            {"index": u.index, "text": u.text, "confidence": u.confidence}
            for u in conv.patient_utterances("hypothesis")
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def parse_aligner_response(doc: object, conv: Conversation) -> list[AlignmentEntry]:
    """Turn a parsed response document into raw entries.

    Rejects entries whose echoed text does not occur in either transcript
    (the model must not introduce new text).
    """
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise AlignmentParseError("response lacks an 'entries' list", raw=json.dumps(doc))
    known_text = " \n ".join(
        u.text for u in conv.gold + conv.hypothesis
    )
    entries: list[AlignmentEntry] = []
    for item in doc["entries"]:
        if not isinstance(item, dict):
            raise AlignmentParseError("entry is not an object", raw=json.dumps(doc))
        try:
            gold_idx = tuple(int(i) for i in item["gold_indices"])
            asr_idx = tuple(int(i) for i in item.get("asr_indices", ()))
            match_type = item["match_type"]
            similarity = float(item.get("similarity", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise AlignmentParseError(f"bad entry fields: {exc}", raw=json.dumps(doc))
        for key in ("gold_text", "asr_text"):
            echoed = item.get(key)
            if echoed and echoed not in known_text:
                raise AlignmentParseError(
                    f"response introduces text absent from both transcripts: {echoed!r}",
                    raw=json.dumps(doc),
                )
        if match_type == MATCH_MISSING:
            asr_idx = ()
        entries.append(
            AlignmentEntry(
                gold_indices=gold_idx,
                asr_indices=asr_idx,
                match_type=match_type,
                similarity=min(max(similarity, 0.0), 1.0),
                multi_fragment=len(asr_idx) > 1,
            )
        )
    return entries


def align_llm(req: AlignerRequest, gateway: LlmGateway) -> Alignment:
    """LLM-backed alignment: prompt, parse (one repair attempt), refine,
    then validate. Constraint violations after refinement are an error."""
    conv = req.conversation
    payload = build_aligner_payload(conv)
    request = GenerationRequest(
        instruction=ALIGNER_INSTRUCTION,
        payload=payload,
        params=req.decoding,
        response_contract="structured_document",
    )
    result = gateway.generate(request)
    try:
        doc = extract_structured(result.text)
    except StructuredOutputError:
        repair = GenerationRequest(
            instruction=ALIGNER_INSTRUCTION + "\n" + REPAIR_INSTRUCTION,
            payload=payload,
            params=req.decoding,
            response_contract="structured_document",
        )
        retry = gateway.generate(repair)
        try:
            doc = extract_structured(retry.text)
        except StructuredOutputError as exc:
            raise AlignmentParseError(
                "model output stayed unparseable after one repair attempt",
                raw=exc.raw,
            ) from None
    raw_entries = parse_aligner_response(doc, conv)
    raw = Alignment(conversation_id=conv.id, entries=tuple(raw_entries))
    refined = refine(raw, conv)
    violations = validate_alignment(refined, conv)
    if violations:
        raise AlignmentConstraintError(violations)
    return refined


# ---------------------------------------------------------------------------
# Refinement

def refine(raw: Alignment, conv: Conversation) -> Alignment:
    """Deterministic repair of a raw alignment, in order:

    1. duplicate correction - consecutive gold entries whose ASR text is
       identical merge into one multi-gold entry;
    2. miss recovery - each missing gold entry is re-scored against unused
       ASR hypotheses inside its monotone window and becomes a fuzzy match
       when the best lexical similarity reaches the 0.65 threshold;
    3. multi-fragment reconstruction - entries for the same gold utterances
       over consecutive ASR fragments collapse into one entry carrying the
       mean fragment confidence and the combined time span.

    Refinement is total and idempotent.
    """
    if raw.conversation_id != conv.id:
        raise ValueError(
            f"alignment is for conversation {raw.conversation_id!r}, got {conv.id!r}"
        )
    asr_by_index = {u.index: u for u in conv.patient_utterances("hypothesis")}
    gold_by_index = {u.index: u for u in conv.patient_utterances("gold")}
    # Consecutiveness is judged on the submitted (patient) sequence of each
    # side: utterances separated only by doctor turns still count as adjacent.
    gold_pos = {idx: k for k, idx in enumerate(sorted(gold_by_index))}
    asr_pos = {idx: k for k, idx in enumerate(sorted(asr_by_index))}

    def _contiguous(indices: tuple[int, ...], pos: dict[int, int]) -> bool:
        known = [pos[i] for i in sorted(indices) if i in pos]
        if len(known) != len(indices):
            return False
        return all(b - a == 1 for a, b in zip(known, known[1:]))

    def gold_text(indices: tuple[int, ...]) -> str:
        return " ".join(
            gold_by_index[i].text for i in sorted(indices) if i in gold_by_index
        )

    def asr_text(indices: tuple[int, ...]) -> str:
        return " ".join(
            asr_by_index[j].text for j in sorted(indices) if j in asr_by_index
        )

    entries = sorted(
        (e for e in raw.entries if e.gold_indices),
        key=lambda e: min(e.gold_indices),
    )

    # Rule 3 pre-pass: the same gold index spread over several raw entries
    # with consecutive ASR fragments is one utterance split by the
    # recognizer; gather those entries together before anything else.
    merged: list[AlignmentEntry] = []
    for e in entries:
        if merged:
            prev = merged[-1]
            same_gold = set(prev.gold_indices) & set(e.gold_indices)
            combined = tuple(sorted(set(prev.asr_indices) | set(e.asr_indices)))
            if same_gold and combined and _contiguous(combined, asr_pos):
                gold_union = tuple(sorted(set(prev.gold_indices) | set(e.gold_indices)))
                merged[-1] = _rebuild(gold_union, combined, conv, gold_text, asr_text)
                continue
        merged.append(e)

    # Rule 1: consecutive gold entries sharing identical ASR text merge.
    deduped: list[AlignmentEntry] = []
    for e in merged:
        if deduped:
            prev = deduped[-1]
            if (
                prev.match_type != MATCH_MISSING
                and e.match_type != MATCH_MISSING
                and asr_text(prev.asr_indices)
                and asr_text(prev.asr_indices) == asr_text(e.asr_indices)
                and _gold_consecutive(prev.gold_indices, e.gold_indices, gold_pos)
            ):
                gold_union = tuple(sorted(set(prev.gold_indices) | set(e.gold_indices)))
                asr_union = tuple(sorted(set(prev.asr_indices) | set(e.asr_indices)))
                deduped[-1] = _rebuild(gold_union, asr_union, conv, gold_text, asr_text)
                continue
        deduped.append(e)

    # Rule 2: miss recovery against unused hypotheses, constrained to the
    # window between the neighbors' ASR indices so order is preserved.
    used = {j for e in deduped for j in e.asr_indices}
    recovered: list[AlignmentEntry] = list(deduped)
    for pos, e in enumerate(recovered):
        if e.match_type != MATCH_MISSING:
            continue
        low = -1
        for p in range(pos - 1, -1, -1):
            if recovered[p].asr_indices:
                low = max(recovered[p].asr_indices)
                break
        high = max(asr_by_index) + 1 if asr_by_index else 0
        for p in range(pos + 1, len(recovered)):
            if recovered[p].asr_indices:
                high = min(recovered[p].asr_indices)
                break
        candidates = [
            j for j in sorted(asr_by_index)
            if j not in used and low < j < high
        ]
        if not candidates:
            continue
        text = gold_text(e.gold_indices)
        scored = [(lexical_similarity(text, asr_by_index[j].text), -j) for j in candidates]
        best_sim, neg_j = max(scored)
        if best_sim >= MISS_RECOVERY_THRESHOLD:
            j = -neg_j
            used.add(j)
            recovered[pos] = _entry(
                e.gold_indices, (j,), MATCH_FUZZY, best_sim, conv
            )

    # Canonicalize entry-level fields (multi-fragment metadata included).
    final = [
        _rebuild(e.gold_indices, e.asr_indices, conv, gold_text, asr_text,
                 similarity=e.similarity, match_type=e.match_type)
        for e in recovered
    ]
    return Alignment(conversation_id=conv.id, entries=tuple(final), standard=raw.standard)


def _gold_consecutive(a: tuple[int, ...], b: tuple[int, ...],
                      pos: dict[int, int]) -> bool:
    if max(a) not in pos or min(b) not in pos:
        return False
    return pos[min(b)] == pos[max(a)] + 1


def _rebuild(gold: tuple[int, ...], asr: tuple[int, ...], conv: Conversation,
             gold_text, asr_text, similarity: float | None = None,
             match_type: str | None = None) -> AlignmentEntry:
    if not asr:
        return _missing_entry(tuple(sorted(gold)))
    gtext, atext = gold_text(gold), asr_text(asr)
    sim = lexical_similarity(gtext, atext)
    if match_type in (MATCH_EXACT, MATCH_FUZZY) and similarity is not None:
        # Preserve a model-provided similarity for untouched entries.
        sim = similarity if similarity > 0 else sim
        mtype = match_type
    else:
        mtype = MATCH_EXACT if normalize(gtext) == normalize(atext) else MATCH_FUZZY
    return _entry(tuple(sorted(gold)), tuple(sorted(asr)), mtype, sim, conv)


# ---------------------------------------------------------------------------
# Evaluation against a gold alignment standard

@dataclass(frozen=True)
class ClassificationAccuracy:
    gold_side: float
    asr_side: float
    false_positives: int
    false_negatives: int

    def to_dict(self) -> dict:
        return {
            "gold_side": self.gold_side,
            "asr_side": self.asr_side,
            "fp": self.false_positives,
            "fn": self.false_negatives,
        }


def _matched_sets(a: Alignment) -> tuple[set[int], set[int]]:
    matched_gold: set[int] = set()
    matched_asr: set[int] = set()
    for e in a.entries:
        if e.match_type != MATCH_MISSING and e.asr_indices:
            matched_gold.update(e.gold_indices)
            matched_asr.update(e.asr_indices)
    return matched_gold, matched_asr


def eval_classification_accuracy(
    pred: Alignment, truth: GoldAlignmentStandard, conv: Conversation | None = None
) -> ClassificationAccuracy:
    """Binary matched/unmatched accuracy per side.

    A false positive labels a true match as a miss; a false negative fails
    to identify a true miss.
    """
    if pred.conversation_id != truth.conversation_id:
        raise ValueError("alignments describe different conversations")
    pred_gold, pred_asr = _matched_sets(pred)
    true_gold, true_asr = _matched_sets(truth)
    if conv is not None:
        gold_universe = {u.index for u in conv.patient_utterances("gold")}
        asr_universe = {u.index for u in conv.patient_utterances("hypothesis")}
    else:
        gold_universe = {g for e in truth.entries for g in e.gold_indices} | {
            g for e in pred.entries for g in e.gold_indices
        }
        asr_universe = true_asr | pred_asr
    fp = 0
    fn = 0
    correct_gold = 0
    for g in gold_universe:
        p, t = g in pred_gold, g in true_gold
        if p == t:
            correct_gold += 1
        elif t and not p:
            fp += 1
        else:
            fn += 1
    correct_asr = 0
    for j in asr_universe:
        p, t = j in pred_asr, j in true_asr
        if p == t:
            correct_asr += 1
        elif t and not p:
            fp += 1
        else:
            fn += 1
    return ClassificationAccuracy(
        gold_side=correct_gold / len(gold_universe) if gold_universe else 1.0,
        asr_side=correct_asr / len(asr_universe) if asr_universe else 1.0,
        false_positives=fp,
        false_negatives=fn,
    )


def eval_structural_accuracy(pred: Alignment, truth: GoldAlignmentStandard) -> float:
    """Fraction of gold utterances mapped to exactly the true ASR index set."""
    if pred.conversation_id != truth.conversation_id:
        raise ValueError("alignments describe different conversations")

    def per_gold(a: Alignment) -> dict[int, frozenset[int]]:
        out: dict[int, frozenset[int]] = {}
        for e in a.entries:
            for g in e.gold_indices:
                out[g] = frozenset(e.asr_indices)
        return out

    truth_map = per_gold(truth)
    pred_map = per_gold(pred)
    if not truth_map:
        return 1.0
    correct = sum(
        1 for g, want in truth_map.items() if pred_map.get(g, frozenset()) == want
    )
    return correct / len(truth_map)
