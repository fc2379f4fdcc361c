"""Shared domain types and the canonical serialized schemas exchanged between modules.

Types are immutable values after construction and safe to share across
concurrent tasks. Corpora are line-delimited (one record per JSON line);
alignments and reports are single documents. Every file carries a
``schema_version`` field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

SCHEMA_VERSION = 1

DOCTOR = "doctor"
PATIENT = "patient"
SPEAKERS = (DOCTOR, PATIENT)

SOURCES = ("dora", "primock57", "other")

NO_IMPACT = 0
MINIMAL_IMPACT = 1
SIGNIFICANT_IMPACT = 2
IMPACT_LABELS = (NO_IMPACT, MINIMAL_IMPACT, SIGNIFICANT_IMPACT)

LABEL_NAMES = {
    NO_IMPACT: "no impact",
    MINIMAL_IMPACT: "minimal impact",
    SIGNIFICANT_IMPACT: "significant impact",
}

MATCH_EXACT = "exact"
MATCH_FUZZY = "fuzzy"
MATCH_MISSING = "missing"
MATCH_TYPES = (MATCH_EXACT, MATCH_FUZZY, MATCH_MISSING)

SPLIT_TRAIN = "train"
SPLIT_VALIDATION = "validation"
SPLIT_TEST = "test"
SPLIT_UNASSIGNED = "unassigned"
SPLITS = (SPLIT_TRAIN, SPLIT_VALIDATION, SPLIT_TEST, SPLIT_UNASSIGNED)


class SchemaError(ValueError):
    """A serialized record does not decode into a valid domain object."""


@dataclass(frozen=True)
class Violation:
    """One broken invariant: which side it is on, where, and which rule."""

    side: str
    index: int | None
    rule: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "side": self.side,
            "index": self.index,
            "rule": self.rule,
            "message": self.message,
        }


@dataclass(frozen=True)
class Utterance:
    """One contiguous speaker turn in a transcript (gold or ASR side)."""

    index: int
    speaker: str
    text: str
    start_time: float | None = None
    end_time: float | None = None
    confidence: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "speaker": self.speaker,
            "text": self.text,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "confidence": self.confidence,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "Utterance":
        try:
            return Utterance(
                index=int(d["index"]),
                speaker=d["speaker"],
                text=d["text"],
                start_time=d.get("start_time"),
                end_time=d.get("end_time"),
                confidence=d.get("confidence"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad utterance record: {exc}") from exc

    @property
    def midpoint(self) -> float | None:
        if self.start_time is None or self.end_time is None:
            return None
        return (self.start_time + self.end_time) / 2.0


@dataclass(frozen=True)
class Conversation:
    """A gold transcript and its ASR hypothesis for one call."""

    id: str
    source: str
    asr_provider: str
    gold: tuple[Utterance, ...]
    hypothesis: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold", tuple(self.gold))
        object.__setattr__(self, "hypothesis", tuple(self.hypothesis))

    def side(self, name: str) -> tuple[Utterance, ...]:
        if name == "gold":
            return self.gold
        if name == "hypothesis":
            return self.hypothesis
        raise ValueError(f"unknown side {name!r}")

    def patient_utterances(self, side: str) -> tuple[Utterance, ...]:
        """Patient turns only; doctor turns are carried as context, never aligned."""
        return tuple(u for u in self.side(side) if u.speaker == PATIENT)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "asr_provider": self.asr_provider,
            "gold": [u.to_dict() for u in self.gold],
            "hypothesis": [u.to_dict() for u in self.hypothesis],
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "Conversation":
        try:
            return Conversation(
                id=d["id"],
                source=d["source"],
                asr_provider=d["asr_provider"],
                gold=tuple(Utterance.from_dict(u) for u in d["gold"]),
                hypothesis=tuple(Utterance.from_dict(u) for u in d["hypothesis"]),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad conversation record: {exc}") from exc


@dataclass(frozen=True)
class AlignmentEntry:
    """Mapping between a set of gold utterances and a set of ASR hypotheses.

    ``confidence`` and ``span`` are populated by multi-fragment reconstruction:
    the mean fragment confidence and the [min start, max end] time span.
    """

    gold_indices: tuple[int, ...]
    asr_indices: tuple[int, ...]
    match_type: str
    similarity: float
    multi_fragment: bool = False
    confidence: float | None = None
    span: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_indices", tuple(self.gold_indices))
        object.__setattr__(self, "asr_indices", tuple(self.asr_indices))
        if self.span is not None:
            object.__setattr__(self, "span", tuple(self.span))

    def to_dict(self) -> dict[str, Any]:
        return {
            "gold_indices": list(self.gold_indices),
            "asr_indices": list(self.asr_indices),
            "match_type": self.match_type,
            "similarity": self.similarity,
            "multi_fragment": self.multi_fragment,
            "confidence": self.confidence,
            "span": list(self.span) if self.span is not None else None,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "AlignmentEntry":
        try:
            span = d.get("span")
            return AlignmentEntry(
                gold_indices=tuple(int(i) for i in d["gold_indices"]),
                asr_indices=tuple(int(i) for i in d["asr_indices"]),
                match_type=d["match_type"],
                similarity=float(d["similarity"]),
                multi_fragment=bool(d.get("multi_fragment", False)),
                confidence=d.get("confidence"),
                span=tuple(span) if span is not None else None,
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad alignment entry: {exc}") from exc


@dataclass(frozen=True)
class Alignment:
    """Ordered alignment entries for one conversation.

    ``standard`` marks a human-annotated gold alignment standard.
    """

    conversation_id: str
    entries: tuple[AlignmentEntry, ...]
    standard: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "conversation_id": self.conversation_id,
            "entries": [e.to_dict() for e in self.entries],
            "standard": self.standard,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "Alignment":
        try:
            return Alignment(
                conversation_id=d["conversation_id"],
                entries=tuple(AlignmentEntry.from_dict(e) for e in d["entries"]),
                standard=bool(d.get("standard", False)),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad alignment record: {exc}") from exc


# A human-annotated truth alignment is the same shape with standard=True.
GoldAlignmentStandard = Alignment


@dataclass(frozen=True)
class LabeledExample:
    """Context window plus the paired final patient utterances, with the
    ordinal impact label once annotated."""

    id: str
    context: tuple[tuple[str, str], ...]
    gold_final: str
    hyp_final: str
    label: int | None = None
    justification: str | None = None
    split: str = SPLIT_UNASSIGNED

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "context", tuple((s, t) for s, t in self.context)
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "context": [{"speaker": s, "text": t} for s, t in self.context],
            "gold_final": self.gold_final,
            "hyp_final": self.hyp_final,
            "label": self.label,
            "justification": self.justification,
            "split": self.split,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "LabeledExample":
        try:
            context = tuple((c["speaker"], c["text"]) for c in d["context"])
            label = d.get("label")
            return LabeledExample(
                id=d["id"],
                context=context,
                gold_final=d["gold_final"],
                hyp_final=d["hyp_final"],
                label=int(label) if label is not None else None,
                justification=d.get("justification"),
                split=d.get("split", SPLIT_UNASSIGNED),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad example record: {exc}") from exc

    def with_label(self, label: int, justification: str | None = None) -> "LabeledExample":
        return replace(self, label=label, justification=justification)


@dataclass(frozen=True)
class CostMatrix:
    """3x3 reward/penalty table; row = true class, column = predicted class."""

    values: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "values", tuple(tuple(float(v) for v in row) for row in self.values)
        )
        if len(self.values) != 3 or any(len(row) != 3 for row in self.values):
            raise ValueError("cost matrix must be 3x3")

    def __getitem__(self, true_label: int) -> tuple[float, ...]:
        return self.values[true_label]

    def validate(self) -> list[Violation]:
        out: list[Violation] = []
        for c in range(3):
            if self.values[c][c] <= 1.0:
                out.append(
                    Violation(
                        "cost_matrix", c, "diagonal_reward",
                        f"diagonal entry [{c}][{c}] = {self.values[c][c]} must exceed 1.0",
                    )
                )
        minimum = min(v for row in self.values for v in row)
        if self.values[2][0] != minimum:
            out.append(
                Violation(
                    "cost_matrix", None, "missed_critical_minimum",
                    "entry [2][0] must be the minimum of the table",
                )
            )
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"values": [list(row) for row in self.values]}

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "CostMatrix":
        try:
            return CostMatrix(values=tuple(tuple(row) for row in d["values"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad cost matrix record: {exc}") from exc

    @staticmethod
    def default() -> "CostMatrix":
        return CostMatrix(
            values=(
                (1.2, 0.3, -1.0),
                (0.3, 1.5, 0.5),
                (-1.2, 0.4, 1.5),
            )
        )


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's label for one example (labels.jsonl row)."""

    example_id: str
    annotator_id: str
    label: int
    justification: str = ""
    created_at: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "annotator_id": self.annotator_id,
            "label": self.label,
            "justification": self.justification,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "AnnotationRecord":
        try:
            return AnnotationRecord(
                example_id=d["example_id"],
                annotator_id=d["annotator_id"],
                label=int(d["label"]),
                justification=d.get("justification", ""),
                created_at=d.get("created_at", ""),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad annotation record: {exc}") from exc


@dataclass(frozen=True)
class AdjudicationRecord:
    """A reconciled final label for an example."""

    example_id: str
    final_label: int
    resolver_ids: tuple[str, ...]
    note: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "resolver_ids", tuple(self.resolver_ids))

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "final_label": self.final_label,
            "resolver_ids": list(self.resolver_ids),
            "note": self.note,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "AdjudicationRecord":
        try:
            return AdjudicationRecord(
                example_id=d["example_id"],
                final_label=int(d["final_label"]),
                resolver_ids=tuple(d.get("resolver_ids", ())),
                note=d.get("note", ""),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad adjudication record: {exc}") from exc


def validate_conversation(conv: Conversation) -> list[Violation]:
    """Check every Conversation/Utterance invariant; violations are data, not failures."""
    out: list[Violation] = []
    for side in ("gold", "hypothesis"):
        utts = conv.side(side)
        if not utts:
            out.append(Violation(side, None, "nonempty", f"{side} side is empty"))
            continue
        for pos, u in enumerate(utts):
            if u.index != pos:
                out.append(
                    Violation(
                        side, u.index, "contiguous_indices",
                        f"expected index {pos} at position {pos}, found {u.index}",
                    )
                )
            if u.speaker not in SPEAKERS:
                out.append(
                    Violation(side, u.index, "speaker", f"unknown speaker {u.speaker!r}")
                )
            if u.start_time is not None and u.start_time < 0:
                out.append(
                    Violation(side, u.index, "start_time", "start_time must be >= 0")
                )
            if (
                u.start_time is not None
                and u.end_time is not None
                and u.end_time < u.start_time
            ):
                out.append(
                    Violation(
                        side, u.index, "timestamps",
                        f"end_time {u.end_time} precedes start_time {u.start_time}",
                    )
                )
            if u.confidence is not None and not (0.0 <= u.confidence <= 1.0):
                out.append(
                    Violation(side, u.index, "confidence", "confidence outside [0, 1]")
                )
    if conv.source not in SOURCES:
        out.append(Violation("conversation", None, "source", f"unknown source {conv.source!r}"))
    return out


def validate_alignment(a: Alignment, conv: Conversation) -> list[Violation]:
    """Check Alignment invariants against its conversation.

    Only patient utterances are submitted for alignment; doctor turns are
    context. Raises ValueError when the alignment references a different
    conversation (wrong pairing is a failure, not a violation).
    """
    if a.conversation_id != conv.id:
        raise ValueError(
            f"alignment is for conversation {a.conversation_id!r}, got {conv.id!r}"
        )
    out: list[Violation] = []
    gold_universe = {u.index for u in conv.patient_utterances("gold")}
    asr_universe = {u.index for u in conv.patient_utterances("hypothesis")}

    seen_gold: dict[int, int] = {}
    seen_asr: dict[int, int] = {}
    for n, e in enumerate(a.entries):
        if not e.gold_indices:
            out.append(
                Violation("alignment", n, "gold_nonempty", "entry has no gold indices")
            )
        if (e.match_type == MATCH_MISSING) != (len(e.asr_indices) == 0):
            out.append(
                Violation(
                    "alignment", n, "missing_consistency",
                    "match_type missing iff asr_indices empty",
                )
            )
        if e.multi_fragment != (len(e.asr_indices) > 1):
            out.append(
                Violation(
                    "alignment", n, "multi_fragment_consistency",
                    "multi_fragment iff more than one asr index",
                )
            )
        if not (0.0 <= e.similarity <= 1.0):
            out.append(
                Violation("alignment", n, "similarity_range", "similarity outside [0, 1]")
            )
        if e.match_type not in MATCH_TYPES:
            out.append(
                Violation("alignment", n, "match_type", f"unknown match type {e.match_type!r}")
            )
        for g in e.gold_indices:
            if g in seen_gold:
                out.append(
                    Violation(
                        "alignment", n, "gold_disjoint",
                        f"gold index {g} already used by entry {seen_gold[g]}",
                    )
                )
            seen_gold[g] = n
            if g not in gold_universe:
                out.append(
                    Violation(
                        "alignment", n, "gold_known",
                        f"gold index {g} is not a patient utterance of the conversation",
                    )
                )
        for j in e.asr_indices:
            if j in seen_asr:
                out.append(
                    Violation(
                        "alignment", n, "match_once",
                        f"asr index {j} already used by entry {seen_asr[j]}",
                    )
                )
            seen_asr[j] = n
            if j not in asr_universe:
                out.append(
                    Violation(
                        "alignment", n, "asr_known",
                        f"asr index {j} is not a patient utterance of the conversation",
                    )
                )
    uncovered = gold_universe - set(seen_gold)
    for g in sorted(uncovered):
        out.append(
            Violation(
                "alignment", None, "gold_coverage",
                f"gold patient utterance {g} is not covered by any entry",
            )
        )

    # Sorted by min gold index, the min asr indices of non-missing entries
    # must be strictly increasing.
    ordered = sorted(
        (e for e in a.entries if e.gold_indices), key=lambda e: min(e.gold_indices)
    )
    last_min = -1
    for e in ordered:
        if e.match_type == MATCH_MISSING or not e.asr_indices:
            continue
        low = min(e.asr_indices)
        if low <= last_min:
            out.append(
                Violation(
                    "alignment", None, "non_crossing",
                    f"asr index {low} breaks the strictly increasing entry order",
                )
            )
        last_min = low
    return out


# ---------------------------------------------------------------------------
# File I/O: line-delimited corpora with a leading meta record, plus
# single-document JSON files.

def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def meta_record(**extra: Any) -> dict[str, Any]:
    rec = {"record_type": "meta", "schema_version": SCHEMA_VERSION}
    rec.update(extra)
    return rec


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]],
                meta: dict[str, Any] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(_dump(meta) + "\n")
        for rec in records:
            fh.write(_dump(rec) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if isinstance(rec, dict) and rec.get("record_type") == "meta":
                continue
            yield rec


def write_document(path: str | Path, doc: dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(doc)
    doc.setdefault("schema_version", SCHEMA_VERSION)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_document(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def read_conversations(path: str | Path) -> list[Conversation]:
    return [Conversation.from_dict(d) for d in read_jsonl(path)]


def write_conversations(path: str | Path, convs: Iterable[Conversation],
                        meta: dict[str, Any] | None = None) -> None:
    write_jsonl(path, (c.to_dict() for c in convs), meta=meta or meta_record())


def read_examples(path: str | Path) -> list[LabeledExample]:
    return [LabeledExample.from_dict(d) for d in read_jsonl(path)]


def write_examples(path: str | Path, examples: Iterable[LabeledExample],
                   meta: dict[str, Any] | None = None) -> None:
    write_jsonl(path, (e.to_dict() for e in examples), meta=meta or meta_record())


def read_labels(path: str | Path) -> list[AnnotationRecord]:
    return [AnnotationRecord.from_dict(d) for d in read_jsonl(path)]


def write_labels(path: str | Path, records: Iterable[AnnotationRecord],
                 meta: dict[str, Any] | None = None) -> None:
    write_jsonl(path, (r.to_dict() for r in records), meta=meta or meta_record())
