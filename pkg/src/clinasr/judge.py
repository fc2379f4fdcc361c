"""Clinical-impact judging and reflective prompt optimization.

The judge renders a chain-of-thought prompt per example, parses a reasoning
block plus an ordinal label, and scores against a cost matrix that rewards
the diagonal and heavily penalizes missed significant errors. The optimizer
runs an evaluate / reflect / propose / select loop retaining a Pareto
frontier over per-validation-example cost vectors.

Candidate evaluations may fan out concurrently; frontier mutation happens in
one place and the whole optimizer state checkpoints to a single document.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .gateway import (
    ALIGNER_PRESET,
    GenerationRequest,
    GatewayError,
    LlmGateway,
    StructuredOutputError,
    extract_structured,
)
from .metrics import edit_ops
from .models import CostMatrix, IMPACT_LABELS, LABEL_NAMES, LabeledExample
from .textnorm import normalize, tokenize_words

# The judge's decoding parameters default to the aligner preset; reports
# record the choice because no judge-specific parameters are published.
JUDGE_PRESET = ALIGNER_PRESET

MINIBATCH_SIZE = 3
REFLECTION_CANDIDATES = 3
STALL_LIMIT = 10

BASE_INSTRUCTION = """\
You assess whether an ASR transcription error changes the clinical
understanding of a patient's condition. You see a short dialogue context,
the ground-truth final patient utterance, and the transcribed version.
Think step by step about what changed and whether it is clinically relevant,
then answer with one label:
0 - no change in understanding of the patient's clinical condition
1 - changed understanding with minimal clinical impact
2 - changed understanding with significant clinical impact
"""

JUDGE_CONTRACT = (
    "Write your step-by-step reasoning first, then finish with a single "
    "line of the form:\nlabel: <0, 1, or 2>"
)

JUDGE_REPAIR = (
    "Your previous answer did not end with a parseable label line. Answer "
    "again: reasoning first, then one final line 'label: <0, 1, or 2>'."
)

REFLECTION_INSTRUCTION = """\
You improve the instruction given to a clinical-impact judge. You receive
the current instruction and a set of failed examples with feedback about
each misjudgment. Write improved instructions that keep the required output
contract and address the failure patterns.

Respond with only a JSON array of {k} improved instruction strings.
"""

_LABEL_RE = re.compile(r"label\s*[:=]\s*([0-9]+)", re.IGNORECASE)


class JudgmentError(RuntimeError):
    """A verdict stayed unparseable after one repair attempt."""

    def __init__(self, example_id: str, raw: str):
        super().__init__(f"no parseable verdict for example {example_id}")
        self.example_id = example_id
        self.raw = raw


@dataclass(frozen=True)
class JudgeVerdict:
    example_id: str
    reasoning: str
    label: int
    prompt_id: str

    def __post_init__(self) -> None:
        if not self.reasoning:
            raise ValueError("reasoning must be nonempty")
        if self.label not in IMPACT_LABELS:
            raise ValueError(f"label {self.label} outside {{0,1,2}}")

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "reasoning": self.reasoning,
            "label": self.label,
            "prompt_id": self.prompt_id,
        }


@dataclass(frozen=True)
class PromptCandidate:
    id: str
    instruction: str
    parent_id: str | None = None
    val_scores: tuple[float, ...] = ()
    aggregate: float = 0.0

    def evaluated(self) -> bool:
        return bool(self.val_scores)

    def dominates(self, other: "PromptCandidate") -> bool:
        a, b = self.val_scores, other.val_scores
        if len(a) != len(b) or not a:
            return False
        return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "parent_id": self.parent_id,
            "val_scores": list(self.val_scores),
            "aggregate": self.aggregate,
        }

    @staticmethod
    def from_dict(d: dict) -> "PromptCandidate":
        return PromptCandidate(
            id=d["id"],
            instruction=d["instruction"],
            parent_id=d.get("parent_id"),
            val_scores=tuple(d.get("val_scores", ())),
            aggregate=float(d.get("aggregate", 0.0)),
        )


@dataclass
class OptimizerState:
    frontier: list[PromptCandidate]
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]
    cost: CostMatrix
    budget: int
    minibatch_size: int = MINIBATCH_SIZE
    reflection_k: int = REFLECTION_CANDIDATES
    seed: int = 0
    iteration: int = 0
    candidate_counter: int = 0
    evaluations: int = 0
    stall: int = 0
    errors: list[str] = field(default_factory=list)

    def best(self) -> PromptCandidate | None:
        evaluated = [c for c in self.frontier if c.evaluated()]
        if not evaluated:
            return None
        return max(evaluated, key=lambda c: c.aggregate)

    def to_dict(self) -> dict:
        return {
            "frontier": [c.to_dict() for c in self.frontier],
            "train_ids": list(self.train_ids),
            "val_ids": list(self.val_ids),
            "test_ids": list(self.test_ids),
            "cost": self.cost.to_dict(),
            "budget": self.budget,
            "minibatch_size": self.minibatch_size,
            "reflection_k": self.reflection_k,
            "seed": self.seed,
            "iteration": self.iteration,
            "candidate_counter": self.candidate_counter,
            "evaluations": self.evaluations,
            "stall": self.stall,
            "errors": list(self.errors),
        }

    @staticmethod
    def from_dict(d: dict) -> "OptimizerState":
        return OptimizerState(
            frontier=[PromptCandidate.from_dict(c) for c in d["frontier"]],
            train_ids=list(d["train_ids"]),
            val_ids=list(d["val_ids"]),
            test_ids=list(d["test_ids"]),
            cost=CostMatrix.from_dict(d["cost"]),
            budget=int(d["budget"]),
            minibatch_size=int(d.get("minibatch_size", MINIBATCH_SIZE)),
            reflection_k=int(d.get("reflection_k", REFLECTION_CANDIDATES)),
            seed=int(d.get("seed", 0)),
            iteration=int(d.get("iteration", 0)),
            candidate_counter=int(d.get("candidate_counter", 0)),
            evaluations=int(d.get("evaluations", 0)),
            stall=int(d.get("stall", 0)),
            errors=list(d.get("errors", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )

    @staticmethod
    def load(path: str | Path) -> "OptimizerState":
        return OptimizerState.from_dict(
            json.loads(Path(path).read_text(encoding="utf-8"))
        )


def new_state(
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    test_ids: Sequence[str],
    cost: CostMatrix | None = None,
    budget: int = 300,
    seed: int = 0,
    base_instruction: str = BASE_INSTRUCTION,
) -> OptimizerState:
    seedling = PromptCandidate(id="p0000", instruction=base_instruction)
    return OptimizerState(
        frontier=[seedling],
        train_ids=list(train_ids),
        val_ids=list(val_ids),
        test_ids=list(test_ids),
        cost=cost or CostMatrix.default(),
        budget=budget,
        seed=seed,
        candidate_counter=1,
    )


# ---------------------------------------------------------------------------
# Judging

def render_judge_prompt(example: LabeledExample, instruction: str) -> tuple[str, str]:
    lines = ["Dialogue context:"]
    for speaker, text in example.context:
        lines.append(f"{speaker}: {text}")
    lines.append("")
    lines.append(f'Ground-truth final patient utterance: "{example.gold_final}"')
    lines.append(f'Transcribed final patient utterance: "{example.hyp_final}"')
    lines.append("")
    lines.append(
        "If uncorrected, and if you could only read the transcription alone, "
        "would it have changed your understanding of the patient's clinical "
        "condition?"
    )
    payload = "\n".join(lines)
    return instruction.rstrip() + "\n\n" + JUDGE_CONTRACT, payload


def parse_verdict(text: str, example_id: str, prompt_id: str) -> JudgeVerdict | None:
    matches = list(_LABEL_RE.finditer(text))
    if not matches:
        return None
    last = matches[-1]
    label = int(last.group(1))
    if label not in IMPACT_LABELS:
        return None
    reasoning = text[: last.start()].strip() or text.strip()
    return JudgeVerdict(
        example_id=example_id, reasoning=reasoning, label=label, prompt_id=prompt_id
    )


def judge_one(example: LabeledExample, prompt: PromptCandidate,
              gateway: LlmGateway) -> JudgeVerdict:
    """One verdict with chain-of-thought reasoning; one repair re-prompt on
    an unparseable label, then a JudgmentError."""
    instruction, payload = render_judge_prompt(example, prompt.instruction)
    req = GenerationRequest(
        instruction=instruction, payload=payload, params=JUDGE_PRESET
    )
    result = gateway.generate(req)
    verdict = parse_verdict(result.text, example.id, prompt.id)
    if verdict is not None:
        return verdict
    repair = GenerationRequest(
        instruction=instruction + "\n" + JUDGE_REPAIR,
        payload=payload,
        params=JUDGE_PRESET,
    )
    retry = gateway.generate(repair)
    verdict = parse_verdict(retry.text, example.id, prompt.id)
    if verdict is not None:
        return verdict
    raise JudgmentError(example.id, raw=retry.text)


def cost_score(true_label: int, pred_label: int, cost: CostMatrix) -> float:
    if true_label not in IMPACT_LABELS or pred_label not in IMPACT_LABELS:
        raise ValueError(f"labels must be in {{0,1,2}}, got ({true_label}, {pred_label})")
    return cost[true_label][pred_label]


def _word_diff(gold: str, hyp: str) -> str:
    gold_tokens = tokenize_words(normalize(gold))
    hyp_tokens = tokenize_words(normalize(hyp))
    bits: list[str] = []
    for op, ref_tok, hyp_tok in edit_ops(gold_tokens, hyp_tokens):
        if op == "sub":
            bits.append(f"'{ref_tok}' became '{hyp_tok}'")
        elif op == "del":
            bits.append(f"'{ref_tok}' was dropped")
        elif op == "ins":
            bits.append(f"'{hyp_tok}' was inserted")
    return "; ".join(bits) if bits else "no token-level difference"


def feedback_for(example: LabeledExample, verdict: JudgeVerdict,
                 cost: CostMatrix) -> str:
    """Deterministic textual feedback for a misjudged example."""
    if example.label is None:
        raise ValueError(f"example {example.id} has no gold label")
    if verdict.label == example.label:
        raise ValueError("feedback is only generated for disagreements")
    incurred = cost_score(example.label, verdict.label, cost)
    true_name = LABEL_NAMES[example.label]
    pred_name = LABEL_NAMES[verdict.label]
    lines = [
        f"Example {example.id}: the true class is {example.label} ({true_name}) "
        f"but the judge predicted {verdict.label} ({pred_name}), incurring a "
        f"cost of {incurred}.",
    ]
    if example.label == 2 and verdict.label == 0:
        lines.append(
            "The judge missed a significant-impact error; this is the most "
            "heavily penalized failure."
        )
    elif abs(example.label - verdict.label) == 1:
        lines.append("This is an adjacent-class confusion.")
    lines.append(f"Transcription difference: {_word_diff(example.gold_final, example.hyp_final)}.")
    if example.justification:
        lines.append(f"Annotator justification: {example.justification}")
    return "\n".join(lines)


def _evaluate_on(
    examples: Sequence[LabeledExample],
    candidate: PromptCandidate,
    gateway: LlmGateway,
    cost: CostMatrix,
) -> tuple[list[float], list[tuple[LabeledExample, JudgeVerdict | None]], int]:
    """Cost per example; judgment errors score the worst table entry."""
    worst = min(v for row in cost.values for v in row)
    scores: list[float] = []
    verdicts: list[tuple[LabeledExample, JudgeVerdict | None]] = []
    evaluations = 0
    for ex in examples:
        evaluations += 1
        try:
            verdict = judge_one(ex, candidate, gateway)
            scores.append(cost_score(ex.label, verdict.label, cost))
            verdicts.append((ex, verdict))
        except (JudgmentError, GatewayError):
            scores.append(worst)
            verdicts.append((ex, None))
    return scores, verdicts, evaluations


def _request_reflection(
    current: PromptCandidate,
    feedback: list[str],
    k: int,
    gateway: LlmGateway,
) -> list[str]:
    instruction = REFLECTION_INSTRUCTION.format(k=k)
    payload = json.dumps(
        {"current_instruction": current.instruction, "failures": feedback},
        sort_keys=True,
    )
    req = GenerationRequest(
        instruction=instruction, payload=payload, params=JUDGE_PRESET,
        response_contract="structured_document",
    )
    result = gateway.generate(req)
    try:
        doc = extract_structured(result.text)
    except StructuredOutputError:
        repair = GenerationRequest(
            instruction=instruction + "\nRespond with only the JSON array.",
            payload=payload, params=JUDGE_PRESET,
            response_contract="structured_document",
        )
        doc = extract_structured(gateway.generate(repair).text)
    if not isinstance(doc, list):
        raise StructuredOutputError("reflection must return a JSON array",
                                    raw=result.text)
    return [s for s in doc if isinstance(s, str) and s.strip()][:k]


def _insert_candidate(frontier: list[PromptCandidate],
                      candidate: PromptCandidate) -> list[PromptCandidate]:
    """Insert unless dominated or textually already present; prune members
    the newcomer dominates."""
    if any(member.instruction == candidate.instruction for member in frontier):
        return frontier
    if any(member.dominates(candidate) for member in frontier):
        return frontier
    kept = [m for m in frontier if not candidate.dominates(m)]
    kept.append(candidate)
    return kept


def optimize(
    state: OptimizerState,
    examples: Mapping[str, LabeledExample],
    gateway: LlmGateway,
    reflection_gateway: LlmGateway | None = None,
) -> OptimizerState:
    """One optimizer iteration.

    Evaluates a frontier-sampled prompt on a training minibatch, builds
    feedback for its failures, asks the reflection model for candidate
    instructions, evaluates them on the full validation set under the cost
    matrix, and inserts survivors into the Pareto frontier. Gateway failures
    degrade the iteration (skipped candidates) rather than aborting it.
    """
    if state.budget <= 0:
        return state
    if not state.frontier:
        raise ValueError("optimizer frontier is empty; seed it with a baseline prompt")
    reflector = reflection_gateway or gateway
    rng = np.random.default_rng((state.seed, state.iteration))
    val_examples = [examples[i] for i in state.val_ids]

    frontier = list(state.frontier)
    budget = state.budget
    counter = state.candidate_counter
    evaluations = state.evaluations
    errors = list(state.errors)
    previous_best = state.best()

    # Frontier members need validation vectors before they can be compared.
    for idx, member in enumerate(frontier):
        if member.evaluated() or budget <= 0:
            continue
        scores, _, used = _evaluate_on(val_examples, member, gateway, state.cost)
        budget -= used
        evaluations += used
        frontier[idx] = replace(
            member,
            val_scores=tuple(scores),
            aggregate=float(np.mean(scores)) if scores else 0.0,
        )

    sampled = frontier[int(rng.integers(0, len(frontier)))]

    batch_size = min(state.minibatch_size, len(state.train_ids))
    picked = rng.choice(len(state.train_ids), size=batch_size, replace=False)
    minibatch = [examples[state.train_ids[int(i)]] for i in picked]

    _, outcomes, used = _evaluate_on(minibatch, sampled, gateway, state.cost)
    budget -= used
    evaluations += used

    # Feedback only for failures: perfect-score examples are skipped.
    feedback: list[str] = []
    for ex, verdict in outcomes:
        if verdict is None:
            feedback.append(
                f"Example {ex.id}: the judge produced no parseable verdict."
            )
        elif verdict.label != ex.label:
            feedback.append(feedback_for(ex, verdict, state.cost))

    new_candidates: list[PromptCandidate] = []
    if feedback and budget > 0:
        try:
            proposals = _request_reflection(sampled, feedback, state.reflection_k, reflector)
        except (GatewayError, StructuredOutputError) as exc:
            proposals = []
            errors.append(f"iteration {state.iteration}: reflection failed: {exc}")
        for text in proposals:
            new_candidates.append(
                PromptCandidate(
                    id=f"p{counter:04d}", instruction=text, parent_id=sampled.id
                )
            )
            counter += 1

    for candidate in new_candidates:
        if budget < len(val_examples):
            errors.append(
                f"iteration {state.iteration}: budget exhausted before "
                f"evaluating {candidate.id}"
            )
            break
        scores, _, used = _evaluate_on(val_examples, candidate, gateway, state.cost)
        budget -= used
        evaluations += used
        evaluated = replace(
            candidate,
            val_scores=tuple(scores),
            aggregate=float(np.mean(scores)) if scores else 0.0,
        )
        frontier = _insert_candidate(frontier, evaluated)

    next_state = replace(
        state,
        frontier=frontier,
        budget=budget,
        candidate_counter=counter,
        evaluations=evaluations,
        iteration=state.iteration + 1,
        errors=errors,
    )
    best = next_state.best()
    improved = (
        best is not None
        and (previous_best is None or best.aggregate > previous_best.aggregate)
    )
    next_state.stall = 0 if improved else state.stall + 1
    return next_state


def converged(state: OptimizerState) -> bool:
    return state.budget <= 0 or state.stall >= STALL_LIMIT


def select_final(state: OptimizerState) -> PromptCandidate:
    """Highest aggregate wins; ties break to the shorter instruction, then
    the lexicographically smaller id."""
    evaluated = [c for c in state.frontier if c.evaluated()]
    if not evaluated:
        if not state.frontier:
            raise ValueError("optimizer frontier is empty")
        return state.frontier[0]
    return min(
        evaluated,
        key=lambda c: (-c.aggregate, len(c.instruction), c.id),
    )


def lineage(state: OptimizerState, candidate: PromptCandidate) -> list[str]:
    by_id = {c.id: c for c in state.frontier}
    chain = [candidate.id]
    seen = {candidate.id}
    cur = candidate
    while cur.parent_id and cur.parent_id in by_id and cur.parent_id not in seen:
        chain.append(cur.parent_id)
        seen.add(cur.parent_id)
        cur = by_id[cur.parent_id]
    if cur.parent_id and cur.parent_id not in seen:
        chain.append(cur.parent_id)
    return chain
