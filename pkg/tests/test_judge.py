import json
import re

import pytest

from clinasr.gateway import CallableGateway, GenerationRequest, TransportError
from clinasr.judge import (
    BASE_INSTRUCTION,
    JudgmentError,
    JudgeVerdict,
    OptimizerState,
    PromptCandidate,
    cost_score,
    converged,
    feedback_for,
    judge_one,
    lineage,
    new_state,
    optimize,
    render_judge_prompt,
    select_final,
)
from clinasr.models import CostMatrix, LabeledExample


COST_TABLE = {
    (0, 0): 1.2, (0, 1): 0.3, (0, 2): -1.0,
    (1, 0): 0.3, (1, 1): 1.5, (1, 2): 0.5,
    (2, 0): -1.2, (2, 1): 0.4, (2, 2): 1.5,
}


def _example(ex_id="e1", label=2, gold="there is some extra bleeding",
             hyp="there isnt some extra bleeding"):
    return LabeledExample(
        id=ex_id,
        context=(("doctor", "how is the eye"), ("patient", "a bit sore")),
        gold_final=gold,
        hyp_final=hyp,
        label=label,
        justification="negation flips the symptom",
    )


class TestCostScore:
    @pytest.mark.parametrize("true_label,pred_label", sorted(COST_TABLE))
    def test_all_nine_entries(self, true_label, pred_label):
        value = cost_score(true_label, pred_label, CostMatrix.default())
        assert value == COST_TABLE[(true_label, pred_label)]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cost_score(3, 0, CostMatrix.default())
        with pytest.raises(ValueError):
            cost_score(0, -1, CostMatrix.default())


class TestJudgeOne:
    def test_parses_reasoning_and_label(self):
        gateway = CallableGateway(
            lambda req: "The negation flips the meaning.\nlabel: 2"
        )
        verdict = judge_one(_example(), PromptCandidate("p0", BASE_INSTRUCTION), gateway)
        assert verdict.label == 2
        assert "negation" in verdict.reasoning
        assert verdict.example_id == "e1"
        assert verdict.prompt_id == "p0"

    def test_out_of_range_label_repaired_then_error(self):
        calls = {"n": 0}

        def fn(req):
            calls["n"] += 1
            return "thinking...\nlabel: 5"

        with pytest.raises(JudgmentError) as err:
            judge_one(_example(), PromptCandidate("p0", BASE_INSTRUCTION),
                      CallableGateway(fn))
        assert calls["n"] == 2  # one repair attempt
        assert err.value.example_id == "e1"

    def test_repair_succeeds_second_time(self):
        responses = iter(["no label here", "after repair\nlabel: 1"])
        gateway = CallableGateway(lambda req: next(responses))
        verdict = judge_one(_example(), PromptCandidate("p0", BASE_INSTRUCTION), gateway)
        assert verdict.label == 1

    def test_identical_finals_with_faithful_mock(self):
        example = _example(label=0, gold="all good", hyp="all good")

        def faithful(req):
            gold = re.search(r'Ground-truth final patient utterance: "(.*)"', req.payload)
            hyp = re.search(r'Transcribed final patient utterance: "(.*)"', req.payload)
            label = 0 if gold.group(1) == hyp.group(1) else 2
            return f"texts are identical\nlabel: {label}"

        verdict = judge_one(example, PromptCandidate("p0", BASE_INSTRUCTION),
                            CallableGateway(faithful))
        assert verdict.label == 0

    def test_prompt_contains_question_and_context(self):
        instruction, payload = render_judge_prompt(_example(), BASE_INSTRUCTION)
        assert "would it have changed your understanding" in payload
        assert "doctor: how is the eye" in payload
        assert "label: <0, 1, or 2>" in instruction

    def test_verdict_requires_reasoning(self):
        with pytest.raises(ValueError):
            JudgeVerdict(example_id="e", reasoning="", label=0, prompt_id="p")


class TestFeedback:
    def test_missed_significant_error(self):
        verdict = JudgeVerdict("e1", "looked fine to me", 0, "p0")
        text = feedback_for(_example(label=2), verdict, CostMatrix.default())
        assert "true class is 2" in text
        assert "predicted 0" in text
        assert "-1.2" in text
        assert "missed a significant-impact error" in text
        assert "negation flips the symptom" in text

    def test_adjacent_overcall(self):
        verdict = JudgeVerdict("e1", "slightly changed", 1, "p0")
        text = feedback_for(_example(label=0), verdict, CostMatrix.default())
        assert "0.3" in text
        assert "adjacent-class confusion" in text

    def test_agreement_rejected(self):
        verdict = JudgeVerdict("e1", "agree", 2, "p0")
        with pytest.raises(ValueError):
            feedback_for(_example(label=2), verdict, CostMatrix.default())

    def test_diff_described(self):
        verdict = JudgeVerdict("e1", "hmm", 0, "p0")
        text = feedback_for(_example(label=2), verdict, CostMatrix.default())
        assert "'is' became 'isnt'" in text


# ---------------------------------------------------------------------------
# Scripted optimizer harness: instruction carries a version marker; the judge
# answers correctly on examples whose rank is below the version.

def _make_examples(n=9):
    labels = [0, 1, 2] * (n // 3) + [0] * (n % 3)
    return {
        f"ex{i:02d}": _example(ex_id=f"ex{i:02d}", label=labels[i])
        for i in range(n)
    }


def _rank_of(payload: str, examples) -> int:
    gold = re.search(r'Ground-truth.*?: "(.*)"', payload)
    # gold text is shared; rank derives from the example id embedded in hyp
    hyp = re.search(r'Transcribed final patient utterance: "(.*)"', payload)
    return int(hyp.group(1).rsplit(" ", 1)[-1])


def _versioned_examples(n=9):
    labels = [0, 1, 2] * (n // 3)
    return {
        f"ex{i:02d}": LabeledExample(
            id=f"ex{i:02d}", context=(),
            gold_final="the answer utterance",
            hyp_final=f"the answer utterance {i}",
            label=labels[i], justification="j",
        )
        for i in range(n)
    }


def _version(instruction: str) -> int:
    m = re.search(r"\bv(\d+)\b", instruction)
    return int(m.group(1)) if m else 0


def scripted_judge(examples):
    def fn(req: GenerationRequest) -> str:
        if "improve the instruction" in req.instruction.lower():
            doc = json.loads(req.payload)
            v = _version(doc["current_instruction"])
            return json.dumps([f"judge carefully v{v + 1}", f"judge sloppily v0"])
        rank = _rank_of(req.payload, examples)
        v = _version(req.instruction)
        example = examples[f"ex{rank:02d}"]
        if rank < v:
            return f"confident\nlabel: {example.label}"
        wrong = (example.label + 1) % 3
        return f"guessing\nlabel: {wrong}"

    return CallableGateway(fn)


class TestOptimizer:
    def test_budget_zero_returns_state_unchanged(self):
        examples = _versioned_examples()
        state = new_state(list(examples)[:3], list(examples)[3:6],
                          list(examples)[6:], budget=0)
        assert optimize(state, examples, scripted_judge(examples)) is state

    def test_monotone_best_aggregate_and_frontier_invariant(self):
        examples = _versioned_examples(9)
        ids = sorted(examples)
        # validation on the low ranks so each version increment shows up
        state = new_state(ids[3:], ids[:3], [],
                          budget=10_000, seed=5,
                          base_instruction="baseline judge v0")
        gateway = scripted_judge(examples)
        best_values = []
        for _ in range(20):
            state = optimize(state, examples, gateway)
            best = state.best()
            best_values.append(best.aggregate if best else float("-inf"))
            for a in state.frontier:
                for b in state.frontier:
                    if a is not b:
                        assert not a.dominates(b) or not b.evaluated()
        assert all(b >= a - 1e-12 for a, b in zip(best_values, best_values[1:]))
        assert best_values[-1] > best_values[0]

    def test_dominated_candidate_leaves_frontier_unchanged(self):
        examples = _versioned_examples(9)
        ids = sorted(examples)
        state = new_state(ids[:3], ids[3:6], ids[6:], budget=10_000, seed=1,
                          base_instruction="baseline judge v9")

        def reflector(req):
            return json.dumps(["worse judge v0"])

        def judge_fn(req):
            if "improve the instruction" in req.instruction.lower():
                return reflector(req)
            rank = _rank_of(req.payload, examples)
            v = _version(req.instruction)
            example = examples[f"ex{rank:02d}"]
            label = example.label if rank < v else (example.label + 1) % 3
            return f"r\nlabel: {label}"

        gateway = CallableGateway(judge_fn)
        state = optimize(state, examples, gateway)
        # The v9 seed answers validation perfectly; v0 is dominated.
        front_ids = {c.instruction for c in state.frontier}
        assert front_ids == {"baseline judge v9"}

    def test_perfect_judge_closed_form_aggregate(self):
        examples = _versioned_examples(9)
        ids = sorted(examples)
        val_ids = ids[3:6]

        def perfect(req):
            if "improve the instruction" in req.instruction.lower():
                return json.dumps(["still perfect v99"])
            rank = _rank_of(req.payload, examples)
            return f"sure\nlabel: {examples[f'ex{rank:02d}'].label}"

        state = new_state(ids[:3], val_ids, ids[6:], budget=1_000, seed=0)
        state = optimize(state, examples, CallableGateway(perfect))
        cost = CostMatrix.default()
        val_labels = [examples[i].label for i in val_ids]
        want = sum(cost[y][y] for y in val_labels) / len(val_labels)
        assert state.best().aggregate == pytest.approx(want, abs=1e-12)

    def test_gateway_failure_degrades_iteration(self):
        examples = _versioned_examples(9)
        ids = sorted(examples)

        def flaky(req):
            if "improve the instruction" in req.instruction.lower():
                raise TransportError("reflection service down")
            rank = _rank_of(req.payload, examples)
            return f"r\nlabel: {(examples[f'ex{rank:02d}'].label + 1) % 3}"

        state = new_state(ids[:3], ids[3:6], ids[6:], budget=1_000, seed=2)
        state = optimize(state, examples, CallableGateway(flaky))
        assert state.iteration == 1
        assert any("reflection failed" in e for e in state.errors)

    def test_convergence_by_stall(self):
        state = new_state([], [], [], budget=100)
        state.stall = 10
        assert converged(state)
        state.stall = 0
        assert not converged(state)
        state.budget = 0
        assert converged(state)


class TestSelection:
    def test_singleton(self):
        c = PromptCandidate("p1", "only", val_scores=(1.0,), aggregate=1.0)
        state = new_state([], [], [], budget=1)
        state.frontier = [c]
        assert select_final(state) is c

    def test_higher_aggregate_wins(self):
        a = PromptCandidate("p1", "a" * 100, val_scores=(0.9,), aggregate=0.9)
        b = PromptCandidate("p2", "b" * 10, val_scores=(0.7,), aggregate=0.7)
        state = new_state([], [], [], budget=1)
        state.frontier = [a, b]
        assert select_final(state) is a

    def test_tie_breaks_to_shorter_then_id(self):
        long = PromptCandidate("p1", "x" * 200, val_scores=(0.9,), aggregate=0.9)
        short = PromptCandidate("p2", "x" * 120, val_scores=(0.9,), aggregate=0.9)
        state = new_state([], [], [], budget=1)
        state.frontier = [long, short]
        assert select_final(state) is short
        twin = PromptCandidate("p0", "y" * 120, val_scores=(0.9,), aggregate=0.9)
        state.frontier = [short, twin]
        assert select_final(state) is twin

    def test_empty_frontier_rejected(self):
        state = new_state([], [], [], budget=1)
        state.frontier = []
        with pytest.raises(ValueError):
            select_final(state)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        state = new_state(["a"], ["b"], ["c"], budget=42, seed=9)
        state.frontier.append(
            PromptCandidate("p0001", "improved", parent_id="p0000",
                            val_scores=(0.5, 1.2), aggregate=0.85)
        )
        path = tmp_path / "state.json"
        state.save(path)
        loaded = OptimizerState.load(path)
        assert loaded.to_dict() == state.to_dict()

    def test_lineage_chain(self):
        state = new_state([], [], [], budget=1)
        child = PromptCandidate("p0001", "x", parent_id="p0000")
        grandchild = PromptCandidate("p0002", "y", parent_id="p0001")
        state.frontier = [state.frontier[0], child, grandchild]
        assert lineage(state, grandchild) == ["p0002", "p0001", "p0000"]
