"""Operator command line: import, normalize, align, curate, score, analyze,
judge, optimize, serve, report.

Every command is deterministic given (inputs, config, seed) with the mock
gateway; every output embeds the config digest and tool version. Exit codes:
0 success, 1 validation failure, 2 environment/provider failure.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import click
import numpy as np

from . import __version__
from .align import (
    AlignerError,
    AlignerRequest,
    align_edit_distance,
    align_llm,
    align_timestamp_proximity,
)
from .gateway import (
    GatewayError,
    HttpGateway,
    LlmGateway,
    ProviderProfile,
    ScriptedGateway,
)
from .judge import (
    JudgmentError,
    OptimizerState,
    PromptCandidate,
    converged,
    judge_one,
    lineage,
    new_state,
    optimize,
    select_final,
)
from .metrics import get_scorer, score_all
from .models import (
    Alignment,
    AnnotationRecord,
    Conversation,
    CostMatrix,
    DOCTOR,
    LabeledExample,
    MATCH_MISSING,
    PATIENT,
    SchemaError,
    Utterance,
    meta_record,
    read_conversations,
    read_document,
    read_examples,
    read_jsonl,
    read_labels,
    validate_conversation,
    write_document,
    write_examples,
    write_jsonl,
)
from .service import ServiceConfig, ValidationFailure, create_app
from .stats import (
    LabelSeries,
    agreement,
    classification_report,
    enrichment_delta,
    kendall_tau,
    stratified_split,
)
from .textnorm import (
    METRICS_SUBSET_CONFIG,
    NormalizationConfig,
    load_lexicon,
    normalize,
)

HIGH_WER_BAND = (0.4, 1.0)


class CliState:
    def __init__(self, config_path: str | None, seed: int, out: str | None,
                 provider_profile: str | None, mock_gateway: str | None):
        self.config_path = config_path
        self.config: dict[str, Any] = {}
        if config_path:
            self.config = json.loads(Path(config_path).read_text(encoding="utf-8"))
        self.seed = seed
        self.out = Path(out) if out else Path(".")
        self.provider_profile = provider_profile
        self.mock_gateway = mock_gateway

    @property
    def config_digest(self) -> str:
        canon = json.dumps(
            {"config": self.config, "seed": self.seed}, sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def meta(self, command: str, **extra: Any) -> dict[str, Any]:
        return meta_record(
            tool_version=__version__,
            config_digest=self.config_digest,
            seed=self.seed,
            command=command,
            **extra,
        )

    def gateway(self) -> LlmGateway:
        if self.mock_gateway:
            return ScriptedGateway.load(self.mock_gateway)
        name = self.provider_profile
        profiles = self.config.get("providers", {})
        if not name:
            raise click.ClickException(
                "no gateway configured: pass --mock-gateway or --provider-profile"
            )
        if name not in profiles:
            raise SchemaError(f"provider profile {name!r} not found in config")
        profile = ProviderProfile.from_dict({"name": name, **profiles[name]})
        return HttpGateway(profile)

    def norm_config(self, metrics_mode: bool, lexicon: str | None) -> NormalizationConfig:
        if lexicon:
            return NormalizationConfig(
                remove_non_lexical=metrics_mode,
                non_lexical_lexicon=load_lexicon(lexicon),
            )
        return METRICS_SUBSET_CONFIG if metrics_mode else NormalizationConfig()


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SchemaError, ValidationFailure, ValueError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except (GatewayError, AlignerError, JudgmentError, OSError) as exc:
            click.echo(f"provider/environment error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Declarative JSON config file.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Output directory (default: current directory).")
@click.option("--provider-profile", default=None,
              help="Name of a provider profile from the config file.")
@click.option("--mock-gateway", type=click.Path(exists=True), default=None,
              help="Scripted gateway response file (deterministic runs).")
@click.pass_context
def main(ctx, config_path, seed, out, provider_profile, mock_gateway):
    """Clinical-impact evaluation toolkit for ASR transcripts."""
    ctx.obj = CliState(config_path, seed, out, provider_profile, mock_gateway)


def _outfile(state: CliState, name: str, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    state.out.mkdir(parents=True, exist_ok=True)
    return state.out / name


# ---------------------------------------------------------------------------
# import

def _index_utterances(utterances: list[dict[str, Any]]) -> list[Utterance]:
    return [
        Utterance(
            index=i,
            speaker=u["speaker"],
            text=u["text"],
            start_time=u.get("start_time"),
            end_time=u.get("end_time"),
            confidence=u.get("confidence"),
        )
        for i, u in enumerate(utterances)
    ]


def _merge_adjacent(utterances: list[dict[str, Any]]) -> list[Utterance]:
    """Concatenate adjacent turns by the same speaker into one turn.

    Applied to the ground-truth side only: ASR segmentation is the object
    under study and must arrive unmerged.
    """
    merged: list[dict[str, Any]] = []
    for u in utterances:
        if merged and merged[-1]["speaker"] == u["speaker"]:
            prev = merged[-1]
            prev["text"] = (prev["text"] + " " + u["text"]).strip()
            if u.get("end_time") is not None:
                prev["end_time"] = u["end_time"]
            confs = [c for c in (prev.get("confidence"), u.get("confidence"))
                     if c is not None]
            prev["confidence"] = float(np.mean(confs)) if confs else None
        else:
            merged.append(dict(u))
    return _index_utterances(merged)


def _map_generic(doc: dict[str, Any]) -> Conversation:
    def side(items):
        return [
            {
                "speaker": u["speaker"],
                "text": u["text"],
                "start_time": u.get("start_time"),
                "end_time": u.get("end_time"),
                "confidence": u.get("confidence"),
            }
            for u in items
        ]

    return Conversation(
        id=doc["id"],
        source=doc.get("source", "other"),
        asr_provider=doc.get("asr_provider", "unknown"),
        gold=tuple(_merge_adjacent(side(doc["gold"]))),
        hypothesis=tuple(_index_utterances(side(doc["hypothesis"]))),
    )


_DORA_ROLES = {"clinician": DOCTOR, "patient": PATIENT}


def _map_dora_like(doc: dict[str, Any]) -> Conversation:
    def side(items):
        out = []
        for u in items:
            role = u.get("role")
            if role not in _DORA_ROLES:
                raise SchemaError(f"dora_like record missing or unknown role: {u!r}")
            out.append(
                {
                    "speaker": _DORA_ROLES[role],
                    "text": u["content"],
                    "start_time": u.get("start"),
                    "end_time": u.get("end"),
                    "confidence": u.get("conf"),
                }
            )
        return out

    return Conversation(
        id=doc["call_id"],
        source="dora",
        asr_provider=doc.get("provider", "google_chirp"),
        gold=tuple(_merge_adjacent(side(doc["reference"]))),
        hypothesis=tuple(_index_utterances(side(doc["recognition"]))),
    )


_PRIMOCK_SPEAKERS = {"D": DOCTOR, "P": PATIENT}


def _map_primock_like(doc: dict[str, Any]) -> Conversation:
    def gold_side(lines):
        out = []
        for line in lines:
            tag, _, text = line.partition(":")
            tag = tag.strip().upper()
            if tag not in _PRIMOCK_SPEAKERS:
                raise SchemaError(f"primock_like line missing speaker tag: {line!r}")
            out.append(
                {"speaker": _PRIMOCK_SPEAKERS[tag], "text": text.strip(),
                 "start_time": None, "end_time": None, "confidence": None}
            )
        return out

    def asr_side(items):
        return [
            {
                "speaker": PATIENT,
                "text": u["text"],
                "start_time": u.get("start"),
                "end_time": u.get("end"),
                "confidence": u.get("confidence"),
            }
            for u in items
        ]

    return Conversation(
        id=doc["id"],
        source="primock57",
        asr_provider=doc.get("provider", "deepgram_nova3"),
        gold=tuple(_merge_adjacent(gold_side(doc["turns"]))),
        hypothesis=tuple(_index_utterances(asr_side(doc["asr_segments"]))),
    )


_MAPPINGS = {
    "generic": _map_generic,
    "dora_like": _map_dora_like,
    "primock_like": _map_primock_like,
}


@main.command("import")
@click.argument("sources", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--mapping", type=click.Choice(sorted(_MAPPINGS)), default="generic",
              show_default=True)
@click.option("--out-file", default=None, help="Defaults to <out>/conversations.jsonl")
@click.pass_obj
@handle_errors
def cmd_import(state: CliState, sources, mapping, out_file):
    """Convert source transcript files into the canonical conversations file."""
    mapper = _MAPPINGS[mapping]
    conversations = []
    for src in sources:
        text = Path(src).read_text(encoding="utf-8")
        try:
            docs = [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{src}:{exc.lineno}: not valid JSON: {exc.msg}")
        for n, doc in enumerate(docs, 1):
            try:
                conv = mapper(doc)
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"{src}:{n}: missing field under {mapping!r} mapping: {exc}")
            problems = validate_conversation(conv)
            if problems:
                messages = "; ".join(v.message for v in problems[:3])
                raise SchemaError(f"{src}:{n}: invalid conversation: {messages}")
            conversations.append(conv)
    path = _outfile(state, "conversations.jsonl", out_file)
    write_jsonl(path, (c.to_dict() for c in conversations),
                meta=state.meta("import", mapping=mapping))
    click.echo(f"imported {len(conversations)} conversations -> {path}")


@main.command("normalize")
@click.option("--conversations", "conversations_path", required=True,
              type=click.Path(exists=True))
@click.option("--metrics-mode", is_flag=True,
              help="Also remove non-lexical tokens.")
@click.option("--lexicon", type=click.Path(exists=True), default=None)
@click.option("--out-file", default=None)
@click.pass_obj
@handle_errors
def cmd_normalize(state: CliState, conversations_path, metrics_mode, lexicon, out_file):
    """Apply the normalization pipeline to every utterance text."""
    cfg = state.norm_config(metrics_mode, lexicon)
    convs = read_conversations(conversations_path)
    normalized = []
    for conv in convs:
        normalized.append(
            Conversation(
                id=conv.id,
                source=conv.source,
                asr_provider=conv.asr_provider,
                gold=tuple(
                    Utterance(u.index, u.speaker, normalize(u.text, cfg),
                              u.start_time, u.end_time, u.confidence)
                    for u in conv.gold
                ),
                hypothesis=tuple(
                    Utterance(u.index, u.speaker, normalize(u.text, cfg),
                              u.start_time, u.end_time, u.confidence)
                    for u in conv.hypothesis
                ),
            )
        )
    path = _outfile(state, "normalized.jsonl", out_file)
    write_jsonl(path, (c.to_dict() for c in normalized),
                meta=state.meta("normalize", metrics_mode=metrics_mode))
    click.echo(f"normalized {len(normalized)} conversations -> {path}")


@main.command("align")
@click.option("--conversations", "conversations_path", required=True,
              type=click.Path(exists=True))
@click.option("--aligner", type=click.Choice(["timestamp", "edit_distance", "llm"]),
              default="llm", show_default=True)
@click.option("--out-file", default=None)
@click.pass_obj
@handle_errors
def cmd_align(state: CliState, conversations_path, aligner, out_file):
    """Align gold and ASR patient utterances for every conversation."""
    convs = read_conversations(conversations_path)
    gateway = state.gateway() if aligner == "llm" else None
    alignments: list[Alignment] = []
    for conv in convs:
        if aligner == "timestamp":
            alignments.append(align_timestamp_proximity(conv))
        elif aligner == "edit_distance":
            alignments.append(align_edit_distance(conv))
        else:
            alignments.append(align_llm(AlignerRequest(conversation=conv), gateway))
    path = _outfile(state, "alignments.json", out_file)
    write_document(
        path,
        {
            "meta": state.meta("align", aligner=aligner),
            "alignments": [a.to_dict() for a in alignments],
        },
    )
    click.echo(f"aligned {len(alignments)} conversations -> {path}")


def read_alignments(path: str | Path) -> list[Alignment]:
    doc = read_document(path)
    return [Alignment.from_dict(d) for d in doc["alignments"]]


# ---------------------------------------------------------------------------
# curate

def _context_window(conv: Conversation, first_gold_index: int) -> list[tuple[str, str]]:
    """At most the preceding two doctor turns and the most recent patient turn."""
    doctors: list[Utterance] = []
    patient: Utterance | None = None
    for u in reversed(conv.gold[:first_gold_index]):
        if u.speaker == DOCTOR and len(doctors) < 2:
            doctors.append(u)
        elif u.speaker == PATIENT and patient is None:
            patient = u
        if len(doctors) == 2 and patient is not None:
            break
    window = doctors + ([patient] if patient else [])
    window.sort(key=lambda u: u.index)
    return [(u.speaker, u.text) for u in window]


@main.command("curate")
@click.option("--conversations", "conversations_path", required=True,
              type=click.Path(exists=True))
@click.option("--alignments", "alignments_path", required=True,
              type=click.Path(exists=True))
@click.option("--metrics-mode", is_flag=True,
              help="Drop pairs that become perfect after non-lexical filtering.")
@click.option("--lexicon", type=click.Path(exists=True), default=None)
@click.option("--max-examples", type=int, default=None,
              help="Seeded sampling cap; the high-WER band is kept first.")
@click.option("--high-band/--no-high-band", "include_high_band", default=True,
              show_default=True,
              help="Prefer pairs with WER in [0.4, 1) when sampling.")
@click.option("--out-file", default=None)
@click.pass_obj
@handle_errors
def cmd_curate(state: CliState, conversations_path, alignments_path, metrics_mode,
               lexicon, max_examples, include_high_band, out_file):
    """Build labeling examples from aligned pairs; perfect matches are excluded."""
    from .metrics import wer as wer_metric

    convs = {c.id: c for c in read_conversations(conversations_path)}
    alignments = read_alignments(alignments_path)
    metrics_cfg = state.norm_config(True, lexicon)
    examples: list[LabeledExample] = []
    for alignment in alignments:
        conv = convs.get(alignment.conversation_id)
        if conv is None:
            raise SchemaError(
                f"alignment references unknown conversation {alignment.conversation_id!r}"
            )
        gold_by_index = {u.index: u for u in conv.gold}
        asr_by_index = {u.index: u for u in conv.hypothesis}
        for entry in alignment.entries:
            if entry.match_type == MATCH_MISSING or not entry.asr_indices:
                continue
            gold_text = " ".join(
                gold_by_index[i].text for i in entry.gold_indices if i in gold_by_index
            )
            hyp_text = " ".join(
                asr_by_index[j].text for j in entry.asr_indices if j in asr_by_index
            )
            raw_wer = wer_metric(gold_text, hyp_text).raw
            if raw_wer == 0.0:
                continue
            if metrics_mode and wer_metric(gold_text, hyp_text, metrics_cfg).raw == 0.0:
                continue
            examples.append(
                LabeledExample(
                    id=f"{conv.id}:g{min(entry.gold_indices)}",
                    context=tuple(_context_window(conv, min(entry.gold_indices))),
                    gold_final=gold_text,
                    hyp_final=hyp_text,
                )
            )
    if not examples:
        raise ValidationFailure("curation produced no examples")

    if max_examples is not None and len(examples) > max_examples:
        rng = np.random.default_rng(state.seed)
        def band(e: LabeledExample) -> bool:
            raw = wer_metric(e.gold_final, e.hyp_final).raw
            return HIGH_WER_BAND[0] <= raw < HIGH_WER_BAND[1]
        preferred = [e for e in examples if band(e)] if include_high_band else []
        rest = [e for e in examples if e not in preferred]
        keep = preferred[:max_examples]
        remaining = max_examples - len(keep)
        if remaining > 0 and rest:
            idx = rng.choice(len(rest), size=min(remaining, len(rest)), replace=False)
            keep.extend(rest[int(i)] for i in sorted(idx))
        examples = sorted(keep, key=lambda e: e.id)

    path = _outfile(state, "examples.jsonl", out_file)
    write_examples(path, examples, meta=state.meta("curate", metrics_mode=metrics_mode))
    click.echo(f"curated {len(examples)} examples -> {path}")


# ---------------------------------------------------------------------------
# score / analyze

@main.command("score")
@click.option("--examples", "examples_path", required=True, type=click.Path(exists=True))
@click.option("--scorer", "scorers", multiple=True,
              help="Semantic scorer plug-ins by name (e.g. mock).")
@click.option("--metrics-mode", is_flag=True)
@click.option("--lexicon", type=click.Path(exists=True), default=None)
@click.option("--out-file", default=None)
@click.pass_obj
@handle_errors
def cmd_score(state: CliState, examples_path, scorers, metrics_mode, lexicon, out_file):
    """Compute the full metric battery for every example pair."""
    cfg = state.norm_config(metrics_mode, lexicon)
    plugins = [get_scorer(name) for name in scorers]
    rows = []
    for example in read_examples(examples_path):
        for result in score_all(example.gold_final, example.hyp_final, plugins, cfg):
            rows.append(
                {
                    "example_id": example.id,
                    "metric": result.name,
                    "family": result.family,
                    "raw": result.raw,
                    "normalized": result.normalized,
                    "degenerate": result.degenerate,
                    "error": result.error,
                }
            )
    rows.sort(key=lambda r: (r["example_id"], r["family"], r["metric"]))
    path = _outfile(state, "scores.jsonl", out_file)
    write_jsonl(path, rows, meta=state.meta("score", metrics_mode=metrics_mode))
    click.echo(f"scored {len(rows)} metric rows -> {path}")


def _display(value: float) -> dict[str, Any]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return {"value": None, "display": "nan"}
    return {"value": value, "display": f"{value:.3f}"}


def _labels_by_example(records: Sequence[AnnotationRecord]) -> dict[str, int]:
    return {r.example_id: r.label for r in records}


@main.command("analyze")
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None)
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None,
              help="Gold labels (labels.jsonl).")
@click.option("--annotator-labels", "annotator_paths", multiple=True,
              type=click.Path(exists=True),
              help="Two annotators' label files for the agreement section.")
@click.option("--verdicts", "verdicts_path", type=click.Path(exists=True), default=None)
@click.option("--out-file", default=None)
@click.pass_obj
@handle_errors
def cmd_analyze(state: CliState, scores_path, labels_path, annotator_paths,
                verdicts_path, out_file):
    """Agreement, correlation, enrichment, and classification statistics."""
    doc: dict[str, Any] = {"meta": state.meta("analyze")}

    gold: dict[str, int] = {}
    if labels_path:
        gold = _labels_by_example(read_labels(labels_path))

    if scores_path and gold:
        by_metric: dict[str, list[tuple[str, float, str]]] = {}
        for row in read_jsonl(scores_path):
            if row.get("error"):
                continue
            by_metric.setdefault(row["metric"], []).append(
                (row["example_id"], row["normalized"], row["family"])
            )
        deltas = {}
        correlations = {}
        for metric, entries in sorted(by_metric.items()):
            paired = [(s, gold[e]) for e, s, _ in entries if e in gold]
            if len(paired) < 2:
                continue
            scores = [s for s, _ in paired]
            labels = [y for _, y in paired]
            family = entries[0][2]
            try:
                deltas[metric] = {"family": family, **_display(enrichment_delta(scores, labels))}
            except ValueError as exc:
                deltas[metric] = {"family": family, "value": None, "display": "n/a",
                                  "error": str(exc)}
            tau = kendall_tau(scores, labels)
            correlations[metric] = {
                "family": family,
                **_display(tau),
                "degenerate": isinstance(tau, float) and math.isnan(tau),
            }
        doc["enrichment_deltas"] = deltas
        doc["correlations"] = correlations
    elif scores_path or gold:
        doc["missing_sections"] = doc.get("missing_sections", []) + [
            "enrichment_deltas/correlations need both --scores and --labels"
        ]

    if len(annotator_paths) == 2:
        series = []
        left = _labels_by_example(read_labels(annotator_paths[0]))
        right = _labels_by_example(read_labels(annotator_paths[1]))
        shared = sorted(set(left) & set(right))
        if not shared:
            raise ValidationFailure("annotator label files share no example ids")
        series = [
            LabelSeries(tuple(shared), tuple(left[e] for e in shared)),
            LabelSeries(tuple(shared), tuple(right[e] for e in shared)),
        ]
        report = agreement(series[0], series[1], seed=state.seed)
        doc["agreement"] = {
            "percent_agreement": _display(report.percent_agreement),
            "kappa": _display(report.kappa),
            "kappa_ci": [_display(report.kappa_ci[0]), _display(report.kappa_ci[1])],
            "per_class_confusion": [list(r) for r in report.per_class_confusion],
            "n": report.n,
        }
    elif annotator_paths:
        raise ValidationFailure("agreement needs exactly two --annotator-labels files")

    if verdicts_path and gold:
        verdict_labels = {
            row["example_id"]: int(row["label"]) for row in read_jsonl(verdicts_path)
        }
        shared = sorted(set(verdict_labels) & set(gold))
        if not shared:
            raise ValidationFailure("verdicts and labels share no example ids")
        pred = LabelSeries(tuple(shared), tuple(verdict_labels[e] for e in shared))
        truth = LabelSeries(tuple(shared), tuple(gold[e] for e in shared))
        report = classification_report(pred, truth)
        doc["classification"] = {
            "accuracy": _display(report.accuracy),
            "macro_f1": _display(report.macro_f1),
            "per_class_f1": [_display(v) for v in report.per_class_f1],
            "confusion": [list(r) for r in report.confusion],
            "empty_classes": list(report.empty_classes),
            "n": len(shared),
        }
    elif verdicts_path:
        doc["missing_sections"] = doc.get("missing_sections", []) + [
            "classification needs both --verdicts and --labels"
        ]

    path = _outfile(state, "analysis.json", out_file)
    write_document(path, doc)
    click.echo(f"analysis -> {path}")


# ---------------------------------------------------------------------------
# judge / optimize

@main.command("judge")
@click.option("--examples", "examples_path", required=True, type=click.Path(exists=True))
@click.option("--prompt-file", type=click.Path(exists=True), default=None,
              help="Instruction text; defaults to the built-in baseline.")
@click.option("--out-file", default=None)
@click.pass_obj
@handle_errors
def cmd_judge(state: CliState, examples_path, prompt_file, out_file):
    """Run the clinical-impact judge over examples, appending verdicts."""
    from .judge import BASE_INSTRUCTION
    from .models import _dump

    instruction = (
        Path(prompt_file).read_text(encoding="utf-8") if prompt_file else BASE_INSTRUCTION
    )
    prompt = PromptCandidate(id="cli", instruction=instruction)
    gateway = state.gateway()
    rows = []
    failures = 0
    for example in read_examples(examples_path):
        try:
            verdict = judge_one(example, prompt, gateway)
        except JudgmentError as exc:
            failures += 1
            rows.append({"example_id": exc.example_id, "error": "unparseable verdict"})
            continue
        rows.append(verdict.to_dict())
    path = _outfile(state, "verdicts.jsonl", out_file)
    # Verdicts accumulate: a new batch appends its own meta record and rows.
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(_dump(state.meta("judge", failures=failures)) + "\n")
        for row in rows:
            fh.write(_dump(row) + "\n")
    click.echo(f"judged {len(rows)} examples ({failures} failures) -> {path}")


@main.command("optimize")
@click.option("--examples", "examples_path", required=True, type=click.Path(exists=True))
@click.option("--budget", type=int, default=300, show_default=True)
@click.option("--max-iterations", type=int, default=50, show_default=True)
@click.option("--split-sizes", nargs=3, type=int, default=(218, 30, 50),
              show_default=True, help="Train/validation/test sizes.")
@click.option("--cost-matrix", "cost_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Resume from an optimizer checkpoint.")
@click.option("--out-dir", default=None)
@click.pass_obj
@handle_errors
def cmd_optimize(state: CliState, examples_path, budget, max_iterations, split_sizes,
                 cost_path, checkpoint, out_dir):
    """Improve the judge instruction with the reflective Pareto loop."""
    examples = {e.id: e for e in read_examples(examples_path)}
    unlabeled = [e for e in examples.values() if e.label is None]
    if unlabeled:
        raise ValidationFailure(
            f"{len(unlabeled)} examples lack labels; optimization needs a labeled set"
        )
    cost = (
        CostMatrix.from_dict(read_document(cost_path)) if cost_path
        else CostMatrix.default()
    )
    out = Path(out_dir) if out_dir else state.out
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = Path(checkpoint) if checkpoint else out / "optimizer_state.json"

    if checkpoint and Path(checkpoint).exists():
        opt_state = OptimizerState.load(checkpoint)
    else:
        assignment = stratified_split(
            list(examples.values()), tuple(split_sizes), seed=state.seed
        )
        splits: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
        for ex_id, split in sorted(assignment.items()):
            if split in splits:
                splits[split].append(ex_id)
        opt_state = new_state(
            splits["train"], splits["validation"], splits["test"],
            cost=cost, budget=budget, seed=state.seed,
        )

    gateway = state.gateway()
    iterations = 0
    while not converged(opt_state) and iterations < max_iterations:
        opt_state = optimize(opt_state, examples, gateway)
        iterations += 1
        opt_state.save(checkpoint_path)

    final = select_final(opt_state)
    (out / "final_prompt.txt").write_text(final.instruction, encoding="utf-8")
    write_document(
        out / "final_prompt_provenance.json",
        {
            "meta": state.meta("optimize"),
            "prompt_id": final.id,
            "aggregate": final.aggregate,
            "lineage": lineage(opt_state, final),
            "iterations": opt_state.iteration,
            "evaluations": opt_state.evaluations,
            "frontier_size": len(opt_state.frontier),
            "budget_remaining": opt_state.budget,
        },
    )
    click.echo(
        f"optimized for {opt_state.iteration} iterations; best aggregate "
        f"{final.aggregate:.4f} -> {out / 'final_prompt.txt'}"
    )


# ---------------------------------------------------------------------------
# serve / report

@main.command("serve")
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", required=True, type=click.Path())
@click.option("--examples", "examples_path", required=True, type=click.Path(exists=True))
@click.option("--tokens-file", type=click.Path(exists=True), default=None,
              help="JSON mapping annotator_id -> token; defaults to config 'annotators'.")
@click.option("--ui-dir", type=click.Path(exists=True), default=None)
@click.pass_obj
@handle_errors
def cmd_serve(state: CliState, port, host, data_dir, examples_path, tokens_file, ui_dir):
    """Run the annotation service (and static UI when a bundle is provided)."""
    import uvicorn

    if tokens_file:
        tokens = json.loads(Path(tokens_file).read_text(encoding="utf-8"))
    else:
        tokens = state.config.get("annotators", {})
    if not tokens:
        raise ValidationFailure(
            "no annotator tokens configured (use --tokens-file or config 'annotators')"
        )
    config = ServiceConfig(
        data_dir=Path(data_dir),
        examples_path=Path(examples_path),
        tokens=tokens,
        agreement_seed=state.seed,
        ui_dir=Path(ui_dir) if ui_dir else None,
    )
    app = create_app(config)
    click.echo(f"serving annotation workflow on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("report")
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None)
@click.option("--analysis", "analysis_path", type=click.Path(exists=True), default=None)
@click.option("--alignments", "alignments_path", type=click.Path(exists=True), default=None)
@click.option("--out-file", default=None)
@click.option("--tables-dir", default=None,
              help="Directory for flat TSV tables (default <out>/tables).")
@click.pass_obj
@handle_errors
def cmd_report(state: CliState, scores_path, analysis_path, alignments_path,
               out_file, tables_dir):
    """Combine pipeline outputs into report.json plus plot-ready tables."""
    inputs: dict[str, str] = {}
    doc: dict[str, Any] = {"meta": state.meta("report")}
    missing: list[str] = []

    def digest(path: str) -> str:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()

    if analysis_path:
        inputs[Path(analysis_path).name] = digest(analysis_path)
        analysis = read_document(analysis_path)
        for section in ("agreement", "correlations", "enrichment_deltas", "classification"):
            if section in analysis:
                doc[section] = analysis[section]
            else:
                missing.append(section)
    else:
        missing.extend(["agreement", "correlations", "enrichment_deltas", "classification"])

    if scores_path:
        inputs[Path(scores_path).name] = digest(scores_path)
        rows = list(read_jsonl(scores_path))
        doc["score_summary"] = {
            "rows": len(rows),
            "examples": len({r["example_id"] for r in rows}),
            "metrics": sorted({r["metric"] for r in rows}),
        }
    if alignments_path:
        inputs[Path(alignments_path).name] = digest(alignments_path)
        alignments = read_alignments(alignments_path)
        entries = [e for a in alignments for e in a.entries]
        doc["alignment_summary"] = {
            "conversations": len(alignments),
            "entries": len(entries),
            "missing": sum(1 for e in entries if e.match_type == MATCH_MISSING),
            "multi_fragment": sum(1 for e in entries if e.multi_fragment),
        }

    doc["inputs"] = inputs
    if missing:
        doc["missing_sections"] = sorted(set(missing))

    path = _outfile(state, "report.json", out_file)
    write_document(path, doc)

    tables = Path(tables_dir) if tables_dir else state.out / "tables"
    tables.mkdir(parents=True, exist_ok=True)
    for section in ("enrichment_deltas", "correlations"):
        if section not in doc:
            continue
        lines = ["metric\tfamily\tvalue"]
        for metric, cell in sorted(doc[section].items()):
            value = cell.get("display", "n/a")
            lines.append(f"{metric}\t{cell.get('family', '')}\t{value}")
        (tables / f"{section}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if "classification" in doc:
        cls = doc["classification"]
        lines = ["class\tf1"]
        for c, cell in enumerate(cls.get("per_class_f1", [])):
            lines.append(f"{c}\t{cell.get('display', 'n/a')}")
        (tables / "classification.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"report -> {path} (tables in {tables})")


if __name__ == "__main__":
    main()
