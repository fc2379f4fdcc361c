"""Annotation service: task distribution, label capture, agreement
reporting, and adjudication of disagreements into a gold-standard set.

Persistence is an append-only event log under the data directory; every
write is flushed and fsynced before the ack, and a restart replays the log.
Writes are serialized through one lock; reads are lock-free snapshots.
Authentication is a static per-annotator token from the service config.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from fastapi import FastAPI, Header, HTTPException, Query
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .models import (
    AdjudicationRecord,
    AnnotationRecord,
    IMPACT_LABELS,
    LabeledExample,
    read_examples,
)
from .stats import LabelSeries, agreement

EVENT_LOG = "events.jsonl"


class ValidationFailure(ValueError):
    """A submitted record breaks a labeling rule."""


@dataclass
class ServiceConfig:
    data_dir: Path
    examples_path: Path
    tokens: dict[str, str]  # annotator_id -> token
    agreement_seed: int = 0
    ui_dir: Path | None = None

    @staticmethod
    def from_file(path: str | Path) -> "ServiceConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return ServiceConfig(
            data_dir=Path(doc["data_dir"]),
            examples_path=Path(doc["examples_path"]),
            tokens=dict(doc["tokens"]),
            agreement_seed=int(doc.get("agreement_seed", 0)),
            ui_dir=Path(doc["ui_dir"]) if doc.get("ui_dir") else None,
        )


class AnnotationStore:
    """Replayable event log of label submissions and adjudications."""

    def __init__(self, data_dir: str | Path, examples: Iterable[LabeledExample]):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / EVENT_LOG
        self.examples: dict[str, LabeledExample] = {e.id: e for e in examples}
        self.example_order: list[str] = [e for e in self.examples]
        self._write_lock = threading.Lock()
        # live[(example_id, annotator_id)] -> AnnotationRecord
        self.live: dict[tuple[str, str], AnnotationRecord] = {}
        self.archived: list[AnnotationRecord] = []
        self.resolutions: dict[str, AdjudicationRecord] = {}
        self.resolution_history: list[AdjudicationRecord] = []
        self._replay()

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with self.log_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event["type"] == "label":
                    self._apply_label(AnnotationRecord.from_dict(event["record"]))
                elif event["type"] == "resolve":
                    self._apply_resolution(AdjudicationRecord.from_dict(event["record"]))

    def _append(self, event: dict[str, Any]) -> None:
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def compact(self) -> None:
        """Rewrite the log with live records only; archives drop out."""
        with self._write_lock:
            tmp = self.log_path.with_suffix(".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for record in self.live.values():
                    fh.write(json.dumps({"type": "label", "record": record.to_dict()},
                                        sort_keys=True) + "\n")
                for record in self.resolutions.values():
                    fh.write(json.dumps({"type": "resolve", "record": record.to_dict()},
                                        sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            tmp.replace(self.log_path)

    def _apply_label(self, record: AnnotationRecord) -> None:
        key = (record.example_id, record.annotator_id)
        if key in self.live:
            self.archived.append(self.live[key])
        self.live[key] = record

    def _apply_resolution(self, record: AdjudicationRecord) -> None:
        if record.example_id in self.resolutions:
            self.resolution_history.append(self.resolutions[record.example_id])
        self.resolutions[record.example_id] = record

    # -- operations ---------------------------------------------------------

    def next_task(self, annotator_id: str) -> tuple[LabeledExample | None, dict]:
        """First unlabeled example in the annotator's stable shuffled order."""
        seed = int.from_bytes(
            hashlib.sha256(annotator_id.encode("utf-8")).digest()[:8], "big"
        )
        order = list(self.example_order)
        random.Random(seed).shuffle(order)
        done = {ex for ex, ann in self.live if ann == annotator_id}
        progress = {"done": len(done), "total": len(order)}
        for ex_id in order:
            if ex_id not in done:
                return self.examples[ex_id], progress
        return None, progress

    def submit_label(self, record: AnnotationRecord) -> None:
        if record.example_id not in self.examples:
            raise KeyError(f"unknown example {record.example_id!r}")
        if record.label not in IMPACT_LABELS:
            raise ValidationFailure(f"label must be 0, 1, or 2, got {record.label}")
        if record.label in (1, 2) and not record.justification.strip():
            raise ValidationFailure(
                f"label {record.label} requires a brief justification"
            )
        with self._write_lock:
            self._append({"type": "label", "record": record.to_dict()})
            self._apply_label(record)

    def annotator_pairs(self) -> tuple[str, str] | None:
        """The two annotators sharing the most examples, if any overlap."""
        by_annotator: dict[str, set[str]] = {}
        for (ex, ann) in self.live:
            by_annotator.setdefault(ann, set()).add(ex)
        names = sorted(by_annotator)
        best: tuple[int, str, str] | None = None
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                shared = len(by_annotator[a] & by_annotator[b])
                if shared and (best is None or shared > best[0]):
                    best = (shared, a, b)
        if best is None:
            return None
        return best[1], best[2]

    def agreement_report(self, seed: int = 0):
        pair = self.annotator_pairs()
        if pair is None:
            raise ValidationFailure("need two annotators sharing at least one example")
        a, b = pair
        shared = sorted(
            ex for ex in self.examples
            if (ex, a) in self.live and (ex, b) in self.live
        )
        series_a = LabelSeries(tuple(shared), tuple(self.live[(e, a)].label for e in shared))
        series_b = LabelSeries(tuple(shared), tuple(self.live[(e, b)].label for e in shared))
        return agreement(series_a, series_b, seed=seed)

    def adjudication_queue(self) -> list[dict[str, Any]]:
        """Unresolved disagreements, widest label distance first, then id."""
        bundles: list[dict[str, Any]] = []
        for ex_id in self.example_order:
            if ex_id in self.resolutions:
                continue
            records = [r for (e, _), r in sorted(self.live.items()) if e == ex_id]
            labels = {r.label for r in records}
            if len(records) < 2 or len(labels) < 2:
                continue
            distance = max(labels) - min(labels)
            bundles.append(
                {
                    "example_id": ex_id,
                    "example": self.examples[ex_id].to_dict(),
                    "records": [r.to_dict() for r in records],
                    "max_label_distance": distance,
                }
            )
        bundles.sort(key=lambda b: (-b["max_label_distance"], b["example_id"]))
        return bundles

    def resolve(self, record: AdjudicationRecord) -> None:
        if record.example_id not in self.examples:
            raise KeyError(f"unknown example {record.example_id!r}")
        if record.final_label not in IMPACT_LABELS:
            raise ValidationFailure(
                f"final label must be 0, 1, or 2, got {record.final_label}"
            )
        has_labels = any(ex == record.example_id for (ex, _) in self.live)
        if not has_labels:
            raise ValidationFailure(
                f"example {record.example_id!r} has no labels to confirm or resolve"
            )
        with self._write_lock:
            self._append({"type": "resolve", "record": record.to_dict()})
            self._apply_resolution(record)

    def gold_records(self) -> list[AnnotationRecord]:
        """Adjudicated labels plus unanimous labels from two or more annotators."""
        out: list[AnnotationRecord] = []
        for ex_id in self.example_order:
            if ex_id in self.resolutions:
                res = self.resolutions[ex_id]
                out.append(
                    AnnotationRecord(
                        example_id=ex_id,
                        annotator_id="gold",
                        label=res.final_label,
                        justification=res.note,
                    )
                )
                continue
            records = [r for (e, _), r in self.live.items() if e == ex_id]
            labels = {r.label for r in records}
            if len(records) >= 2 and len(labels) == 1:
                justifications = "; ".join(
                    r.justification for r in records if r.justification
                )
                out.append(
                    AnnotationRecord(
                        example_id=ex_id,
                        annotator_id="gold",
                        label=records[0].label,
                        justification=justifications,
                    )
                )
        return out


def create_app(config: ServiceConfig) -> FastAPI:
    examples = read_examples(config.examples_path)
    store = AnnotationStore(config.data_dir, examples)
    app = FastAPI(title="clinasr annotation service")
    app.state.store = store
    token_to_annotator = {v: k for k, v in config.tokens.items()}

    def authed(token: str | None) -> str:
        if not token or token not in token_to_annotator:
            raise HTTPException(status_code=401, detail="unknown or missing token")
        return token_to_annotator[token]

    @app.get("/api/tasks/next")
    def next_task(
        annotator: str = Query(...),
        x_annotator_token: str | None = Header(default=None),
    ):
        caller = authed(x_annotator_token)
        if caller != annotator:
            raise HTTPException(status_code=403, detail="token does not match annotator")
        example, progress = store.next_task(annotator)
        if example is None:
            return {"task": None, "progress": progress}
        return {"task": example.to_dict(), "progress": progress}

    @app.post("/api/labels")
    def submit_label(
        body: dict,
        x_annotator_token: str | None = Header(default=None),
    ):
        caller = authed(x_annotator_token)
        body = dict(body)
        body.setdefault("annotator_id", caller)
        body.setdefault("created_at", _now())
        try:
            record = AnnotationRecord.from_dict(body)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if record.annotator_id != caller:
            raise HTTPException(status_code=403, detail="token does not match annotator")
        try:
            store.submit_label(record)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValidationFailure as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"status": "ok"}

    @app.get("/api/agreement")
    def agreement_endpoint(x_annotator_token: str | None = Header(default=None)):
        authed(x_annotator_token)
        try:
            report = store.agreement_report(seed=config.agreement_seed)
        except ValidationFailure as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return report.to_dict()

    @app.get("/api/adjudication")
    def adjudication(x_annotator_token: str | None = Header(default=None)):
        authed(x_annotator_token)
        return {"bundles": store.adjudication_queue()}

    @app.post("/api/adjudication/resolve")
    def resolve(
        body: dict,
        x_annotator_token: str | None = Header(default=None),
    ):
        caller = authed(x_annotator_token)
        body = dict(body)
        body.setdefault("resolver_ids", [caller])
        try:
            record = AdjudicationRecord.from_dict(body)
            store.resolve(record)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValidationFailure as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"status": "ok"}

    @app.get("/api/export/gold")
    def export_gold(x_annotator_token: str | None = Header(default=None)):
        authed(x_annotator_token)
        return JSONResponse(
            content={"labels": [r.to_dict() for r in store.gold_records()]}
        )

    if config.ui_dir is not None and Path(config.ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(config.ui_dir), html=True), name="ui")
    return app


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
