"""Agreement, correlation, and class-performance statistics.

Cohen's kappa is unweighted; Kendall's tau is the tie-corrected tau-b
(labels are heavily tied ordinals); bootstrap intervals are percentile
intervals over paired resamples with a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import kendalltau

from .models import IMPACT_LABELS, LabeledExample, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VALIDATION

BOOTSTRAP_ITERATIONS = 1000


@dataclass(frozen=True)
class LabelSeries:
    ids: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        if len(self.ids) != len(self.labels):
            raise ValueError("ids and labels must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("ids must be unique")
        bad = [x for x in self.labels if x not in IMPACT_LABELS]
        if bad:
            raise ValueError(f"labels outside {{0,1,2}}: {bad[:5]}")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class AgreementReport:
    percent_agreement: float
    kappa: float
    kappa_ci: tuple[float, float]
    per_class_confusion: tuple[tuple[int, ...], ...]
    n: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "percent_agreement": self.percent_agreement,
            "kappa": self.kappa,
            "kappa_ci": list(self.kappa_ci),
            "per_class_confusion": [list(r) for r in self.per_class_confusion],
            "n": self.n,
            "degenerate": self.degenerate,
        }


def _check_aligned(a: LabelSeries, b: LabelSeries) -> None:
    if a.ids != b.ids:
        raise ValueError("series describe different examples or different orders")


def confusion_matrix(a: Sequence[int], b: Sequence[int]) -> np.ndarray:
    out = np.zeros((3, 3), dtype=np.int64)
    for x, y in zip(a, b):
        out[x][y] += 1
    return out


def percent_agreement(a: LabelSeries, b: LabelSeries) -> float:
    _check_aligned(a, b)
    if not a.labels:
        raise ValueError("empty series")
    same = sum(1 for x, y in zip(a.labels, b.labels) if x == y)
    return same / len(a.labels)


def _kappa_from_arrays(x: np.ndarray, y: np.ndarray) -> float:
    n = len(x)
    conf = confusion_matrix(x, y)
    p_o = float(np.trace(conf)) / n
    row = conf.sum(axis=1)
    col = conf.sum(axis=0)
    p_e = float(np.dot(row, col)) / (n * n)
    if p_e >= 1.0:
        # Single shared label: defined as 1.0 on perfect agreement, else 0.0.
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def cohens_kappa(a: LabelSeries, b: LabelSeries) -> float:
    _check_aligned(a, b)
    if not a.labels:
        raise ValueError("empty series")
    return _kappa_from_arrays(np.asarray(a.labels), np.asarray(b.labels))


def bootstrap_ci(
    a: Sequence[float],
    b: Sequence[float],
    statistic: Callable[[np.ndarray, np.ndarray], float],
    iterations: int = BOOTSTRAP_ITERATIONS,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile interval of a paired statistic over seeded resamples."""
    if len(a) != len(b):
        raise ValueError("paired series must have equal length")
    if len(a) == 0:
        raise ValueError("empty series")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    xa = np.asarray(a)
    xb = np.asarray(b)
    rng = np.random.default_rng(seed)
    n = len(xa)
    values = np.empty(iterations, dtype=np.float64)
    for k in range(iterations):
        idx = rng.integers(0, n, size=n)
        values[k] = statistic(xa[idx], xb[idx])
    tail = (1.0 - level) / 2.0 * 100.0
    low, high = np.percentile(values, [tail, 100.0 - tail])
    return float(low), float(high)


def agreement(a: LabelSeries, b: LabelSeries, seed: int = 0,
              iterations: int = BOOTSTRAP_ITERATIONS) -> AgreementReport:
    _check_aligned(a, b)
    xa = np.asarray(a.labels)
    xb = np.asarray(b.labels)
    kappa = cohens_kappa(a, b)
    ci = bootstrap_ci(xa, xb, _kappa_from_arrays, iterations=iterations, seed=seed)
    conf = confusion_matrix(xa, xb)
    degenerate = len(set(a.labels) | set(b.labels)) == 1
    return AgreementReport(
        percent_agreement=percent_agreement(a, b),
        kappa=kappa,
        kappa_ci=ci,
        per_class_confusion=tuple(tuple(int(v) for v in row) for row in conf),
        n=len(a),
        degenerate=degenerate,
    )


def kendall_tau(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Tie-corrected Kendall's tau-b; NaN marks the degenerate constant case."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    if len(scores) < 2:
        raise ValueError("need at least two observations")
    if len(set(scores)) == 1 or len(set(labels)) == 1:
        return float("nan")
    tau, _ = kendalltau(np.asarray(scores), np.asarray(labels), variant="b")
    return float(tau)


def enrichment_delta(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mean score of significant-impact examples minus mean of no-impact ones."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    high = [s for s, y in zip(scores, labels) if y == 2]
    low = [s for s, y in zip(scores, labels) if y == 0]
    if not high:
        raise ValueError("no examples with label 2")
    if not low:
        raise ValueError("no examples with label 0")
    return float(np.mean(high) - np.mean(low))


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    macro_f1: float
    per_class_f1: tuple[float, float, float]
    per_class_precision: tuple[float, float, float]
    per_class_recall: tuple[float, float, float]
    confusion: tuple[tuple[int, ...], ...]
    empty_classes: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_f1": list(self.per_class_f1),
            "per_class_precision": list(self.per_class_precision),
            "per_class_recall": list(self.per_class_recall),
            "confusion": [list(r) for r in self.confusion],
            "empty_classes": list(self.empty_classes),
        }


def classification_report(pred: LabelSeries, truth: LabelSeries) -> ClassificationReport:
    """One-vs-rest precision/recall/F1 per class; macro F1 is the unweighted mean."""
    _check_aligned(pred, truth)
    if not pred.labels:
        raise ValueError("empty series")
    conf = confusion_matrix(truth.labels, pred.labels)
    accuracy = float(np.trace(conf)) / len(truth.labels)
    f1s: list[float] = []
    precisions: list[float] = []
    recalls: list[float] = []
    empty: list[int] = []
    for c in IMPACT_LABELS:
        tp = int(conf[c][c])
        pred_c = int(conf[:, c].sum())
        true_c = int(conf[c].sum())
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / true_c if true_c else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if true_c == 0:
            empty.append(c)
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return ClassificationReport(
        accuracy=accuracy,
        macro_f1=float(np.mean(f1s)),
        per_class_f1=tuple(f1s),
        per_class_precision=tuple(precisions),
        per_class_recall=tuple(recalls),
        confusion=tuple(tuple(int(v) for v in row) for row in conf),
        empty_classes=tuple(empty),
    )


def stratified_split(
    examples: Sequence[LabeledExample],
    sizes: tuple[int, int, int],
    seed: int = 0,
) -> dict[str, str]:
    """Assign examples to train/validation/test preserving class proportions.

    Per-class allocation uses largest-remainder rounding, so every split's
    class count stays within one item of the exact proportional share.
    Deterministic under the seed; leftover examples stay unassigned.
    Labels must be present on every example.
    """
    if sum(sizes) > len(examples):
        raise ValueError("split sizes exceed the number of examples")
    unlabeled = [e.id for e in examples if e.label is None]
    if unlabeled:
        raise ValueError(f"examples without labels cannot be split: {unlabeled[:5]}")

    by_class: dict[int, list[str]] = {c: [] for c in IMPACT_LABELS}
    for e in examples:
        by_class[e.label].append(e.id)
    present = [c for c in IMPACT_LABELS if by_class[c]]
    if not present:
        raise ValueError("no examples")
    nonzero_splits = sum(1 for s in sizes if s > 0)
    for c in present:
        if len(by_class[c]) < nonzero_splits:
            raise ValueError(
                f"class {c} has {len(by_class[c])} examples, fewer than the "
                f"{nonzero_splits} splits that need representation"
            )

    split_names = (SPLIT_TRAIN, SPLIT_VALIDATION, SPLIT_TEST)
    # Splits are filled sequentially from the remaining pool so a class can
    # never be over-allocated; largest-remainder rounding per split keeps
    # every class within one item of its proportional share.
    remaining = {c: len(by_class[c]) for c in present}
    allocation: dict[int, list[int]] = {c: [0, 0, 0] for c in present}
    for s, size in enumerate(sizes):
        if size == 0:
            continue
        pool = sum(remaining.values())
        quotas = {c: size * remaining[c] / pool for c in present}
        floors = {c: min(int(quotas[c]), remaining[c]) for c in present}
        leftover = size - sum(floors.values())
        order = sorted(present, key=lambda c: (-(quotas[c] - floors[c]), c))
        for c in present:
            allocation[c][s] = floors[c]
        for c in order:
            if leftover == 0:
                break
            if allocation[c][s] < remaining[c]:
                allocation[c][s] += 1
                leftover -= 1
        for c in present:
            remaining[c] -= allocation[c][s]

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {e.id: "unassigned" for e in examples}
    for c in present:
        ids = sorted(by_class[c])
        rng.shuffle(ids)
        cursor = 0
        for s, name in enumerate(split_names):
            take = allocation[c][s]
            for ex_id in ids[cursor:cursor + take]:
                assignment[ex_id] = name
            cursor += take
    return assignment
