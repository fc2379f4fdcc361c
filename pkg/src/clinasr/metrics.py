"""Reference/hypothesis text metrics, normalized so higher is better.

Three families: edit-distance error rates (WER, CER, MER, WIL, S-WER),
n-gram overlap scores (BLEU, ROUGE, chrF, METEOR), and a pluggable
learned-semantic scorer interface with a deterministic mock. Error-rate
metrics report ``normalized = 1 - min(raw, 1)``; similarity metrics report
their own value clipped to [0, 1]. Text is normalized internally with a
shared configuration before every computation.

All computations are pure; batches may fan out across pairs freely.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .textnorm import NormalizationConfig, normalize, tokenize_words

FAMILY_EDIT = "edit_distance"
FAMILY_NGRAM = "ngram_overlap"
FAMILY_SEMANTIC = "learned_semantic"

BLEU_EPSILON = 1e-9
ROUGE_W_EXPONENT = 1.2
CHRF_BETA = 2.0
CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5


class UnsupportedCapabilityError(RuntimeError):
    """A scorer was asked for a capability it does not provide."""


@dataclass(frozen=True)
class MetricResult:
    name: str
    family: str
    raw: float
    normalized: float
    degenerate: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "family": self.family,
            "raw": self.raw,
            "normalized": self.normalized,
            "degenerate": self.degenerate,
            "error": self.error,
        }


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int
    hits: int
    ref_len: int

    def __post_init__(self) -> None:
        if min(self.substitutions, self.deletions, self.insertions, self.hits) < 0:
            raise ValueError("edit counts must be non-negative")
        if self.substitutions + self.deletions + self.hits != self.ref_len:
            raise ValueError("S + D + H must equal the reference length")

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


@runtime_checkable
class SemanticScorer(Protocol):
    """Pluggable semantic similarity scorer.

    Implementations must declare whether they are safe for concurrent calls.
    An optional ``embed(text) -> np.ndarray`` capability unlocks S-WER.
    """

    name: str
    concurrency_safe: bool

    def score(self, ref: str, hyp: str) -> float: ...


def supports_embedding(scorer: object) -> bool:
    return callable(getattr(scorer, "embed", None))


class DeterministicEmbeddingScorer:
    """Hash-seeded mock scorer: bit-deterministic across runs and platforms.

    Token embeddings derive from a SHA-256 digest; the text embedding is the
    mean token embedding. score(x, x) = 1.0 by construction.
    """

    def __init__(self, dim: int = 16, name: str = "mock"):
        if dim < 2 or dim > 32:
            raise ValueError("dim must be in [2, 32]")
        self.dim = dim
        self.name = name
        self.concurrency_safe = True

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        raw = np.frombuffer(digest[: self.dim], dtype=np.uint8).astype(np.float64)
        vec = raw / 127.5 - 1.0
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            vec = np.ones(self.dim) / math.sqrt(self.dim)
            norm = 1.0
        return vec / norm

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize_words(normalize(text))
        if not tokens:
            base = np.zeros(self.dim)
            base[0] = 1.0
            return base
        mat = np.stack([self._token_vector(t) for t in tokens])
        return mat.mean(axis=0)

    def score(self, ref: str, hyp: str) -> float:
        return (1.0 + _cosine(self.embed(ref), self.embed(hyp))) / 2.0


def get_scorer(name: str) -> SemanticScorer:
    if name == "mock":
        return DeterministicEmbeddingScorer()
    raise KeyError(f"unknown scorer {name!r} (neural scorers are plug-ins, not built-ins)")


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# Edit-distance family

def edit_counts(ref_tokens: Sequence[str], hyp_tokens: Sequence[str]) -> EditCounts:
    """Minimal-edit counts under unit costs.

    Backtrace tie-break prefers substitution over insertion over deletion.
    """
    ops = edit_ops(ref_tokens, hyp_tokens)
    s = sum(1 for op, _, _ in ops if op == "sub")
    d = sum(1 for op, _, _ in ops if op == "del")
    i = sum(1 for op, _, _ in ops if op == "ins")
    h = sum(1 for op, _, _ in ops if op == "hit")
    return EditCounts(s, d, i, h, len(ref_tokens))


def edit_ops(
    ref_tokens: Sequence[str], hyp_tokens: Sequence[str]
) -> list[tuple[str, str | None, str | None]]:
    """Edit script as (op, ref_token, hyp_token) triples in reference order."""
    n, m = len(ref_tokens), len(hyp_tokens)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        ri = ref_tokens[i - 1]
        row, prev = dp[i], dp[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ri == hyp_tokens[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, row[j - 1] + 1, prev[j] + 1)
    ops: list[tuple[str, str | None, str | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = ref_tokens[i - 1] == hyp_tokens[j - 1]
            if dp[i][j] == dp[i - 1][j - 1] + (0 if same else 1):
                ops.append(("hit" if same else "sub", ref_tokens[i - 1], hyp_tokens[j - 1]))
                i, j = i - 1, j - 1
                continue
        if j > 0 and dp[i][j] == dp[i][j - 1] + 1:
            ops.append(("ins", None, hyp_tokens[j - 1]))
            j -= 1
            continue
        ops.append(("del", ref_tokens[i - 1], None))
        i -= 1
    ops.reverse()
    return ops


def _units(ref: str, hyp: str, cfg: NormalizationConfig | None,
           level: str) -> tuple[list[str], list[str]]:
    nr, nh = normalize(ref, cfg), normalize(hyp, cfg)
    if level == "char":
        # CER counts single spaces of the normalized string as characters.
        return list(nr), list(nh)
    return tokenize_words(nr), tokenize_words(nh)


def _rate_result(name: str, raw: float, degenerate: bool) -> MetricResult:
    return MetricResult(
        name=name,
        family=FAMILY_EDIT,
        raw=raw,
        normalized=1.0 - min(raw, 1.0),
        degenerate=degenerate,
    )


def wer(ref: str, hyp: str, cfg: NormalizationConfig | None = None) -> MetricResult:
    r, h = _units(ref, hyp, cfg, "word")
    if not r:
        return _rate_result("wer", 1.0 if h else 0.0, True)
    c = edit_counts(r, h)
    return _rate_result("wer", c.errors / c.ref_len, False)


def cer(ref: str, hyp: str, cfg: NormalizationConfig | None = None) -> MetricResult:
    r, h = _units(ref, hyp, cfg, "char")
    if not r:
        return _rate_result("cer", 1.0 if h else 0.0, True)
    c = edit_counts(r, h)
    return _rate_result("cer", c.errors / c.ref_len, False)


def mer(ref: str, hyp: str, cfg: NormalizationConfig | None = None) -> MetricResult:
    r, h = _units(ref, hyp, cfg, "word")
    c = edit_counts(r, h)
    denom = c.errors + c.hits
    if denom == 0:
        return _rate_result("mer", 0.0, True)
    return _rate_result("mer", c.errors / denom, not r)


def wil(ref: str, hyp: str, cfg: NormalizationConfig | None = None) -> MetricResult:
    r, h = _units(ref, hyp, cfg, "word")
    if not r and not h:
        return _rate_result("wil", 0.0, True)
    c = edit_counts(r, h)
    if c.hits == 0:
        return _rate_result("wil", 1.0, not r)
    raw = 1.0 - (c.hits / len(r)) * (c.hits / len(h))
    return _rate_result("wil", raw, False)


def swer(ref: str, hyp: str, scorer: SemanticScorer,
         cfg: NormalizationConfig | None = None) -> MetricResult:
    """Semantically weighted WER.

    Substitutions weigh 1 - cos(reference word, its replacement); deletions
    weigh 1 - cos(deleted word, hypothesis sentence centroid), so dropping a
    word whose meaning the hypothesis still carries is cheap; insertions
    weigh 1. The scorer must provide the embed capability.
    """
    if not supports_embedding(scorer):
        raise UnsupportedCapabilityError(
            f"scorer {scorer.name!r} does not provide embeddings"
        )
    name = f"swer_{scorer.name}"
    r, h = _units(ref, hyp, cfg, "word")
    if not r:
        return _rate_result(name, 1.0 if h else 0.0, True)
    embed = scorer.embed  # type: ignore[attr-defined]
    if h:
        centroid = np.mean(np.stack([embed(t) for t in h]), axis=0)
    else:
        centroid = np.zeros_like(np.asarray(embed(r[0])))
    weighted = 0.0
    for op, ref_tok, hyp_tok in edit_ops(r, h):
        if op == "sub":
            weighted += 1.0 - _cosine(embed(ref_tok), embed(hyp_tok))
        elif op == "del":
            weighted += 1.0 - _cosine(embed(ref_tok), centroid)
        elif op == "ins":
            weighted += 1.0
    return _rate_result(name, weighted / len(r), False)


# ---------------------------------------------------------------------------
# N-gram overlap family

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _similarity_result(name: str, raw: float, degenerate: bool = False) -> MetricResult:
    return MetricResult(
        name=name,
        family=FAMILY_NGRAM,
        raw=raw,
        normalized=min(max(raw, 0.0), 1.0),
        degenerate=degenerate,
    )


def bleu(ref: str, hyp: str, max_n: int = 4,
         cfg: NormalizationConfig | None = None) -> MetricResult:
    """Modified n-gram precision with clipping, geometric mean over orders
    1..max_n, brevity penalty, and add-epsilon smoothing of zero precisions.

    Orders where neither side has any n-gram are skipped (effective order),
    so an identical short pair still scores 1.0.
    """
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    name = f"bleu{max_n}"
    r, h = _units(ref, hyp, cfg, "word")
    if not h:
        return _similarity_result(name, 0.0, degenerate=not r)
    log_sum = 0.0
    orders = 0
    for n in range(1, max_n + 1):
        hyp_grams = _ngrams(h, n)
        total = sum(hyp_grams.values())
        if total == 0:
            if len(r) - n + 1 <= 0:
                continue
            p = BLEU_EPSILON
        else:
            ref_grams = _ngrams(r, n)
            clipped = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
            p = clipped / total if clipped else BLEU_EPSILON
        log_sum += math.log(p)
        orders += 1
    if orders == 0:
        return _similarity_result(name, 0.0, degenerate=not r)
    bp = 1.0 if len(h) >= len(r) else math.exp(1.0 - len(r) / len(h))
    raw = bp * math.exp(log_sum / orders)
    return _similarity_result(name, raw, degenerate=not r)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def _wlcs(a: Sequence[str], b: Sequence[str], alpha: float) -> float:
    f = lambda k: k ** alpha
    m, n = len(a), len(b)
    c = [[0.0] * (n + 1) for _ in range(m + 1)]
    w = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if a[i - 1] == b[j - 1]:
                k = w[i - 1][j - 1]
                c[i][j] = c[i - 1][j - 1] + f(k + 1) - f(k)
                w[i][j] = k + 1
            elif c[i - 1][j] >= c[i][j - 1]:
                c[i][j] = c[i - 1][j]
            else:
                c[i][j] = c[i][j - 1]
    return c[m][n]


def rouge(ref: str, hyp: str, variant: str = "rouge1",
          cfg: NormalizationConfig | None = None) -> MetricResult:
    """F-measure of the requested ROUGE variant (rouge1, rouge2, rougeL, rougeW)."""
    r, h = _units(ref, hyp, cfg, "word")
    if not r or not h:
        return _similarity_result(variant, 0.0, degenerate=not r)
    if variant in ("rouge1", "rouge2"):
        n = 1 if variant == "rouge1" else 2
        rg, hg = _ngrams(r, n), _ngrams(h, n)
        overlap = sum(min(c, hg[g]) for g, c in rg.items())
        total_r, total_h = sum(rg.values()), sum(hg.values())
        if total_r == 0 or total_h == 0:
            return _similarity_result(variant, 0.0)
        return _similarity_result(variant, _f1(overlap / total_h, overlap / total_r))
    if variant == "rougeL":
        lcs = _lcs_length(r, h)
        return _similarity_result(variant, _f1(lcs / len(h), lcs / len(r)))
    if variant == "rougeW":
        alpha = ROUGE_W_EXPONENT
        wlcs = _wlcs(r, h, alpha)
        rec = (wlcs / (len(r) ** alpha)) ** (1.0 / alpha)
        prec = (wlcs / (len(h) ** alpha)) ** (1.0 / alpha)
        return _similarity_result(variant, _f1(prec, rec))
    raise ValueError(f"unknown rouge variant {variant!r}")


def chrf(ref: str, hyp: str, plus_plus: bool = False,
         cfg: NormalizationConfig | None = None) -> MetricResult:
    """Character n-gram F-score, orders 1..6 with beta = 2, reported in [0, 1].

    chrF++ additionally averages word n-grams of orders 1..2 into the score.
    Character n-grams are taken over the normalized text with spaces removed.
    """
    name = "chrf++" if plus_plus else "chrf"
    beta2 = CHRF_BETA ** 2
    nr, nh = normalize(ref, cfg), normalize(hyp, cfg)
    streams: list[tuple[Sequence[str], Sequence[str], int]] = [
        (list(nr.replace(" ", "")), list(nh.replace(" ", "")), CHRF_CHAR_ORDER)
    ]
    if plus_plus:
        streams.append((tokenize_words(nr), tokenize_words(nh), CHRF_WORD_ORDER))
    scores: list[float] = []
    for ref_units, hyp_units, max_order in streams:
        for n in range(1, max_order + 1):
            rg, hg = _ngrams(ref_units, n), _ngrams(hyp_units, n)
            total_r, total_h = sum(rg.values()), sum(hg.values())
            if total_r == 0 and total_h == 0:
                continue
            overlap = sum(min(c, hg[g]) for g, c in rg.items())
            prec = overlap / total_h if total_h else 0.0
            rec = overlap / total_r if total_r else 0.0
            denom = beta2 * prec + rec
            scores.append((1 + beta2) * prec * rec / denom if denom else 0.0)
    if not scores:
        return _similarity_result(name, 0.0, degenerate=True)
    return _similarity_result(name, sum(scores) / len(scores), degenerate=not nr)


# ---------------------------------------------------------------------------
# METEOR with a Porter stemmer; the synonym stage defaults to identity.

_VOWELS = "aeiou"


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _shape(word: str) -> str:
    collapsed = "".join("c" if _is_consonant(word, i) else "v" for i in range(len(word)))
    collapsed = re.sub(r"c+", "C", collapsed)
    return re.sub(r"v+", "V", collapsed)


def _measure(stem: str) -> int:
    return _shape(stem).count("VC")


def _has_vowel(stem: str) -> bool:
    return "V" in _shape(stem)


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


_STEP2 = (
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
)
_STEP3 = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
)
_STEP4 = (
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
)


def porter_stem(word: str) -> str:
    """Porter's suffix-stripping algorithm for English."""
    w = word.lower()
    if len(w) <= 2:
        return w

    # Step 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # Step 1b
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    else:
        flagged = False
        if w.endswith("ed") and _has_vowel(w[:-2]):
            w, flagged = w[:-2], True
        elif w.endswith("ing") and _has_vowel(w[:-3]):
            w, flagged = w[:-3], True
        if flagged:
            if w.endswith(("at", "bl", "iz")):
                w += "e"
            elif _ends_double_consonant(w) and not w.endswith(("l", "s", "z")):
                w = w[:-1]
            elif _measure(w) == 1 and _ends_cvc(w):
                w += "e"

    # Step 1c
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    for suffix, repl in _STEP2:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 0:
                w = stem + repl
            break

    for suffix, repl in _STEP3:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > 0:
                w = stem + repl
            break

    for suffix in _STEP4:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if suffix == "ion" and not stem.endswith(("s", "t")):
                continue
            if _measure(stem) > 1:
                w = stem
            break

    # Step 5a
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            w = stem

    # Step 5b
    if _measure(w) > 1 and _ends_double_consonant(w) and w.endswith("l"):
        w = w[:-1]
    return w


def meteor(ref: str, hyp: str, cfg: NormalizationConfig | None = None,
           synonyms: dict[str, str] | None = None) -> MetricResult:
    """Staged unigram alignment (exact, stemmed, synonym lexicon) with a
    recall-weighted harmonic mean and a fragmentation penalty.

    A single contiguous match chunk incurs no penalty, so identical inputs
    score exactly 1.0.
    """
    r, h = _units(ref, hyp, cfg, "word")
    if not r or not h:
        return _similarity_result("meteor", 0.0, degenerate=not r)

    stages: list = [lambda t: t, porter_stem]
    if synonyms is not None:
        stages.append(lambda t: synonyms.get(t, t))
    matched_ref: set[int] = set()
    matched_hyp: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for key in stages:
        ref_keys = {i: key(t) for i, t in enumerate(r) if i not in matched_ref}
        for j, tok in enumerate(h):
            if j in matched_hyp:
                continue
            want = key(tok)
            for i in sorted(ref_keys):
                if i not in matched_ref and ref_keys[i] == want:
                    matched_ref.add(i)
                    matched_hyp.add(j)
                    pairs.append((j, i))
                    break
    m = len(pairs)
    if m == 0:
        return _similarity_result("meteor", 0.0)
    precision = m / len(h)
    recall = m / len(r)
    f_mean = precision * recall / (
        METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall
    )
    pairs.sort()
    chunks = 1
    for (j0, i0), (j1, i1) in zip(pairs, pairs[1:]):
        if j1 != j0 + 1 or i1 != i0 + 1:
            chunks += 1
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA if chunks > 1 else 0.0
    return _similarity_result("meteor", f_mean * (1.0 - penalty))


# ---------------------------------------------------------------------------

def score_all(ref: str, hyp: str, scorers: Iterable[SemanticScorer] = (),
              cfg: NormalizationConfig | None = None) -> list[MetricResult]:
    """Every built-in metric plus one result per provided scorer.

    Scorer failures become per-metric error entries; the batch never aborts.
    Results are ordered by (family, name).
    """
    results: list[MetricResult] = [
        wer(ref, hyp, cfg),
        cer(ref, hyp, cfg),
        mer(ref, hyp, cfg),
        wil(ref, hyp, cfg),
        bleu(ref, hyp, 1, cfg),
        bleu(ref, hyp, 2, cfg),
        bleu(ref, hyp, 3, cfg),
        bleu(ref, hyp, 4, cfg),
        rouge(ref, hyp, "rouge1", cfg),
        rouge(ref, hyp, "rouge2", cfg),
        rouge(ref, hyp, "rougeL", cfg),
        rouge(ref, hyp, "rougeW", cfg),
        chrf(ref, hyp, False, cfg),
        chrf(ref, hyp, True, cfg),
        meteor(ref, hyp, cfg),
    ]
    for scorer in scorers:
        try:
            raw = float(scorer.score(ref, hyp))
            results.append(
                MetricResult(
                    name=scorer.name,
                    family=FAMILY_SEMANTIC,
                    raw=raw,
                    normalized=min(max(raw, 0.0), 1.0),
                )
            )
        except Exception as exc:  # noqa: BLE001 - per-metric fault isolation
            results.append(
                MetricResult(
                    name=scorer.name,
                    family=FAMILY_SEMANTIC,
                    raw=float("nan"),
                    normalized=float("nan"),
                    error=str(exc),
                )
            )
            continue
        if supports_embedding(scorer):
            try:
                results.append(swer(ref, hyp, scorer, cfg))
            except Exception as exc:  # noqa: BLE001
                results.append(
                    MetricResult(
                        name=f"swer_{scorer.name}",
                        family=FAMILY_EDIT,
                        raw=float("nan"),
                        normalized=float("nan"),
                        error=str(exc),
                    )
                )
    results.sort(key=lambda mr: (mr.family, mr.name))
    return results
