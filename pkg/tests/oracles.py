"""Independent brute-force oracles used to verify the library.

These deliberately avoid the implementation's algorithms: edit distance is
an exhaustive search over monotone pairings, tau-b counts every pair, LCS
recurses, n-grams are enumerated with explicit loops.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations
from typing import Sequence


@lru_cache(maxsize=None)
def _monotone_matchings(n_ref: int, n_hyp: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Every strictly increasing pairing between positions of the two sides."""
    out: list[tuple[tuple[int, int], ...]] = []
    max_k = min(n_ref, n_hyp)
    for k in range(max_k + 1):
        for ref_pos in combinations(range(n_ref), k):
            for hyp_pos in combinations(range(n_hyp), k):
                out.append(tuple(zip(ref_pos, hyp_pos)))
    return tuple(out)


def brute_edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Minimum unit-cost edits via exhaustive search over monotone pairings.

    Every alignment is some monotone pairing; paired unequal tokens are
    substitutions, unpaired reference tokens deletions, unpaired hypothesis
    tokens insertions.
    """
    n, m = len(ref), len(hyp)
    best = n + m
    for matching in _monotone_matchings(n, m):
        k = len(matching)
        cost = (n - k) + (m - k) + sum(1 for i, j in matching if ref[i] != hyp[j])
        if cost < best:
            best = cost
    return best


def pair_count_tau_b(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Tau-b by exhaustive concordant/discordant pair counting."""
    n = len(scores)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = scores[i] - scores[j]
            dy = labels[i] - labels[j]
            if dx == 0 and dy == 0:
                ties_x += 1
                ties_y += 1
            elif dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        return float("nan")
    return (concordant - discordant) / denom


def recursive_lcs(a: Sequence, b: Sequence) -> int:
    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def enumerate_ngrams(units: Sequence, n: int) -> list[tuple]:
    grams = []
    for i in range(len(units)):
        if i + n <= len(units):
            grams.append(tuple(units[i:i + n]))
    return grams


def overlap_count(ref_grams: list[tuple], hyp_grams: list[tuple]) -> int:
    """Clipped multiset overlap, counted without Counter arithmetic."""
    remaining = list(ref_grams)
    hits = 0
    for g in hyp_grams:
        if g in remaining:
            remaining.remove(g)
            hits += 1
    return hits


def simple_levenshtein(a: str, b: str) -> int:
    """Classic O(nm) scalar-loop edit distance over characters."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(
                prev[j - 1] + (ca != cb),
                prev[j] + 1,
                cur[j - 1] + 1,
            ))
        prev = cur
    return prev[-1]


def chrf_oracle(ref_chars: str, hyp_chars: str, max_order: int, beta: float,
                extra_streams: list[tuple[list, list, int]] | None = None) -> float:
    """Per-order F-scores from explicitly enumerated n-grams, averaged."""
    beta2 = beta * beta
    streams: list[tuple[list, list, int]] = [
        (list(ref_chars), list(hyp_chars), max_order)
    ]
    if extra_streams:
        streams.extend(extra_streams)
    fs: list[float] = []
    for ref_units, hyp_units, order_cap in streams:
        for n in range(1, order_cap + 1):
            rg = enumerate_ngrams(ref_units, n)
            hg = enumerate_ngrams(hyp_units, n)
            if not rg and not hg:
                continue
            hits = overlap_count(rg, hg)
            p = hits / len(hg) if hg else 0.0
            r = hits / len(rg) if rg else 0.0
            denom = beta2 * p + r
            fs.append((1 + beta2) * p * r / denom if denom else 0.0)
    if not fs:
        return 0.0
    return sum(fs) / len(fs)


def bleu_oracle(ref_tokens: list[str], hyp_tokens: list[str], max_n: int,
                epsilon: float = 1e-9) -> float:
    if not hyp_tokens:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, max_n + 1):
        rg = enumerate_ngrams(ref_tokens, n)
        hg = enumerate_ngrams(hyp_tokens, n)
        if not rg and not hg:
            continue
        hits = overlap_count(rg, hg) if hg else 0
        p = hits / len(hg) if hg else 0.0
        if p == 0.0:
            p = epsilon
        log_sum += math.log(p)
        orders += 1
    if orders == 0:
        return 0.0
    if len(hyp_tokens) >= len(ref_tokens):
        bp = 1.0
    else:
        bp = math.exp(1.0 - len(ref_tokens) / len(hyp_tokens))
    return bp * math.exp(log_sum / orders)
