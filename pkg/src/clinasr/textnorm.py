"""Text normalization applied before any metric computation.

The pipeline runs, in this order: number-to-word conversion with British
conventions, lowercasing, hyphen-to-space replacement, removal of all
remaining punctuation (apostrophes removed without inserting a space),
whitespace collapsing, and an optional token-level non-lexical filter.
The pipeline is idempotent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

_UNITS = (
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen",
)
_TENS = (
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy",
    "eighty", "ninety",
)
_SCALES = ("", "thousand", "million", "billion", "trillion")

_ORDINAL_IRREGULAR = {
    "one": "first",
    "two": "second",
    "three": "third",
    "five": "fifth",
    "eight": "eighth",
    "nine": "ninth",
    "twelve": "twelfth",
}

_NUMBER_RE = re.compile(
    r"(?<![A-Za-z0-9])"
    r"(\d[\d,]*(?:\.\d+)?|\.\d+)"
    r"(st|nd|rd|th)?"
    r"(?![A-Za-z0-9])",
    re.IGNORECASE,
)

_HYPHENS = "-‐‑‒–—―"
_HYPHEN_RE = re.compile("[%s]" % _HYPHENS)
_PUNCT_RE = re.compile(r"[^\w\s]|_")


def _under_thousand(n: int) -> str:
    parts: list[str] = []
    if n >= 100:
        parts.append(_UNITS[n // 100])
        parts.append("hundred")
        n %= 100
        if n:
            parts.append("and")
    if n >= 20:
        tens = _TENS[n // 10]
        unit = n % 10
        parts.append(f"{tens}-{_UNITS[unit]}" if unit else tens)
    elif n or not parts:
        parts.append(_UNITS[n])
    return " ".join(parts)


def int_to_words(n: int) -> str:
    """Cardinal words with British conventions ('one hundred and one')."""
    if n < 0:
        return "minus " + int_to_words(-n)
    if n < 1000:
        return _under_thousand(n)
    groups: list[int] = []
    while n:
        groups.append(n % 1000)
        n //= 1000
    if len(groups) > len(_SCALES):
        raise ValueError("number too large to convert")
    parts: list[str] = []
    for pos in range(len(groups) - 1, 0, -1):
        if groups[pos]:
            parts.append(_under_thousand(groups[pos]))
            parts.append(_SCALES[pos])
    last = groups[0]
    if last:
        # British 'and' joins a trailing sub-hundred group to the big part.
        if last < 100:
            parts.append("and")
        parts.append(_under_thousand(last))
    return " ".join(parts)


def ordinal_to_words(n: int) -> str:
    """Ordinal words: 1 -> 'first', 23 -> 'twenty-third'."""
    words = int_to_words(n)
    head, sep, tail = words.rpartition(" ")
    hy_head, hy_sep, hy_tail = tail.rpartition("-")
    if hy_tail in _ORDINAL_IRREGULAR:
        ord_tail = hy_head + hy_sep + _ORDINAL_IRREGULAR[hy_tail]
    elif hy_tail.endswith("y"):
        ord_tail = hy_head + hy_sep + hy_tail[:-1] + "ieth"
    else:
        ord_tail = hy_head + hy_sep + hy_tail + "th"
    return head + sep + ord_tail


def _convert_match(m: re.Match) -> str:
    body, suffix = m.group(1), m.group(2)
    digits = body.replace(",", "")
    try:
        if "." in digits:
            # Decimals convert digit-group-wise; a stray ordinal suffix on a
            # decimal is dropped so repeated normalization stays stable.
            whole, frac = digits.split(".", 1)
            spoken = [int_to_words(int(whole) if whole else 0), "point"]
            spoken.extend(_UNITS[int(d)] for d in frac)
            return " ".join(spoken)
        value = int(digits)
        return ordinal_to_words(value) if suffix else int_to_words(value)
    except ValueError:
        return m.group(0)


def convert_numbers(text: str) -> str:
    """Replace numeric expressions with their word equivalents.

    Unconvertible numeric tokens pass through untouched and are handled by
    the later lowercasing / punctuation steps.
    """
    return _NUMBER_RE.sub(_convert_match, text)


def _default_lexicon_text() -> str:
    return (
        resources.files("clinasr").joinpath("data/nonlexical_tokens.txt")
        .read_text(encoding="utf-8")
    )


def parse_lexicon(text: str) -> frozenset[str]:
    tokens: set[str] = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.add(line.lower())
    return frozenset(tokens)


def load_lexicon(path: str | Path) -> frozenset[str]:
    """Lexicon file: one token per line, lowercase, '#' comments allowed."""
    return parse_lexicon(Path(path).read_text(encoding="utf-8"))


def default_lexicon() -> frozenset[str]:
    return parse_lexicon(_default_lexicon_text())


@dataclass(frozen=True)
class NormalizationConfig:
    number_locale: str = "british_english"
    remove_non_lexical: bool = False
    non_lexical_lexicon: frozenset[str] = field(default_factory=default_lexicon)

    def __post_init__(self) -> None:
        if self.number_locale != "british_english":
            raise ValueError(f"unsupported number locale {self.number_locale!r}")
        if self.remove_non_lexical and not self.non_lexical_lexicon:
            raise ValueError("non-lexical filtering requires a nonempty lexicon")


DEFAULT_CONFIG = NormalizationConfig()
METRICS_SUBSET_CONFIG = NormalizationConfig(remove_non_lexical=True)


def normalize(text: str, cfg: NormalizationConfig | None = None) -> str:
    cfg = cfg or DEFAULT_CONFIG
    s = convert_numbers(text)
    s = s.lower()
    s = _HYPHEN_RE.sub(" ", s)
    s = _PUNCT_RE.sub("", s)
    s = " ".join(s.split())
    if cfg.remove_non_lexical:
        kept = [t for t in s.split(" ") if t and t not in cfg.non_lexical_lexicon]
        s = " ".join(kept)
    return s


def tokenize_words(text: str) -> list[str]:
    """Split normalized text on single spaces; empty text gives no tokens."""
    if not text:
        return []
    return text.split(" ")
