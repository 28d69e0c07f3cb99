"""Rule-based sentence segmentation and whitespace normalization.

Segmentation is deterministic: a sentence boundary is a run of terminal
punctuation (``. ! ?``) followed by whitespace and then an uppercase letter
or a digit, unless the text up to the punctuation ends in a known
abbreviation. No statistical models, no locale dependence.
"""

from __future__ import annotations

TERMINAL_PUNCTUATION = ".!?"

# Fixed guard list. A period closing one of these never ends a sentence.
ABBREVIATIONS = (
    "e.g.",
    "i.e.",
    "etc.",
    "et al.",
    "cf.",
    "vs.",
    "viz.",
    "resp.",
    "approx.",
    "w.r.t.",
    "i.i.d.",
    "a.k.a.",
    "Fig.",
    "Figs.",
    "Eq.",
    "Eqs.",
    "Sec.",
    "Secs.",
    "Tab.",
    "Tabs.",
    "Alg.",
    "App.",
    "Thm.",
    "Lem.",
    "Prop.",
    "Def.",
    "Dr.",
    "Prof.",
    "Mr.",
    "Ms.",
    "Mrs.",
)


def normalize_whitespace(text: str) -> str:
    """Collapse every whitespace run to a single space and trim the ends."""
    return " ".join(text.split())


def _ends_with_abbreviation(text: str, end: int) -> bool:
    prefix = text[:end]
    for abbr in ABBREVIATIONS:
        if prefix.endswith(abbr):
            before = end - len(abbr) - 1
            if before < 0 or not text[before].isalnum():
                return True
    return False


def _boundaries(text: str) -> list[int]:
    cuts: list[int] = []
    n = len(text)
    i = 0
    while i < n:
        if text[i] not in TERMINAL_PUNCTUATION:
            i += 1
            continue
        end = i + 1
        while end < n and text[end] in TERMINAL_PUNCTUATION:
            end += 1
        after = end
        while after < n and text[after].isspace():
            after += 1
        follows_new_sentence = (
            after > end
            and after < n
            and (text[after].isupper() or text[after].isdigit())
        )
        if follows_new_sentence:
            guarded = text[end - 1] == "." and _ends_with_abbreviation(text, end)
            if not guarded:
                cuts.append(end)
        i = end
    return cuts


def segment_sentences(text: str) -> list[tuple[int, int]]:
    """Split ``text`` into sentence spans as (start, end) offsets.

    Spans are trimmed of surrounding whitespace, non-overlapping, ordered,
    and together cover every non-whitespace character. Empty or blank input
    yields an empty list.
    """
    spans: list[tuple[int, int]] = []
    start = 0
    for cut in _boundaries(text) + [len(text)]:
        lo, hi = start, cut
        while lo < hi and text[lo].isspace():
            lo += 1
        while hi > lo and text[hi - 1].isspace():
            hi -= 1
        if lo < hi:
            spans.append((lo, hi))
        start = cut
    return spans
