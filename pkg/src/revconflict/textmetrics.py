"""Lexical similarity used for dedup and alignment: ROUGE-L over a fixed tokenizer.

The tokenizer lowercases and keeps maximal runs of ASCII alphanumerics;
everything else separates tokens. ROUGE-L is the F1 of LCS-based precision
and recall, which collapses to 2*LCS / (len(c) + len(r)).
"""

from __future__ import annotations

import re
from typing import Sequence

from .model import ContradictionCandidate

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence, O(len(a)*len(b)) time,
    O(min) space."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 between two texts. Empty-vs-empty scores 0.0."""
    tokens_c = tokenize(candidate)
    tokens_r = tokenize(reference)
    if not tokens_c or not tokens_r:
        return 0.0
    lcs = lcs_length(tokens_c, tokens_r)
    if lcs == 0:
        return 0.0
    return 2.0 * lcs / (len(tokens_c) + len(tokens_r))


def pair_similarity(
    candidate: tuple[str, str] | Sequence[str],
    other: tuple[str, str] | Sequence[str],
) -> float:
    """Similarity between two evidence pairs: mean of the side-wise ROUGE-L."""
    return 0.5 * (rouge_l(candidate[0], other[0]) + rouge_l(candidate[1], other[1]))


def dedup(
    candidates: Sequence[ContradictionCandidate],
    threshold: float = 0.9,
) -> list[ContradictionCandidate]:
    """Drop near-duplicate candidates, keeping the earliest in canonical order.

    Canonical order is (aspect enumeration index, within-aspect position), so
    a duplicate spanning two aspects collapses onto the earlier aspect. The
    survivors come back in the input order. A candidate is a duplicate when
    its pair_similarity to an already-kept one is >= threshold. Idempotent.
    """
    indexed = sorted(
        range(len(candidates)),
        key=lambda i: (candidates[i].origin.aspect_index, candidates[i].origin.position),
    )
    kept: set[int] = set()
    kept_quotes: list[tuple[str, str]] = []
    for i in indexed:
        quotes = (candidates[i].evidence.quote_a, candidates[i].evidence.quote_b)
        if any(pair_similarity(quotes, seen) >= threshold for seen in kept_quotes):
            continue
        kept.add(i)
        kept_quotes.append(quotes)
    return [candidates[i] for i in range(len(candidates)) if i in kept]
