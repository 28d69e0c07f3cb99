"""Agent operations: render a prompt, call the bound model, parse strictly.

Four roles: the per-aspect evidence extractor, the two independent intensity
scorers (who also fight the debate rounds), and the judge. Every operation
gets one automatic re-prompt on malformed output before giving up, and
failures carry the raw model text for audit.
"""

from __future__ import annotations

import logging
import re
from typing import Callable, NamedTuple, Sequence

from . import prompts
from .backend import Backend, BackendBinding, ChatMessage, ChatResponse, UsageMeter
from .model import (
    AgentId,
    Aspect,
    CandidateOrigin,
    ContradictionCandidate,
    EvidencePair,
    Intensity,
    Review,
    ReviewPair,
    ScoredJudgment,
)
from .textmetrics import rouge_l

logger = logging.getLogger(__name__)

FUZZY_REPAIR_THRESHOLD = 0.6

PARSE_CORRECTION = (
    "Your previous reply could not be used. Respond again with ONLY a valid JSON "
    "payload in exactly the required output format, with no additional text."
)
RANGE_CORRECTION = (
    "Your previous reply gave an intensity outside the allowed set {0, 1, 2, 3}. "
    "Respond again with ONLY a valid JSON payload in the required output format, "
    "with an intensity in {0, 1, 2, 3}."
)


class AgentOutputError(Exception):
    """Model output that failed parsing or validation; keeps the raw text."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class ParseError(AgentOutputError):
    pass


class SchemaError(AgentOutputError):
    pass


class RangeError(AgentOutputError):
    pass


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*")
_OPENERS = {"{": "}", "[": "]"}


def parse_json_payload(text: str):
    """Extract and parse the first balanced top-level JSON object or array.

    Code fences are stripped, prefix/suffix prose is ignored. Raises
    ParseError when no balanced span parses as JSON.
    """
    import json

    cleaned = _FENCE_RE.sub("", text)
    for start, opener in _scan_openers(cleaned):
        end = _balanced_end(cleaned, start, _OPENERS[opener])
        if end is None:
            continue
        try:
            return json.loads(cleaned[start : end + 1])
        except json.JSONDecodeError:
            continue
    raise ParseError("no balanced JSON object or array found", raw_text=text)


def _scan_openers(text: str):
    for index, char in enumerate(text):
        if char in _OPENERS:
            yield index, char


def _balanced_end(text: str, start: int, closer: str) -> int | None:
    """Index of the closer matching text[start], honoring JSON string syntax."""
    depth = 0
    in_string = False
    escaped = False
    for index in range(start, len(text)):
        char = text[index]
        if in_string:
            if escaped:
                escaped = False
            elif char == "\\":
                escaped = True
            elif char == '"':
                in_string = False
            continue
        if char == '"':
            in_string = True
        elif char in _OPENERS:
            depth += 1
        elif char in ("}", "]"):
            depth -= 1
            if depth == 0:
                return index if char == closer else None
            if depth < 0:
                return None
    return None


def _call(
    backend: Backend,
    binding: BackendBinding,
    messages: Sequence[ChatMessage],
    meter: UsageMeter | None,
) -> ChatResponse:
    response = backend.complete(binding, messages)
    if meter is not None:
        meter.add(binding.role, response)
    if response.truncated:
        logger.warning("output truncated at max_output_tokens (role %s)", binding.role)
    return response


class _Parsed(NamedTuple):
    value: object
    raw: str


def _call_with_repair(
    backend: Backend,
    binding: BackendBinding,
    messages: list[ChatMessage],
    parse: Callable[[str], object],
    meter: UsageMeter | None,
) -> _Parsed:
    """Call the model, parse; on failure re-prompt once with a correction."""
    response = _call(backend, binding, messages, meter)
    try:
        return _Parsed(parse(response.text), response.text)
    except AgentOutputError as first:
        correction = RANGE_CORRECTION if isinstance(first, RangeError) else PARSE_CORRECTION
        logger.info("re-prompting after %s (role %s)", type(first).__name__, binding.role)
        retry = messages + [
            ChatMessage("assistant", response.text),
            ChatMessage("user", correction),
        ]
        second = _call(backend, binding, retry, meter)
        return _Parsed(parse(second.text), second.text)


def _as_int(value: object) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return None


def _parse_scored(text: str, enforce_range: bool = True) -> tuple[int, str]:
    """Parse {"intensity": int, "reasoning": str} from model text."""
    payload = parse_json_payload(text)
    if not isinstance(payload, dict):
        raise SchemaError("expected a JSON object with intensity and reasoning", text)
    if "intensity" not in payload or "reasoning" not in payload:
        raise SchemaError("missing intensity or reasoning key", text)
    intensity = _as_int(payload["intensity"])
    if intensity is None:
        raise SchemaError("intensity must be an integer", text)
    reasoning = payload["reasoning"]
    if not isinstance(reasoning, str) or not reasoning.strip():
        raise SchemaError("reasoning must be a non-empty string", text)
    if enforce_range and intensity not in (0, 1, 2, 3):
        raise RangeError(f"intensity {intensity} outside {{0,1,2,3}}", text)
    return intensity, reasoning


def _parse_extraction(text: str) -> list[tuple[str, str, str]]:
    """Parse the extractor payload into (description, quote_1, quote_2) triples."""
    payload = parse_json_payload(text)
    if not isinstance(payload, dict) or "contradictions" not in payload:
        raise SchemaError("expected a JSON object with a contradictions array", text)
    items = payload["contradictions"]
    if not isinstance(items, list):
        raise SchemaError("contradictions must be an array", text)
    triples = []
    for index, item in enumerate(items):
        if not isinstance(item, dict):
            raise SchemaError(f"contradictions[{index}] is not an object", text)
        description = item.get("contradiction")
        evidence = item.get("evidence")
        if not isinstance(description, str) or not description.strip():
            raise SchemaError(f"contradictions[{index}] lacks a description", text)
        if not isinstance(evidence, list) or len(evidence) != 2:
            raise SchemaError(
                f"contradictions[{index}].evidence must have exactly 2 elements", text
            )
        quote_1, quote_2 = evidence
        if not isinstance(quote_1, str) or not quote_1.strip():
            raise SchemaError(f"contradictions[{index}].evidence[0] is empty", text)
        if not isinstance(quote_2, str) or not quote_2.strip():
            raise SchemaError(f"contradictions[{index}].evidence[1] is empty", text)
        triples.append((description, quote_1, quote_2))
    return triples


def _ground_quote(quote: str, review: Review) -> str | None:
    """Return the quote if grounded, its best-matching sentence if repairable,
    else None. Repair requires rouge_l >= FUZZY_REPAIR_THRESHOLD."""
    if review.contains_quote(quote):
        return quote
    best: str | None = None
    best_score = 0.0
    for sentence in review.sentence_texts():
        score = rouge_l(quote, sentence)
        if score > best_score:
            best, best_score = sentence, score
    if best is not None and best_score >= FUZZY_REPAIR_THRESHOLD:
        return best
    return None


def extract_candidates(
    pair: ReviewPair,
    aspect: Aspect,
    backend: Backend,
    binding: BackendBinding,
    meter: UsageMeter | None = None,
) -> list[ContradictionCandidate]:
    """Run aspect-conditioned extraction over the pair.

    Ungrounded quotes are repaired to the closest source sentence when close
    enough, otherwise the candidate is dropped and logged. Origin positions
    index the model's output list, so drops leave gaps.
    """
    prompt = prompts.render_extraction_prompt(aspect, pair.review_a.text, pair.review_b.text)
    messages = [ChatMessage("user", prompt)]
    parsed = _call_with_repair(backend, binding, messages, _parse_extraction, meter)
    candidates = []
    for position, (description, quote_1, quote_2) in enumerate(parsed.value):
        grounded_1 = _ground_quote(quote_1, pair.review_a)
        grounded_2 = _ground_quote(quote_2, pair.review_b)
        if grounded_1 is None or grounded_2 is None:
            side = "review 1" if grounded_1 is None else "review 2"
            logger.info(
                "dropping ungrounded candidate (%s, aspect %s, position %d)",
                side,
                aspect.value,
                position,
            )
            continue
        candidates.append(
            ContradictionCandidate(
                aspect=aspect,
                description=description,
                evidence=EvidencePair(quote_a=grounded_1, quote_b=grounded_2),
                origin=CandidateOrigin(aspect_index=aspect.order, position=position),
            )
        )
    return candidates


def _scorer_system(agent_id: AgentId) -> ChatMessage:
    # Distinct system line per scorer so the two roles never share a
    # message fingerprint (the scripted backend needs to tell them apart).
    return ChatMessage("system", f"You are intensity scorer {agent_id.value}.")


def initial_score(
    candidate: ContradictionCandidate,
    pair: ReviewPair,
    agent_id: AgentId,
    backend: Backend,
    binding: BackendBinding,
    meter: UsageMeter | None = None,
) -> ScoredJudgment:
    """One scorer's independent round-0 intensity call for a candidate."""
    prompt = prompts.render_initial_score_prompt(
        pair.review_a.text,
        pair.review_b.text,
        candidate.evidence.quote_a,
        candidate.evidence.quote_b,
    )
    messages = [_scorer_system(agent_id), ChatMessage("user", prompt)]
    parsed = _call_with_repair(backend, binding, messages, _parse_scored, meter)
    intensity, reasoning = parsed.value
    return ScoredJudgment(
        agent_id=agent_id,
        round=0,
        intensity=Intensity(intensity),
        reasoning=reasoning,
    )


def debate_turn(
    candidate: ContradictionCandidate,
    pair: ReviewPair,
    own_latest: ScoredJudgment,
    opponent_latest: ScoredJudgment,
    history: Sequence[ScoredJudgment],
    backend: Backend,
    binding: BackendBinding,
    meter: UsageMeter | None = None,
) -> ScoredJudgment:
    """One locked-score debate turn.

    The reply's claimed intensity is overridden with the locked score; a
    mismatch sets the deviation flag but keeps the reply text.
    """
    locked = int(own_latest.intensity)
    prompt = prompts.render_debate_prompt(
        pair.review_a.text,
        pair.review_b.text,
        candidate.evidence.quote_a,
        candidate.evidence.quote_b,
        prompts.format_debate_history(history),
        locked,
        own_latest.reasoning,
        int(opponent_latest.intensity),
        opponent_latest.reasoning,
    )
    messages = [_scorer_system(own_latest.agent_id), ChatMessage("user", prompt)]
    parsed = _call_with_repair(
        backend, binding, messages, lambda t: _parse_scored(t, enforce_range=False), meter
    )
    claimed, reasoning = parsed.value
    deviated = claimed != locked
    if deviated:
        logger.info(
            "agent %s claimed %d while locked at %d; overriding",
            own_latest.agent_id.value,
            claimed,
            locked,
        )
    return ScoredJudgment(
        agent_id=own_latest.agent_id,
        round=own_latest.round + 1,
        intensity=Intensity(locked),
        reasoning=reasoning,
        deviated=deviated,
    )


def _coerce_to_debated(value: int, debated: set[int]) -> int:
    # nearest debated score; ties break toward the lower one
    return min(sorted(debated), key=lambda d: (abs(d - value), d))


def adjudicate(
    candidate: ContradictionCandidate,
    pair: ReviewPair,
    initial_a: ScoredJudgment,
    initial_b: ScoredJudgment,
    turns: Sequence[ScoredJudgment],
    backend: Backend,
    binding: BackendBinding,
    meter: UsageMeter | None = None,
) -> ScoredJudgment:
    """Judge the debate. The final label must be one of the two debated
    scores; an out-of-set verdict gets one corrective re-prompt, then is
    coerced to the nearest debated score (ties toward the lower), flagged."""
    history = [initial_a, initial_b, *turns]
    prompt = prompts.render_adjudication_prompt(
        pair.review_a.text,
        pair.review_b.text,
        candidate.evidence.quote_a,
        candidate.evidence.quote_b,
        prompts.format_debate_history(history),
    )
    messages = [ChatMessage("user", prompt)]
    parsed = _call_with_repair(backend, binding, messages, _parse_scored, meter)
    value, reasoning = parsed.value
    debated = {int(initial_a.intensity), int(initial_b.intensity)}
    round_number = (turns[-1].round if turns else 0) + 1
    coerced = False
    if value not in debated:
        low, high = min(debated), max(debated)
        membership_correction = (
            f"Your verdict must select one of the two debated scores: {low} or {high}. "
            "Respond again with ONLY a valid JSON payload in the required output format."
        )
        retry = messages + [
            ChatMessage("assistant", parsed.raw),
            ChatMessage("user", membership_correction),
        ]
        second = _call(backend, binding, retry, meter)
        try:
            value, reasoning = _parse_scored(second.text)
        except AgentOutputError:
            logger.info("membership re-prompt unusable; coercing from first verdict")
        if value not in debated:
            coerced_value = _coerce_to_debated(value, debated)
            logger.info("coercing judge verdict %d to debated score %d", value, coerced_value)
            value = coerced_value
            coerced = True
    return ScoredJudgment(
        agent_id=AgentId.JUDGE,
        round=round_number,
        intensity=Intensity(value),
        reasoning=reasoning,
        coerced=coerced,
    )
