"""Domain types for review-pair contradiction analysis.

Everything here is an immutable dataclass (or enum) with validation at
construction and a ``to_dict``/``from_dict`` pair whose round trip is the
identity. JSONL helpers for the two wire formats (review-pair input,
prediction output) live at the bottom.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .sentences import normalize_whitespace, segment_sentences


class Aspect(Enum):
    """The six evaluative categories conditioning extraction.

    Declaration order is the canonical enumeration order used for
    deterministic scans (dedup, export ordering).
    """

    MOTIVATION = "Motivation"
    CLARITY = "Clarity"
    SOUNDNESS = "Soundness"
    SUBSTANCE = "Substance"
    ORIGINALITY = "Originality"
    MEANINGFUL_COMPARISON = "Meaningful Comparison"

    @property
    def definition(self) -> str:
        return _ASPECT_DEFINITIONS[self]

    @property
    def order(self) -> int:
        return _ASPECT_ORDER[self]

    @classmethod
    def from_string(cls, raw: str) -> "Aspect":
        key = raw.strip().lower().replace("_", " ")
        key = " ".join(key.split())
        for aspect in cls:
            if key in (aspect.value.lower(), aspect.value.lower().replace(" ", "")):
                return aspect
        raise ValueError(f"unknown aspect: {raw!r}")


_ASPECT_DEFINITIONS: dict[Aspect, str] = {
    Aspect.MOTIVATION: (
        "Problem importance, relevance, impact, and significance of the research."
    ),
    Aspect.CLARITY: (
        "Writing quality, organization, readability, and explanation of methods."
    ),
    Aspect.SOUNDNESS: (
        "Correctness, validity, methodological justification, and logical consistency."
    ),
    Aspect.SUBSTANCE: (
        "Sufficiency of experiments, strength of analysis, ablations, and depth of the work."
    ),
    Aspect.ORIGINALITY: (
        "Novelty of ideas, techniques, insights, or contributions."
    ),
    Aspect.MEANINGFUL_COMPARISON: (
        "Fairness and completeness of comparisons to prior or baseline work."
    ),
}

_ASPECT_ORDER: dict[Aspect, int] = {aspect: i for i, aspect in enumerate(Aspect)}


class Intensity(IntEnum):
    """Discrete contradiction intensity; 0 means no valid contradiction."""

    NONE = 0
    LOW = 1
    MODERATE = 2
    HIGH = 3


VALID_INTENSITIES = frozenset(int(v) for v in Intensity)


class AgentId(Enum):
    A = "A"
    B = "B"
    JUDGE = "judge"


class ResolutionMode(Enum):
    AGREED_DIRECTLY = "agreed_directly"
    ADJUDICATED = "adjudicated"


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


@dataclass(frozen=True)
class Review:
    """One reviewer's full text plus its sentence spans."""

    review_id: str
    paper_id: str
    text: str
    sentences: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        _require(bool(self.text), "review text must be non-empty")
        _require(bool(self.review_id), "review_id must be non-empty")
        previous_end = 0
        for start, end in self.sentences:
            _require(0 <= start < end <= len(self.text), "sentence span out of bounds")
            _require(start >= previous_end, "sentence spans must be ordered and disjoint")
            previous_end = end

    @classmethod
    def create(cls, review_id: str, paper_id: str, text: str) -> "Review":
        return cls(
            review_id=review_id,
            paper_id=paper_id,
            text=text,
            sentences=tuple(segment_sentences(text)),
        )

    def sentence_texts(self) -> list[str]:
        return [self.text[start:end] for start, end in self.sentences]

    def contains_quote(self, quote: str) -> bool:
        """Whitespace-normalized, case-sensitive grounding check."""
        return normalize_whitespace(quote) in normalize_whitespace(self.text)

    def to_dict(self) -> dict[str, Any]:
        return {
            "review_id": self.review_id,
            "paper_id": self.paper_id,
            "text": self.text,
            "sentences": [list(span) for span in self.sentences],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], paper_id: str | None = None) -> "Review":
        pid = data.get("paper_id", paper_id)
        if pid is None:
            raise ValueError("review record is missing paper_id")
        if "sentences" in data:
            spans = tuple((int(s), int(e)) for s, e in data["sentences"])
            return cls(
                review_id=str(data["review_id"]),
                paper_id=str(pid),
                text=data["text"],
                sentences=spans,
            )
        return cls.create(str(data["review_id"]), str(pid), data["text"])


@dataclass(frozen=True)
class EvidencePair:
    """Verbatim quotes, one from each review of the pair."""

    quote_a: str
    quote_b: str

    def __post_init__(self) -> None:
        _require(bool(self.quote_a.strip()), "quote_a must be non-empty")
        _require(bool(self.quote_b.strip()), "quote_b must be non-empty")

    def grounded_in(self, review_a: Review, review_b: Review) -> bool:
        return review_a.contains_quote(self.quote_a) and review_b.contains_quote(self.quote_b)

    def to_dict(self) -> list[str]:
        return [self.quote_a, self.quote_b]

    @classmethod
    def from_dict(cls, data: Iterable[str]) -> "EvidencePair":
        quotes = list(data)
        _require(len(quotes) == 2, "evidence must have exactly two quotes")
        return cls(quote_a=str(quotes[0]), quote_b=str(quotes[1]))


@dataclass(frozen=True)
class GoldInstance:
    evidence: EvidencePair
    intensity: Intensity
    aspect: Aspect | None = None
    explanation: str | None = None

    def __post_init__(self) -> None:
        _require(self.intensity >= Intensity.LOW, "gold intensity must be in {1,2,3}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "evidence": self.evidence.to_dict(),
            "intensity": int(self.intensity),
            "aspect": self.aspect.value if self.aspect else None,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GoldInstance":
        aspect = data.get("aspect")
        return cls(
            evidence=EvidencePair.from_dict(data["evidence"]),
            intensity=Intensity(int(data["intensity"])),
            aspect=Aspect.from_string(aspect) if aspect else None,
            explanation=data.get("explanation"),
        )


@dataclass(frozen=True)
class ReviewPair:
    """The unordered pair of reviews under analysis, plus optional gold."""

    paper_id: str
    review_a: Review
    review_b: Review
    gold: tuple[GoldInstance, ...] | None = None

    def __post_init__(self) -> None:
        _require(
            self.review_a.paper_id == self.paper_id == self.review_b.paper_id,
            "both reviews must belong to the pair's paper",
        )
        _require(
            self.review_a.review_id != self.review_b.review_id,
            "a pair must join two distinct reviews",
        )

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.paper_id, self.review_a.review_id, self.review_b.review_id)

    def to_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "paper_id": self.paper_id,
            "review_a": self.review_a.to_dict(),
            "review_b": self.review_b.to_dict(),
        }
        if self.gold is not None:
            record["gold"] = [g.to_dict() for g in self.gold]
        return record

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ReviewPair":
        paper_id = str(data["paper_id"])
        gold_raw = data.get("gold")
        gold = (
            tuple(GoldInstance.from_dict(g) for g in gold_raw)
            if gold_raw is not None
            else None
        )
        return cls(
            paper_id=paper_id,
            review_a=Review.from_dict(data["review_a"], paper_id=paper_id),
            review_b=Review.from_dict(data["review_b"], paper_id=paper_id),
            gold=gold,
        )


@dataclass(frozen=True)
class CandidateOrigin:
    """Where a candidate came from: the aspect pass and its list position."""

    aspect_index: int
    position: int

    def __post_init__(self) -> None:
        _require(self.aspect_index >= 0 and self.position >= 0, "origin indices must be >= 0")

    def to_dict(self) -> dict[str, int]:
        return {"aspect_index": self.aspect_index, "position": self.position}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CandidateOrigin":
        return cls(aspect_index=int(data["aspect_index"]), position=int(data["position"]))


@dataclass(frozen=True)
class ContradictionCandidate:
    aspect: Aspect
    description: str
    evidence: EvidencePair
    origin: CandidateOrigin

    def __post_init__(self) -> None:
        _require(bool(self.description.strip()), "candidate description must be non-empty")

    @property
    def key(self) -> tuple[int, int]:
        """Identity within one pipeline run over a pair."""
        return (self.origin.aspect_index, self.origin.position)

    def to_dict(self) -> dict[str, Any]:
        return {
            "aspect": self.aspect.value,
            "description": self.description,
            "evidence": self.evidence.to_dict(),
            "origin": self.origin.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ContradictionCandidate":
        return cls(
            aspect=Aspect.from_string(data["aspect"]),
            description=data["description"],
            evidence=EvidencePair.from_dict(data["evidence"]),
            origin=CandidateOrigin.from_dict(data["origin"]),
        )


@dataclass(frozen=True)
class ScoredJudgment:
    """One agent's intensity call with its rationale.

    ``deviated`` marks a debate reply whose claimed score differed from the
    locked one (the locked score is what's stored). ``coerced`` marks a
    judge label that had to be forced into the debated two-score set.
    """

    agent_id: AgentId
    round: int
    intensity: Intensity
    reasoning: str
    deviated: bool = False
    coerced: bool = False

    def __post_init__(self) -> None:
        _require(self.round >= 0, "round must be >= 0")
        _require(bool(self.reasoning.strip()), "reasoning must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent": self.agent_id.value,
            "round": self.round,
            "intensity": int(self.intensity),
            "reasoning": self.reasoning,
            "deviated": self.deviated,
            "coerced": self.coerced,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScoredJudgment":
        return cls(
            agent_id=AgentId(data["agent"]),
            round=int(data["round"]),
            intensity=Intensity(int(data["intensity"])),
            reasoning=data["reasoning"],
            deviated=bool(data.get("deviated", False)),
            coerced=bool(data.get("coerced", False)),
        )


@dataclass(frozen=True)
class DeliberationTrace:
    """Full history of how one candidate's intensity was settled."""

    candidate: ContradictionCandidate
    initial_a: ScoredJudgment
    initial_b: ScoredJudgment
    turns: tuple[ScoredJudgment, ...]
    resolution_mode: ResolutionMode
    adjudication: ScoredJudgment | None = None
    partial: bool = False

    def __post_init__(self) -> None:
        _require(self.initial_a.agent_id is AgentId.A, "initial_a must come from agent A")
        _require(self.initial_b.agent_id is AgentId.B, "initial_b must come from agent B")
        _require(self.initial_a.round == 0 == self.initial_b.round, "initials are round 0")
        if self.resolution_mode is ResolutionMode.AGREED_DIRECTLY:
            _require(not self.turns, "agreed traces carry no debate turns")
            _require(self.adjudication is None, "agreed traces carry no adjudication")
            _require(
                self.initial_a.intensity == self.initial_b.intensity,
                "agreed traces require matching initial scores",
            )
            _require(not self.partial, "agreed traces cannot be partial")
            return
        _require(self.adjudication is not None, "adjudicated traces need a judge call")
        _require(
            self.adjudication.agent_id is AgentId.JUDGE,
            "adjudication must come from the judge",
        )
        _require(
            self.initial_a.intensity != self.initial_b.intensity,
            "adjudication requires a dispute",
        )
        if not self.partial:
            _require(len(self.turns) % 2 == 0, "a full debate has an A+B turn per round")
        locked = {AgentId.A: self.initial_a.intensity, AgentId.B: self.initial_b.intensity}
        for index, turn in enumerate(self.turns):
            expected_agent = AgentId.A if index % 2 == 0 else AgentId.B
            _require(turn.agent_id is expected_agent, "debate turns must alternate A, B")
            _require(turn.round == index // 2 + 1, "turn rounds must advance one per A+B exchange")
            _require(
                turn.intensity == locked[turn.agent_id],
                "score-locking: every turn keeps its agent's round-0 intensity",
            )

    @property
    def final_intensity(self) -> Intensity:
        if self.resolution_mode is ResolutionMode.AGREED_DIRECTLY:
            return self.initial_a.intensity
        assert self.adjudication is not None
        return self.adjudication.intensity

    @property
    def final_reasoning(self) -> str:
        if self.resolution_mode is ResolutionMode.AGREED_DIRECTLY:
            return self.initial_a.reasoning
        assert self.adjudication is not None
        return self.adjudication.reasoning

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate": self.candidate.to_dict(),
            "initial_a": self.initial_a.to_dict(),
            "initial_b": self.initial_b.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "resolution": self.resolution_mode.value,
            "adjudication": self.adjudication.to_dict() if self.adjudication else None,
            "partial": self.partial,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DeliberationTrace":
        adjudication = data.get("adjudication")
        return cls(
            candidate=ContradictionCandidate.from_dict(data["candidate"]),
            initial_a=ScoredJudgment.from_dict(data["initial_a"]),
            initial_b=ScoredJudgment.from_dict(data["initial_b"]),
            turns=tuple(ScoredJudgment.from_dict(t) for t in data["turns"]),
            resolution_mode=ResolutionMode(data["resolution"]),
            adjudication=ScoredJudgment.from_dict(adjudication) if adjudication else None,
            partial=bool(data.get("partial", False)),
        )


@dataclass(frozen=True)
class ContradictionInstance:
    """A validated contradiction: evidence, aspect, non-zero intensity, rationale."""

    aspect: Aspect
    evidence: EvidencePair
    intensity: Intensity
    rationale: str
    trace: DeliberationTrace

    def __post_init__(self) -> None:
        _require(self.intensity >= Intensity.LOW, "instances must carry intensity in {1,2,3}")
        _require(bool(self.rationale.strip()), "rationale must be non-empty")
        _require(self.aspect is self.trace.candidate.aspect, "aspect must match the candidate")

    def to_dict(self) -> dict[str, Any]:
        return {
            "aspect": self.aspect.value,
            "evidence": self.evidence.to_dict(),
            "intensity": int(self.intensity),
            "rationale": self.rationale,
            "trace": self.trace.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ContradictionInstance":
        return cls(
            aspect=Aspect.from_string(data["aspect"]),
            evidence=EvidencePair.from_dict(data["evidence"]),
            intensity=Intensity(int(data["intensity"])),
            rationale=data["rationale"],
            trace=DeliberationTrace.from_dict(data["trace"]),
        )


@dataclass(frozen=True)
class RoleUsage:
    input_tokens: int = 0
    output_tokens: int = 0
    calls: int = 0

    def __post_init__(self) -> None:
        _require(
            self.input_tokens >= 0 and self.output_tokens >= 0 and self.calls >= 0,
            "usage counters must be non-negative",
        )

    def plus(self, input_tokens: int, output_tokens: int) -> "RoleUsage":
        return RoleUsage(
            input_tokens=self.input_tokens + input_tokens,
            output_tokens=self.output_tokens + output_tokens,
            calls=self.calls + 1,
        )

    def to_dict(self) -> dict[str, int]:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "calls": self.calls,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RoleUsage":
        return cls(
            input_tokens=int(data["input_tokens"]),
            output_tokens=int(data["output_tokens"]),
            calls=int(data.get("calls", 0)),
        )


@dataclass(frozen=True)
class Diagnostic:
    """A recorded per-candidate or per-aspect failure that did not stop the run."""

    stage: str
    message: str
    aspect: Aspect | None = None
    candidate: ContradictionCandidate | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "message": self.message,
            "aspect": self.aspect.value if self.aspect else None,
            "candidate": self.candidate.to_dict() if self.candidate else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Diagnostic":
        aspect = data.get("aspect")
        candidate = data.get("candidate")
        return cls(
            stage=data["stage"],
            message=data["message"],
            aspect=Aspect.from_string(aspect) if aspect else None,
            candidate=ContradictionCandidate.from_dict(candidate) if candidate else None,
        )


@dataclass(frozen=True)
class PipelineResult:
    """Everything one review pair produced: kept instances, discarded traces,
    per-candidate diagnostics, and token accounting."""

    paper_id: str
    review_a_id: str
    review_b_id: str
    instances: tuple[ContradictionInstance, ...]
    discarded: tuple[DeliberationTrace, ...]
    diagnostics: tuple[Diagnostic, ...] = ()
    token_usage: tuple[tuple[str, RoleUsage], ...] = ()
    wall_time_s: float | None = None

    def __post_init__(self) -> None:
        for trace in self.discarded:
            _require(
                trace.final_intensity == Intensity.NONE,
                "discarded traces must end at intensity 0",
            )
        kept = {inst.trace.candidate.key for inst in self.instances}
        dropped = {trace.candidate.key for trace in self.discarded}
        _require(not kept & dropped, "instances and discarded must be disjoint")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.paper_id, self.review_a_id, self.review_b_id)

    def usage(self) -> dict[str, RoleUsage]:
        return dict(self.token_usage)

    def to_dict(self, include_timing: bool = True) -> dict[str, Any]:
        record: dict[str, Any] = {
            "paper_id": self.paper_id,
            "review_a_id": self.review_a_id,
            "review_b_id": self.review_b_id,
            "instances": [inst.to_dict() for inst in self.instances],
            "discarded": [trace.to_dict() for trace in self.discarded],
            "diagnostics": [diag.to_dict() for diag in self.diagnostics],
            "token_usage": {role: usage.to_dict() for role, usage in self.token_usage},
        }
        if include_timing and self.wall_time_s is not None:
            record["wall_time_s"] = self.wall_time_s
        return record

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineResult":
        return cls(
            paper_id=data["paper_id"],
            review_a_id=data["review_a_id"],
            review_b_id=data["review_b_id"],
            instances=tuple(ContradictionInstance.from_dict(i) for i in data["instances"]),
            discarded=tuple(DeliberationTrace.from_dict(t) for t in data["discarded"]),
            diagnostics=tuple(Diagnostic.from_dict(d) for d in data.get("diagnostics", [])),
            token_usage=tuple(
                (role, RoleUsage.from_dict(usage))
                for role, usage in data.get("token_usage", {}).items()
            ),
            wall_time_s=data.get("wall_time_s"),
        )


def dumps_record(record: Mapping[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def load_review_pairs(path: str | Path) -> list[ReviewPair]:
    pairs: list[ReviewPair] = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                pairs.append(ReviewPair.from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{line_number}: bad review-pair record: {exc}") from exc
    return pairs


def write_results(results: Iterable[PipelineResult], path: str | Path, include_timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for result in results:
            handle.write(dumps_record(result.to_dict(include_timing=include_timing)))
            handle.write("\n")


def load_results(path: str | Path) -> list[PipelineResult]:
    results: list[PipelineResult] = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                results.append(PipelineResult.from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{line_number}: bad prediction record: {exc}") from exc
    return results


def iter_jsonl(path: str | Path) -> Iterator[Any]:
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield json.loads(line)
