"""Orchestration over one review pair and over a corpus.

The per-pair state machine: aspect-conditioned extraction, near-duplicate
removal, two independent intensity scores, an agreement gate, a fixed-round
locked-score debate on dispute, adjudication, and finally the validity gate
that discards label-0 candidates. Failures are isolated per candidate; a
pair fails outright only when extraction transport fails for every aspect.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import agents
from .backend import Backend, BackendBinding, BackendError, TransportError, UsageMeter
from .model import (
    AgentId,
    Aspect,
    ContradictionCandidate,
    ContradictionInstance,
    DeliberationTrace,
    Diagnostic,
    Intensity,
    PipelineResult,
    ResolutionMode,
    ReviewPair,
    ScoredJudgment,
    _require,
)
from .textmetrics import dedup

logger = logging.getLogger(__name__)

ROLE_EXTRACTOR = "extractor"
ROLE_SCORER_A = "scorer_a"
ROLE_SCORER_B = "scorer_b"
ROLE_JUDGE = "judge"
ROLES = (ROLE_EXTRACTOR, ROLE_SCORER_A, ROLE_SCORER_B, ROLE_JUDGE)


class PairFailure(Exception):
    """The whole review pair could not be processed."""


@dataclass(frozen=True)
class PipelineConfig:
    bindings: Mapping[str, BackendBinding]
    rounds: int = 4
    dedup_threshold: float = 0.9
    aspects: tuple[Aspect, ...] = tuple(Aspect)
    parallel_aspects: bool = True
    candidate_workers: int = 1
    pair_workers: int = 1

    def __post_init__(self) -> None:
        _require(self.rounds >= 1, "rounds must be >= 1")
        _require(0 < self.dedup_threshold <= 1, "dedup_threshold must be in (0, 1]")
        _require(bool(self.aspects), "aspect set must be non-empty")
        _require(self.candidate_workers >= 1, "candidate_workers must be >= 1")
        _require(self.pair_workers >= 1, "pair_workers must be >= 1")
        missing = [role for role in ROLES if role not in self.bindings]
        _require(not missing, f"missing bindings for roles: {missing}")


def agreement_check(a: ScoredJudgment, b: ScoredJudgment) -> Intensity | None:
    """The deterministic control gate: the shared label when the two round-0
    scores agree, None on dispute."""
    _require(a.round == 0 and b.round == 0, "agreement check applies to round-0 judgments")
    _require(a.agent_id is AgentId.A and b.agent_id is AgentId.B, "expects scorers A and B")
    if a.intensity == b.intensity:
        return a.intensity
    return None


def run_deliberation(
    candidate: ContradictionCandidate,
    pair: ReviewPair,
    initial_a: ScoredJudgment,
    initial_b: ScoredJudgment,
    config: PipelineConfig,
    backend: Backend,
    meter: UsageMeter | None = None,
) -> DeliberationTrace:
    """Fixed-round debate (one A turn then one B turn per round, A first)
    followed by adjudication.

    A turn that still fails after its re-prompt aborts the debate; the judge
    then rules over the partial history and the trace is flagged partial.
    """
    _require(initial_a.intensity != initial_b.intensity, "deliberation requires a dispute")
    history: list[ScoredJudgment] = [initial_a, initial_b]
    turns: list[ScoredJudgment] = []
    latest = {AgentId.A: initial_a, AgentId.B: initial_b}
    scorer_binding = {
        AgentId.A: config.bindings[ROLE_SCORER_A],
        AgentId.B: config.bindings[ROLE_SCORER_B],
    }
    partial = False
    for _ in range(config.rounds):
        for agent_id, opponent_id in ((AgentId.A, AgentId.B), (AgentId.B, AgentId.A)):
            try:
                turn = agents.debate_turn(
                    candidate,
                    pair,
                    latest[agent_id],
                    latest[opponent_id],
                    history,
                    backend,
                    scorer_binding[agent_id],
                    meter,
                )
            except agents.AgentOutputError as exc:
                logger.warning(
                    "debate turn failed after re-prompt (%s); adjudicating partial history",
                    exc,
                )
                partial = True
                break
            turns.append(turn)
            history.append(turn)
            latest[agent_id] = turn
        if partial:
            break
    adjudication = agents.adjudicate(
        candidate,
        pair,
        initial_a,
        initial_b,
        turns,
        backend,
        config.bindings[ROLE_JUDGE],
        meter,
    )
    return DeliberationTrace(
        candidate=candidate,
        initial_a=initial_a,
        initial_b=initial_b,
        turns=tuple(turns),
        resolution_mode=ResolutionMode.ADJUDICATED,
        adjudication=adjudication,
        partial=partial,
    )


def validity_gate(
    traces: Sequence[DeliberationTrace],
) -> tuple[list[ContradictionInstance], list[DeliberationTrace]]:
    """Split settled traces into kept instances (label >= 1) and discarded
    (label 0) ones."""
    instances: list[ContradictionInstance] = []
    discarded: list[DeliberationTrace] = []
    for trace in traces:
        if trace.final_intensity == Intensity.NONE:
            discarded.append(trace)
        else:
            instances.append(
                ContradictionInstance(
                    aspect=trace.candidate.aspect,
                    evidence=trace.candidate.evidence,
                    intensity=trace.final_intensity,
                    rationale=trace.final_reasoning,
                    trace=trace,
                )
            )
    return instances, discarded


def _settle_candidate(
    candidate: ContradictionCandidate,
    pair: ReviewPair,
    config: PipelineConfig,
    backend: Backend,
    meter: UsageMeter | None,
) -> DeliberationTrace | Diagnostic:
    try:
        a0 = agents.initial_score(
            candidate, pair, AgentId.A, backend, config.bindings[ROLE_SCORER_A], meter
        )
        b0 = agents.initial_score(
            candidate, pair, AgentId.B, backend, config.bindings[ROLE_SCORER_B], meter
        )
    except (agents.AgentOutputError, BackendError) as exc:
        return Diagnostic(
            stage="initial_score",
            message=f"{type(exc).__name__}: {exc}",
            aspect=candidate.aspect,
            candidate=candidate,
        )
    if agreement_check(a0, b0) is not None:
        return DeliberationTrace(
            candidate=candidate,
            initial_a=a0,
            initial_b=b0,
            turns=(),
            resolution_mode=ResolutionMode.AGREED_DIRECTLY,
        )
    try:
        return run_deliberation(candidate, pair, a0, b0, config, backend, meter)
    except (agents.AgentOutputError, BackendError) as exc:
        return Diagnostic(
            stage="deliberation",
            message=f"{type(exc).__name__}: {exc}",
            aspect=candidate.aspect,
            candidate=candidate,
        )


def run_review_pair(
    pair: ReviewPair, config: PipelineConfig, backend: Backend
) -> PipelineResult:
    started = time.perf_counter()
    meter = UsageMeter()
    diagnostics: list[Diagnostic] = []

    def extract(aspect: Aspect):
        return agents.extract_candidates(
            pair, aspect, backend, config.bindings[ROLE_EXTRACTOR], meter
        )

    per_aspect: list[list[ContradictionCandidate] | Exception] = []
    if config.parallel_aspects and len(config.aspects) > 1:
        with ThreadPoolExecutor(max_workers=len(config.aspects)) as pool:
            futures = [pool.submit(extract, aspect) for aspect in config.aspects]
            for future in futures:
                try:
                    per_aspect.append(future.result())
                except (agents.AgentOutputError, BackendError) as exc:
                    per_aspect.append(exc)
    else:
        for aspect in config.aspects:
            try:
                per_aspect.append(extract(aspect))
            except (agents.AgentOutputError, BackendError) as exc:
                per_aspect.append(exc)

    transport_failures = sum(isinstance(r, TransportError) for r in per_aspect)
    if transport_failures == len(config.aspects):
        raise PairFailure(f"extraction transport failed for every aspect of {pair.key}")

    pooled: list[ContradictionCandidate] = []
    for aspect, result in zip(config.aspects, per_aspect):
        if isinstance(result, Exception):
            diagnostics.append(
                Diagnostic(
                    stage="extraction",
                    message=f"{type(result).__name__}: {result}",
                    aspect=aspect,
                )
            )
        else:
            pooled.extend(result)

    candidates = dedup(pooled, config.dedup_threshold)

    def settle(candidate: ContradictionCandidate):
        return _settle_candidate(candidate, pair, config, backend, meter)

    if config.candidate_workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=config.candidate_workers) as pool:
            settled = list(pool.map(settle, candidates))
    else:
        settled = [settle(candidate) for candidate in candidates]

    traces = [s for s in settled if isinstance(s, DeliberationTrace)]
    diagnostics.extend(s for s in settled if isinstance(s, Diagnostic))
    instances, discarded = validity_gate(traces)
    return PipelineResult(
        paper_id=pair.paper_id,
        review_a_id=pair.review_a.review_id,
        review_b_id=pair.review_b.review_id,
        instances=tuple(instances),
        discarded=tuple(discarded),
        diagnostics=tuple(diagnostics),
        token_usage=meter.snapshot(),
        wall_time_s=time.perf_counter() - started,
    )


def run_corpus(
    pairs: Sequence[ReviewPair], config: PipelineConfig, backend: Backend
) -> list[PipelineResult]:
    """Process pairs with bounded parallelism; results come back in input
    order, and a failed pair yields an empty result carrying a diagnostic."""

    def process(pair: ReviewPair) -> PipelineResult:
        try:
            return run_review_pair(pair, config, backend)
        except Exception as exc:  # noqa: BLE001 - per-pair isolation is the contract
            logger.error("pair %s failed: %s", pair.key, exc)
            return PipelineResult(
                paper_id=pair.paper_id,
                review_a_id=pair.review_a.review_id,
                review_b_id=pair.review_b.review_id,
                instances=(),
                discarded=(),
                diagnostics=(
                    Diagnostic(stage="pair", message=f"{type(exc).__name__}: {exc}"),
                ),
            )

    if config.pair_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=config.pair_workers) as pool:
            return list(pool.map(process, pairs))
    return [process(pair) for pair in pairs]
