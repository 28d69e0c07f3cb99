"""Teacher-dataset generation and SFT export.

The pipeline acts as teacher: each review pair becomes one TeacherRecord
(zero instances is valid negative supervision), rendered into a chat-format
SFT example whose completion is the canonical serialization of the instance
list. The train/validation split shuffles paper ids, never individual
records, so one paper's pairs can never straddle the partitions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import prompts
from .agents import parse_json_payload
from .backend import Backend
from .model import Aspect, EvidencePair, Intensity, Review, ReviewPair, _require
from .pipeline import PipelineConfig, run_corpus
from .sentences import normalize_whitespace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TeacherInstance:
    """One distilled supervision item. The aspect is kept for canonical
    ordering but is not part of the completion payload."""

    aspect: Aspect
    evidence: EvidencePair
    intensity: Intensity
    reasoning: str

    def __post_init__(self) -> None:
        _require(self.intensity >= Intensity.LOW, "teacher instances carry intensity in {1,2,3}")
        _require(bool(self.reasoning.strip()), "reasoning must be non-empty")

    def payload(self) -> dict:
        return {
            "evidence": [self.evidence.quote_a, self.evidence.quote_b],
            "intensity_reasoning": self.reasoning,
            "intensity": int(self.intensity),
        }


@dataclass(frozen=True)
class TeacherRecord:
    paper_id: str
    review_a: Review
    review_b: Review
    instances: tuple[TeacherInstance, ...]
    config_hash: str

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.paper_id, self.review_a.review_id, self.review_b.review_id)


@dataclass(frozen=True)
class SftExample:
    system: str
    user: str
    completion: str

    def to_dict(self) -> dict:
        return {
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "completion": self.completion,
        }


def config_fingerprint(config: PipelineConfig) -> str:
    """Provenance hash over the behavior-relevant pipeline settings."""
    summary = {
        "rounds": config.rounds,
        "dedup_threshold": config.dedup_threshold,
        "aspects": [aspect.value for aspect in config.aspects],
        "bindings": {
            role: {
                "model": binding.model,
                "temperature": binding.decoding.temperature,
                "top_p": binding.decoding.top_p,
                "top_k": binding.decoding.top_k,
                "seed": binding.decoding.seed,
                "max_output_tokens": binding.decoding.max_output_tokens,
            }
            for role, binding in sorted(config.bindings.items())
        },
    }
    canonical = json.dumps(summary, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def generate_teacher_dataset(
    pairs: Sequence[ReviewPair], config: PipelineConfig, backend: Backend
) -> list[TeacherRecord]:
    """Run the pipeline over the corpus and repackage outputs as teacher
    records. Pairs that failed outright are skipped (and logged), not
    emitted as false negatives."""
    results = run_corpus(pairs, config, backend)
    fingerprint = config_fingerprint(config)
    records: list[TeacherRecord] = []
    for pair, result in zip(pairs, results):
        if any(diag.stage == "pair" for diag in result.diagnostics):
            logger.warning("skipping failed pair %s", result.key)
            continue
        instances = tuple(
            TeacherInstance(
                aspect=inst.aspect,
                evidence=inst.evidence,
                intensity=inst.intensity,
                reasoning=inst.rationale,
            )
            for inst in result.instances
        )
        records.append(
            TeacherRecord(
                paper_id=pair.paper_id,
                review_a=pair.review_a,
                review_b=pair.review_b,
                instances=instances,
                config_hash=fingerprint,
            )
        )
    return records


def _quote_position(quote: str, review: Review) -> int:
    position = normalize_whitespace(review.text).find(normalize_whitespace(quote))
    return position if position >= 0 else -1


def canonical_instances(record: TeacherRecord) -> list[TeacherInstance]:
    """Deterministic supervision order: aspect enumeration order, then the
    position of the first quote within review_a."""
    return sorted(
        record.instances,
        key=lambda inst: (
            inst.aspect.order,
            _quote_position(inst.evidence.quote_a, record.review_a),
        ),
    )


def render_completion(record: TeacherRecord) -> str:
    payload = [inst.payload() for inst in canonical_instances(record)]
    return json.dumps(payload, ensure_ascii=False)


def parse_completion(text: str) -> list[tuple[list[str], str, int]]:
    """Parse a completion back into (evidence, reasoning, intensity) triples."""
    payload = parse_json_payload(text)
    if not isinstance(payload, list):
        raise ValueError("completion must be a JSON array")
    triples = []
    for index, item in enumerate(payload):
        if not isinstance(item, dict):
            raise ValueError(f"completion[{index}] is not an object")
        evidence = item.get("evidence")
        reasoning = item.get("intensity_reasoning")
        intensity = item.get("intensity")
        if not isinstance(evidence, list) or len(evidence) != 2:
            raise ValueError(f"completion[{index}].evidence must have exactly two strings")
        if not isinstance(reasoning, str) or not reasoning.strip():
            raise ValueError(f"completion[{index}].intensity_reasoning missing")
        if not isinstance(intensity, int) or isinstance(intensity, bool):
            raise ValueError(f"completion[{index}].intensity must be an integer")
        if intensity not in (1, 2, 3):
            raise ValueError(f"completion[{index}].intensity outside {{1,2,3}}")
        triples.append(([str(evidence[0]), str(evidence[1])], reasoning, intensity))
    return triples


def to_sft_example(record: TeacherRecord) -> SftExample:
    return SftExample(
        system=prompts.render_teacher_system_prompt(),
        user=prompts.render_teacher_user_prompt(
            record.paper_id, record.review_a.text, record.review_b.text
        ),
        completion=render_completion(record),
    )


def export_sft(records: Sequence[TeacherRecord], path: str | Path) -> list[SftExample]:
    examples = [to_sft_example(record) for record in records]
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(json.dumps(example.to_dict(), ensure_ascii=False))
            handle.write("\n")
    return examples


def split(
    records: Sequence[TeacherRecord],
    train_fraction: float = 0.8,
    seed: int = 42,
) -> tuple[list[TeacherRecord], list[TeacherRecord]]:
    """Deterministic paper-grouped split.

    Paper ids are shuffled by the seeded generator, then whole papers are
    assigned to train until the target record count is reached; everything
    after goes to validation.
    """
    _require(0 < train_fraction < 1, "train_fraction must be in (0, 1)")
    groups: dict[str, list[TeacherRecord]] = {}
    for record in records:
        groups.setdefault(record.paper_id, []).append(record)
    order = sorted(groups)
    random.Random(seed).shuffle(order)
    target = train_fraction * len(records)
    train: list[TeacherRecord] = []
    validation: list[TeacherRecord] = []
    for paper_id in order:
        if len(train) < target:
            train.extend(groups[paper_id])
        else:
            validation.extend(groups[paper_id])
    return train, validation


def write_dataset(
    records: Sequence[TeacherRecord],
    out_dir: str | Path,
    train_fraction: float = 0.8,
    seed: int = 42,
) -> dict:
    """Write train/validation SFT files plus a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, validation = split(records, train_fraction, seed)
    export_sft(train, out / "train.jsonl")
    export_sft(validation, out / "validation.jsonl")
    membership = {}
    for record in train:
        membership[record.paper_id] = "train"
    for record in validation:
        membership[record.paper_id] = "validation"
    manifest = {
        "n_records": len(records),
        "n_train": len(train),
        "n_validation": len(validation),
        "n_instances": sum(len(r.instances) for r in records),
        "train_fraction": train_fraction,
        "seed": seed,
        "config_hash": records[0].config_hash if records else None,
        "papers": {paper: membership[paper] for paper in sorted(membership)},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, ensure_ascii=False, sort_keys=True)
        handle.write("\n")
    return manifest
