"""Prompt catalog: versioned text templates plus the fixed scoring-rubric examples.

Templates live in ``prompt_templates/`` as ``string.Template`` assets with
``$name`` slots (chosen over str.format so the JSON braces in the output-format
blocks stay literal). Rendering uses strict substitution, so a template slot
left unfilled raises instead of leaking ``$name`` into a model prompt.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Sequence

from .model import AgentId, Aspect, ScoredJudgment

CATALOG_VERSION = "1.0.0"


class PromptName(Enum):
    EXTRACTION = "extraction"
    INITIAL_SCORE = "initial_score"
    DEBATE_TURN = "debate_turn"
    ADJUDICATION = "adjudication"
    TEACHER_SYSTEM = "teacher_system"
    TEACHER_USER = "teacher_user"


@lru_cache(maxsize=None)
def load_template(name: PromptName) -> Template:
    text = (
        resources.files("revconflict.prompt_templates")
        .joinpath(f"{name.value}.txt")
        .read_text(encoding="utf-8")
    )
    return Template(text)


@dataclass(frozen=True)
class RubricExample:
    """One worked example: a quote from each review and why it earns the score."""

    quote_1: str
    quote_2: str
    rationale: str

    def render(self, index: int) -> str:
        return (
            f"Example {index}:\n"
            f'  Review 1: "{self.quote_1}"\n'
            f'  Review 2: "{self.quote_2}"\n'
            f"  Why: {self.rationale}"
        )


_SCORE_CRITERIA: dict[int, str] = {
    0: (
        "Score 0 - No Contradiction (Compatible or Orthogonal Statements)\n"
        "Statements refer to different aspects, topics, or evaluation criteria, OR\n"
        "Statements discuss the same aspect but are fully compatible or consistent, OR\n"
        "Any differences are descriptive, complementary, or additive rather than conflicting."
    ),
    1: (
        "Score 1 - Low Severity (Implicit Contradiction) "
        "One statement is generic, the other is specific, OR "
        "The conflict is indirect or interpretative, "
        "No strong positive/negative polarity, "
        "Weak or implicit disagreement."
    ),
    2: (
        "Score 2 - Moderate Severity (Explicit but Mild Conflict) "
        "Both statements explicitly refer to the same aspect, "
        "One gives light criticism, the other is mildly or significantly positive, "
        "Explicit but not extreme polarity."
    ),
    3: (
        "Score 3 - High Severity (Direct Strong Contradiction) "
        "Strongly worded positive vs. negative evaluation of the same aspect, "
        "Extremely polarized opposite judgments, "
        "Clear and fundamental extreme disagreement."
    ),
}

# Two worked examples per score, fixed at build time and injected verbatim
# into every scorer prompt.
RUBRIC_EXAMPLES: dict[int, tuple[RubricExample, RubricExample]] = {
    0: (
        RubricExample(
            quote_1=(
                "In the image-matching experiment, is it possible to add results "
                "for an LSSVM or other baseline besides [9]?"
            ),
            quote_2=(
                "Experiments show that the proposed method is as accurate but "
                ">10x faster than traditional large-margin learning techniques "
                "on synthetic data and an image alignment problem."
            ),
            rationale=(
                "A request for additional baselines does not dispute the reported "
                "results; the two comments are compatible."
            ),
        ),
        RubricExample(
            quote_1=(
                "The paper tackles an important and timely problem in low-resource "
                "machine translation."
            ),
            quote_2=(
                "There are a number of typos and formatting problems that should "
                "be fixed in the final version."
            ),
            rationale=(
                "The comments address different aspects (significance vs. surface "
                "presentation) and can both be true."
            ),
        ),
    ),
    1: (
        RubricExample(
            quote_1=(
                "Section 3, where the authors describe the proposed techniques is "
                "somewhat confusing to read, because of a lack of detailed "
                "mathematical explanations of the proposed techniques."
            ),
            quote_2="The paper is clearly written and the results seem compelling.",
            rationale=(
                "A specific complaint against a generic positive; the conflict is "
                "indirect and the polarity weak."
            ),
        ),
        RubricExample(
            quote_1=(
                "The evaluation is a good start with comparing several base DA "
                "methods with and without the proposed TransferNorm architecture,"
            ),
            quote_2=(
                "The experiments are extensively evaluated both qualitatively and "
                "quantitatively, demonstrating the effectiveness of the proposed "
                "TranNorm."
            ),
            rationale=(
                'The hedged "good start" implies more work is needed while the '
                "other review calls the evaluation extensive; the disagreement is "
                "implicit."
            ),
        ),
    ),
    2: (
        RubricExample(
            quote_1=(
                "However, the novelty is limited in the sense it is application of "
                "coordinate descent on power iterations."
            ),
            quote_2=(
                "This paper appears to be the first to solve this problem, and "
                "make a connection to coordinate decent."
            ),
            rationale=(
                "Both explicitly judge novelty; light criticism against a clearly "
                "positive claim, explicit but not extreme."
            ),
        ),
        RubricExample(
            quote_1=(
                "I suspect that most of the information is stored in the memory "
                "and only a small change of the training data is allowed... the "
                "high Inception Score cannot show the generalization ability as "
                "well..."
            ),
            quote_2=(
                "Overall, I think MemoryGAN opened a new direction of GAN and is "
                "worth further exploration."
            ),
            rationale=(
                "Explicit technical skepticism against a positive overall judgment "
                "of the same method; clear disagreement but not extreme."
            ),
        ),
    ),
    3: (
        RubricExample(
            quote_1="The paper is clearly written.",
            quote_2=(
                "I found the presentation of the proposed measure overly confusing."
            ),
            rationale=(
                "Directly opposed judgments of the same aspect with strong polarity."
            ),
        ),
        RubricExample(
            quote_1="The approach is novel and very interesting.",
            quote_2=(
                "All in all, the originality of the paper is lacking, the "
                "experimental setup is not convincing, and there are not much "
                "insights given by the paper into the novelty of method."
            ),
            rationale=(
                "Strongly positive versus strongly negative assessments of "
                "originality; a fundamental direct conflict."
            ),
        ),
    ),
}


def rubric_with_examples() -> str:
    """The four score criteria, each followed by its two worked examples."""
    blocks = []
    for score in range(4):
        examples = RUBRIC_EXAMPLES[score]
        rendered = "\n".join(ex.render(i + 1) for i, ex in enumerate(examples))
        blocks.append(f"- {_SCORE_CRITERIA[score]}\nEXAMPLES:-\n{rendered}")
    return "\n\n".join(blocks)


def rubric_criteria_only() -> str:
    """The four score criteria without examples (used by the judge)."""
    return "\n\n".join(f"- {_SCORE_CRITERIA[score]}" for score in range(4))


def _agent_label(agent_id: AgentId) -> str:
    return {AgentId.A: "Agent A", AgentId.B: "Agent B", AgentId.JUDGE: "Judge"}[agent_id]


def format_debate_history(judgments: Sequence[ScoredJudgment]) -> str:
    """Deterministic rendering of initial scores plus debate turns, in order."""
    if not judgments:
        return "(no prior discussion)"
    lines = []
    for judgment in judgments:
        stage = "initial" if judgment.round == 0 else f"round {judgment.round}"
        lines.append(
            f"[{stage}] {_agent_label(judgment.agent_id)} "
            f"(score {int(judgment.intensity)}): {judgment.reasoning}"
        )
    return "\n".join(lines)


def render_extraction_prompt(aspect: Aspect, review_1: str, review_2: str) -> str:
    return load_template(PromptName.EXTRACTION).substitute(
        aspect_name=aspect.value,
        aspect_description=aspect.definition,
        review_1=review_1,
        review_2=review_2,
    )


def render_initial_score_prompt(
    review_1: str, review_2: str, evidence_1: str, evidence_2: str
) -> str:
    return load_template(PromptName.INITIAL_SCORE).substitute(
        rubric=rubric_with_examples(),
        review_1=review_1,
        review_2=review_2,
        evidence_1=evidence_1,
        evidence_2=evidence_2,
    )


def render_debate_prompt(
    review_1: str,
    review_2: str,
    evidence_1: str,
    evidence_2: str,
    debate_history: str,
    my_score: int,
    my_reasoning: str,
    opponent_score: int,
    opponent_reasoning: str,
) -> str:
    return load_template(PromptName.DEBATE_TURN).substitute(
        rubric=rubric_with_examples(),
        review_1=review_1,
        review_2=review_2,
        evidence_1=evidence_1,
        evidence_2=evidence_2,
        debate_history=debate_history,
        my_score=my_score,
        my_reasoning=my_reasoning,
        opponent_score=opponent_score,
        opponent_reasoning=opponent_reasoning,
    )


def render_adjudication_prompt(
    review_1: str,
    review_2: str,
    evidence_1: str,
    evidence_2: str,
    debate_history: str,
) -> str:
    return load_template(PromptName.ADJUDICATION).substitute(
        rubric=rubric_criteria_only(),
        review_1=review_1,
        review_2=review_2,
        evidence_1=evidence_1,
        evidence_2=evidence_2,
        debate_history=debate_history,
    )


def render_teacher_system_prompt() -> str:
    return load_template(PromptName.TEACHER_SYSTEM).template.strip()


def _teacher_examples() -> str:
    # Reuse two rubric examples (one moderate, one high) as the reference
    # contradictions shown to the student model.
    moderate = RUBRIC_EXAMPLES[2][0]
    high = RUBRIC_EXAMPLES[3][0]
    blocks = []
    for score, example in ((2, moderate), (3, high)):
        blocks.append(
            "{\n"
            f'  "evidence": ["{example.quote_1}", "{example.quote_2}"],\n'
            f'  "intensity_reasoning": "{example.rationale}",\n'
            f'  "intensity": {score}\n'
            "}"
        )
    return "\n".join(blocks)


def render_teacher_user_prompt(paper_id: str, review_a: str, review_b: str) -> str:
    return load_template(PromptName.TEACHER_USER).substitute(
        examples=_teacher_examples(),
        paper_id=paper_id,
        review_a=review_a,
        review_b=review_b,
    )
