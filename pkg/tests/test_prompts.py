import re

import pytest

from revconflict import prompts
from revconflict.model import AgentId, Aspect, Intensity, ScoredJudgment
from revconflict.prompts import PromptName


def test_catalog_version_is_semver():
    assert re.fullmatch(r"\d+\.\d+\.\d+", prompts.CATALOG_VERSION)


def test_every_template_loads():
    for name in PromptName:
        template = prompts.load_template(name)
        assert template.template.strip()


def test_extraction_prompt_mentions_aspect_and_reviews():
    rendered = prompts.render_extraction_prompt(
        Aspect.MEANINGFUL_COMPARISON, "alpha review body", "beta review body"
    )
    assert "Meaningful Comparison" in rendered
    assert Aspect.MEANINGFUL_COMPARISON.definition in rendered
    assert "alpha review body" in rendered
    assert "beta review body" in rendered
    assert "$" not in rendered  # no leftover placeholders


def test_extraction_prompt_is_deterministic():
    first = prompts.render_extraction_prompt(Aspect.CLARITY, "a", "b")
    second = prompts.render_extraction_prompt(Aspect.CLARITY, "a", "b")
    assert first == second


def test_rubric_has_two_examples_per_score():
    rubric = prompts.rubric_with_examples()
    for score in range(4):
        assert f"Score {score} -" in rubric
    assert rubric.count("Example 1:") == 4
    assert rubric.count("Example 2:") == 4
    assert rubric.count("Why:") == 8


def test_rubric_criteria_only_contains_no_examples():
    criteria = prompts.rubric_criteria_only()
    for score in range(4):
        assert f"Score {score} -" in criteria
    assert "Example 1:" not in criteria
    assert "Why:" not in criteria


def test_initial_score_prompt_sections_in_order():
    rendered = prompts.render_initial_score_prompt("RA", "RB", "QA", "QB")
    order = [
        rendered.index("REVIEW 1 CONTEXT:"),
        rendered.index("REVIEW 2 CONTEXT:"),
        rendered.index("EVIDENCE FROM REVIEW 1:"),
        rendered.index("EVIDENCE FROM REVIEW 2:"),
    ]
    assert order == sorted(order)
    assert "QA" in rendered and "QB" in rendered


def test_debate_prompt_carries_lock_and_opponent():
    rendered = prompts.render_debate_prompt(
        "RA", "RB", "QA", "QB", "(no prior discussion)", 2, "mine", 3, "theirs"
    )
    assert "YOUR ASSIGNED SCORE: 2" in rendered
    assert "OPPONENT'S SCORE: 3" in rendered
    assert "CANNOT change" in rendered
    assert "(no prior discussion)" in rendered


def test_adjudication_prompt_has_criteria_but_not_examples():
    rendered = prompts.render_adjudication_prompt("RA", "RB", "QA", "QB", "(h)")
    assert "COMPLETE DEBATE HISTORY:" in rendered
    assert "INTENSITY LEVELS:" in rendered
    assert "Example 1:" not in rendered


def _judgment(agent, round_, score):
    return ScoredJudgment(
        agent_id=agent,
        round=round_,
        intensity=Intensity(score),
        reasoning=f"reason {agent.value}{round_}",
    )


def test_format_debate_history():
    history = [
        _judgment(AgentId.A, 0, 1),
        _judgment(AgentId.B, 0, 3),
        _judgment(AgentId.A, 1, 1),
    ]
    text = prompts.format_debate_history(history)
    assert text.splitlines() == [
        "[initial] Agent A (score 1): reason A0",
        "[initial] Agent B (score 3): reason B0",
        "[round 1] Agent A (score 1): reason A1",
    ]


def test_format_debate_history_empty():
    assert prompts.format_debate_history([]) == "(no prior discussion)"


def test_teacher_system_prompt_fixed_text():
    text = prompts.render_teacher_system_prompt()
    assert text == text.strip()
    assert "contradiction" in text.lower()


def test_teacher_user_prompt_fills_all_slots():
    rendered = prompts.render_teacher_user_prompt("paper-7", "review one", "review two")
    assert "paper-7" in rendered
    assert "review one" in rendered and "review two" in rendered
    # the six aspects are enumerated for the student model
    for aspect in Aspect:
        assert aspect.value in rendered
    assert "$" not in rendered


def test_teacher_user_prompt_contains_worked_examples():
    rendered = prompts.render_teacher_user_prompt("p", "ra", "rb")
    assert "intensity_reasoning" in rendered
    assert rendered.count('"evidence"') >= 2


def test_templates_reject_missing_slots():
    template = prompts.load_template(PromptName.EXTRACTION)
    with pytest.raises(KeyError):
        template.substitute({"aspect_name": "Clarity"})
