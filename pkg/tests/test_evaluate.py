import math
import random

import pytest
import scipy.stats
from hypothesis import given, strategies as st

import oracles
import scenario
from revconflict.evaluate import (
    DEFAULT_LAMBDA_MATCH,
    KeyMismatch,
    LengthMismatch,
    PairConfusion,
    cohen_kappa,
    composite,
    evaluate_run,
    kendall_tau,
    match_instances,
    pair_level_confusion,
    spearman_rho,
)
from revconflict.model import (
    EvidencePair,
    GoldInstance,
    Intensity,
    PipelineResult,
    ReviewPair,
)
from revconflict.pipeline import run_corpus
from revconflict.textmetrics import pair_similarity

WORDS = ["strong", "weak", "novel", "clear", "method", "results", "poor", "solid"]


def _random_evidence(rng):
    def side():
        return " ".join(rng.choice(WORDS) for _ in range(rng.randrange(1, 7)))

    return EvidencePair(side(), side())


# ---- alignment --------------------------------------------------------------


def test_empty_sides_are_all_unmatched():
    e = EvidencePair("a b c", "d e f")
    empty = match_instances([], [e])
    assert empty.matches == () and empty.unmatched_gold == (0,)
    empty = match_instances([e], [])
    assert empty.unmatched_pred == (0,)


def test_identical_instances_match_perfectly():
    pred = [EvidencePair("the picture is clear", "results are weak")]
    gold = [EvidencePair("the picture is clear", "results are weak")]
    alignment = match_instances(pred, gold)
    assert alignment.matches == ((0, 0, 1.0),)


def test_below_threshold_edges_are_pruned():
    pred = [EvidencePair("alpha beta gamma", "delta epsilon zeta")]
    gold = [EvidencePair("one two three", "four five six")]
    alignment = match_instances(pred, gold, lambda_match=0.3)
    assert alignment.matches == ()
    assert alignment.unmatched_pred == (0,) and alignment.unmatched_gold == (0,)


def test_assignment_prefers_total_weight_over_greedy_row_choice():
    # greedy row-by-row would pair pred0 with gold0; the optimal total
    # assignment crosses over
    pred = [
        EvidencePair("alpha beta gamma delta", "left side text"),
        EvidencePair("alpha beta gamma", "left side text"),
    ]
    gold = [
        EvidencePair("alpha beta gamma", "left side text"),
        EvidencePair("alpha beta gamma delta epsilon", "left side text"),
    ]
    alignment = match_instances(pred, gold, lambda_match=0.1)
    matched = {(i, j) for i, j, _ in alignment.matches}
    assert matched == {(0, 1), (1, 0)}


def test_hungarian_total_weight_matches_bruteforce_on_random_cases():
    rng = random.Random(11)
    for _ in range(200):
        pred = [_random_evidence(rng) for _ in range(rng.randrange(0, 5))]
        gold = [_random_evidence(rng) for _ in range(rng.randrange(0, 5))]
        alignment = match_instances(pred, gold, lambda_match=0.3)
        got_weight = sum(s for _, _, s in alignment.matches)
        if not pred or not gold:
            assert got_weight == 0.0
            continue
        sim = [
            [
                pair_similarity((p.quote_a, p.quote_b), (g.quote_a, g.quote_b))
                for g in gold
            ]
            for p in pred
        ]
        want_weight = oracles.matching_weight(sim, 0.3)
        assert math.isclose(got_weight, want_weight, abs_tol=1e-12)


def test_alignment_is_one_to_one():
    rng = random.Random(13)
    for _ in range(50):
        pred = [_random_evidence(rng) for _ in range(rng.randrange(1, 6))]
        gold = [_random_evidence(rng) for _ in range(rng.randrange(1, 6))]
        alignment = match_instances(pred, gold, lambda_match=0.0)
        rows = [i for i, _, _ in alignment.matches]
        cols = [j for _, j, _ in alignment.matches]
        assert len(rows) == len(set(rows))
        assert len(cols) == len(set(cols))


# ---- confusion and rates ----------------------------------------------------


def test_confusion_rate_formulas():
    confusion = PairConfusion(tp=40, fp=10, fn=20, tn=30)
    assert confusion.fnr == 20 / 60
    assert confusion.fpr == 10 / 40


def test_confusion_rates_absent_on_zero_denominator():
    assert PairConfusion(tp=0, fp=0, fn=0, tn=5).fnr is None
    assert PairConfusion(tp=3, fp=0, fn=1, tn=0).fpr is None


def test_planted_class_balance_352_448():
    # corpus with 352 gold-positive and 448 gold-negative pairs
    results, golds = [], []
    fn_planted, fp_planted = 67, 72
    for i in range(800):
        pid = f"q{i:04d}"
        pair = scenario.build_pair(i + 1000, ["Statement one."], ["Statement two."])
        pair = ReviewPair(
            paper_id=pair.paper_id,
            review_a=pair.review_a,
            review_b=pair.review_b,
            gold=(
                (
                    GoldInstance(
                        evidence=EvidencePair("Statement one.", "Statement two."),
                        intensity=Intensity.MODERATE,
                    ),
                )
                if i < 352
                else ()
            ),
        )
        golds.append(pair)
        positive_predicted = (i >= fn_planted) if i < 352 else (352 + fp_planted > i)
        instances = ()
        if positive_predicted:
            trace = _minimal_trace(pair)
            instances = (_instance_from(trace),)
        results.append(
            PipelineResult(
                paper_id=pair.paper_id,
                review_a_id=pair.review_a.review_id,
                review_b_id=pair.review_b.review_id,
                instances=instances,
                discarded=(),
            )
        )
    confusion = pair_level_confusion(results, golds)
    assert (confusion.tp, confusion.fn) == (352 - fn_planted, fn_planted)
    assert (confusion.fp, confusion.tn) == (fp_planted, 448 - fp_planted)
    assert confusion.fnr == fn_planted / 352
    assert confusion.fpr == fp_planted / 448


def _minimal_trace(pair):
    from revconflict.model import (
        AgentId,
        Aspect,
        CandidateOrigin,
        ContradictionCandidate,
        DeliberationTrace,
        ResolutionMode,
        ScoredJudgment,
    )

    candidate = ContradictionCandidate(
        aspect=Aspect.CLARITY,
        description="planted",
        evidence=EvidencePair("Statement one.", "Statement two."),
        origin=CandidateOrigin(aspect_index=Aspect.CLARITY.order, position=0),
    )
    judgment = lambda agent: ScoredJudgment(
        agent_id=agent, round=0, intensity=Intensity.MODERATE, reasoning="r"
    )
    return DeliberationTrace(
        candidate=candidate,
        initial_a=judgment(AgentId.A),
        initial_b=judgment(AgentId.B),
        turns=(),
        adjudication=None,
        resolution_mode=ResolutionMode.AGREED_DIRECTLY,
    )


def _instance_from(trace):
    from revconflict.model import ContradictionInstance

    return ContradictionInstance(
        aspect=trace.candidate.aspect,
        evidence=trace.candidate.evidence,
        intensity=trace.final_intensity,
        rationale="r",
        trace=trace,
    )


def test_key_mismatch_raises():
    plans, policy = scenario.demo_corpus(3)
    results = run_corpus(
        [p.pair for p in plans], scenario.default_config(rounds=1), policy
    )
    golds = [scenario.gold_pair_for(p) for p in plans[:2]]
    with pytest.raises(KeyMismatch):
        pair_level_confusion(results, golds)


# ---- agreement metrics --------------------------------------------------------


def test_kappa_worked_example():
    assert cohen_kappa([1, 2, 2, 3], [1, 2, 3, 3]) == pytest.approx(7 / 11)


def test_kappa_total_disagreement():
    assert cohen_kappa([1, 2], [2, 1]) == pytest.approx(-1.0)


def test_kappa_constant_equal_raters():
    assert cohen_kappa([2, 2, 2], [2, 2, 2]) == 1.0


def test_kappa_empty_absent():
    assert cohen_kappa([], []) is None


def test_kappa_length_mismatch():
    with pytest.raises(LengthMismatch):
        cohen_kappa([1, 2], [1])


label_vectors = st.integers(1, 3)


@given(st.lists(st.tuples(label_vectors, label_vectors), min_size=1, max_size=50))
def test_kappa_matches_formula_oracle(pairs):
    xs = [p for p, _ in pairs]
    ys = [g for _, g in pairs]
    got = cohen_kappa(xs, ys)
    want = oracles.cohen_kappa(xs, ys)
    assert got == pytest.approx(want, abs=1e-12)


@given(st.lists(st.tuples(label_vectors, label_vectors), min_size=2, max_size=40))
def test_kappa_invariant_under_label_renaming(pairs):
    xs = [p for p, _ in pairs]
    ys = [g for _, g in pairs]
    renamed = {1: 3, 2: 1, 3: 2}
    got = cohen_kappa(xs, ys)
    renamed_got = cohen_kappa([renamed[x] for x in xs], [renamed[y] for y in ys])
    assert got == pytest.approx(renamed_got, abs=1e-12)


def test_spearman_perfect_and_reversed():
    assert spearman_rho([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert spearman_rho([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_spearman_handles_ties_via_average_ranks():
    got = spearman_rho([1, 2, 2, 3], [1, 2, 3, 3])
    want = oracles.spearman_rho([1, 2, 2, 3], [1, 2, 3, 3])
    assert got == pytest.approx(want, abs=1e-12)


def test_spearman_constant_absent():
    assert spearman_rho([2, 2, 2], [1, 2, 3]) is None
    assert spearman_rho([1, 2, 3], [2, 2, 2]) is None
    assert spearman_rho([], []) is None


def test_kendall_worked_example():
    got = kendall_tau([1, 2, 2, 3], [1, 2, 3, 3])
    want = oracles.kendall_tau_b([1, 2, 2, 3], [1, 2, 3, 3])
    assert got == pytest.approx(want, abs=1e-12)


def test_kendall_constant_absent():
    assert kendall_tau([2, 2], [1, 3]) is None
    assert kendall_tau([], []) is None


@given(st.lists(st.tuples(label_vectors, label_vectors), min_size=2, max_size=50))
def test_rank_metrics_match_oracles_and_scipy(pairs):
    xs = [p for p, _ in pairs]
    ys = [g for _, g in pairs]
    rho, tau = spearman_rho(xs, ys), kendall_tau(xs, ys)
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        assert rho is None and tau is None
        return
    assert rho == pytest.approx(oracles.spearman_rho(xs, ys), abs=1e-9)
    assert tau == pytest.approx(oracles.kendall_tau_b(xs, ys), abs=1e-9)
    assert rho == pytest.approx(float(scipy.stats.spearmanr(xs, ys).statistic), abs=1e-9)
    assert tau == pytest.approx(
        float(scipy.stats.kendalltau(xs, ys, variant="b").statistic), abs=1e-9
    )


def test_fifty_random_vectors_match_oracles():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randrange(2, 51)
        xs = [rng.randrange(1, 4) for _ in range(n)]
        ys = [rng.randrange(1, 4) for _ in range(n)]
        got_k = cohen_kappa(xs, ys)
        assert got_k == pytest.approx(oracles.cohen_kappa(xs, ys), abs=1e-9)
        want_rho = oracles.spearman_rho(xs, ys)
        want_tau = oracles.kendall_tau_b(xs, ys)
        if want_rho is None:
            assert spearman_rho(xs, ys) is None
        else:
            assert spearman_rho(xs, ys) == pytest.approx(want_rho, abs=1e-9)
        if want_tau is None:
            assert kendall_tau(xs, ys) is None
        else:
            assert kendall_tau(xs, ys) == pytest.approx(want_tau, abs=1e-9)


# ---- composite ----------------------------------------------------------------


def test_composite_formula():
    assert composite(0.5, 0.6, 0.4) == pytest.approx(0.5 + (0.6 + 0.4) / 2)


def test_composite_absent_propagation():
    assert composite(None, 0.5, 0.5) is None
    assert composite(0.5, None, 0.5) is None
    assert composite(0.5, 0.5, None) is None


def test_composite_headline_identity():
    # the detector's reported agreement numbers recombine to 0.98715
    value = composite(0.3862, 0.6193, 0.5826)
    assert value == pytest.approx(0.98715, abs=1e-6)


# ---- full-run evaluation --------------------------------------------------------


def test_evaluate_run_against_independent_reference():
    plans, policy = scenario.demo_corpus(24)
    results = run_corpus(
        [p.pair for p in plans], scenario.default_config(rounds=2), policy
    )
    golds = [
        scenario.gold_pair_for(p, flip_some=(i % 3 == 0)) for i, p in enumerate(plans)
    ]
    report = evaluate_run(results, golds)

    # reference computation straight from the plans
    pred_labels, gold_labels = [], []
    tp = fp = fn = tn = 0
    for plan, gold_pair in zip(plans, golds):
        predicted = [
            (c.quote_a, c.quote_b, c.expected_final())
            for c in _survivors(plan)
            if c.expected_kept()
        ]
        gold = list(gold_pair.gold or ())
        if predicted and gold:
            tp += 1
        elif not predicted and gold:
            fn += 1
        elif predicted and not gold:
            fp += 1
        else:
            tn += 1
        # quotes are verbatim on both sides here, so alignment is identity
        for qa, qb, final in predicted:
            match = next(
                (g for g in gold if g.evidence.quote_a == qa and g.evidence.quote_b == qb),
                None,
            )
            if match is not None:
                pred_labels.append(final)
                gold_labels.append(int(match.intensity))

    assert (report.confusion.tp, report.confusion.fp) == (tp, fp)
    assert (report.confusion.fn, report.confusion.tn) == (fn, tn)
    assert report.n_matched == len(pred_labels)
    assert report.kappa == pytest.approx(oracles.cohen_kappa(pred_labels, gold_labels))
    assert report.spearman == pytest.approx(
        oracles.spearman_rho(pred_labels, gold_labels)
    )
    assert report.kendall == pytest.approx(
        oracles.kendall_tau_b(pred_labels, gold_labels)
    )
    assert report.composite_c == pytest.approx(
        oracles.cohen_kappa(pred_labels, gold_labels)
        + (
            oracles.spearman_rho(pred_labels, gold_labels)
            + oracles.kendall_tau_b(pred_labels, gold_labels)
        )
        / 2
    )
    assert report.n_pairs == 24
    assert len(report.per_pair) == 24


def _survivors(plan):
    seen, out = set(), []
    for cand in plan.candidates:
        quotes = (cand.quote_a, cand.quote_b)
        if quotes in seen:
            continue
        seen.add(quotes)
        out.append(cand)
    return out


def test_evaluate_run_flags_multi_sentence_gold():
    plans, policy = scenario.demo_corpus(2)
    results = run_corpus(
        [p.pair for p in plans], scenario.default_config(rounds=1), policy
    )
    golds = []
    for i, plan in enumerate(plans):
        pair = scenario.gold_pair_for(plan)
        if i == 0:
            multi = GoldInstance(
                evidence=EvidencePair(
                    "First claim here. Second claim there.", "single side"
                ),
                intensity=Intensity.LOW,
            )
            pair = ReviewPair(
                paper_id=pair.paper_id,
                review_a=pair.review_a,
                review_b=pair.review_b,
                gold=tuple(pair.gold or ()) + (multi,),
            )
        golds.append(pair)
    report = evaluate_run(results, golds)
    assert report.multi_sentence_gold == 1
    assert report.to_dict()["multi_sentence_gold"] == 1


def test_report_serializes_to_plain_dict():
    plans, policy = scenario.demo_corpus(4)
    results = run_corpus(
        [p.pair for p in plans], scenario.default_config(rounds=1), policy
    )
    golds = [scenario.gold_pair_for(p) for p in plans]
    report = evaluate_run(results, golds).to_dict()
    assert report["n_pairs"] == 4
    assert report["lambda_match"] == DEFAULT_LAMBDA_MATCH
    assert set(report["pair_level"]) == {"tp", "fp", "fn", "tn", "fnr", "fpr"}
    assert "kappa" in report["intensity_agreement"]
    assert set(report["evidence_level"]) == {
        "false_positives",
        "false_negatives",
        "matched",
    }
